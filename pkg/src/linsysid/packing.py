"""Packings of the orthogonal group and KL divergences between trajectory laws.

A 1/2-packing of the unit ball in R^{d-1} is lifted to skew-symmetric
matrices and pushed through the matrix exponential, giving orthogonal
matrices that are eps0/4 apart in operator norm yet within 4 eps0 of each
other in Frobenius norm. All divergences here assume identity noise
covariance; rescale A rather than sigma.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import Epsilon0TooLarge, NotOrthogonal, PackingStalled, SeparationViolated
from .lds import scalar_gramian

EPS0_MAX = 1.0 / 256.0
ORTHO_TOL = 1e-10
MAX_REJECTIONS = 10 ** 6


@dataclass(frozen=True)
class BallPacking:
    points: np.ndarray  # (count, m), all in the closed unit ball
    min_separation: float


@dataclass(frozen=True)
class PackingSet:
    epsilon0: float
    members: list
    min_op_separation: float
    max_fro_diameter: float
    ball: Optional[BallPacking] = None
    seed: Optional[tuple] = None

    @property
    def d(self) -> int:
        return self.members[0].shape[0]

    def to_dict(self) -> dict:
        return {
            "epsilon0": self.epsilon0,
            "d": self.d,
            "count": len(self.members),
            "min_op_separation": self.min_op_separation,
            "max_fro_diameter": self.max_fro_diameter,
            "required_op_separation": self.epsilon0 / 4.0,
            "allowed_fro_diameter": 4.0 * self.epsilon0,
            "seed": list(self.seed) if self.seed is not None else None,
            "members": [Q.tolist() for Q in self.members],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _min_pair_distance(P: np.ndarray) -> float:
    if len(P) < 2:
        return math.inf
    diff = P[:, None, :] - P[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(np.min(D[np.triu_indices(len(P), 1)]))


def ball_packing(m: int, target: Optional[int] = None, rng: Optional[nx.RngStream] = None,
                 batch: int = 256) -> BallPacking:
    """Greedy rejection sampling of ``target`` points (default 2^m) in the unit
    ball of R^m, pairwise at least 1/2 apart."""
    if m < 1:
        raise ValueError("dimension must be >= 1")
    target = 2 ** m if target is None else target
    if target < 2:
        raise ValueError("target_count must be >= 2")
    rng = nx.RngStream(0) if rng is None else rng
    pts: list[np.ndarray] = []
    rejected = 0
    while len(pts) < target:
        g = nx.standard_normals(rng, batch * m).reshape(batch, m)
        r = nx.uniform(rng, batch) ** (1.0 / m)
        cand = g / np.linalg.norm(g, axis=1, keepdims=True) * r[:, None]
        for w in cand:
            if all(np.linalg.norm(w - q) >= 0.5 for q in pts):
                pts.append(w)
                rejected = 0
                if len(pts) == target:
                    break
            else:
                rejected += 1
                if rejected >= MAX_REJECTIONS:
                    raise PackingStalled(f"{MAX_REJECTIONS} consecutive rejections at "
                                         f"{len(pts)}/{target} points")
    P = np.array(pts)
    sep = _min_pair_distance(P)
    if sep < 0.5:
        raise SeparationViolated(f"ball packing separation {sep} < 1/2")
    return BallPacking(points=P, min_separation=sep)


def skew_lift(w, epsilon0: float) -> np.ndarray:
    """eps0 (e1 (0, w)^T - (0, w) e1^T): skew, with op norm eps0 |w| and Frobenius sqrt(2) eps0 |w|."""
    w = np.asarray(w, dtype=float).reshape(-1)
    v = np.concatenate([[0.0], w])
    e1 = np.zeros_like(v)
    e1[0] = 1.0
    return epsilon0 * (np.outer(e1, v) - np.outer(v, e1))


def orthogonality_residual(Q) -> float:
    Q = nx.as_matrix(Q)
    return nx.frobenius_norm(Q.T @ Q - np.eye(Q.shape[0]))


def build_packing(d: int, epsilon0: float, rng: Optional[nx.RngStream] = None,
                  target: Optional[int] = None) -> PackingSet:
    """Orthogonal matrices exp(M(w)) over a ball packing, certified pair by pair.

    Every pair is checked for operator-norm distance >= eps0/4 and Frobenius
    distance <= 4 eps0; a failure means a numerical bug, not bad input.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if epsilon0 > EPS0_MAX:
        raise Epsilon0TooLarge(f"epsilon0={epsilon0:g} exceeds 1/256")
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    rng = nx.RngStream(0) if rng is None else rng
    seed = (rng.master_seed, rng.stream_id, rng.counter)
    ball = ball_packing(d - 1, target, rng)
    members = [nx.matrix_exp(skew_lift(w, epsilon0)) for w in ball.points]
    for Q in members:
        res = orthogonality_residual(Q)
        if res > ORTHO_TOL:
            raise SeparationViolated(f"member not orthogonal: residual {res:.3e}")
    min_op, max_fro = math.inf, 0.0
    for Q1, Q2 in itertools.combinations(members, 2):
        D = Q1 - Q2
        min_op = min(min_op, nx.operator_norm(D))
        max_fro = max(max_fro, nx.frobenius_norm(D))
    if min_op < epsilon0 / 4.0 or max_fro > 4.0 * epsilon0:
        raise SeparationViolated(f"certificate failed: min op {min_op:.6g}, max Fro {max_fro:.6g}")
    return PackingSet(epsilon0=epsilon0, members=members, min_op_separation=min_op,
                      max_fro_diameter=max_fro, ball=ball, seed=seed)


def exp_map_remainder(X, Y) -> tuple[float, float]:
    """(||exp(X+Y) - exp(X) - Y||_op, e^{2K} - 1 - 2K) with K = max(||X||_op, ||Y||_op)."""
    X, Y = nx.as_matrix(X), nx.as_matrix(Y)
    lhs = nx.operator_norm(nx.matrix_exp(X + Y) - nx.matrix_exp(X) - Y)
    K = max(nx.operator_norm(X), nx.operator_norm(Y))
    return lhs, math.expm1(2 * K) - 2 * K


# ---------------------------------------------------------------------------
# divergences between trajectory laws
# ---------------------------------------------------------------------------

def _check_orthogonal(O: np.ndarray) -> None:
    res = orthogonality_residual(O)
    if res > ORTHO_TOL:
        raise NotOrthogonal(f"O is not orthogonal: residual {res:.3e}")


def trajectory_kl(rho: float, O, A, T: int) -> float:
    """||rho O - A||_F^2 * sum_{t=1}^T gamma_t(rho).

    This is E sum_t ||(rho O - A) X_t||^2 over states X_1..X_T drawn under
    rho O with identity noise. The Gaussian log-likelihood ratio carries a
    factor 1/2 on that sum, so this value is twice the KL divergence that
    ``kl_monte_carlo`` estimates.
    """
    O, A = nx.as_matrix(O), nx.as_matrix(A)
    if O.shape != A.shape:
        raise ValueError("O and A must have the same shape")
    _check_orthogonal(O)
    gam = sum(scalar_gramian(rho, t) for t in range(1, T + 1))
    D = rho * O - A
    return float(np.sum(D * D)) * gam


def kl_monte_carlo(rho: float, O, A, T: int, trials: int,
                   rng: nx.RngStream) -> tuple[float, float]:
    """Monte Carlo estimate of KL(P_{rho O}, P_A) over transitions X_t -> X_{t+1}, t = 1..T.

    Averages sum_t 1/2 (||X_{t+1} - A X_t||^2 - ||X_{t+1} - rho O X_t||^2) along
    paths drawn under rho O from X_0 = 0. Returns ``(estimate, standard_error)``.
    """
    O, A = nx.as_matrix(O), nx.as_matrix(A)
    _check_orthogonal(O)
    d = O.shape[0]
    B = rho * O
    eta = nx.standard_normals(rng, trials * (T + 1) * d).reshape(trials, T + 1, d)
    x = eta[:, 0]  # X_1
    llr = np.zeros(trials)
    for t in range(1, T + 1):
        x_next = x @ B.T + eta[:, t]
        r_alt = x_next - x @ A.T
        r_true = eta[:, t]
        llr += 0.5 * (np.sum(r_alt * r_alt, axis=1) - np.sum(r_true * r_true, axis=1))
        x = x_next
    est = float(np.mean(llr))
    se = float(np.std(llr, ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    return est, se


def birge_threshold(n_alternatives: int, delta: float) -> float:
    """(1 - 2 delta) log(N / (2 delta)): the total KL any delta-reliable test forces."""
    if n_alternatives < 1:
        raise ValueError("need at least one alternative")
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    return (1.0 - 2.0 * delta) * math.log(n_alternatives / (2.0 * delta))

"""Empirical checks of the block small-ball condition and the martingale tail bounds.

Each check simulates independent trials, trial i drawing its noise from
stream i of the caller's master seed, and compares an empirical frequency
with the claimed bound using a 3 standard-error margin.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import numerics as nx
from .bounds import SMALL_BALL_P, half_block
from .errors import NuOutOfRange
from .lds import LinearSystem, gramian_series


@dataclass(frozen=True)
class BmsbSpec:
    """Block length k, small-ball matrix Gamma_sb (nu^2 for scalar processes) and level p."""
    k: int
    gamma_sb: np.ndarray
    p: float

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        G = nx.as_matrix(self.gamma_sb)
        if nx.eigvalsh(G)[0] <= 0:
            raise ValueError("Gamma_sb must be positive definite")
        object.__setattr__(self, "gamma_sb", G)

    @classmethod
    def for_lds(cls, sys: LinearSystem, k: int, p: float = SMALL_BALL_P) -> "BmsbSpec":
        """sigma^2 Gamma_{k'} with k' = max(1, floor(k/2))."""
        kp = int(half_block(k))
        return cls(k=k, gamma_sb=sys.sigma2 * gramian_series(sys, kp).gramian(kp), p=p)


@dataclass(frozen=True)
class TailCheckResult:
    """Empirical probability of an event against an upper bound on it."""
    kind: str
    empirical_prob: float
    theoretical_bound: float
    trials: int
    standard_error: float
    passed: bool
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "empirical_prob": self.empirical_prob,
            "theoretical_bound": self.theoretical_bound,
            "trials": self.trials,
            "standard_error": self.standard_error,
            "passed": self.passed,
            "degenerate": self.degenerate,
            "params": self.params,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _upper_check(kind: str, hits: np.ndarray, bound: float, params: dict, seed: int,
                 degenerate: bool = False) -> TailCheckResult:
    n = hits.size
    p_hat = float(np.count_nonzero(hits)) / n
    se = math.sqrt(p_hat * (1.0 - p_hat) / n)
    return TailCheckResult(kind=kind, empirical_prob=p_hat, theoretical_bound=float(bound),
                           trials=n, standard_error=se, passed=p_hat <= bound + 3.0 * se,
                           params=params, seed=seed, degenerate=degenerate)


# ---------------------------------------------------------------------------
# block martingale small-ball
# ---------------------------------------------------------------------------

def paley_zygmund_constant() -> float:
    """P[|Z| >= sigma] for Z ~ N(0, sigma^2), i.e. 2 (1 - Phi(1))."""
    return float(2.0 * nx.normal_sf(1.0))


def gaussian_exceedance(mean, sd, nu):
    """P[|mean + sd Z| >= nu] for standard normal Z."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    return nx.normal_sf((nu - mean) / sd) + nx.normal_sf((nu + mean) / sd)


def bmsb_exact(sys: LinearSystem, spec: BmsbSpec, anchor, direction) -> float:
    """(1/k) sum_{i=1}^k P(|<w, X_{j+i}>| >= sqrt(w^T Gamma_sb w) | X_j = anchor), exactly.

    Uses <w, X_{j+i}> | X_j = x ~ N(<w, A^i x>, sigma^2 w^T Gamma_i w).
    """
    w = np.asarray(direction, dtype=float)
    x = np.asarray(anchor, dtype=float)
    gs = gramian_series(sys, spec.k)
    nu = math.sqrt(float(w @ spec.gamma_sb @ w))
    means = np.empty(spec.k)
    sds = np.empty(spec.k)
    y = x
    for i in range(1, spec.k + 1):
        y = sys.A @ y
        means[i - 1] = w @ y
        sds[i - 1] = sys.sigma * math.sqrt(float(w @ gs.gramian(i) @ w))
    return float(np.mean(gaussian_exceedance(means, sds, nu)))


@dataclass(frozen=True)
class BmsbCheckResult:
    """Per (anchor, direction) block exceedance, exact and simulated."""
    k: int
    p: float
    trials: int
    rows: list
    passed: bool
    exact_passed: bool
    seed: Optional[int] = None

    @property
    def min_exact(self) -> float:
        return min(r["exact"] for r in self.rows)

    def to_dict(self) -> dict:
        return {"kind": "bmsb", "k": self.k, "p": self.p, "trials": self.trials,
                "passed": self.passed, "exact_passed": self.exact_passed,
                "min_exact": self.min_exact, "seed": self.seed, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verify_bmsb_lds(sys: LinearSystem, spec: BmsbSpec, anchors: Sequence, directions: Sequence,
                    trials: int, seed: int = 0) -> BmsbCheckResult:
    """Check the block small-ball inequality at given anchor states and directions.

    The Markov property makes X_j a sufficient summary of the past, so the
    conditional probability is estimated by simulating ``trials`` continuations
    of length k from each anchor. Passes when every simulated block average is
    at least p - 3 SE; ``exact_passed`` applies the same test with no margin to
    the closed-form Gaussian value.
    """
    anchors = [np.asarray(a, dtype=float).reshape(sys.d) for a in anchors]
    directions = [np.asarray(w, dtype=float).reshape(sys.d) for w in directions]
    if not anchors or not directions:
        raise ValueError("need at least one anchor and one direction")
    for w in directions:
        if abs(float(w @ w) - 1.0) > 1e-12:
            raise ValueError("directions must be unit vectors")
    k, d = spec.k, sys.d
    rows = []
    ok_mc = ok_exact = True
    for ai, x in enumerate(anchors):
        ids = np.arange(trials) + ai * trials
        eta = nx.trial_normals(seed, ids, k * d, sys.sigma).reshape(trials, k, d)
        X = np.empty((trials, k, d))
        y = np.broadcast_to(x, (trials, d))
        for i in range(k):
            y = y @ sys.A.T + eta[:, i]
            X[:, i] = y
        for wi, w in enumerate(directions):
            nu = math.sqrt(float(w @ spec.gamma_sb @ w))
            block = np.mean(np.abs(X @ w) >= nu, axis=1)
            est = float(np.mean(block))
            se = float(np.std(block, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
            exact = bmsb_exact(sys, spec, x, w)
            ok_mc &= est >= spec.p - 3.0 * se
            ok_exact &= exact >= spec.p
            rows.append({"anchor": ai, "direction": wi, "exact": exact,
                         "empirical": est, "standard_error": se})
    return BmsbCheckResult(k=k, p=spec.p, trials=trials, rows=rows,
                           passed=bool(ok_mc), exact_passed=bool(ok_exact), seed=seed)


# ---------------------------------------------------------------------------
# tail bounds on scalar AR(1) paths
# ---------------------------------------------------------------------------

def _scalar_paths(a: float, sigma: float, T: int, trials: int, seed: int,
                  x0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """States X_1..X_T and the noises eta_1..eta_T that follow them, per trial."""
    eta = nx.trial_normals(seed, range(trials), T + 1, sigma)
    X = np.empty((trials, T + 1))
    x = np.full(trials, float(x0))
    for t in range(T + 1):
        x = a * x + eta[:, t]
        X[:, t] = x
    # X[:, t-1] is X_t; eta[:, t] drives X_t -> X_{t+1}
    return X[:, :T], eta[:, 1:]


def smallball_tail_check(a: float, sigma: float, k: int, nu: float, p: float, T: int,
                         trials: int, seed: int = 0, x0: float = 0.0) -> TailCheckResult:
    """P[sum_t Z_t^2 <= nu^2 p^2 k floor(T/k) / 8] against exp(-floor(T/k) p^2 / 8)."""
    if k < 1 or T < 1:
        raise ValueError("k and T must be >= 1")
    blocks = T // k
    thresh = nu ** 2 * p ** 2 * k * blocks / 8.0
    bound = math.exp(-blocks * p ** 2 / 8.0)
    Z, _ = _scalar_paths(a, sigma, T, trials, seed, x0)
    hits = np.sum(Z * Z, axis=1) <= thresh
    params = {"a": a, "sigma": sigma, "k": k, "nu": nu, "p": p, "T": T, "x0": x0,
              "threshold": thresh}
    return _upper_check("smallball", hits, bound, params, seed)


def martingale_tail_check(a: float, sigma: float, T: int, alpha: float, beta: float,
                          trials: int, seed: int = 0) -> TailCheckResult:
    """P[{sum Z_t W_t >= alpha} and {sum Z_t^2 <= beta}] against exp(-alpha^2 / (2 sigma^2 beta)),
    with Z_t = X_t and W_t = eta_t on a scalar AR(1) path."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    Z, W = _scalar_paths(a, sigma, T, trials, seed)
    hits = (np.sum(Z * W, axis=1) >= alpha) & (np.sum(Z * Z, axis=1) <= beta)
    bound = math.exp(-alpha ** 2 / (2.0 * sigma ** 2 * beta))
    params = {"a": a, "sigma": sigma, "T": T, "alpha": alpha, "beta": beta}
    return _upper_check("martingale", hits, bound, params, seed)


def martingale_ratio_bound(alpha: float, sigma: float, beta_minus: float,
                           beta_plus: float) -> tuple[float, bool]:
    """log ceil(beta_plus / beta_minus) * exp(-alpha^2 / (6 sigma^2)).

    Returns ``(bound, degenerate)``. With beta_plus == beta_minus the prefactor
    is log 1 = 0; the value is returned as is and flagged.
    """
    if not 0 < beta_minus <= beta_plus:
        raise ValueError("need 0 < beta_minus <= beta_plus")
    degenerate = beta_plus == beta_minus
    bound = math.log(math.ceil(beta_plus / beta_minus)) * math.exp(-alpha ** 2 / (6.0 * sigma ** 2))
    return bound, degenerate


def martingale_ratio_check(a: float, sigma: float, T: int, alpha: float, beta_minus: float,
                           beta_plus: float, trials: int, seed: int = 0) -> TailCheckResult:
    """Self-normalised form: P[{sum Z W / sqrt(sum Z^2) > alpha} and {sum Z^2 in [b-, b+]}]."""
    bound, degenerate = martingale_ratio_bound(alpha, sigma, beta_minus, beta_plus)
    Z, W = _scalar_paths(a, sigma, T, trials, seed)
    S = np.sum(Z * Z, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sum(Z * W, axis=1) / np.sqrt(S)
    hits = (ratio > alpha) & (S >= beta_minus) & (S <= beta_plus)
    params = {"a": a, "sigma": sigma, "T": T, "alpha": alpha,
              "beta_minus": beta_minus, "beta_plus": beta_plus}
    return _upper_check("martingale_ratio", hits, bound, params, seed, degenerate)


# ---------------------------------------------------------------------------
# one-step moment generating function
# ---------------------------------------------------------------------------

def one_step_mgf(a: float, nu: float, mu: float, x: float) -> float:
    """E exp(nu/2 (a x + eta)^2 + mu x eta) for eta ~ N(0, 1), in closed form."""
    if nu >= 1:
        raise NuOutOfRange(f"nu must be < 1, got {nu}")
    return math.exp(x * x * (nu * a * a + 2 * nu * a * mu + mu * mu) / (2.0 * (1.0 - nu))) \
        / math.sqrt(1.0 - nu)


def one_step_mgf_quadrature(a: float, nu: float, mu: float, x: float, width: float = 12.0) -> float:
    """Numerical value of the same Gaussian integral, as an independent check.

    The integrand is a Gaussian bump in eta centred at x (nu a + mu) / (1 - nu)
    with scale 1 / sqrt(1 - nu); it is integrated over ``width`` scales either
    side, after factoring out its peak value.
    """
    if nu >= 1:
        raise NuOutOfRange(f"nu must be < 1, got {nu}")

    def expo(e):
        return 0.5 * nu * (a * x + e) ** 2 + mu * x * e - 0.5 * e * e

    centre = x * (nu * a + mu) / (1.0 - nu)
    scale = 1.0 / math.sqrt(1.0 - nu)
    peak = expo(centre)
    val, _ = integrate.quad(lambda e: math.exp(expo(e) - peak),
                            centre - width * scale, centre + width * scale,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val * math.exp(peak) / math.sqrt(2.0 * math.pi)

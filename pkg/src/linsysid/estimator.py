"""Ordinary least squares for linear responses Y_t = A X_t + noise."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import OverflowedTrajectory, SingularDesign
from .lds import LinearSystem, Trajectory


@dataclass(frozen=True)
class Regression:
    X: np.ndarray  # T x d, rows are covariates
    Y: np.ndarray  # T x n, rows are responses

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise ValueError(f"X and Y need the same positive row count, got {X.shape}, {Y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)


@dataclass(frozen=True)
class EstimateReport:
    A_hat: np.ndarray
    sigma_min_X: float
    rank_deficient: bool
    op_error: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "a_hat": self.A_hat.tolist(),
            "op_error": self.op_error,
            "sigma_min_x": self.sigma_min_X,
            "rank_deficient": self.rank_deficient,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def ols_fit(reg: Regression, truth: Optional[np.ndarray] = None) -> EstimateReport:
    """A_hat = (X^+ Y)^T, solved on the d x d Gram matrix.

    Rank-deficient designs get the minimum-norm solution and
    ``rank_deficient=True``; nothing is raised.
    """
    X, Y = reg.X, reg.Y
    d = X.shape[1]
    G = X.T @ X
    G_pinv, rank, eigs = nx.gram_pinv(G)
    A_hat = (G_pinv @ (X.T @ Y)).T
    sigma_min = math.sqrt(max(float(eigs[0]), 0.0))
    err = None
    if truth is not None:
        err = nx.operator_norm(A_hat - nx.as_matrix(truth))
    return EstimateReport(A_hat=A_hat, sigma_min_X=sigma_min,
                          rank_deficient=rank < d, op_error=err)


def trajectory_regression(traj: Trajectory) -> Regression:
    """Pairs (X_t, X_{t+1}) for t = 0..T-1, with u_t stacked onto X_t when present.

    With the default X_0 = 0 and no inputs the t = 0 row is all zeros and does
    not move the estimate, so this is the fit over t = 1..T-1.
    """
    X = traj.states[:-1]
    if traj.inputs is not None:
        X = np.hstack([X, traj.inputs])
    return Regression(X=X, Y=traj.states[1:])


def ols_fit_trajectory(traj: Trajectory, truth: Optional[LinearSystem] = None) -> EstimateReport:
    """Least-squares estimate of A (or of [A, B] when inputs were recorded)."""
    if traj.overflowed:
        raise OverflowedTrajectory("trajectory overflowed during simulation")
    target = None
    if truth is not None:
        target = truth.A
        if traj.inputs is not None:
            if truth.B is None:
                raise ValueError("trajectory has inputs but the reference system has no B")
            target = np.hstack([truth.A, truth.B])
    return ols_fit(trajectory_regression(traj), truth=target)


def whitened_ols_fit(reg: Regression, Sigma, truth: Optional[np.ndarray] = None) -> EstimateReport:
    """Least squares with responses weighted by Sigma^{-1/2}, mapped back to A.

    For an unconstrained coefficient matrix the weighting cancels: the result
    matches ``ols_fit`` up to rounding for any SPD Sigma.
    """
    W = nx.inv_sqrt_spd(Sigma)
    W_inv = nx.sqrt_spd(Sigma)
    white = ols_fit(Regression(reg.X, reg.Y @ W.T))
    A_hat = W_inv @ white.A_hat
    err = None if truth is None else nx.operator_norm(A_hat - nx.as_matrix(truth))
    return EstimateReport(A_hat=A_hat, sigma_min_X=white.sigma_min_X,
                          rank_deficient=white.rank_deficient, op_error=err)


def fixed_design_error_floor(X, n: int) -> tuple[float, float]:
    """Lower bounds on E||A_hat - A||_op^2 for fixed X and N(0, I_n) noise.

    Returns ``(tr((X^T X)^{-1}), n / lambda_min(X^T X))``. Note the second
    value is n / lambda_min; the theorem's headline display carries sqrt(n),
    but its derivation yields n.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = X.T @ X
    w, Q = nx.sym_eigen(G)
    if w[0] <= nx.rank_tolerance(w, G.shape[0]):
        raise SingularDesign("X^T X is singular")
    return float(np.sum(1.0 / w)), float(n / w[0])



def batch_ols_errors(states: np.ndarray, A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """OLS on many trajectories at once; states is (n, T+1, d).

    Returns per-trial ``(op_error, sigma_min_X, rank_deficient)`` with the same
    pseudo-inverse convention as ``ols_fit``. Scalar systems use the closed
    form sum x_t x_{t+1} / sum x_t^2.
    """
    A = nx.as_matrix(A)
    n, _, d = states.shape
    X, Y = states[:, :-1], states[:, 1:]
    if d == 1:
        g = np.einsum("nt,nt->n", X[..., 0], X[..., 0])
        xy = np.einsum("nt,nt->n", X[..., 0], Y[..., 0])
        deficient = g <= 0.0
        a_hat = np.where(deficient, 0.0, xy / np.where(deficient, 1.0, g))
        return np.abs(a_hat - A[0, 0]), np.sqrt(np.maximum(g, 0.0)), deficient
    err = np.empty(n)
    smin = np.empty(n)
    deficient = np.zeros(n, dtype=bool)
    for i in range(n):
        rep = ols_fit(Regression(X[i], Y[i]), truth=A)
        err[i], smin[i], deficient[i] = rep.op_error, rep.sigma_min_X, rep.rank_deficient
    return err, smin, deficient

"""Linear systems X_{t+1} = A X_t + B u_t + eta_t: simulation and Gramians."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .errors import NoFeasibleK

OVERFLOW_LIMIT = 1e150


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    sigma2: float = 1.0
    B: Optional[np.ndarray] = None
    input_sigma2: Optional[float] = None

    def __post_init__(self):
        A = nx.as_matrix(self.A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.B is not None:
            B = nx.as_matrix(self.B)
            if B.shape[0] != A.shape[0]:
                raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape}")
            object.__setattr__(self, "B", B)
        if self.input_sigma2 is not None and self.input_sigma2 < 0:
            raise ValueError("input_sigma2 must be nonnegative")

    @classmethod
    def scalar(cls, a: float, sigma: float = 1.0) -> "LinearSystem":
        return cls(np.array([[float(a)]]), sigma2=float(sigma) ** 2)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.B is None else self.B.shape[1]

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def has_inputs(self) -> bool:
        return self.B is not None and self.input_sigma2 is not None


@dataclass(frozen=True)
class Trajectory:
    """States X_0..X_T as a (T+1, d) array, plus inputs u_0..u_{T-1} if driven."""
    states: np.ndarray
    inputs: Optional[np.ndarray] = None
    seed: Optional[tuple] = None
    overflowed: bool = False

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i}" for i in range(self.d)])
        for t, x in enumerate(self.states):
            w.writerow([t] + [format(float(v), ".17g") for v in x])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "t" or not all(h == f"x_{i}" for i, h in enumerate(header[1:])):
            raise ValueError("trajectory CSV header must be t,x_0,...,x_{d-1}")
        states = np.array([[float(v) for v in r[1:]] for r in body])
        over = bool(np.any(~np.isfinite(states)) or np.any(np.abs(states) > OVERFLOW_LIMIT))
        return cls(states=states, overflowed=over)


def _roll(A: np.ndarray, drive: np.ndarray, x0: Optional[np.ndarray]):
    """Propagate n trajectories at once; drive is (n, T, d).

    The product A x is accumulated column by column in a fixed order rather
    than through BLAS, so a trajectory comes out bit-identical whether it is
    rolled alone or inside a batch.
    """
    n, T, d = drive.shape
    X = np.zeros((n, T + 1, d))
    if x0 is not None:
        X[:, 0] = x0
    bad = np.zeros(n, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            nxt = drive[:, t].copy()
            for j in range(d):
                nxt += X[:, t, j:j + 1] * A[:, j]
            X[:, t + 1] = nxt
            bad |= ~np.all(np.abs(nxt) <= OVERFLOW_LIMIT, axis=1)
    return X, bad


def simulate(sys: LinearSystem, T: int, rng: nx.RngStream,
             x0: Optional[Sequence[float]] = None) -> Trajectory:
    """Roll the system forward T steps from x0 (default 0).

    Draws eta_0..eta_{T-1} first, then u_0..u_{T-1}, all from ``rng``.
    States that leave [-1e150, 1e150] set ``overflowed`` instead of raising.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    seed = (rng.master_seed, rng.stream_id, rng.counter)
    d = sys.d
    eta = nx.gaussian_vector(rng, T * d, sys.sigma).reshape(T, d)
    drive = eta
    inputs = None
    if sys.has_inputs:
        inputs = nx.gaussian_vector(rng, T * sys.m, math.sqrt(sys.input_sigma2)).reshape(T, sys.m)
        drive = eta + inputs @ sys.B.T
    x0 = None if x0 is None else np.asarray(x0, dtype=float).reshape(1, d)
    X, bad = _roll(sys.A, drive[None], x0)
    X, overflowed = X[0], bool(bad[0])
    return Trajectory(states=X, inputs=inputs, seed=seed, overflowed=overflowed)


def simulate_batch(sys: LinearSystem, T: int, master_seed: int,
                   stream_ids: Sequence[int], x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Many independent trajectories, trial i drawn from stream ``stream_ids[i]``.

    Returns ``(states, overflowed)`` with states shaped (trials, T+1, d). Trial i
    is bit-identical to ``simulate(sys, T, RngStream(master_seed, stream_ids[i]))``.
    Inputs are not supported here.
    """
    if sys.has_inputs:
        raise ValueError("simulate_batch does not model inputs; use simulate")
    d = sys.d
    eta = nx.trial_normals(master_seed, stream_ids, T * d, sys.sigma).reshape(-1, T, d)
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(1, d)
    X, bad = _roll(sys.A, eta, x0)
    return X, bad


# ---------------------------------------------------------------------------
# Gramians
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GramianSeries:
    """Finite-time controllability Gramians Gamma_1..Gamma_T.

    ``gramians[t-1]`` is Gamma_t = sum_{s<t} A^s (A^s)^T. Spectral summaries
    are computed once per series and cached.
    """
    gramians: np.ndarray
    control_gramians: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.gramians.shape[0]

    @property
    def d(self) -> int:
        return self.gramians.shape[1]

    def gramian(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.horizon:
            raise IndexError(f"t={t} outside 1..{self.horizon}")
        return self.gramians[t - 1]

    def control_gramian(self, t: int) -> np.ndarray:
        if self.control_gramians is None:
            raise ValueError("series has no control Gramians")
        return self.control_gramians[t - 1]

    @cached_property
    def _spectra(self) -> np.ndarray:
        return np.array([nx.eigvalsh(G) for G in self.gramians])

    @cached_property
    def lambda_min_series(self) -> np.ndarray:
        return self._spectra[:, 0]

    @cached_property
    def lambda_max_series(self) -> np.ndarray:
        return self._spectra[:, -1]

    @cached_property
    def trace_series(self) -> np.ndarray:
        return np.trace(self.gramians, axis1=1, axis2=2)

    @cached_property
    def logdet_series(self) -> np.ndarray:
        return nx.batch_log_det(self.gramians)

    def lambda_min(self, t):
        """lambda_min(Gamma_t); eigensolves only the requested t unless the
        full spectra are already cached."""
        idx = np.asarray(t) - 1
        if "_spectra" in self.__dict__:
            return self._spectra[idx, 0]
        flat = np.array([nx.eigvalsh(self.gramians[i])[0] for i in idx.reshape(-1)])
        return flat.reshape(idx.shape) if idx.ndim else flat[0]

    def logdet(self, t):
        return self.logdet_series[np.asarray(t) - 1]


@dataclass(frozen=True)
class ScaledIdentityGramians:
    """Closed-form Gramians gamma_t(rho) * I of a scaled orthogonal system.

    Duck-types the parts of ``GramianSeries`` the bound evaluators use, without
    materialising T matrices, so horizons in the millions stay cheap.
    """
    rho: float
    dim: int
    horizon: int

    @property
    def d(self) -> int:
        return self.dim

    def gramian(self, t: int) -> np.ndarray:
        return scalar_gramian(self.rho, t) * np.eye(self.dim)

    def lambda_min(self, t):
        return scalar_gramian_array(self.rho, np.asarray(t))

    def logdet(self, t):
        return self.dim * np.log(scalar_gramian_array(self.rho, np.asarray(t)))


def gramian_series(sys: LinearSystem, T: int) -> GramianSeries:
    """Gamma_1 = I, Gamma_{t+1} = I + A Gamma_t A^T; the control Gramians
    (when B is set) follow Gamma^B_1 = B B^T, Gamma^B_{t+1} = B B^T + A Gamma^B_t A^T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    A = sys.A
    d = sys.d
    I = np.eye(d)
    G = np.empty((T, d, d))
    G[0] = I
    for t in range(1, T):
        nxt = I + A @ G[t - 1] @ A.T
        G[t] = 0.5 * (nxt + nxt.T)
    CG = None
    if sys.B is not None:
        BB = sys.B @ sys.B.T
        CG = np.empty((T, d, d))
        CG[0] = BB
        for t in range(1, T):
            nxt = BB + A @ CG[t - 1] @ A.T
            CG[t] = 0.5 * (nxt + nxt.T)
    return GramianSeries(gramians=G, control_gramians=CG)


def scalar_gramian(rho: float, t: int) -> float:
    """gamma_t(rho) = sum_{s=0}^{t-1} |rho|^{2s}, with 0^0 = 1."""
    if t < 1:
        raise ValueError("t must be >= 1")
    r2 = float(rho) ** 2
    if r2 == 1.0:
        return float(t)
    if r2 == 0.0:
        return 1.0
    try:
        return math.expm1(t * math.log(r2)) / (r2 - 1.0)
    except OverflowError:
        return math.inf


def scalar_gramian_array(rho: float, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    r2 = float(rho) ** 2
    if r2 == 1.0:
        return t.copy()
    if r2 == 0.0:
        return np.ones_like(t)
    with np.errstate(over="ignore"):
        return np.expm1(t * math.log(r2)) / (r2 - 1.0)


# ---------------------------------------------------------------------------
# block length
# ---------------------------------------------------------------------------

def block_condition_rhs(gs, k, d: int, delta: float, c: float = 1.0):
    """c * (d log(d/delta) + log det(Gamma_T Gamma_k^{-1})) for one or many k."""
    T = gs.horizon
    return c * (d * math.log(d / delta) + gs.logdet(T) - gs.logdet(k))


def select_block_length(gs, d: int, delta: float, c: float = 1.0) -> int:
    """Largest k in [1, T] with T/k >= c (d log(d/delta) + log det(Gamma_T Gamma_k^{-1})).

    Scans downward from k = T, so the answer is the maximal feasible k even
    where feasibility is not monotone in k.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if c <= 0:
        raise ValueError("c must be positive")
    T = gs.horizon
    ks = np.arange(T, 0, -1)
    ok = T / ks >= block_condition_rhs(gs, ks, d, delta, c)
    hit = np.flatnonzero(ok)
    if hit.size == 0:
        raise NoFeasibleK(f"no block length satisfies the condition at T={T}")
    return int(ks[hit[0]])


def diag_block_length(condS: float, d: int, delta: float, T: int, c: float = 1.0) -> int:
    """k = floor(T / (c d log(condS d / delta))) for diagonalizable systems."""
    if condS < 1:
        raise ValueError("condS must be >= 1")
    denom = c * d * math.log(condS * d / delta)
    k = math.floor(T / denom) if denom > 0 else T
    if k < 1:
        raise NoFeasibleK(f"T={T} is below the burn-in {denom:.4g}")
    return min(k, T)


def growth_diagnostic(sys: LinearSystem, T: int, rng: nx.RngStream, trials: int = 32,
                      warn: bool = True) -> float:
    """Log-log slope of the RMS state norm over the second half of [1, T].

    Slopes above 1 indicate faster-than-linear growth, which marginally stable
    systems without large Jordan blocks do not show; a warning is emitted.
    """
    sq = np.zeros(T + 1)
    for i in range(trials):
        tr = simulate(sys, T, rng.spawn(rng.stream_id * 1000003 + i))
        if tr.overflowed:
            if warn:
                warnings.warn("trajectory overflowed: system is far from marginally stable")
            return math.inf
        sq += np.sum(tr.states ** 2, axis=1)
    rms = np.sqrt(sq / trials)
    ts = np.arange(max(2, T // 2), T + 1)
    slope = float(np.polyfit(np.log(ts), np.log(rms[ts]), 1)[0])
    if warn and slope > 1.0:
        warnings.warn(f"state norm grows like t^{slope:.2f}; check that rho(A) <= 1")
    return slope

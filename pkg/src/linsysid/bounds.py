"""Finite-sample upper bounds, sample-complexity formulas and lower-bound thresholds.

Every universal constant the analysis leaves unspecified (c, c0, C) is an
explicit argument defaulting to 1 and is echoed in ``BoundReport.constants_used``.
The small-ball route (``lds_cert`` + ``main_theorem_bound``) is the only one
with fully explicit constants.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .errors import EpsTooLarge, InfeasibleHorizon, MissingInputModel, NoFeasibleK
from .lds import LinearSystem, ScaledIdentityGramians, scalar_gramian

SMALL_BALL_P = 3.0 / 20.0
REGIMES = ("stable", "marginal", "unstable")


def _json_float(v):
    if v is None:
        return None
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return v


@dataclass(frozen=True)
class BoundReport:
    """An evaluated bound. ``value`` is an error level or a horizon, per ``kind``.

    Infeasible reports carry ``value=None``. A lower-bound threshold that never
    binds is reported as ``math.inf`` and serialised as the string "inf".
    """
    kind: str
    value: Optional[float]
    constants_used: dict = field(default_factory=dict)
    block_length: Optional[int] = None
    regime: Optional[str] = None
    feasible: bool = True
    notes: str = ""

    def __post_init__(self):
        if not self.feasible and self.value is not None:
            raise ValueError("an infeasible report cannot carry a value")
        if self.value is not None and not self.value >= 0:
            raise ValueError(f"bound value must be >= 0, got {self.value}")
        if self.regime is not None and self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": _json_float(self.value),
            "feasible": self.feasible,
            "block_length": self.block_length,
            "regime": self.regime,
            "constants_used": {k: _json_float(v) for k, v in self.constants_used.items()},
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class SmallBallCert:
    """Block length k with small-ball matrix Gamma_sb, level p and envelope Gamma_bar."""
    k: int
    gamma_sb: np.ndarray
    p: float
    gamma_bar: np.ndarray

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        gap = nx.eigvalsh(nx.as_matrix(self.gamma_bar) - nx.as_matrix(self.gamma_sb))
        if gap[0] < -1e-9 * max(1.0, abs(gap[-1])):
            raise ValueError("Gamma_sb must be dominated by Gamma_bar")


def _check_delta(delta: float, upper: float = 0.5) -> None:
    if not 0 < delta < upper:
        raise ValueError(f"delta must lie in (0, {upper:g})")


# ---------------------------------------------------------------------------
# explicit-constant route: small-ball certificate + main theorem
# ---------------------------------------------------------------------------

def half_block(k) -> np.ndarray:
    """k' = max(1, floor(k/2)); Gamma_0 = 0 would make Gamma_sb singular."""
    return np.maximum(1, np.asarray(k) // 2)


def main_theorem_burn_in(k, p: float, delta: float, d: int, logdet_ratio):
    """(10 k / p^2) (log(1/delta) + 2 d log(10/p) + log det(Gamma_bar Gamma_sb^{-1}))."""
    return (10.0 * np.asarray(k) / p ** 2) * (
        math.log(1.0 / delta) + 2 * d * math.log(10.0 / p) + np.asarray(logdet_ratio))


def lds_cert(sys: LinearSystem, gs, T: int, delta: float, p: float = SMALL_BALL_P,
             chunk: int = 1 << 16) -> SmallBallCert:
    """Largest k for which (k, sigma^2 Gamma_{k'}, p) certifies the main theorem at T.

    Gamma_bar = (d / delta) sigma^2 Gamma_T, so the log-det ratio is
    d log(d/delta) + log det Gamma_T - log det Gamma_{k'} and does not depend on sigma.
    """
    _check_delta(delta)
    d = sys.d
    if gs.horizon < T:
        raise ValueError(f"Gramian series stops at {gs.horizon} < T={T}")
    if sys.sigma2 <= 0:
        raise NoFeasibleK("sigma must be positive for a small-ball certificate")
    base = math.log(1.0 / delta) + 2 * d * math.log(10.0 / p) + d * math.log(d / delta)
    # the log-det term is >= d log(d/delta) > 0, so k <= T p^2 / (10 base)
    k_hi = min(T, math.floor(T * p ** 2 / (10.0 * base)))
    ld_T = float(gs.logdet(T))
    k = None
    for top in range(k_hi, 0, -chunk):
        ks = np.arange(top, max(top - chunk, 0), -1)
        ratio = d * math.log(d / delta) + ld_T - gs.logdet(half_block(ks))
        ok = T >= main_theorem_burn_in(ks, p, delta, d, ratio)
        hit = np.flatnonzero(ok)
        if hit.size:
            k = int(ks[hit[0]])
            break
    if k is None:
        raise NoFeasibleK(f"T={T} is below the small-ball burn-in for every k")
    kp = int(half_block(k))
    return SmallBallCert(k=k, gamma_sb=sys.sigma2 * gs.gramian(kp), p=p,
                         gamma_bar=(d / delta) * sys.sigma2 * gs.gramian(T))


def main_theorem_bound(cert: SmallBallCert, T: int, d: int, n: int, sigma: float,
                       delta: float, strict: bool = False) -> BoundReport:
    """(90 sigma / p) sqrt((n + d log(10/p) + log det(Gamma_bar Gamma_sb^{-1}) + log(1/delta))
    / (T lambda_min(Gamma_sb))), holding with probability 1 - 3 delta.

    Below the burn-in the report is infeasible, or ``InfeasibleHorizon`` is
    raised when ``strict``.
    """
    _check_delta(delta, 1.0)
    p = cert.p
    ratio = nx.log_det_ratio(cert.gamma_bar, cert.gamma_sb)
    burn_in = float(main_theorem_burn_in(cert.k, p, delta, d, ratio))
    consts = {"p": p, "sigma": sigma, "delta": delta, "n": n, "d": d,
              "logdet_ratio": ratio, "burn_in_T": burn_in, "failure_prob": 3 * delta}
    if T < burn_in:
        if strict:
            raise InfeasibleHorizon(f"T={T} is below the burn-in {burn_in:.6g}")
        return BoundReport("main_theorem", None, consts, cert.k, feasible=False)
    lam = float(nx.eigvalsh(cert.gamma_sb)[0])
    num = n + d * math.log(10.0 / p) + ratio + math.log(1.0 / delta)
    value = (90.0 * sigma / p) * math.sqrt(num / (T * lam))
    return BoundReport("main_theorem", value, consts, cert.k)


def main_theorem_horizon(rho: float, d: int, eps: float, delta: float, sigma: float = 1.0,
                         n: Optional[int] = None, T_max: int = 1 << 50) -> float:
    """Smallest T at which the main theorem certifies error <= eps for A = rho * O.

    Uses closed-form Gramians, so huge horizons cost nothing. Returns inf when
    even ``T_max`` does not suffice.
    """
    n = d if n is None else n
    sys = LinearSystem(rho * np.eye(d), sigma2=sigma ** 2)

    def ok(T: int) -> bool:
        gs = ScaledIdentityGramians(rho, d, T)
        try:
            cert = lds_cert(sys, gs, T, delta)
        except NoFeasibleK:
            return False
        rep = main_theorem_bound(cert, T, d, n, sigma, delta)
        return rep.feasible and rep.value <= eps

    hi = 2
    while not ok(hi):
        hi *= 2
        if hi > T_max:
            return math.inf
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


# ---------------------------------------------------------------------------
# universal-constant routes
# ---------------------------------------------------------------------------

def stable_theorem_bound(gs, k: int, delta: float, C: float = 1.0, c: float = 1.0) -> BoundReport:
    """C sqrt((d log(d/delta) + log det(Gamma_T Gamma_k^{-1})) / (T lambda_min(Gamma_k))),
    feasible when T/k >= c (d log(d/delta) + log det(Gamma_T Gamma_k^{-1}))."""
    _check_delta(delta)
    T, d = gs.horizon, gs.d
    if not 1 <= k <= T:
        raise ValueError(f"k={k} outside 1..{T}")
    inner = d * math.log(d / delta) + float(gs.logdet(T) - gs.logdet(k))
    consts = {"C": C, "c": c, "delta": delta}
    if T / k < c * inner:
        return BoundReport("stable_theorem", None, consts, k, feasible=False)
    value = C * math.sqrt(inner / (T * float(gs.lambda_min(k))))
    return BoundReport("stable_theorem", value, consts, k)


def input_driven_bound(sys: LinearSystem, gs, k: int, T: int, delta: float,
                       C: float = 1.0, c: float = 1.0, strict: bool = False) -> BoundReport:
    """Error bound on the concatenation [A, B] under i.i.d. Gaussian inputs.

    With M_t = sigma^2 Gamma_t + sigma_u^2 Gamma^B_t the value is
    C sigma^2 / sqrt(T lambda_min(M_k)) * sqrt(d log(tr(M_T) / (delta lambda_min(M_k)))),
    feasible when T/k >= c d log(tr(M_T) / (delta lambda_min(M_k))).
    """
    if not sys.has_inputs:
        raise MissingInputModel("input_driven_bound needs B and input_sigma2")
    _check_delta(delta)
    if gs.control_gramians is None:
        raise MissingInputModel("Gramian series was built without B")
    d = sys.d
    M_k = sys.sigma2 * gs.gramian(k) + sys.input_sigma2 * gs.control_gramian(k)
    M_T = sys.sigma2 * gs.gramian(T) + sys.input_sigma2 * gs.control_gramian(T)
    lam = float(nx.eigvalsh(M_k)[0])
    if lam <= 0:
        raise InfeasibleHorizon("lambda_min(M_k) is zero; the system is not excited")
    log_term = d * math.log(float(np.trace(M_T)) / (delta * lam))
    consts = {"C": C, "c": c, "delta": delta, "lambda_min_Mk": lam}
    if T / k < c * log_term:
        if strict:
            raise InfeasibleHorizon(f"T/k={T / k:.4g} below {c * log_term:.4g}")
        return BoundReport("input_driven", None, consts, k, feasible=False)
    value = C * sys.sigma2 / math.sqrt(T * lam) * math.sqrt(log_term)
    return BoundReport("input_driven", value, consts, k)


# ---------------------------------------------------------------------------
# scalar systems
# ---------------------------------------------------------------------------

def _scalar_required(abs_a: float, eps, delta: float):
    """Unrounded scalar sample complexity, vectorised over eps."""
    eps = np.asarray(eps, dtype=float)
    L = math.log(2.0 / delta)
    b = abs_a - eps
    stable = 8.0 / eps * L + 4.0 / eps ** 2 * (1.0 - b ** 2) * L
    with np.errstate(divide="ignore", invalid="ignore"):
        unstable = np.maximum(8.0 / (b ** 2 - 1.0) * L,
                              4.0 * np.log(1.0 / eps) / np.log(b) + 8.0 * L)
    return np.where(abs_a <= 1.0 + eps, stable, unstable)


def scalar_regime_by_eps(a: float, eps: float) -> str:
    if abs(a) < 1.0:
        return "stable"
    return "marginal" if abs(a) <= 1.0 + eps else "unstable"


def scalar_sample_complexity(a: float, eps: float, delta: float) -> BoundReport:
    """Horizon after which |a_hat - a| <= eps with probability 1 - delta.

    The branch switches at |a| = 1 + eps, with the boundary itself on the
    stable side. Regime tags: stable for |a| < 1, marginal up to 1 + eps,
    unstable beyond.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    _check_delta(delta)
    raw = float(_scalar_required(abs(a), eps, delta))
    return BoundReport("scalar_sample_complexity", float(math.ceil(raw)),
                       {"eps": eps, "delta": delta}, regime=scalar_regime_by_eps(a, eps))


def scalar_epsilon_at_horizon(a: float, T: int, delta: float, grid: int = 4000) -> float:
    """Smallest eps on a log grid whose scalar sample complexity is <= T (nan if none)."""
    eps = np.geomspace(1e-6, 1.0 - 1e-9, grid)
    need = np.ceil(_scalar_required(abs(a), eps, delta))
    ok = np.flatnonzero(need <= T)
    return float(eps[ok[0]]) if ok.size else math.nan


def mgf_rho_sequence(a: float, eps: float, T: int, alpha: float) -> np.ndarray:
    """rho_1..rho_{T-1}: rho_{T-1} = 1, rho_t = 1 + r rho_{t+1} while rho_{t+1} <= alpha/eps^2,
    otherwise alpha/eps^2, with r = (|a| - eps)^2 / (1 + alpha)."""
    if T < 2:
        raise ValueError("T must be >= 2")
    r = (abs(a) - eps) ** 2 / (1.0 + alpha)
    cap = alpha / eps ** 2
    rho = np.empty(T - 1)
    rho[-1] = 1.0
    for i in range(T - 3, -1, -1):
        nxt = rho[i + 1]
        rho[i] = 1.0 + r * nxt if nxt <= cap else cap
    return rho


def scalar_mgf_probability(a: float, eps: float, T: int, alpha: float) -> float:
    """2 exp(-eps^2 / (2 (1 + alpha)) * sum_t rho_t), clipped to [0, 1]."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    s = float(np.sum(mgf_rho_sequence(a, eps, T, alpha)))
    return min(1.0, max(0.0, 2.0 * math.exp(-eps ** 2 * s / (2.0 * (1.0 + alpha)))))


def scalar_regime(a: float, T: int, delta: float, c: float = 1.0) -> str:
    """Regime of |a| at horizon T: boundaries 1 - c log(1/delta)/T and 1 + 1/T.

    Both boundaries belong to the interval on their left.
    """
    x = abs(a)
    if x <= 1.0 - c * math.log(1.0 / delta) / T:
        return "stable"
    if x <= 1.0 + 1.0 / T:
        return "marginal"
    return "unstable"


def scalar_rate_scale(a: float, T: int, delta: float, c: float = 1.0) -> float:
    """Order-of-magnitude error scale for the scalar regime of ``a`` (constants dropped)."""
    L = math.log(1.0 / delta)
    reg = scalar_regime(a, T, delta, c)
    if reg == "stable":
        return math.sqrt(L * (1.0 - abs(a)) / T)
    if reg == "marginal":
        return L / T
    return L * math.exp(-T * math.log(abs(a)))


def _largest_T(f, budget: float) -> float:
    """Largest integer T >= 0 with f(T) <= budget, for f increasing with f(0) = 0."""
    if f(1) > budget:
        return 0.0
    lo, hi = 1, 2
    while f(hi) <= budget:
        lo, hi = hi, hi * 2
        if hi > 1 << 62:
            return math.inf
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) <= budget:
            lo = mid
        else:
            hi = mid
    return float(lo)


def _lower_regime(rho: float) -> str:
    x = abs(rho)
    return "stable" if x < 1 else ("marginal" if x == 1 else "unstable")


def scalar_lower_bound_T(a: float, eps: float, delta: float) -> BoundReport:
    """Largest T with T * sum_{t=1}^T a^{2t} <= log(1/(2 delta)) / (8 eps^2).

    Up to this horizon some a' in {a - 2 eps, a + 2 eps} defeats any estimator
    with probability >= delta. The sum starts at t = 1 here, so a = 0 never
    binds and the threshold is reported as inf.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_delta(delta, 0.25)
    budget = math.log(1.0 / (2.0 * delta)) / (8.0 * eps ** 2)
    consts = {"eps": eps, "delta": delta, "budget": budget}
    if a == 0:
        return BoundReport("scalar_lower_bound", math.inf, consts, regime="stable",
                           notes="sum_{t>=1} a^{2t} vanishes at a = 0; threshold unbounded")
    a2 = a * a

    def f(T):
        return T * a2 * scalar_gramian(a, T)

    return BoundReport("scalar_lower_bound", _largest_T(f, budget), consts,
                       regime=_lower_regime(a))


def orthogonal_lower_bound_T(rho: float, d: int, eps: float, delta: float,
                             c0: float = 1.0) -> BoundReport:
    """Largest T with T gamma_T(rho) <= c0 (d + log(1/delta)) / eps^2."""
    if d < 2:
        raise ValueError("d must be >= 2")
    _check_delta(delta, 0.25)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps > abs(rho) / 2048:
        raise EpsTooLarge(f"eps={eps:g} exceeds |rho|/2048={abs(rho) / 2048:g}")
    budget = c0 * (d + math.log(1.0 / delta)) / eps ** 2
    T = _largest_T(lambda t: t * scalar_gramian(rho, t), budget)
    return BoundReport("orthogonal_lower_bound", T,
                       {"c0": c0, "eps": eps, "delta": delta, "budget": budget},
                       regime=_lower_regime(rho))


def diag_logdet_bound(condS: float, d: int, T: int, k: int,
                      block_sizes: Optional[Sequence[int]] = None) -> float:
    """2 d log cond(S) + d log(T/k) + 4 log T * sum_{b >= 2} b^2.

    Upper-bounds log det(Gamma_T Gamma_k^{-1}); ``block_sizes`` lists the
    Jordan block sizes when A is not diagonalizable.
    """
    if condS < 1:
        raise ValueError("condS must be >= 1")
    if k < 1 or T < k:
        raise ValueError("need 1 <= k <= T")
    jordan = sum(b * b for b in (block_sizes or ()) if b >= 2)
    return 2 * d * math.log(condS) + d * math.log(T / k) + 4 * math.log(T) * jordan

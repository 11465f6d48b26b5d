"""Monte Carlo sweeps of OLS error against horizon, with bound curves attached.

Trial ``i`` of the cell at horizon ``T`` draws its noise from stream
``T * 2**24 + i`` of the master seed, so any cell can be replayed on its own
and results do not depend on the thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import numerics as nx
from .bounds import (lds_cert, main_theorem_bound, scalar_epsilon_at_horizon,
                     scalar_rate_scale, scalar_regime)
from .errors import ConfigError, DegenerateGrid, NoFeasibleK
from .estimator import batch_ols_errors
from .lds import LinearSystem, gramian_series, simulate_batch

TRIAL_BITS = 24
CHUNK = 512
N_BOOT = 1000
CI_LEVEL = 0.95

# stream ids reserved for building random test systems
_SKEW_STREAM = 1
_SKEW_STREAM_2 = 2

_SPEC_KEYS = {
    "scalar": {"a"},
    "scaled_orthogonal": {"rho", "d", "seed"},
    "diagonalizable": {"spectrum", "condS", "seed"},
    "explicit": {"A"},
}


def stream_id(T: int, trial: int) -> int:
    return (int(T) << TRIAL_BITS) | int(trial)


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

def random_orthogonal(d: int, seed: int, stream: int = _SKEW_STREAM) -> np.ndarray:
    """exp of a random skew matrix: orthogonal by construction, no QR needed."""
    return nx.matrix_exp(nx.random_skew(nx.RngStream(seed, stream), d))


def diagonalizable_matrix(spectrum: Sequence[float], condS: float, seed: int) -> np.ndarray:
    """S diag(spectrum) S^{-1} with S = Q1 diag(s) Q2 and cond(S) = condS.

    The scales s_i = condS^{i/(d-1)} are geometric. Two independent rotations
    are needed: with S = Q diag(s) alone the diagonal factors commute and A
    collapses to the symmetric Q diag(spectrum) Q^T.
    """
    lam = np.asarray(spectrum, dtype=float)
    d = lam.size
    if condS < 1:
        raise ConfigError("condS must be >= 1")
    s = condS ** (np.arange(d) / max(d - 1, 1))
    Q1 = random_orthogonal(d, seed, _SKEW_STREAM)
    Q2 = random_orthogonal(d, seed, _SKEW_STREAM_2)
    S = Q1 @ np.diag(s) @ Q2
    S_inv = Q2.T @ np.diag(1.0 / s) @ Q1.T
    return S @ np.diag(lam) @ S_inv


def build_system(spec: dict, sigma: float = 1.0) -> LinearSystem:
    kind = spec["kind"]
    if kind == "scalar":
        return LinearSystem.scalar(spec["a"], sigma)
    if kind == "scaled_orthogonal":
        A = spec["rho"] * random_orthogonal(int(spec["d"]), int(spec["seed"]))
    elif kind == "diagonalizable":
        A = diagonalizable_matrix(spec["spectrum"], spec["condS"], int(spec["seed"]))
    elif kind == "explicit":
        A = nx.as_matrix(spec["A"])
    else:
        raise ConfigError(f"unknown system kind {kind!r}")
    return LinearSystem(A, sigma2=sigma ** 2)


def _spectral_radius_hint(spec: dict) -> Optional[float]:
    kind = spec["kind"]
    if kind == "scalar":
        return abs(spec["a"])
    if kind == "scaled_orthogonal":
        return abs(spec["rho"])
    if kind == "diagonalizable":
        return float(np.max(np.abs(spec["spectrum"])))
    return None


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    system_spec: dict
    sigma: float = 1.0
    T_grid: tuple = (100, 400, 1600)
    trials: int = 2000
    delta: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        spec = dict(self.system_spec)
        kind = spec.get("kind")
        if kind not in _SPEC_KEYS:
            raise ConfigError(f"system_spec.kind must be one of {sorted(_SPEC_KEYS)}")
        keys = set(spec) - {"kind"}
        if keys != _SPEC_KEYS[kind]:
            raise ConfigError(f"system_spec for {kind} needs keys {sorted(_SPEC_KEYS[kind])}, "
                              f"got {sorted(keys)}")
        object.__setattr__(self, "system_spec", spec)
        grid = tuple(int(t) for t in self.T_grid)
        if not grid or any(t < 1 for t in grid):
            raise ConfigError("T_grid must hold positive horizons")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("T_grid must be strictly increasing")
        if grid[-1] >= 1 << (64 - TRIAL_BITS):
            raise ConfigError("T_grid entries too large for stream numbering")
        object.__setattr__(self, "T_grid", grid)
        if not 100 <= self.trials < 1 << TRIAL_BITS:
            raise ConfigError(f"trials must lie in [100, {1 << TRIAL_BITS})")
        if not 0 < self.delta < 0.5:
            raise ConfigError("delta must lie in (0, 1/2)")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {"system_spec", "sigma", "T_grid", "trials", "delta", "master_seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "system_spec" not in data:
            raise ConfigError("config needs system_spec")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"system_spec": self.system_spec, "sigma": self.sigma,
                "T_grid": list(self.T_grid), "trials": self.trials,
                "delta": self.delta, "master_seed": self.master_seed}


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

CSV_HEADER = ["T", "trials", "median_err", "q_err", "mean_sigma_min", "overflow_count",
              "bound_value"]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))  # shortest string that round-trips


@dataclass(frozen=True)
class CellRecord:
    T: int
    trials: int
    median_err: float
    q_err: float
    mean_sigma_min: float
    overflow_count: int
    bound_value: float
    errors: np.ndarray = field(repr=False, compare=False, default=None)

    def row(self) -> list:
        return [_fmt(self.T), _fmt(self.trials), _fmt(self.median_err), _fmt(self.q_err),
                _fmt(self.mean_sigma_min), _fmt(self.overflow_count), _fmt(self.bound_value)]


@dataclass
class SweepResult:
    config: SweepConfig
    records: list
    slope: Optional[float] = None
    slope_ci: Optional[float] = None
    regime_label: Optional[str] = None
    bound_source: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config.to_dict(),
            "version": __version__,
            "master_seed": self.config.master_seed,
            "bound_source": self.bound_source,
            "regime_label": self.regime_label,
            "loglog_slope": self.slope,
            "slope_ci_halfwidth": self.slope_ci,
            "ci_level": CI_LEVEL,
            "bootstrap_resamples": N_BOOT,
            "stream_id_rule": f"T * 2**{TRIAL_BITS} + trial",
        }, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _run_chunk(sys: LinearSystem, T: int, seed: int, ids: range):
    X, bad = simulate_batch(sys, T, seed, [stream_id(T, i) for i in ids])
    good = ~bad
    err = np.full(len(ids), np.nan)
    smin = np.full(len(ids), np.nan)
    if np.any(good):
        e, s, _ = batch_ols_errors(X[good], sys.A)
        err[good], smin[good] = e, s
    return err, smin, int(np.count_nonzero(bad))


def _bound_for(cfg: SweepConfig, sys: LinearSystem, T: int) -> tuple[float, str]:
    spec = cfg.system_spec
    if spec["kind"] == "scalar":
        return (scalar_epsilon_at_horizon(spec["a"], T, cfg.delta),
                "scalar sample complexity, inverted in eps on a log grid")
    # split the failure probability 3 delta' = delta
    dp = cfg.delta / 3.0
    src = "small-ball main theorem with delta/3 (nan below burn-in)"
    gs = gramian_series(sys, T)
    try:
        cert = lds_cert(sys, gs, T, dp)
    except NoFeasibleK:
        return math.nan, src
    rep = main_theorem_bound(cert, T, sys.d, sys.d, sys.sigma, dp)
    return (rep.value if rep.feasible else math.nan), src


def run_sweep(cfg: SweepConfig, threads: int = 1, with_bounds: bool = True) -> SweepResult:
    """Simulate and fit ``trials`` trajectories at every horizon in the grid.

    Overflowed trajectories are counted per cell and left out of the error
    statistics; they never abort the sweep.
    """
    sys = build_system(cfg.system_spec, cfg.sigma)
    jobs = [(T, range(lo, min(lo + CHUNK, cfg.trials)))
            for T in cfg.T_grid for lo in range(0, cfg.trials, CHUNK)]

    def work(job):
        T, ids = job
        return _run_chunk(sys, T, cfg.master_seed, ids)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, jobs))
    else:
        outs = [work(j) for j in jobs]

    records = []
    bound_source = ""
    for T in cfg.T_grid:
        parts = [o for (t, _), o in zip(jobs, outs) if t == T]
        err = np.concatenate([p[0] for p in parts])
        smin = np.concatenate([p[1] for p in parts])
        over = sum(p[2] for p in parts)
        ok = err[np.isfinite(err)]
        med = float(np.median(ok)) if ok.size else math.nan
        q = float(np.quantile(ok, 1.0 - cfg.delta)) if ok.size else math.nan
        ms = float(np.mean(smin[np.isfinite(smin)])) if ok.size else math.nan
        bound = math.nan
        if with_bounds:
            bound, bound_source = _bound_for(cfg, sys, T)
        records.append(CellRecord(T=T, trials=cfg.trials, median_err=med, q_err=q,
                                  mean_sigma_min=ms, overflow_count=over,
                                  bound_value=bound, errors=ok))
    res = SweepResult(config=cfg, records=records, bound_source=bound_source)
    rho = _spectral_radius_hint(cfg.system_spec)
    if rho is not None:
        res.regime_label = scalar_regime(rho, cfg.T_grid[-1], cfg.delta)
    try:
        res.slope, res.slope_ci = fit_loglog_slope(res)
    except DegenerateGrid:
        pass
    return res


def loglog_slope(T: Sequence[float], medians: Sequence[float]) -> float:
    """Least-squares slope of log(median) against log(T)."""
    T = np.asarray(T, dtype=float)
    m = np.asarray(medians, dtype=float)
    if T.size < 3:
        raise DegenerateGrid("need at least 3 grid points")
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise DegenerateGrid("medians must be positive and finite")
    return float(np.polyfit(np.log(T), np.log(m), 1)[0])


def fit_loglog_slope(result: SweepResult, n_boot: int = N_BOOT,
                     level: float = CI_LEVEL) -> tuple[float, float]:
    """Slope of log median error vs log T, and the half-width of its bootstrap CI.

    Each bootstrap replicate resamples the trials of every cell with
    replacement and refits; the interval is the central ``level`` range.
    """
    Ts = [r.T for r in result.records]
    slope = loglog_slope(Ts, [r.median_err for r in result.records])
    gen = nx.RngStream(result.config.master_seed, 0xB0075).generator()
    meds = np.empty((n_boot, len(Ts)))
    for j, r in enumerate(result.records):
        e = r.errors
        idx = gen.integers(0, e.size, size=(n_boot, e.size))
        meds[:, j] = np.median(e[idx], axis=1)
    logT = np.log(np.asarray(Ts, dtype=float))
    boots = np.polyfit(logT, np.log(meds).T, 1)[0]
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return slope, float((hi - lo) / 2)


def bootstrap_median_ci(errors: np.ndarray, seed: int, n_boot: int = N_BOOT,
                        level: float = CI_LEVEL) -> tuple[float, float]:
    """Percentile bootstrap interval for the median of ``errors``."""
    gen = nx.RngStream(seed, 0xB0076).generator()
    idx = gen.integers(0, errors.size, size=(n_boot, errors.size))
    meds = np.median(errors[idx], axis=1)
    lo, hi = np.quantile(meds, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# regime report
# ---------------------------------------------------------------------------

REGIME_HEADER = ["a", "regime", "median_err", "q_err", "rate_scale", "thm_b1_eps",
                 "overflow_count"]


@dataclass
class RegimeReport:
    T: int
    trials: int
    delta: float
    c: float
    master_seed: int
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REGIME_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r["a"]), r["regime"], _fmt(r["median_err"]), _fmt(r["q_err"]),
                        _fmt(r["rate_scale"]), _fmt(r["thm_b1_eps"]), _fmt(r["overflow_count"])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "trials": self.trials, "delta": self.delta, "c": self.c,
                           "master_seed": self.master_seed, "version": __version__,
                           "boundaries": {"stable_max": 1 - self.c * math.log(1 / self.delta) / self.T,
                                          "marginal_max": 1 + 1 / self.T}},
                          indent=2, sort_keys=True)


def regime_report(a_grid: Sequence[float], T: int, trials: int, delta: float,
                  master_seed: int = 0, c: float = 1.0, sigma: float = 1.0,
                  threads: int = 1) -> RegimeReport:
    """Per a: empirical median and 1 - delta quantile error at horizon T, the
    regime of |a|, its rate scale, and the eps certified by the scalar
    sample-complexity bound."""
    rows = []
    for a in a_grid:
        if not 0 <= a <= 1.5:
            raise ConfigError("a_grid values must lie in [0, 1.5]")
        cfg = SweepConfig({"kind": "scalar", "a": float(a)}, sigma=sigma, T_grid=(T,),
                          trials=trials, delta=delta, master_seed=master_seed)
        rec = run_sweep(cfg, threads=threads, with_bounds=False).records[0]
        rows.append({"a": float(a), "regime": scalar_regime(a, T, delta, c),
                     "median_err": rec.median_err, "q_err": rec.q_err,
                     "rate_scale": scalar_rate_scale(a, T, delta, c),
                     "thm_b1_eps": scalar_epsilon_at_horizon(a, T, delta),
                     "overflow_count": rec.overflow_count, "errors": rec.errors})
    return RegimeReport(T=T, trials=trials, delta=delta, c=c, master_seed=master_seed, rows=rows)

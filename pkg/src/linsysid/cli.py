"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 a verification that did not pass.
Machine-readable artifacts go to ``--out`` (or stdout when omitted); the
human summary, including the resolved seed and constants, goes to stdout, or
to stderr when stdout carries the artifact.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import numerics as nx
from .bounds import (SMALL_BALL_P, diag_logdet_bound, input_driven_bound, lds_cert,
                     main_theorem_bound, orthogonal_lower_bound_T, scalar_lower_bound_T,
                     scalar_sample_complexity, stable_theorem_bound)
from .errors import LinsysidError
from .estimator import ols_fit_trajectory
from .experiments import SweepConfig, random_orthogonal, regime_report, run_sweep
from .lds import LinearSystem, Trajectory, gramian_series, select_block_length, simulate
from .packing import birge_threshold, build_packing, kl_monte_carlo, trajectory_kl
from .smallball import (BmsbSpec, martingale_ratio_check, martingale_tail_check,
                        one_step_mgf, one_step_mgf_quadrature, smallball_tail_check,
                        verify_bmsb_lds)

EXIT_OK, EXIT_INVALID, EXIT_UNVERIFIED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


class _Out:
    """Routes the artifact and the summary so they never share a stream."""

    def __init__(self, path):
        self.path = path

    def artifact(self, text: str) -> None:
        if self.path is None or str(self.path) == "-":
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
        else:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            Path(self.path).write_text(text if text.endswith("\n") else text + "\n")

    def say(self, text: str) -> None:
        stream = sys.stderr if self.path is None or str(self.path) == "-" else sys.stdout
        print(text, file=stream)


def _json_arg(flag):
    def parse(s):
        try:
            return json.loads(s)
        except json.JSONDecodeError as e:
            raise argparse.ArgumentTypeError(f"{flag} is not valid JSON: {e}")
    return parse


def _float_list(s):
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="master seed for all random draws")


def _add_system(p, sigma=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scalar-a", type=float, default=None, help="scalar system x' = a x + eta")
    g.add_argument("--matrix", type=_json_arg("--matrix"), default=None,
                   help='dynamics matrix as JSON, e.g. "[[0.9,0],[0.1,0.5]]"')
    g.add_argument("--orthogonal-rho", type=float, default=None,
                   help="scaled orthogonal system rho * O with a random O")
    p.add_argument("--d", type=int, default=2, help="dimension for --orthogonal-rho")
    p.add_argument("--system-seed", type=int, default=0, help="seed for the random O")
    if sigma:
        p.add_argument("--sigma", type=float, default=1.0, help="noise standard deviation")


def _system(args) -> LinearSystem:
    sigma = getattr(args, "sigma", 1.0)
    if sigma < 0:
        raise UsageError("--sigma must be nonnegative")
    if args.scalar_a is not None:
        return LinearSystem.scalar(args.scalar_a, sigma)
    if args.matrix is not None:
        return LinearSystem(nx.as_matrix(args.matrix), sigma2=sigma ** 2)
    if args.orthogonal_rho is not None:
        if args.d < 1:
            raise UsageError("--d must be >= 1")
        O = random_orthogonal(args.d, args.system_seed)
        return LinearSystem(args.orthogonal_rho * O, sigma2=sigma ** 2)
    raise UsageError("one of --scalar-a, --matrix, --orthogonal-rho is required")


def _constants(**kw) -> str:
    return " ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items())


def _check_result(out: _Out, rep, passed: bool) -> int:
    out.artifact(rep.to_json())
    out.say("PASSED" if passed else "NOT PASSED")
    return EXIT_OK if passed else EXIT_UNVERIFIED


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _Out(args.out)
    sysm = _system(args)
    if args.T < 1:
        raise UsageError("--T must be >= 1")
    x0 = None if args.x0 is None else np.asarray(args.x0, dtype=float)
    traj = simulate(sysm, args.T, nx.RngStream(args.seed), x0=x0)
    out.artifact(traj.to_csv())
    out.say(f"seed={args.seed} T={args.T} d={sysm.d} sigma={sysm.sigma:g} "
            f"overflowed={traj.overflowed}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    out = _Out(args.out)
    traj = Trajectory.from_csv(Path(args.traj).read_text())
    truth = None
    if args.truth is not None:
        truth = LinearSystem(nx.as_matrix(args.truth))
    rep = ols_fit_trajectory(traj, truth)
    out.artifact(rep.to_json())
    out.say(f"T={traj.T} d={traj.d} sigma_min_x={rep.sigma_min_X:.6g} "
            f"rank_deficient={rep.rank_deficient} op_error={rep.op_error}")
    return EXIT_OK


def cmd_gramian(args) -> int:
    out = _Out(args.out)
    sysm = _system(args)
    gs = gramian_series(sysm, args.T)
    lines = ["t,lambda_min,lambda_max,trace,logdet"]
    for t in range(1, args.T + 1):
        lines.append(",".join([str(t)] + [format(float(v), ".17g") for v in (
            gs.lambda_min_series[t - 1], gs.lambda_max_series[t - 1],
            gs.trace_series[t - 1], gs.logdet_series[t - 1])]))
    out.artifact("\n".join(lines))
    try:
        k = select_block_length(gs, sysm.d, args.delta, args.c)
    except LinsysidError:
        k = None
    out.say(f"seed={args.seed} {_constants(c=args.c, delta=args.delta)} block_length={k}")
    return EXIT_OK


def cmd_bound(args) -> int:
    out = _Out(args.out)
    kind = args.kind
    if kind == "scalar":
        if args.a is None or args.eps is None:
            raise UsageError("--kind scalar needs --a and --eps")
        rep = scalar_sample_complexity(args.a, args.eps, args.delta)
    elif kind == "diag-logdet":
        block = [int(b) for b in _float_list(args.block_sizes)] if args.block_sizes else None
        val = diag_logdet_bound(args.condS, args.d, args.T, args.k, block)
        rep = None
        out.artifact(json.dumps({"kind": "diag_logdet", "value": val, "condS": args.condS,
                                 "d": args.d, "T": args.T, "k": args.k,
                                 "block_sizes": block}, indent=2))
    else:
        sysm = _system(args)
        if kind == "input":
            B = nx.as_matrix(args.B) if args.B is not None else None
            if B is None or args.input_sigma2 is None:
                raise UsageError("--kind input needs --B and --input-sigma2")
            sysm = LinearSystem(sysm.A, sysm.sigma2, B, args.input_sigma2)
        gs = gramian_series(sysm, args.T)
        if kind == "main":
            cert = lds_cert(sysm, gs, args.T, args.delta, p=args.p)
            n = sysm.d if args.n is None else args.n
            rep = main_theorem_bound(cert, args.T, sysm.d, n, sysm.sigma, args.delta)
        else:
            k = args.k if args.k is not None else select_block_length(gs, sysm.d, args.delta, args.c)
            if kind == "stable":
                rep = stable_theorem_bound(gs, k, args.delta, C=args.C, c=args.c)
            else:
                rep = input_driven_bound(sysm, gs, k, args.T, args.delta, C=args.C, c=args.c)
    if rep is not None:
        out.artifact(rep.to_json())
        out.say(f"{rep.kind}: value={rep.value} feasible={rep.feasible} k={rep.block_length}")
    out.say(f"seed={args.seed} {_constants(c=args.c, C=args.C, p=args.p, delta=args.delta)}")
    return EXIT_OK


def cmd_lower_bound(args) -> int:
    out = _Out(args.out)
    if args.kind == "scalar":
        rep = scalar_lower_bound_T(args.a, args.eps, args.delta)
    else:
        rep = orthogonal_lower_bound_T(args.rho, args.d, args.eps, args.delta, c0=args.c0)
    out.artifact(rep.to_json())
    out.say(f"{rep.kind}: T={rep.value} seed={args.seed} "
            f"{_constants(c0=args.c0, eps=args.eps, delta=args.delta)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg_text = Path(args.config).read_text()
    try:
        cfg = SweepConfig.from_json(cfg_text)
    except (json.JSONDecodeError, TypeError) as e:
        raise UsageError(f"--config: {e}")
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    res = run_sweep(cfg, threads=max(1, threads))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "sweep.csv").write_text(res.to_csv())
    (outdir / "sweep.json").write_text(res.to_json() + "\n")
    if args.figures:
        from .plotting import plot_sweep
        plot_sweep(res, outdir / "sweep.png")
    print(f"seed={cfg.master_seed} delta={cfg.delta:g} trials={cfg.trials} "
          f"slope={res.slope} ci={res.slope_ci} regime={res.regime_label}")
    print(f"wrote {outdir / 'sweep.csv'}")
    return EXIT_OK


def cmd_regime_report(args) -> int:
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    rep = regime_report(args.a_grid, args.T, args.trials, args.delta, master_seed=args.seed,
                        c=args.c, sigma=args.sigma, threads=max(1, threads))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "regimes.csv").write_text(rep.to_csv())
    (outdir / "regimes.json").write_text(rep.to_json() + "\n")
    if args.figures:
        from .plotting import plot_regimes
        plot_regimes(rep, outdir / "regimes.png")
    print(f"seed={args.seed} {_constants(c=args.c, delta=args.delta)} T={args.T}")
    print(f"wrote {outdir / 'regimes.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _Out(args.out)
    what = args.what
    if what == "bmsb":
        sysm = _system(args)
        d = sysm.d
        spec = BmsbSpec.for_lds(sysm, args.k, p=args.p)
        anchors = args.anchors if args.anchors is not None else [[0.0] * d]
        dirs = args.directions if args.directions is not None else np.eye(d).tolist()
        dirs = [np.asarray(w, float) / np.linalg.norm(w) for w in dirs]
        rep = verify_bmsb_lds(sysm, spec, anchors, dirs, args.trials, seed=args.seed)
        out.say(f"seed={args.seed} {_constants(k=args.k, p=args.p)} min_exact={rep.min_exact:.6g}")
        return _check_result(out, rep, rep.passed and rep.exact_passed)
    if what == "smallball":
        nu = args.nu if args.nu is not None else args.sigma
        rep = smallball_tail_check(args.a, args.sigma, args.k, nu, args.p, args.T,
                                   args.trials, seed=args.seed)
        out.say(f"seed={args.seed} {_constants(p=args.p, nu=nu)}")
        return _check_result(out, rep, rep.passed)
    if what == "martingale":
        if args.beta_minus is not None:
            rep = martingale_ratio_check(args.a, args.sigma, args.T, args.alpha,
                                         args.beta_minus, args.beta_plus or args.beta_minus,
                                         args.trials, seed=args.seed)
        else:
            beta = args.beta if args.beta is not None else float(args.T)
            rep = martingale_tail_check(args.a, args.sigma, args.T, args.alpha, beta,
                                        args.trials, seed=args.seed)
        out.say(f"seed={args.seed} alpha={args.alpha:g}")
        return _check_result(out, rep, rep.passed)
    if what == "mgf":
        closed = one_step_mgf(args.a, args.nu, args.mu, args.x)
        quad = one_step_mgf_quadrature(args.a, args.nu, args.mu, args.x)
        rel = abs(closed - quad) / abs(quad)
        passed = rel <= args.rtol
        out.artifact(json.dumps({"kind": "mgf", "closed_form": closed, "quadrature": quad,
                                 "relative_error": rel, "rtol": args.rtol, "passed": passed,
                                 "params": {"a": args.a, "nu": args.nu, "mu": args.mu,
                                            "x": args.x}}, indent=2))
        out.say(f"seed={args.seed} relative_error={rel:.3e}")
        out.say("PASSED" if passed else "NOT PASSED")
        return EXIT_OK if passed else EXIT_UNVERIFIED
    if what == "kl":
        O = random_orthogonal(args.d, args.system_seed) if args.d > 1 else np.eye(1)
        G = nx.gaussian_vector(nx.RngStream(args.system_seed, 7), args.d * args.d).reshape(args.d, args.d)
        A = args.rho * O + args.perturb * G
        closed = trajectory_kl(args.rho, O, A, args.T)
        est, se = kl_monte_carlo(args.rho, O, A, args.T, args.trials, nx.RngStream(args.seed))
        passed = abs(est - closed) <= 3 * se
        out.artifact(json.dumps({"kind": "kl", "closed_form": closed, "monte_carlo": est,
                                 "standard_error": se, "ratio": est / closed if closed else None,
                                 "passed": passed, "seed": args.seed,
                                 "params": {"rho": args.rho, "d": args.d, "T": args.T,
                                            "perturb": args.perturb, "trials": args.trials,
                                            "system_seed": args.system_seed},
                                 "birge_threshold_2": birge_threshold(2, 0.1)}, indent=2))
        out.say(f"seed={args.seed} closed_form={closed:.6g} monte_carlo={est:.6g} se={se:.2g}")
        out.say("PASSED" if passed else "NOT PASSED")
        return EXIT_OK if passed else EXIT_UNVERIFIED
    if what == "packing":
        P = build_packing(args.d, args.eps0, nx.RngStream(args.seed))
        out.artifact(P.to_json())
        out.say(f"seed={args.seed} eps0={args.eps0:g} members={len(P.members)} "
                f"min_op={P.min_op_separation:.6g} max_fro={P.max_fro_diameter:.6g}")
        return EXIT_OK
    raise UsageError(f"unknown verification {what!r}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = _Parser(prog="linsysid", formatter_class=fmt,
                 description="Least-squares identification of linear systems: simulation, "
                             "bounds and Monte Carlo verification.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", formatter_class=fmt, help="simulate one trajectory to CSV")
    _add_system(p)
    p.add_argument("--T", type=int, required=True, help="horizon (number of steps)")
    p.add_argument("--x0", type=_json_arg("--x0"), default=None, help="initial state as JSON list")
    _add_seed(p)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", formatter_class=fmt, help="OLS estimate from a trajectory CSV")
    p.add_argument("--traj", required=True, help="trajectory CSV written by simulate")
    p.add_argument("--truth", type=_json_arg("--truth"), default=None,
                   help="true A as JSON, to report the operator-norm error")
    _add_seed(p)
    p.add_argument("--out", default=None, help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("gramian", formatter_class=fmt, help="Gramian spectra and block length")
    _add_system(p)
    p.add_argument("--T", type=int, required=True, help="horizon")
    p.add_argument("--delta", type=float, default=0.1, help="failure probability")
    p.add_argument("--c", type=float, default=1.0, help="block-length constant c")
    _add_seed(p)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_gramian)

    p = sub.add_parser("bound", formatter_class=fmt, help="evaluate an upper bound")
    p.add_argument("--kind", choices=["main", "stable", "input", "scalar", "diag-logdet"],
                   default="main", help="which bound")
    _add_system(p)
    p.add_argument("--T", type=int, default=10000, help="horizon")
    p.add_argument("--delta", type=float, default=0.1, help="failure probability")
    p.add_argument("--p", type=float, default=SMALL_BALL_P, help="small-ball probability level")
    p.add_argument("--c", type=float, default=1.0, help="block-length constant c")
    p.add_argument("--C", type=float, default=1.0, help="leading constant C")
    p.add_argument("--n", type=int, default=None, help="response dimension (default d)")
    p.add_argument("--k", type=int, default=None, help="block length (default: selected)")
    p.add_argument("--a", type=float, default=None, help="scalar coefficient for --kind scalar")
    p.add_argument("--eps", type=float, default=None, help="target error for --kind scalar")
    p.add_argument("--B", type=_json_arg("--B"), default=None, help="input matrix as JSON")
    p.add_argument("--input-sigma2", type=float, default=None, help="input variance")
    p.add_argument("--condS", type=float, default=1.0, help="cond(S) for --kind diag-logdet")
    p.add_argument("--block-sizes", default=None, help="Jordan block sizes, comma separated")
    _add_seed(p)
    p.add_argument("--out", default=None, help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("lower-bound", formatter_class=fmt, help="minimax lower-bound horizon")
    p.add_argument("--kind", choices=["scalar", "orthogonal"], default="orthogonal",
                   help="which lower bound")
    p.add_argument("--a", type=float, default=1.0, help="scalar coefficient")
    p.add_argument("--rho", type=float, default=1.0, help="scale of the orthogonal family")
    p.add_argument("--d", type=int, default=2, help="dimension")
    p.add_argument("--eps", type=float, required=True, help="target error")
    p.add_argument("--delta", type=float, default=0.1, help="failure probability")
    p.add_argument("--c0", type=float, default=1.0, help="universal constant c0")
    _add_seed(p)
    p.add_argument("--out", default=None, help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("sweep", formatter_class=fmt, help="Monte Carlo sweep from a JSON config")
    p.add_argument("--config", required=True, help="JSON sweep configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: number of CPUs)")
    p.add_argument("--figures", action="store_true", help="also render sweep.png")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("regime-report", formatter_class=fmt, help="scalar regime table")
    p.add_argument("--a-grid", type=_float_list, default=[0.0, 0.5, 0.9, 0.99, 1.0, 1.01],
                   help="comma-separated coefficients in [0, 1.5]")
    p.add_argument("--T", type=int, default=1000, help="horizon")
    p.add_argument("--trials", type=int, default=1000, help="trials per coefficient")
    p.add_argument("--delta", type=float, default=0.1, help="quantile level 1 - delta")
    p.add_argument("--c", type=float, default=1.0, help="regime boundary constant c")
    p.add_argument("--sigma", type=float, default=1.0, help="noise standard deviation")
    _add_seed(p)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: number of CPUs)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--figures", action="store_true", help="also render regimes.png")
    p.set_defaults(func=cmd_regime_report)

    p = sub.add_parser("verify", formatter_class=fmt, help="empirical checks of the inequalities")
    vs = p.add_subparsers(dest="what", required=True, parser_class=_Parser)

    v = vs.add_parser("bmsb", formatter_class=fmt, help="block small-ball condition")
    _add_system(v)
    v.add_argument("--k", type=int, default=4, help="block length")
    v.add_argument("--p", type=float, default=SMALL_BALL_P, help="probability level")
    v.add_argument("--trials", type=int, default=10000, help="continuations per anchor")
    v.add_argument("--anchors", type=_json_arg("--anchors"), default=None,
                   help="anchor states as JSON list of lists (default: origin)")
    v.add_argument("--directions", type=_json_arg("--directions"), default=None,
                   help="directions as JSON list of lists (default: basis)")

    v2 = vs.add_parser("smallball", formatter_class=fmt, help="small-ball tail bound")
    v2.add_argument("--a", type=float, default=0.5, help="AR coefficient")
    v2.add_argument("--sigma", type=float, default=1.0, help="noise standard deviation")
    v2.add_argument("--k", type=int, default=2, help="block length")
    v2.add_argument("--nu", type=float, default=None, help="small-ball scale (default sigma)")
    v2.add_argument("--p", type=float, default=SMALL_BALL_P, help="probability level")
    v2.add_argument("--T", type=int, default=100, help="horizon")
    v2.add_argument("--trials", type=int, default=100000, help="Monte Carlo trials")

    v3 = vs.add_parser("martingale", formatter_class=fmt, help="martingale tail bound")
    v3.add_argument("--a", type=float, default=0.0, help="AR coefficient")
    v3.add_argument("--sigma", type=float, default=1.0, help="noise standard deviation")
    v3.add_argument("--T", type=int, default=50, help="horizon")
    v3.add_argument("--alpha", type=float, default=math.sqrt(100 * math.log(10)),
                    help="deviation level")
    v3.add_argument("--beta", type=float, default=None, help="variance cap (default T)")
    v3.add_argument("--beta-minus", type=float, default=None,
                    help="lower variance level; switches to the self-normalised form")
    v3.add_argument("--beta-plus", type=float, default=None, help="upper variance level")
    v3.add_argument("--trials", type=int, default=100000, help="Monte Carlo trials")

    v4 = vs.add_parser("mgf", formatter_class=fmt, help="one-step MGF closed form vs quadrature")
    v4.add_argument("--a", type=float, default=0.5, help="coefficient a")
    v4.add_argument("--nu", type=float, default=0.5, help="quadratic weight, < 1")
    v4.add_argument("--mu", type=float, default=0.0, help="linear weight")
    v4.add_argument("--x", type=float, default=1.0, help="current state")
    v4.add_argument("--rtol", type=float, default=1e-6, help="relative tolerance")

    v5 = vs.add_parser("kl", formatter_class=fmt, help="trajectory KL closed form vs Monte Carlo")
    v5.add_argument("--rho", type=float, default=0.9, help="scale of the orthogonal truth")
    v5.add_argument("--d", type=int, default=2, help="dimension")
    v5.add_argument("--T", type=int, default=10, help="horizon")
    v5.add_argument("--perturb", type=float, default=0.05, help="size of the alternative's offset")
    v5.add_argument("--trials", type=int, default=100000, help="Monte Carlo trials")
    v5.add_argument("--system-seed", type=int, default=0, help="seed for O and the offset")

    v6 = vs.add_parser("packing", formatter_class=fmt, help="build and certify an O(d) packing")
    v6.add_argument("--d", type=int, default=3, help="dimension")
    v6.add_argument("--eps0", type=float, default=1.0 / 300, help="packing scale, <= 1/256")

    for v_ in (v, v2, v3, v4, v5, v6):
        _add_seed(v_)
        v_.add_argument("--out", default=None, help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, LinsysidError, ValueError, OSError) as e:
        print(f"linsysid {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

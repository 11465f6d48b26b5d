import json
import subprocess
import sys

import pytest

from linsysid import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_row_count(tmp_path, capsys):
    path = tmp_path / "traj.csv"
    code, out, _ = run(["simulate", "--scalar-a", "0.9", "--T", "100", "--sigma", "1",
                        "--seed", "7", "--out", str(path)], capsys)
    assert code == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_0"
    assert len(lines) == 102  # header + states X_0..X_100
    assert "seed" in out


def test_simulate_then_estimate(tmp_path, capsys):
    traj = tmp_path / "traj.csv"
    run(["simulate", "--matrix", "[[0.5, 0.1], [0.0, 0.8]]", "--T", "2000", "--seed", "1",
         "--out", str(traj)], capsys)
    rep = tmp_path / "est.json"
    code, _, _ = run(["estimate", "--traj", str(traj), "--truth", "[[0.5, 0.1], [0.0, 0.8]]",
                      "--out", str(rep)], capsys)
    assert code == 0
    data = json.loads(rep.read_text())
    assert set(data) >= {"a_hat", "op_error", "sigma_min_x", "rank_deficient"}
    assert data["op_error"] < 0.1


def test_verify_packing(tmp_path, capsys):
    path = tmp_path / "pack.json"
    code, _, _ = run(["verify", "packing", "--d", "3", "--eps0", "0.003", "--seed", "1",
                      "--out", str(path)], capsys)
    assert code == 0
    data = json.loads(path.read_text())
    assert data["count"] >= 4
    assert data["min_op_separation"] >= 0.003 / 4


def test_verify_failure_exit_code(capsys):
    code, _, _ = run(["verify", "kl", "--trials", "20000", "--seed", "2"], capsys)
    assert code == cli.EXIT_UNVERIFIED


@pytest.mark.parametrize("argv", [
    ["simulate", "--T", "10"],
    ["simulate", "--scalar-a", "0.5", "--T", "ten"],
    ["bound", "--kind", "nonsense"],
    ["lower-bound", "--kind", "orthogonal", "--eps", "0.01"],
    ["verify", "packing", "--eps0", "0.01"],
    ["verify", "mgf", "--nu", "1.5"],
    ["simulate", "--matrix", "[[1, 2]", "--T", "5"],
])
def test_invalid_input_exit_code(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        code = cli.main(argv)
        raise SystemExit(code)
    assert exc.value.code == cli.EXIT_INVALID
    assert capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system_spec": {"kind": "scalar", "a": 0.5}, "bogus": 1}))
    code, _, err = run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == cli.EXIT_INVALID
    assert "bogus" in err


def test_sweep_is_replayable(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system_spec": {"kind": "scalar", "a": 0.9},
                               "T_grid": [100, 200, 400], "trials": 200, "master_seed": 3}))
    for name in ("r1", "r2"):
        assert run(["sweep", "--config", str(cfg), "--out", str(tmp_path / name),
                    "--threads", "1"], capsys)[0] == 0
    for f in ("sweep.csv", "sweep.json"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


HELP_FLAGS = {
    "bound": ["--c ", "--C ", "--p ", "--delta"],
    "lower-bound": ["--c0"],
    "gramian": ["--c "],
    "regime-report": ["--c "],
}


@pytest.mark.parametrize("sub", sorted(HELP_FLAGS))
def test_help_lists_constants_with_defaults(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in HELP_FLAGS[sub]:
        assert flag in out
    assert "default" in out


def subparsers(parser):
    for act in parser._actions:
        if act.choices and isinstance(act.choices, dict):
            for name, sp in act.choices.items():
                yield name, sp
                yield from subparsers(sp)


def test_every_optional_flag_shows_its_default():
    for name, sp in subparsers(cli.build_parser()):
        lines = " ".join(sp.format_help().split())
        for act in sp._actions:
            if not act.option_strings or act.required or act.dest in ("help", "version"):
                continue
            if act.nargs == 0 and act.default is False:
                continue  # store_true switches
            assert f"(default: {act.default})" in lines, (name, act.dest)


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "linsysid", "bound", "--kind", "scalar",
                          "--a", "0", "--eps", "0.1", "--delta", "0.2"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["value"] == 1097

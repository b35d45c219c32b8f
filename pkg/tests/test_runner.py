import csv
import json

import numpy as np
import pytest

from polyelast.cli import main
from polyelast.runner import (
    ENERGY_COLUMNS,
    ENTROPY_COLUMNS,
    ConfigError,
    fit_slope,
    fmt,
    parse_config,
    refinement_study,
    run_experiment,
)

MIN = "mesh.n = 2\ntime.dt = 1e-3\ntime.t_final = 1e-2\n"


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_defaults():
    cfg = parse_config(MIN)
    assert cfg.fem_degree == 1 and cfg.energy_kappa == 1.0 and cfg.energy_gamma == 1.0 and cfg.energy_p == 7.0
    assert cfg.n_steps == 10


def test_sectioned_equals_dotted():
    sec = "[mesh]\nn = 2\n[time]\ndt = 1e-3\nt_final = 1e-2\n"
    assert parse_config(sec) == parse_config(MIN)


@pytest.mark.parametrize(
    "extra, key, msg",
    [
        ("energy.p = 4\n", "energy.p", "p must exceed 6"),
        ("energy.p = 6\n", "energy.p", "p must exceed 6"),
        ("mesh.m = 3\n", "mesh.m", "unknown key"),
        ("time.dt = 2e-3\n", "time.dt", "duplicate"),
        ("fem.degree = 0\n", "fem.degree", ">= 1"),
        ("fem.quad_order = 9\n", "fem.quad_order", "1..6"),
        ("initial.preset = wobble\n", "initial.preset", "one of"),
        ("solver.newton_tol = abc\n", "solver.newton_tol", "cannot parse"),
        ("monitor.reference = exact\n", "monitor.reference", "one of"),
    ],
)
def test_rejections(extra, key, msg):
    with pytest.raises(ConfigError) as info:
        parse_config(MIN + extra)
    assert key in str(info.value) and msg in str(info.value)


def test_rejects_missing_and_malformed():
    with pytest.raises(ConfigError, match="mesh.n"):
        parse_config("time.dt = 1e-3\ntime.t_final = 1e-2\n")
    with pytest.raises(ConfigError, match="time.dt"):
        parse_config("mesh.n = 2\ntime.dt = 3e-3\ntime.t_final = 1e-2\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("mesh.n 2\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("[mesh]\nn=2\n[mesh]\nn=2\n")


def test_duplicate_is_deterministic():
    msgs = set()
    for _ in range(3):
        with pytest.raises(ConfigError) as info:
            parse_config("mesh.n = 2\n[mesh]\nn = 3\n")
        msgs.add(str(info.value))
    assert msgs == {"mesh.n: duplicate key"}


def test_fmt():
    assert fmt(0.1) == "0.1" and fmt(np.float64(1e-20)) == "1e-20" and fmt(3) == "3"


def test_equilibrium_run(tmp_path):
    cfg = parse_config(MIN + "initial.preset = equilibrium\nmonitor.reference = equilibrium\n")
    summary, code = run_experiment(cfg, tmp_path)
    assert code == 0 and summary.passed
    head, data = read_csv(tmp_path / "energy.csv")
    assert tuple(head) == ENERGY_COLUMNS and len(data) == 11
    assert np.ptp(data[:, 3]) <= 1e-12
    head, rep = read_csv(tmp_path / "entropy_report.csv")
    assert tuple(head) == ENTROPY_COLUMNS
    assert np.all(rep[:, 2] == 0) and np.all(rep[:, 7] <= 1e-12)


def test_translation_run(tmp_path):
    cfg = parse_config(MIN + "initial.preset = translation\ninitial.amplitude = 0.2\nmonitor.reference = translation\n")
    summary, code = run_experiment(cfg, tmp_path)
    c = 0.2 * np.array([1.0, 0.5, 0.25])
    _, data = read_csv(tmp_path / "energy.csv")
    assert code == 0
    assert np.allclose(data[:, 1], 0.5 * c @ c, rtol=1e-13)
    # kinetic + internal = total, row by row
    assert np.allclose(data[:, 1] + data[:, 2], data[:, 3], rtol=1e-15)


def test_perturbed_deterministic(tmp_path):
    cfg = parse_config(MIN + "monitor.reference = equilibrium\n")
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(cfg, a)
    summary, code = run_experiment(cfg, b)
    for name in ("energy.csv", "entropy_report.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert b"\r\n" not in (a / name).read_bytes()
    assert code == 0
    js = json.loads((a / "summary.json").read_text())
    assert "wall_time" not in js and js["config"]["mesh"]["n"] == 2
    assert js["increment_sum"] <= js["increment_bound"]
    assert js["max_gradient_defect"] <= 1e-12


def test_different_seed_changes_output(tmp_path):
    run_experiment(parse_config(MIN), tmp_path / "a")
    run_experiment(parse_config(MIN + "initial.seed = 1\n"), tmp_path / "b")
    assert (tmp_path / "a" / "energy.csv").read_bytes() != (tmp_path / "b" / "energy.csv").read_bytes()


def test_failure_exit_code(tmp_path):
    cfg = parse_config(MIN + "solver.max_newton = 1\nsolver.newton_tol = 1e-300\n")
    summary, code = run_experiment(cfg, tmp_path)
    assert code != 0 and summary.failed_step == 1
    js = json.loads((tmp_path / "summary.json").read_text())
    assert js["failed_step"] == 1 and not js["passed"]
    assert (tmp_path / "energy.csv").exists()


def test_fit_slope():
    t = np.array([0.4, 0.2, 0.1])
    assert fit_slope(t, 3 * t**1.5) == pytest.approx(1.5)
    assert np.isnan(fit_slope(t, np.zeros(3)))


def test_study_equilibrium_flags(tmp_path):
    cfg = parse_config("mesh.n = 2\ntime.dt = 1e-3\ntime.t_final = 4e-3\ninitial.preset = equilibrium\n")
    rep = refinement_study(cfg, [2e-3, 1e-3, 5e-4], out_dir=tmp_path, refine=2)
    assert np.all(rep.sup_eta_r == 0) and np.isnan(rep.slope) and rep.flagged
    head, data = read_csv(tmp_path / "rates.csv")
    assert head == ["tau", "steps", "sup_eta_r", "sqrt_sup_eta_r"] and len(data) == 3


def test_study_validation():
    cfg = parse_config(MIN)
    with pytest.raises(ValueError):
        refinement_study(cfg, [1e-3, 5e-4])
    with pytest.raises(ValueError):
        refinement_study(cfg, [1e-3, 5e-4, 1e-4])


def test_cli(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    path.write_text(MIN + f"output.dir = {tmp_path / 'out'}\n")
    assert main(["solve", "--config", str(path), "--dump-mesh", str(tmp_path / "mesh.txt")]) == 0
    assert (tmp_path / "out" / "energy.csv").exists() and (tmp_path / "mesh.txt").exists()
    assert main(["check-energy", "--config", str(path), "--samples", "100"]) == 0
    assert "PASS H1" in capsys.readouterr().out
    bad = tmp_path / "bad.cfg"
    bad.write_text(MIN + "energy.p = 4\n")
    assert main(["solve", "--config", str(bad)]) == 2
    assert "p must exceed 6" in capsys.readouterr().err


def test_cli_study(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    path.write_text("mesh.n = 2\ntime.dt = 1e-3\ntime.t_final = 4e-3\n")
    assert main(["study", "--config", str(path), "--dt-list", "2e-3,1e-3,5e-4", "--refine", "2", "--out", str(tmp_path)]) == 0
    assert "slope=" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["study", "--config", str(path), "--dt-list", "1e-3,5e-4"])


def test_study_halving_ratio():
    # perturbed preset on the 2^3 mesh: one halving of tau against the surrogate reference
    T = 0.04
    cfg = parse_config(f"mesh.n = 2\ntime.dt = {T / 20!r}\ntime.t_final = {T!r}\n")
    rep = refinement_study(cfg, [T / 20, T / 40, T / 80], refine=16)
    assert rep.sup_eta_r[0] > rep.sup_eta_r[1] > rep.sup_eta_r[2] > 0
    assert 1.4 <= rep.ratios[0] <= 2.8, f"ratio {rep.ratios[0]:.3f}"

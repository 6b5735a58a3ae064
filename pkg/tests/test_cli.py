import json
import math

import numpy as np
import pytest

from hiertraj.cli import run
from hiertraj.config import ExperimentConfig, load_config
from hiertraj.dynamics import forward_kinematics, ArmModel
from hiertraj.errors import InvalidInputError
from hiertraj.reports import load_report, read_csv
from hiertraj.solver import prioritized_oc

from conftest import canonical_problem


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.setenv("HIERTRAJ_LOG", "quiet")


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def trivial_config():
    q = [math.pi / 2, -math.pi / 2, 0.0]
    arm = ArmModel.uniform(3)
    return {"tasks": [{"priority": k, "body_point": 4 - k,
                       "target": forward_kinematics(q, 4 - k, arm).tolist()} for k in (1, 2, 3)]}


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = run(["solve", "--out", str(out)])
    return code, out


def test_solve_default_is_canonical(solved):
    code, out = solved
    assert code == 0
    doc = json.loads((out / "report_prioritized.json").read_text())
    err = doc["task_errors"]
    assert doc["termination"] == "converged"
    assert err[0] < err[1] and err[0] < err[2]


def test_report_round_trip(solved):
    _, out = solved
    model, sys, x_s, U0, stack = canonical_problem()
    rep = prioritized_oc(x_s, U0, stack, sys)
    doc = load_report(out / "report_prioritized.json")
    assert np.array_equal(doc["initial_costs"], rep.initial_costs)
    assert len(doc["iterations"]) == rep.n_iterations
    for a, b in zip(doc["iterations"], rep.iterations):
        assert np.array_equal(a["costs"], b.costs)
        assert a["s"] == b.s.tolist() and a["r"] == b.r.tolist()
    cfg = ExperimentConfig.model_validate(doc["config"])
    assert cfg == ExperimentConfig()


def test_trajectory_csv(solved):
    _, out = solved
    header, rows = read_csv(out / "trajectory_prioritized.csv")
    assert header == ["t", "q1", "q2", "q3", "dq1", "dq2", "dq3", "u1", "u2", "u3"]
    assert rows.shape == (51, 10)
    assert np.allclose(rows[:, 0], 0.02 * np.arange(51))
    assert np.all(np.isnan(rows[-1, 7:])) and np.all(np.isfinite(rows[:-1]))
    model, sys, x_s, U0, stack = canonical_problem()
    rep = prioritized_oc(x_s, U0, stack, sys)
    # 17 significant digits round-trip exactly
    assert np.array_equal(rows[1:, 1:7], rep.trajectory.states(6))
    assert np.array_equal(rows[:-1, 7:], rep.trajectory.controls(3))


def test_same_config_same_bytes(tmp_path):
    cfg = write_cfg(tmp_path, {"init_noise": 0.5, "solver": {"max_main_iters": 3}})
    outs = []
    for name in ("a", "b"):
        run(["solve", "--config", cfg, "--out", str(tmp_path / name), "--seed", "7"])
        outs.append(tmp_path / name)
    for f in ("report_prioritized.json", "trajectory_prioritized.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    run(["solve", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "8"])
    assert ((tmp_path / "c" / "trajectory_prioritized.csv").read_bytes()
            != (outs[0] / "trajectory_prioritized.csv").read_bytes())


def test_trivial_config_one_iteration(tmp_path):
    out = tmp_path / "o"
    assert run(["solve", "--config", write_cfg(tmp_path, trivial_config()), "--out", str(out)]) == 0
    doc = json.loads((out / "report_prioritized.json").read_text())
    assert doc["n_iterations"] == 1


def test_validation_exit_with_field_path(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["solve", "--config", write_cfg(tmp_path, {"discretization": {"dt": 0}}),
                "--out", str(out)])
    assert code == 1
    assert "discretization.dt" in capsys.readouterr().err
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 1 and "discretization.dt" in err["message"]


@pytest.mark.parametrize("data,needle", [
    ({"bogus": 1}, "bogus"),
    ({"tasks": [{"priority": 1, "body_point": 9, "target": [0, 0]}]}, "body_point"),
    ({"tasks": [{"priority": 2, "body_point": 1, "target": [0, 0]}]}, "priorities"),
    ({"penalties": {"mu": 1.0}}, "penalties.mu"),
    ({"solver": {"hessian_mode": "bfgs"}}, "solver.hessian_mode"),
    ({"arm": {"link_masses": [1, 1]}}, "link_masses"),
    ({"baseline": {"weights": [-1]}}, "weights"),
])
def test_invalid_configs(tmp_path, data, needle):
    with pytest.raises(InvalidInputError, match=needle):
        load_config(write_cfg(tmp_path, data))


def test_unreadable_config(tmp_path):
    assert run(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_nonconvergence_exit(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"solver": {"max_main_iters": 1}})
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 2
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2


def test_divergence_exit(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"init_noise": 1e30})
    assert run(["solve", "--config", cfg, "--out", str(out)]) == 3
    assert json.loads((out / "error.json").read_text())["exit_code"] == 3


def test_log_levels(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HIERTRAJ_LOG", "loud")
    assert run(["solve", "--config", write_cfg(tmp_path, trivial_config()),
                "--out", str(tmp_path / "a")]) == 1
    monkeypatch.setenv("HIERTRAJ_LOG", "info")
    assert run(["solve", "--config", write_cfg(tmp_path, trivial_config()),
                "--out", str(tmp_path / "b")]) == 0
    assert "prioritized: converged" in capsys.readouterr().err


def test_weight_and_hessian_flags(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, trivial_config())
    assert run(["baseline", "--config", cfg, "--out", str(out), "--weight", "2", "--weight", "50",
                "--hessian", "full"]) == 0
    assert sorted(p.name for p in out.glob("report_*")) == ["report_weighted_w2.json",
                                                            "report_weighted_w50.json"]
    doc = json.loads((out / "report_weighted_w50.json").read_text())
    assert doc["weight"] == 50 and doc["config"]["solver"]["hessian_mode"] == "full"


def test_track_writes_logs(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"tracker": {"duration": 1.2}})
    assert run(["track", "--config", cfg, "--out", str(out)]) == 0
    header, rows = read_csv(out / "tracking_planned.csv")
    assert header[:10] == ["t", "q1", "q2", "q3", "dq1", "dq2", "dq3", "u1", "u2", "u3"]
    assert header[10:] == ["err1", "err2", "err3"] and rows.shape == (1201, 13)
    summary = json.loads((out / "tracking_summary.json").read_text())
    assert set(summary["runs"]) == {"min_jerk", "planned"}
    assert summary["runs"]["min_jerk"]["damping"] == 0.1
    assert summary["runs"]["planned"]["damping"] == 0.01


def test_compare_summary(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"baseline": {"weights": [100.0, 10000.0]}})
    assert run(["compare", "--config", cfg, "--out", str(out)]) == 0
    table = json.loads((out / "summary.json").read_text())
    assert table["columns"] == ["w=100", "w=10000", "prioritized"]
    e = table["task_errors"]["prioritized"]
    assert e[0] < e[1] and e[0] < e[2]
    text = capsys.readouterr().out
    assert "Task 1 err [mm]" in text and "Iterations" in text

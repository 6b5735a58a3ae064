"""Report and trajectory files. Every write goes to a temp file and is renamed into place."""

import csv
import io
import json
import os
import tempfile

import numpy as np

from .dynamics import forward_kinematics


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _vec(a):
    return None if a is None else [_num(v) for v in np.asarray(a, dtype=float).reshape(-1)]


def terminal_errors(traj, stack, sys):
    """Distance of each tracked task coordinate to its target at the last state."""
    if traj is None:
        return [None] * len(stack)
    q = traj.states(sys.n)[-1, :sys.m]
    out = []
    for task in stack:
        if task.kind == "reach":
            out.append(float(np.linalg.norm(forward_kinematics(q, task.body_point, sys.model)
                                             - task.target)))
        elif task.kind == "joint":
            out.append(float(np.linalg.norm(q - task.target)))
        else:
            out.append(None)
    return out


def _level(lv):
    return {"level": lv.level, "attempts": lv.attempts, "s": _num(lv.s), "r": _num(lv.r),
            "variations": _vec(lv.variations), "slack": _vec(lv.slack),
            "level_change": _num(lv.level_change), "costs": _vec(lv.costs)}


def report_to_dict(report, stack, sys, kind="prioritized", weight=None, config=None):
    its = []
    for it in report.iterations:
        its.append({
            "index": it.index,
            "costs": _vec(it.costs),
            "monitor_costs": _vec(it.monitor_costs),
            "s": _vec(it.s),
            "r": _vec(it.r),
            "tuning_attempts": list(it.tuning_attempts),
            "decrease_trials": it.decrease_trials,
            "accepted": [_level(lv) for lv in it.accepted],
            "steps": [[_level(lv) for lv in levels] for levels in it.steps],
        })
    per_task = report.final_costs
    if report.monitor_labels is not None:
        per_task = (report.iterations[-1].monitor_costs if report.iterations
                    else report.initial_monitor_costs)
    return {
        "kind": kind,
        "weight": weight,
        "config": config,
        "labels": list(report.labels),
        "monitor_labels": report.monitor_labels,
        "initial_costs": _vec(report.initial_costs),
        "initial_monitor_costs": _vec(report.initial_monitor_costs),
        "iterations": its,
        "n_iterations": report.n_iterations,
        "termination": report.termination,
        "message": report.message,
        "final_costs": _vec(report.final_costs),
        "task_labels": [t.label for t in stack],
        "task_costs": _vec(per_task),
        "task_errors": terminal_errors(report.trajectory, stack, sys),
    }


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def load_report(path):
    """Read a report; cost vectors come back as float arrays (None -> nan)."""
    with open(path) as fh:
        data = json.load(fh)

    def arr(v):
        return None if v is None else np.array([np.nan if x is None else x for x in v], dtype=float)

    data["initial_costs"] = arr(data["initial_costs"])
    data["final_costs"] = arr(data["final_costs"])
    data["task_costs"] = arr(data["task_costs"])
    for it in data["iterations"]:
        it["costs"] = arr(it["costs"])
        it["monitor_costs"] = arr(it["monitor_costs"])
    return data


def _fmt(v):
    return format(float(v), ".17g")


def trajectory_header(n_links, extra=()):
    return (["t"] + [f"q{i}" for i in range(1, n_links + 1)]
            + [f"dq{i}" for i in range(1, n_links + 1)]
            + [f"u{i}" for i in range(1, n_links + 1)] + list(extra))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trajectory_rows(t, states, controls, extra=None):
    """One row per state; the last state has no control and gets nan torques."""
    states = np.asarray(states, dtype=float)
    m = states.shape[1] // 2
    U = np.full((len(states), m), np.nan)
    U[:len(controls)] = controls
    cols = [np.asarray(t)[:, None], states, U]
    if extra is not None:
        cols.append(np.asarray(extra, dtype=float))
    return np.hstack(cols)


def write_trajectory_csv(path, traj, sys):
    states = traj.all_states(sys.n)
    t = sys.dt * np.arange(len(states))
    rows = trajectory_rows(t, states, traj.controls(sys.m))
    atomic_write_text(path, _csv_text(trajectory_header(sys.m), rows))


def write_tracking_csv(path, log, n_links):
    extra = [f"err{k}" for k in range(1, log.target_error.shape[1] + 1)]
    rows = trajectory_rows(log.t, log.X, log.U, log.target_error)
    atomic_write_text(path, _csv_text(trajectory_header(n_links, extra), rows))


def read_csv(path):
    """Header list and float array of a written CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)

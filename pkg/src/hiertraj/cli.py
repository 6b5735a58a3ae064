"""Command-line experiment runner.

    hiertraj solve    --config cfg.json --out results/
    hiertraj baseline --weight 100 --weight 1e4
    hiertraj track
    hiertraj compare

Exit codes: 0 success, 1 invalid input, 2 no convergence (iteration limit or
penalty tuning exhausted), 3 divergence. Failures also leave ``error.json``
in the output directory.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from .baseline import WeightedSpec, weighted_oc
from .config import Experiment, config_to_dict, load_config
from .dynamics import gravity_compensation
from .errors import DivergenceError, InvalidInputError
from .reports import (report_to_dict, write_json, write_tracking_csv,
                      write_trajectory_csv)
from .solver import prioritized_oc
from .tracker import closed_loop_sim

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_DIVERGED = 0, 1, 2, 3
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}

log = logging.getLogger("hiertraj")


class RunFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _exit_code(termination):
    if termination == "converged":
        return EXIT_OK
    if termination == "divergence":
        return EXIT_DIVERGED
    return EXIT_NOT_CONVERGED


def _wtag(w):
    return f"w{w:g}"


class Runner:
    def __init__(self, cfg, out):
        self.cfg = cfg
        self.exp = Experiment(cfg)
        self.out = out
        self.timing = {}
        self._planned = None

    def path(self, name):
        return os.path.join(self.out, name)

    def initial_controls(self):
        exp = self.exp
        q0 = np.asarray(exp.x_s[:exp.model.m])
        U0 = np.tile(gravity_compensation(q0, exp.model), exp.system.N)
        if self.cfg.init_noise > 0:
            rng = np.random.default_rng(self.cfg.seed)
            U0 = U0 + self.cfg.init_noise * rng.standard_normal(U0.shape)
        return U0

    def solve(self):
        if self._planned is not None:
            return self._planned
        exp = self.exp
        started = time.perf_counter()
        rep = prioritized_oc(exp.x_s, self.initial_controls(), exp.stack, exp.system,
                             exp.solver, exp.penalties)
        self.timing["prioritized"] = time.perf_counter() - started
        doc = report_to_dict(rep, exp.stack, exp.system, "prioritized",
                             config=config_to_dict(self.cfg))
        write_json(self.path("report_prioritized.json"), doc)
        if rep.trajectory is not None:
            write_trajectory_csv(self.path("trajectory_prioritized.csv"), rep.trajectory,
                                 exp.system)
        log.info("prioritized: %s after %d iterations, errors %s", rep.termination,
                 rep.n_iterations, doc["task_errors"])
        self._planned = (rep, doc)
        return self._planned

    def baseline(self):
        exp = self.exp
        out = []
        for w in self.cfg.baseline.weights:
            started = time.perf_counter()
            rep = weighted_oc(exp.x_s, self.initial_controls(), WeightedSpec(exp.stack, w),
                              exp.system, exp.solver, exp.penalties,
                              scale_penalties=self.cfg.baseline.scale_penalties)
            self.timing[f"weighted_{_wtag(w)}"] = time.perf_counter() - started
            doc = report_to_dict(rep, exp.stack, exp.system, "weighted", weight=w,
                                 config=config_to_dict(self.cfg))
            write_json(self.path(f"report_weighted_{_wtag(w)}.json"), doc)
            if rep.trajectory is not None:
                write_trajectory_csv(self.path(f"trajectory_weighted_{_wtag(w)}.csv"),
                                     rep.trajectory, exp.system)
            log.info("weighted w=%g: %s after %d iterations, errors %s", w, rep.termination,
                     rep.n_iterations, doc["task_errors"])
            out.append((w, rep, doc))
        return out

    def track(self):
        exp = self.exp
        rep, doc = self.solve()
        if rep.trajectory is None:
            raise RunFailed(EXIT_DIVERGED, "planner produced no trajectory to track")
        t_cfg = self.cfg.tracker
        runs = {
            "min_jerk": dict(source="min_jerk", damping=t_cfg.raw_damping),
            "planned": dict(source="planned", damping=t_cfg.planned_damping),
        }
        summary = {"duration": exp.track_duration, "motion_time": exp.motion_time,
                   "planner_terminal_errors": doc["task_errors"], "runs": {}}
        for name, spec in runs.items():
            started = time.perf_counter()
            try:
                tlog = closed_loop_sim(exp.x_s, spec["source"], exp.track_duration,
                                       exp.tracker.with_damping(spec["damping"]), exp.model,
                                       exp.stack, planned=rep.trajectory,
                                       plan_dt=exp.system.dt, motion_time=exp.motion_time)
            except DivergenceError as exc:
                raise RunFailed(EXIT_DIVERGED, f"{name} tracking: {exc}") from exc
            self.timing[f"track_{name}"] = time.perf_counter() - started
            write_tracking_csv(self.path(f"tracking_{name}.csv"), tlog, exp.model.m)
            summary["runs"][name] = {
                "damping": spec["damping"],
                "labels": tlog.labels,
                "final_errors": [float(v) for v in tlog.target_error[-1]],
                "peak_to_peak_last_0.3s": [tlog.peak_to_peak(k, 0.3)
                                           for k in range(len(tlog.labels))],
            }
        write_json(self.path("tracking_summary.json"), summary)
        return rep, summary

    def compare(self):
        rep, doc = self.solve()
        weighted = self.baseline()
        columns = [(f"w={w:g}", d) for w, _, d in weighted] + [("prioritized", doc)]
        labels = doc["task_labels"]
        table = {
            "columns": [c for c, _ in columns],
            "task_labels": labels,
            "task_errors": {c: d["task_errors"] for c, d in columns},
            "iterations": {c: d["n_iterations"] for c, d in columns},
            "termination": {c: d["termination"] for c, d in columns},
        }
        write_json(self.path("summary.json"), table)
        from .reports import atomic_write_text
        atomic_write_text(self.path("summary.txt"), format_summary(table))
        print(format_summary(table), end="")
        codes = [_exit_code(rep.termination)] + [_exit_code(r.termination) for _, r, _ in weighted]
        return max(codes)


def format_summary(table):
    cols = table["columns"]
    width = max(14, *(len(c) + 2 for c in cols))
    lines = ["".ljust(22) + "".join(c.rjust(width) for c in cols)]
    for k, label in enumerate(table["task_labels"]):
        cells = []
        for c in cols:
            e = table["task_errors"][c][k]
            cells.append(("-" if e is None else f"{e * 1e3:.4g}").rjust(width))
        lines.append(f"Task {k + 1} err [mm]".ljust(22) + "".join(cells))
    lines.append("Iterations".ljust(22)
                 + "".join(str(table["iterations"][c]).rjust(width) for c in cols))
    lines.append("Termination".ljust(22)
                 + "".join(table["termination"][c].rjust(width) for c in cols))
    return "\n".join(lines) + "\n"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="random seed (u64)")
    common.add_argument("--hessian", choices=["gauss_newton", "full"],
                        help="task Hessian approximation")
    parser = argparse.ArgumentParser(prog="hiertraj",
                                     description="Prioritized trajectory optimization runner")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="prioritized solve")
    b = sub.add_parser("baseline", parents=[common], help="weighted-sum solves")
    b.add_argument("--weight", type=float, action="append",
                   help="weight w (repeatable; replaces the config list)")
    sub.add_parser("track", parents=[common], help="closed-loop tracking, both reference modes")
    c = sub.add_parser("compare", parents=[common], help="all runs plus a summary table")
    c.add_argument("--weight", type=float, action="append")
    return parser


def _setup_logging():
    level = os.environ.get("HIERTRAJ_LOG", "quiet").strip().lower() or "quiet"
    if level not in LOG_LEVELS:
        raise InvalidInputError(
            f"HIERTRAJ_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _error_record(out, code, kind, message):
    if out is None:
        return
    try:
        write_json(os.path.join(out, "error.json"),
                   {"exit_code": code, "error": kind, "message": message})
    except OSError:
        pass


def run(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        _setup_logging()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.hessian is not None:
            overrides["solver.hessian_mode"] = args.hessian
        if getattr(args, "weight", None):
            overrides["baseline.weights"] = args.weight
        cfg = load_config(args.config, overrides)
        out = out or cfg.output_dir
        runner = Runner(cfg, out)
        if args.command == "solve":
            code = _exit_code(runner.solve()[0].termination)
        elif args.command == "baseline":
            code = max(_exit_code(rep.termination) for _, rep, _ in runner.baseline())
        elif args.command == "track":
            code = _exit_code(runner.track()[0].termination)
        else:
            code = runner.compare()
        write_json(os.path.join(out, "timing.json"), runner.timing)
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        _error_record(out or "out", EXIT_INVALID, "invalid_input", str(exc))
        return EXIT_INVALID
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        _error_record(out, exc.code, "divergence", str(exc))
        return exc.code
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _error_record(out, EXIT_DIVERGED, "divergence", str(exc))
        return EXIT_DIVERGED
    if code != EXIT_OK:
        msg = "solver did not converge" if code == EXIT_NOT_CONVERGED else "divergence"
        print(f"error: {msg}", file=sys.stderr)
        _error_record(out, code, "not_converged" if code == EXIT_NOT_CONVERGED else "divergence",
                      msg)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

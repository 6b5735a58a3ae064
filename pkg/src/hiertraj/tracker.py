"""Closed-loop execution: task-space PD feedback through a damped priority cascade.

References come either from quintic minimum-jerk profiles straight to the
task targets, or from a planned trajectory resampled to the control period.
Each tick resolves joint accelerations task by task in the nullspace of the
tasks above, converts them to torques with inverse dynamics, and integrates
the plant with RK4.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import backend
from .dynamics import forward_kinematics, inverse_dynamics, point_jacobian, point_jacobian_dot_qd
from .errors import DivergenceError, InvalidInputError
from .linalg import DEFAULT_PINV, nullspace_projector

SOURCES = ("min_jerk", "planned")


def _diag(v, name):
    a = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise InvalidInputError(f"{name} entries must be finite and >= 0")
    return a


@dataclass(frozen=True, eq=False)
class TrackerConfig:
    """Gains are diagonal: a scalar applies to every task coordinate."""

    Kp: object = 10.0
    Kd: object = 5.0
    damping: float = 0.02
    control_dt: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "Kp", _diag(self.Kp, "Kp"))
        object.__setattr__(self, "Kd", _diag(self.Kd, "Kd"))
        if not (np.isfinite(self.damping) and self.damping >= 0):
            raise InvalidInputError(f"damping must be >= 0, got {self.damping}")
        if not (np.isfinite(self.control_dt) and self.control_dt > 0):
            raise InvalidInputError(f"control_dt must be > 0, got {self.control_dt}")

    def with_damping(self, damping):
        return TrackerConfig(self.Kp, self.Kd, damping, self.control_dt)


@dataclass(frozen=True, eq=False)
class TrackingLog:
    t: np.ndarray
    X: np.ndarray  # (ticks + 1, n)
    U: np.ndarray  # (ticks, m)
    labels: list
    positions: list  # per task, (ticks + 1, dim)
    references: list
    target_error: np.ndarray  # (ticks + 1, K) distance to each task target
    reference_error: np.ndarray

    def peak_to_peak(self, task, window):
        """Largest coordinate-wise peak-to-peak of a task position over the last ``window`` s."""
        sel = self.t >= self.t[-1] - window - 1e-12
        p = self.positions[task][sel]
        return float(np.max(np.ptp(p, axis=0)))


def min_jerk_reference(p0, pf, T, t):
    """Quintic rest-to-rest profile; returns (x_r, xd_r, xdd_r)."""
    if not (np.isfinite(T) and T > 0):
        raise InvalidInputError(f"T must be > 0, got {T}")
    if t < 0:
        raise InvalidInputError(f"t must be >= 0, got {t}")
    p0 = np.asarray(p0, dtype=float)
    delta = np.asarray(pf, dtype=float) - p0
    if t >= T:
        return p0 + delta, np.zeros_like(delta), np.zeros_like(delta)
    tau = t / T
    s = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)
    ds = 30.0 * tau ** 2 * (1.0 - tau) ** 2 / T
    dds = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau) / T ** 2
    return p0 + s * delta, ds * delta, dds * delta


def pd_accel(x, xd, x_r, xd_r, xdd_r, cfg):
    x_r = np.asarray(x_r, dtype=float)
    return (xdd_r + cfg.Kd * (np.asarray(xd_r) - np.asarray(xd))
            + cfg.Kp * (x_r - np.asarray(x)))


def damped_pinv(J, lam):
    """J^T (J J^T + lam^2 I)^-1."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or not np.all(np.isfinite(J)):
        raise InvalidInputError("J must be a finite 2-D array")
    p = J.shape[0]
    if lam == 0:
        # keep the undamped case defined on rank-deficient J
        return np.linalg.pinv(J)
    return np.linalg.solve(J @ J.T + lam * lam * np.eye(p), J).T


def _task_kinematics(task, q, qd, model):
    """Position, Jacobian and Jdot*qd of a task coordinate."""
    if task.kind == "reach":
        return (forward_kinematics(q, task.body_point, model),
                point_jacobian(q, task.body_point, model),
                point_jacobian_dot_qd(q, qd, task.body_point, model))
    if task.kind == "joint":
        return np.array(q, dtype=float), np.eye(model.m), np.zeros(model.m)
    raise InvalidInputError(f"{task.kind} tasks have no tracked coordinate")


def tracked_tasks(stack):
    return [t for t in stack if t.kind != "effort"]


def controller_step(q, qd, refs, tasks, model, cfg):
    """Torque from the damped acceleration cascade; ``refs[k] = (x_r, xd_r, xdd_r)``."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if len(refs) != len(tasks):
        raise InvalidInputError(f"{len(tasks)} tasks but {len(refs)} references")
    qdd = np.zeros(model.m)
    P = np.eye(model.m)
    for task, ref in zip(tasks, refs):
        x, J, jdqd = _task_kinematics(task, q, qd, model)
        want = pd_accel(x, J @ qd, *ref, cfg)
        JP = J @ P
        qdd = qdd + damped_pinv(JP, cfg.damping) @ (want - jdqd - J @ qdd)
        P = P @ nullspace_projector(JP, DEFAULT_PINV)
    return inverse_dynamics(q, qd, qdd, model)


class _PlannedReference:
    # cubic spline through the planned joint states, task coordinates
    # differenced on the control grid, held after the plan ends

    def __init__(self, traj, plan_dt, tasks, model, control_dt):
        states = traj.all_states(model.n)
        times = plan_dt * np.arange(len(states))
        self.end = times[-1]
        spline = CubicSpline(times, states[:, :model.m], axis=0)
        grid = np.arange(int(round(self.end / control_dt)) + 1) * control_dt
        qs = spline(grid)
        self.dt = control_dt
        self.samples = []
        for task in tasks:
            pos = np.array([_task_kinematics(task, q, np.zeros(model.m), model)[0] for q in qs])
            vel = np.gradient(pos, control_dt, axis=0)
            acc = np.gradient(vel, control_dt, axis=0)
            self.samples.append((pos, vel, acc))

    def __call__(self, k, t):
        out = []
        for pos, vel, acc in self.samples:
            if k >= len(pos) - 1:
                out.append((pos[-1], np.zeros_like(pos[-1]), np.zeros_like(pos[-1])))
            else:
                out.append((pos[k], vel[k], acc[k]))
        return out


class _MinJerkReference:
    def __init__(self, x0, tasks, model, T):
        q0 = x0[:model.m]
        self.starts = [_task_kinematics(t, q0, x0[model.m:], model)[0] for t in tasks]
        self.goals = [t.target for t in tasks]
        self.T = T

    def __call__(self, k, t):
        return [min_jerk_reference(p0, pf, self.T, t) for p0, pf in zip(self.starts, self.goals)]


def closed_loop_sim(x0, source, duration, cfg, model, stack, planned=None, plan_dt=None,
                    motion_time=1.0):
    """Simulate the tracked plant for ``duration`` seconds.

    ``source="min_jerk"`` drives every task straight to its target over
    ``motion_time``; ``source="planned"`` follows ``planned`` (a trajectory
    sampled every ``plan_dt``).
    """
    if source not in SOURCES:
        raise InvalidInputError(f"unknown reference source {source!r}")
    if not (np.isfinite(duration) and duration > 0):
        raise InvalidInputError(f"duration must be > 0, got {duration}")
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape != (model.n,) or not np.all(np.isfinite(x)):
        raise InvalidInputError(f"x0 must hold {model.n} finite entries")
    tasks = tracked_tasks(stack)
    if source == "planned":
        if planned is None or plan_dt is None:
            raise InvalidInputError("planned source needs a trajectory and its dt")
        reference = _PlannedReference(planned, plan_dt, tasks, model, cfg.control_dt)
    else:
        reference = _MinJerkReference(x, tasks, model, motion_time)

    dt = cfg.control_dt
    ticks = int(round(duration / dt))
    m = model.m
    t = dt * np.arange(ticks + 1)
    X = np.empty((ticks + 1, model.n))
    U = np.empty((ticks, m))
    refs_log = [np.empty((ticks + 1, len(task.target))) for task in tasks]
    X[0] = x
    for k in range(ticks + 1):
        refs = reference(k, t[k])
        for j, r in enumerate(refs):
            refs_log[j][k] = r[0]
        if k == ticks:
            break
        try:
            with np.errstate(all="raise"):
                u = controller_step(x[:m], x[m:], refs, tasks, model, cfg)
                x = backend.impl.step(model.params, model.gravity, x, u, dt, 1)
        except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError, InvalidInputError) as exc:
            raise DivergenceError(f"closed loop diverged at t={t[k + 1]:.6g} s: {exc}",
                                  index=k + 1, time=t[k + 1]) from exc
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"closed loop diverged at t={t[k + 1]:.6g} s",
                                  index=k + 1, time=t[k + 1])
        U[k] = u
        X[k + 1] = x

    positions = [np.array([_task_kinematics(task, xs[:m], xs[m:], model)[0] for xs in X])
                 for task in tasks]
    target_error = np.column_stack(
        [np.linalg.norm(p - task.target, axis=1) for p, task in zip(positions, tasks)])
    reference_error = np.column_stack(
        [np.linalg.norm(p - r, axis=1) for p, r in zip(positions, refs_log)])
    return TrackingLog(t, X, U, [task.label for task in tasks], positions, refs_log,
                       target_error, reference_error)

"""Task residuals, Jacobians, costs and their quadratic expansion.

Every task has the cost ``g = 0.5*|c(X)|^2 + 0.5*e*|U|^2``. Three kinds exist:

``reach``
    tip of link ``body_point`` at ``target`` (2-D) over the time window;
``joint``
    joint angles at ``target`` (length link_count) over the window;
``effort``
    no residual, only the effort term.

Windows are 1-based state indices ``[window_start, N]``; ``None`` means the
terminal state only.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import forward_kinematics, point_jacobian
from .errors import InvalidInputError

HESSIAN_FD_STEP = 1e-5
KINDS = ("reach", "joint", "effort")
HESSIAN_MODES = ("gauss_newton", "full")


@dataclass(frozen=True, eq=False)
class TaskSpec:
    kind: str
    priority: int
    body_point: int | None = None
    target: np.ndarray | None = None
    window_start: int | None = None
    effort: float = 0.0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown task kind {self.kind!r}")
        if int(self.priority) != self.priority or self.priority < 1:
            raise InvalidInputError(f"priority must be a positive integer, got {self.priority}")
        if not (np.isfinite(self.effort) and self.effort >= 0):
            raise InvalidInputError(f"effort weight must be >= 0, got {self.effort}")
        if self.kind == "effort":
            if self.target is not None or self.body_point is not None:
                raise InvalidInputError("effort tasks take no target or body_point")
            return
        if self.target is None:
            raise InvalidInputError(f"{self.kind} task needs a target")
        target = np.array(self.target, dtype=float).reshape(-1)
        if not np.all(np.isfinite(target)):
            raise InvalidInputError("target has non-finite entries")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)
        if self.kind == "reach":
            if self.body_point is None:
                raise InvalidInputError("reach task needs a body_point")
            if target.shape != (2,):
                raise InvalidInputError(f"reach target must be 2-D, got {target.size} entries")
        if self.window_start is not None and (
                int(self.window_start) != self.window_start or self.window_start < 1):
            raise InvalidInputError(f"window_start must be >= 1, got {self.window_start}")

    @property
    def label(self):
        if self.name:
            return self.name
        if self.kind == "reach":
            return f"reach[{self.body_point}]"
        return self.kind

    def window(self, N):
        """1-based state indices covered by the residual."""
        if self.kind == "effort":
            return range(0)
        start = N if self.window_start is None else int(self.window_start)
        if start > N:
            raise InvalidInputError(f"window start {start} exceeds horizon N={N}")
        return range(start, N + 1)

    def residual_dim(self, sys):
        if self.kind == "effort":
            return 0
        per_step = 2 if self.kind == "reach" else sys.m
        return per_step * len(self.window(sys.N))

    def cost(self, X, U, sys):
        return task_cost(self, X, U, sys)

    def expand(self, traj, G, sys, mode="gauss_newton"):
        return expand(self, traj, G, sys, mode)

    def to_dict(self):
        out = {"kind": self.kind, "priority": int(self.priority)}
        if self.body_point is not None:
            out["body_point"] = int(self.body_point)
        if self.target is not None:
            out["target"] = self.target.tolist()
        if self.window_start is not None:
            out["window_start"] = int(self.window_start)
        if self.effort:
            out["effort"] = float(self.effort)
        if self.name:
            out["name"] = self.name
        return out


class TaskStack:
    """Tasks in strict priority order, 1 = highest."""

    def __init__(self, tasks):
        tasks = sorted(tasks, key=lambda t: t.priority)
        if not tasks:
            raise InvalidInputError("task stack is empty")
        prios = [t.priority for t in tasks]
        if prios != list(range(1, len(tasks) + 1)):
            raise InvalidInputError(f"priorities must be exactly 1..K, got {prios}")
        for t in tasks[:-1]:
            if t.effort != 0.0:
                raise InvalidInputError(
                    f"only the lowest-priority task may carry effort (task {t.priority})")
        if tasks[-1].kind == "effort" and tasks[-1].effort <= 0:
            raise InvalidInputError("effort task needs a positive weight")
        self.tasks = tuple(tasks)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def validate_for(self, sys):
        for t in self.tasks:
            t.window(sys.N)
            if t.kind == "reach" and not 1 <= t.body_point <= sys.model.link_count:
                raise InvalidInputError(
                    f"task {t.priority}: body_point {t.body_point} outside 1..{sys.model.link_count}")
            if t.kind == "joint" and t.target.shape != (sys.m,):
                raise InvalidInputError(
                    f"task {t.priority}: joint target needs {sys.m} entries")
        return self


@dataclass(frozen=True, eq=False)
class CostExpansion:
    residual: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray
    effort: np.ndarray
    rhs: np.ndarray


def _states(X, sys):
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.shape != (sys.n * sys.N,):
        raise InvalidInputError(f"X must have {sys.n * sys.N} entries, got {X.size}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X has non-finite entries")
    return X.reshape(sys.N, sys.n)


def residual_and_jacobian(task, X, sys):
    """Residual c(X) and its Jacobian dc/dX of shape (dim, n*N)."""
    states = _states(X, sys)
    window = task.window(sys.N)
    n, nl = sys.n, sys.model.link_count
    dim = task.residual_dim(sys)
    c = np.zeros(dim)
    C = np.zeros((dim, n * sys.N))
    if dim == 0:
        return c, C
    per = dim // len(window)
    for row, t in enumerate(window):
        q = states[t - 1, :nl]
        rs = slice(row * per, (row + 1) * per)
        cols = slice((t - 1) * n, (t - 1) * n + nl)
        if task.kind == "reach":
            c[rs] = forward_kinematics(q, task.body_point, sys.model) - task.target
            C[rs, cols] = point_jacobian(q, task.body_point, sys.model)
        else:
            c[rs] = q - task.target
            C[rs, cols] = np.eye(nl)
    return c, C


def task_cost(task, X, U, sys):
    c, _ = residual_and_jacobian(task, X, sys)
    U = np.asarray(U, dtype=float).reshape(-1)
    return 0.5 * float(c @ c) + 0.5 * task.effort * float(U @ U)


def compute_costs(tasks, X, U, sys):
    """Cost of every task, in the order given."""
    return np.array([task_cost(t, X, U, sys) for t in tasks])


def hessian_term(task, X, sys, mode="gauss_newton"):
    """State Hessian of 0.5*|c|^2: C^T C, plus sum_i c_i d2c_i/dX2 in full mode."""
    if mode not in HESSIAN_MODES:
        raise InvalidInputError(f"unknown hessian mode {mode!r}")
    c, C = residual_and_jacobian(task, X, sys)
    H = C.T @ C
    if mode == "gauss_newton" or c.size == 0 or task.kind == "joint":
        return H
    X = np.asarray(X, dtype=float).reshape(-1)
    n, nl = sys.n, sys.model.link_count
    h = HESSIAN_FD_STEP
    for t in task.window(sys.N):
        for j in range(nl):
            k = (t - 1) * n + j
            Xp = X.copy()
            Xp[k] += h
            Xm = X.copy()
            Xm[k] -= h
            dC = (residual_and_jacobian(task, Xp, sys)[1]
                  - residual_and_jacobian(task, Xm, sys)[1]) / (2.0 * h)
            H[:, k] += dC.T @ c
    return 0.5 * (H + H.T)


def effort_matrix(task, sys):
    return task.effort * np.eye(sys.m * sys.N)


def expand(task, traj, G, sys, mode="gauss_newton"):
    """Quadratic model ingredients of one task around a nominal trajectory."""
    c, C = residual_and_jacobian(task, traj.X, sys)
    H = hessian_term(task, traj.X, sys, mode)
    E = effort_matrix(task, sys)
    d = -G.T @ (C.T @ c) - task.effort * traj.U
    return CostExpansion(c, C, H, E, d)


def predicted_variation(exp, G, U_bar, dU):
    """Second-order model of g(X + G dU, U + dU) - g(X, U)."""
    dX = G @ dU
    return float(exp.residual @ (exp.jacobian @ dX) + U_bar @ (exp.effort @ dU)
                 + 0.5 * dU @ (exp.effort @ dU) + 0.5 * dX @ (exp.hessian @ dX))

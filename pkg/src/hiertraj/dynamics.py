"""Planar N-link arm under gravity, discretized with a fixed step.

Joint angles are relative; the absolute angle of link i is the sum of the
first i joint angles, measured from the +x axis. Gravity points along -y.
State is ``x = (q, qd)``, so ``n = 2 * link_count`` and ``m = link_count``.

Trajectory vectors follow the stacked convention used by the solver:
``X = (x_1, ..., x_N)`` of length ``n*N`` and ``U = (u_0, ..., u_{N-1})`` of
length ``m*N``; the initial state is carried separately.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import DivergenceError, InvalidInputError

FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class ArmModel:
    link_lengths: np.ndarray
    link_masses: np.ndarray
    link_inertias: np.ndarray
    com_offsets: np.ndarray
    joint_damping: np.ndarray
    gravity: float = 9.81

    def __post_init__(self):
        arrays = {}
        for name in ("link_lengths", "link_masses", "link_inertias",
                     "com_offsets", "joint_damping"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        nl = len(arrays["link_lengths"])
        if nl < 1:
            raise InvalidInputError("arm needs at least one link")
        for name, a in arrays.items():
            if len(a) != nl:
                raise InvalidInputError(f"{name} has {len(a)} entries, expected {nl}")
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} has non-finite entries")
        if np.any(arrays["link_lengths"] <= 0):
            raise InvalidInputError("link_lengths must be > 0")
        if np.any(arrays["link_masses"] <= 0):
            raise InvalidInputError("link_masses must be > 0")
        if np.any(arrays["link_inertias"] < 0):
            raise InvalidInputError("link_inertias must be >= 0")
        if np.any(arrays["joint_damping"] < 0):
            raise InvalidInputError("joint_damping must be >= 0")
        if not np.isfinite(self.gravity):
            raise InvalidInputError("gravity must be finite")
        params = np.ascontiguousarray(np.stack([
            arrays["link_lengths"], arrays["link_masses"], arrays["link_inertias"],
            arrays["com_offsets"], arrays["joint_damping"]]))
        params.setflags(write=False)
        object.__setattr__(self, "_params", params)

    @classmethod
    def uniform(cls, link_count=3, length=0.5, mass=1.0, damping=0.1, gravity=9.81):
        """Identical uniform-rod links with the centre of mass at mid-link."""
        ones = np.ones(link_count)
        return cls(
            link_lengths=length * ones,
            link_masses=mass * ones,
            link_inertias=mass * length ** 2 / 12.0 * ones,
            com_offsets=0.5 * length * ones,
            joint_damping=damping * ones,
            gravity=gravity,
        )

    @property
    def link_count(self):
        return len(self.link_lengths)

    @property
    def n(self):
        return 2 * self.link_count

    @property
    def m(self):
        return self.link_count

    @property
    def reach(self):
        """Workspace radius (sum of link lengths)."""
        return float(np.sum(self.link_lengths))

    @property
    def params(self):
        return self._params

    def to_dict(self):
        return {
            "link_lengths": self.link_lengths.tolist(),
            "link_masses": self.link_masses.tolist(),
            "link_inertias": self.link_inertias.tolist(),
            "com_offsets": self.com_offsets.tolist(),
            "joint_damping": self.joint_damping.tolist(),
            "gravity": float(self.gravity),
        }


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    model: ArmModel
    dt: float = 0.02
    N: int = 50
    integrator: str = "euler"

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be > 0, got {self.dt}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidInputError(f"N must be an integer >= 1, got {self.N}")
        if self.integrator not in ("euler", "rk4"):
            raise InvalidInputError(f"unknown integrator {self.integrator!r}")

    @property
    def n(self):
        return self.model.n

    @property
    def m(self):
        return self.model.m


@dataclass(frozen=True, eq=False)
class Trajectory:
    x_s: np.ndarray
    X: np.ndarray
    U: np.ndarray
    consistent: bool = False

    def states(self, n):
        """States x_1..x_N as an (N, n) view."""
        return self.X.reshape(-1, n)

    def controls(self, m):
        return self.U.reshape(-1, m)

    def all_states(self, n):
        """States x_0..x_N as an (N+1, n) array."""
        return np.vstack([self.x_s, self.states(n)])


@dataclass(frozen=True, eq=False)
class LinearizedDynamics:
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray = field(repr=False)


def _vec(x, size, name):
    x = np.ascontiguousarray(x, dtype=float).reshape(-1)
    if x.shape != (size,):
        raise InvalidInputError(f"{name} must have {size} entries, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return x


def step(x, u, sys):
    """One discrete step x_{t+1} = f(x_t, u_t)."""
    x = _vec(x, sys.n, "x")
    u = _vec(u, sys.m, "u")
    method = 0 if sys.integrator == "euler" else 1
    try:
        return backend.impl.step(sys.model.params, sys.model.gravity, x, u, sys.dt, method)
    except ArithmeticError as exc:
        raise RuntimeError(str(exc)) from exc


def continuous_accel(q, qd, u, model):
    """Joint accelerations M(q)^-1 (u - h(q, qd))."""
    return backend.impl.forward_accel(
        model.params, model.gravity, _vec(q, model.m, "q"),
        _vec(qd, model.m, "qd"), _vec(u, model.m, "u"))


def inverse_dynamics(q, qd, qdd, model):
    """Torques M(q) qdd + h(q, qd), with h holding Coriolis, gravity and damping."""
    return backend.impl.inverse_dynamics(
        model.params, model.gravity, _vec(q, model.m, "q"),
        _vec(qd, model.m, "qd"), _vec(qdd, model.m, "qdd"))


def mass_matrix(q, model):
    return backend.impl.mass_matrix(model.params, _vec(q, model.m, "q"))


def gravity_compensation(q, model):
    """Torque holding the zero-velocity posture q fixed under the discrete step."""
    q = _vec(q, model.m, "q")
    zero = np.zeros(model.m)
    return backend.impl.inverse_dynamics(model.params, model.gravity, q, zero, zero)


def simulate_trajectory(x_s, U, sys):
    """Roll out U from x_s; returns the stacked state vector X of length n*N."""
    x_s = _vec(x_s, sys.n, "x_s")
    U = _vec(U, sys.m * sys.N, "U").reshape(sys.N, sys.m)
    if sys.integrator == "euler":
        try:
            X, bad = backend.impl.rollout(sys.model.params, sys.model.gravity, x_s, U, sys.dt)
        except ArithmeticError as exc:
            raise RuntimeError(str(exc)) from exc
    else:
        X = np.empty((sys.N, sys.n))
        bad = -1
        prev = x_s
        for t in range(sys.N):
            X[t] = step(prev, U[t], sys)
            if not np.all(np.isfinite(X[t])):
                bad = t
                break
            prev = X[t]
    if bad >= 0:
        raise DivergenceError(f"rollout diverged at step {bad + 1}", index=bad + 1)
    return X.reshape(-1)


def rollout(x_s, U, sys):
    """Consistent Trajectory from x_s and U."""
    U = np.array(U, dtype=float).reshape(-1)
    X = simulate_trajectory(x_s, U, sys)
    return Trajectory(np.array(x_s, dtype=float), X, U, consistent=True)


def linearize(x, u, sys):
    """Central-difference Jacobians (A, B) of ``step`` at (x, u)."""
    x = _vec(x, sys.n, "x")
    u = _vec(u, sys.m, "u")
    if sys.integrator != "euler":
        raise InvalidInputError("linearization is defined for the Euler plant only")
    A, B = backend.impl.linearize(sys.model.params, sys.model.gravity,
                                  x[None, :], np.ascontiguousarray(u[None, :]),
                                  sys.dt, FD_STEP)
    return A[0], B[0]


def linearize_trajectory(traj, sys):
    """Per-step Jacobians along a trajectory: A (N, n, n), B (N, n, m)."""
    if sys.integrator != "euler":
        raise InvalidInputError("linearization is defined for the Euler plant only")
    xs = np.ascontiguousarray(traj.all_states(sys.n)[:-1])
    U = np.ascontiguousarray(traj.controls(sys.m))
    return backend.impl.linearize(sys.model.params, sys.model.gravity, xs, U, sys.dt, FD_STEP)


def assemble_G(A, B):
    """Stacked control-to-state map with X = G U for the variational dynamics.

    Block (t, tau) for t = 1..N and tau = 0..N-1 is
    A_{t-1} ... A_{tau+1} B_tau when tau < t, zero otherwise.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 3 or B.ndim != 3 or len(A) != len(B) or len(A) < 1:
        raise InvalidInputError(f"need N >= 1 matching (A, B) pairs, got {A.shape}, {B.shape}")
    N, n, n2 = A.shape
    m = B.shape[2]
    if n2 != n or B.shape[1] != n:
        raise InvalidInputError(f"inconsistent block shapes A {A.shape}, B {B.shape}")
    G = np.zeros((n * N, m * N))
    for t in range(1, N + 1):
        rows = slice((t - 1) * n, t * n)
        if t > 1:
            prev = G[(t - 2) * n:(t - 1) * n, :(t - 1) * m]
            G[rows, :(t - 1) * m] = A[t - 1] @ prev
        G[rows, (t - 1) * m:t * m] = B[t - 1]
    return G


def linearize_system(traj, sys):
    A, B = linearize_trajectory(traj, sys)
    return LinearizedDynamics(A, B, assemble_G(A, B))


def _link_frames(q):
    phi = np.cumsum(q)
    return np.cos(phi), np.sin(phi)


def _check_point(body_point, model):
    if int(body_point) != body_point or not 1 <= body_point <= model.link_count:
        raise InvalidInputError(
            f"body_point must be in 1..{model.link_count}, got {body_point}")
    return int(body_point)


def forward_kinematics(q, body_point, model):
    """Planar position of the tip of link ``body_point`` (1-based)."""
    p = _check_point(body_point, model)
    c, s = _link_frames(_vec(q, model.m, "q"))
    L = model.link_lengths[:p]
    return np.array([L @ c[:p], L @ s[:p]])


def point_jacobian(q, body_point, model):
    """d(position of link tip)/dq, shape (2, link_count)."""
    p = _check_point(body_point, model)
    c, s = _link_frames(_vec(q, model.m, "q"))
    L = model.link_lengths
    J = np.zeros((2, model.m))
    # column k sums contributions of links k..p-1
    dx = -(L[:p] * s[:p])[::-1].cumsum()[::-1]
    dy = (L[:p] * c[:p])[::-1].cumsum()[::-1]
    J[0, :p] = dx
    J[1, :p] = dy
    return J


def point_jacobian_dot_qd(q, qd, body_point, model):
    """The velocity-product acceleration term Jdot(q, qd) @ qd."""
    p = _check_point(body_point, model)
    c, s = _link_frames(_vec(q, model.m, "q"))
    w = np.cumsum(_vec(qd, model.m, "qd"))[:p]
    L = model.link_lengths[:p]
    return -np.array([np.sum(L * w * w * c[:p]), np.sum(L * w * w * s[:p])])

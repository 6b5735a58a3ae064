"""Strict-priority trajectory optimization.

``solver_step`` resolves one linearized hierarchy. Level k minimizes its
quadratic cost model plus the trust-region penalty
``s_k*|G v|^2 + r_k*|v|^2`` over increments ``v`` that stay in the nullspace
left by the levels above, then rolls the candidate out on the nonlinear
plant. The candidate is accepted when

* no higher-priority task i ends above its reference cost by more than
  ``epsilon``. The reference is the step's nominal cost, or the cost level i
  itself settled at if it could not get back to the nominal;
* the level's own cost did not grow by more than ``epsilon`` over the
  point handed down by the level above.

Failing candidates inflate ``(s_k, r_k)`` by ``mu``. ``prioritized_oc``
wraps the step in the linearize / step / roll-out main loop and lowers
penalties between iterations while that keeps improving each task.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import linearize_system, rollout, simulate_trajectory
from .errors import DivergenceError, InvalidInputError, TuningExhaustedError
from .linalg import DEFAULT_PINV, PinvConfig, constrained_step
from .tasks import HESSIAN_MODES, TaskSpec, TaskStack

log = logging.getLogger(__name__)

TERMINATIONS = ("converged", "max_iters", "tuning_exhausted", "divergence")


@dataclass(frozen=True, eq=False)
class PenaltyState:
    s: np.ndarray
    r: np.ndarray
    mu: float = 1.5
    max_tuning_iters: int = 50

    def __post_init__(self):
        s = np.array(self.s, dtype=float).reshape(-1)
        r = np.array(self.r, dtype=float).reshape(-1)
        if s.shape != r.shape:
            raise InvalidInputError("s and r must have the same length")
        if np.any(~(s > 0)) or np.any(~(r > 0)):
            raise InvalidInputError("penalties must be > 0")
        if not self.mu > 1:
            raise InvalidInputError(f"mu must be > 1, got {self.mu}")
        if int(self.max_tuning_iters) != self.max_tuning_iters or self.max_tuning_iters < 1:
            raise InvalidInputError("max_tuning_iters must be a positive integer")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)

    @classmethod
    def initial(cls, K, s0=1.0, r0=1e-2, mu=1.5, max_tuning_iters=50):
        return cls(np.full(K, float(s0)), np.full(K, float(r0)), mu, max_tuning_iters)

    def with_level(self, k, s_k, r_k):
        s = self.s.copy()
        r = self.r.copy()
        s[k] = s_k
        r[k] = r_k
        return replace(self, s=s, r=r)


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-6
    abs_cost_threshold: float = 1e-6
    rel_cost_threshold: float = 1e-2
    pinv: PinvConfig = DEFAULT_PINV
    max_main_iters: int = 100
    hessian_mode: str = "gauss_newton"
    decrease_search: bool = True

    def __post_init__(self):
        for name in ("epsilon", "abs_cost_threshold", "rel_cost_threshold"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be > 0, got {v}")
        if int(self.max_main_iters) != self.max_main_iters or self.max_main_iters < 1:
            raise InvalidInputError("max_main_iters must be a positive integer")
        if self.hessian_mode not in HESSIAN_MODES:
            raise InvalidInputError(f"unknown hessian mode {self.hessian_mode!r}")


@dataclass(frozen=True, eq=False)
class LevelRecord:
    """Accepted outcome of one cascade level.

    ``variations[i]`` is the rolled-out cost change of task i (0-based,
    ``i <= level - 1``) against the step's nominal. ``slack[i]`` is the same
    cost measured against the reference the acceptance test used.
    ``level_change`` is the change of the level's own cost over the point
    handed down by the level above.
    """

    level: int
    attempts: int
    s: float
    r: float
    variations: np.ndarray
    slack: np.ndarray
    level_change: float
    costs: np.ndarray


@dataclass(frozen=True, eq=False)
class _LevelEntry:
    # cascade state before a level runs, kept for warm restarts
    dU: np.ndarray
    P: np.ndarray
    costs: np.ndarray
    X: np.ndarray
    ref: np.ndarray


@dataclass(frozen=True, eq=False)
class StepResult:
    dU: np.ndarray
    penalties: PenaltyState
    levels: tuple
    costs: np.ndarray
    X: np.ndarray
    projector: np.ndarray = field(repr=False)
    entries: tuple = field(default=(), repr=False)


@dataclass(eq=False)
class IterationRecord:
    index: int
    costs: np.ndarray
    s: np.ndarray
    r: np.ndarray
    tuning_attempts: list
    decrease_trials: int
    steps: list = field(default_factory=list)
    monitor_costs: np.ndarray | None = None
    accepted: tuple = ()


@dataclass(eq=False)
class SolveReport:
    labels: list
    initial_costs: np.ndarray
    iterations: list
    termination: str
    trajectory: object
    message: str = ""
    wall_time: float = 0.0
    monitor_labels: list | None = None
    initial_monitor_costs: np.ndarray | None = None

    @property
    def n_iterations(self):
        return len(self.iterations)

    @property
    def final_costs(self):
        return self.iterations[-1].costs if self.iterations else self.initial_costs

    @property
    def cost_history(self):
        return np.array([self.initial_costs] + [it.costs for it in self.iterations])

    def accepted_levels(self):
        """Cascade levels of the steps actually applied, one step per iteration."""
        for it in self.iterations:
            yield from it.accepted

    def all_levels(self):
        """Every level that passed its tuning loop, decrease-search trials included."""
        for it in self.iterations:
            for levels in it.steps:
                yield from levels


def _as_terms(stack):
    if isinstance(stack, TaskSpec):
        return (stack,)
    return tuple(stack)


def costs_of(terms, X, U, sys):
    return np.array([t.cost(X, U, sys) for t in terms])


def compute_cost_variation(i, nominal, dU, sys, stack):
    """True cost change of task i (0-based) when the nominal controls move by dU."""
    terms = _as_terms(stack)
    U_new = nominal.U + np.asarray(dU, dtype=float)
    X_new = simulate_trajectory(nominal.x_s, U_new, sys)
    term = terms[i]
    return term.cost(X_new, U_new, sys) - term.cost(nominal.X, nominal.U, sys)


def update_penalties(s_k, r_k, mu, direction):
    if direction == "increase":
        return s_k * mu, r_k * mu
    if direction == "decrease":
        return s_k / mu, r_k / mu
    raise InvalidInputError(f"direction must be 'increase' or 'decrease', got {direction!r}")


def _row_space_projector(M, cfg):
    """M^+ M, with the same relative cutoff as the pseudoinverse."""
    if not np.any(M):
        return np.zeros((M.shape[1], M.shape[1]))
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.count_nonzero(sv > cfg.tolerance * sv[0]))
    return Vt[:r].T @ Vt[:r]


def _level_matrices(term, nominal, G, sys, cfg):
    exp = term.expand(nominal, G, sys, cfg.hessian_mode)
    return G.T @ exp.hessian @ G + exp.effort, exp.rhs


def solver_step(nominal, G, stack, penalties, cfg, sys, nominal_costs=None,
                restart=None, start_level=0):
    """Resolve the linearized hierarchy around a consistent nominal trajectory.

    ``restart`` (a previous :class:`StepResult` from the same nominal) with
    ``start_level`` reuses the levels above ``start_level`` unchanged.
    Raises :class:`TuningExhaustedError` when a level still fails after
    ``max_tuning_iters`` penalty increases.
    """
    terms = _as_terms(stack)
    K = len(terms)
    if len(penalties.s) != K:
        raise InvalidInputError(f"penalty state has {len(penalties.s)} levels, stack has {K}")
    mN = sys.m * sys.N
    U_bar = nominal.U
    J0 = (costs_of(terms, nominal.X, U_bar, sys) if nominal_costs is None
          else np.asarray(nominal_costs, dtype=float))
    GtG = G.T @ G
    eye = np.eye(mN)
    pen = penalties
    if restart is not None and start_level > 0:
        entry = restart.entries[start_level]
        levels = list(restart.levels[:start_level])
        entries = list(restart.entries[:start_level])
        dU, P, J_base, X_base, ref = (entry.dU, entry.P, entry.costs, entry.X,
                                      entry.ref.copy())
    else:
        start_level = 0
        levels, entries = [], []
        dU, P, J_base, X_base, ref = np.zeros(mN), np.eye(mN), J0, nominal.X, J0.copy()

    for k in range(start_level, K):
        entries.append(_LevelEntry(dU, P, J_base, X_base, ref.copy()))
        T, d = _level_matrices(terms[k], nominal, G, sys, cfg)
        s_k, r_k = pen.s[k], pen.r[k]
        increases = 0
        while True:
            S = T + s_k * GtG + r_k * eye
            # penalty centred on the point handed down by the level above
            cand = constrained_step(S, P, d + (S - T) @ dU, dU, cfg.pinv)
            U_new = U_bar + cand
            try:
                X_new = simulate_trajectory(nominal.x_s, U_new, sys)
                J_new = costs_of(terms, X_new, U_new, sys)
            except DivergenceError:
                X_new, J_new = None, np.full(K, np.inf)
            slack = J_new[:k] - ref[:k]
            change = J_new[k] - J_base[k]
            if np.all(slack <= cfg.epsilon) and change <= cfg.epsilon:
                break
            if increases >= pen.max_tuning_iters:
                raise TuningExhaustedError(
                    f"penalty tuning exhausted at level {k + 1}", level=k + 1)
            s_k, r_k = update_penalties(s_k, r_k, pen.mu, "increase")
            increases += 1
        if J_new[k] > J0[k] + cfg.epsilon:
            ref[k] = J_new[k]
        pen = pen.with_level(k, s_k, r_k)
        levels.append(LevelRecord(
            level=k + 1, attempts=increases + 1, s=s_k, r=r_k,
            variations=J_new[:k + 1] - J0[:k + 1], slack=slack,
            level_change=change, costs=J_new))
        dU, J_base, X_base = cand, J_new, X_new
        TP = T @ P
        P = P - _row_space_projector(TP, cfg.pinv)
        P = 0.5 * (P + P.T)
    return StepResult(dU, pen, tuple(levels), J_base, X_base, P, tuple(entries))


def stop_criterion(J_prev, J_new, cfg):
    """True when every task is below the absolute threshold or has stalled."""
    J_prev = np.asarray(J_prev, dtype=float)
    J_new = np.asarray(J_new, dtype=float)
    if J_prev.shape != J_new.shape:
        raise InvalidInputError("cost vectors differ in length")
    for prev, new in zip(J_prev, J_new):
        if new < cfg.abs_cost_threshold:
            continue
        if prev == 0.0:
            if new == 0.0:
                continue
            return False
        if abs(new - prev) < cfg.rel_cost_threshold * abs(prev):
            continue
        return False
    return True


def _decrease_penalties(best, nominal, G, terms, cfg, sys, J):
    """Lower (s_k, r_k) level by level while the level's own cost keeps dropping."""
    steps = []
    trials = 0
    pen = best.penalties
    for k in range(len(terms)):
        for _ in range(pen.max_tuning_iters):
            s_k, r_k = update_penalties(best.penalties.s[k], best.penalties.r[k],
                                        pen.mu, "decrease")
            trials += 1
            try:
                trial = solver_step(nominal, G, terms, best.penalties.with_level(k, s_k, r_k),
                                    cfg, sys, nominal_costs=J, restart=best, start_level=k)
            except TuningExhaustedError:
                break
            steps.append(trial.levels[k:])
            if not trial.levels[k].costs[k] < best.levels[k].costs[k]:
                break
            best = trial
    return best, steps, trials


def prioritized_oc(x_s, U0, stack, sys, cfg=None, penalties=None, monitor=None):
    """Main loop: linearize, resolve the hierarchy, update, roll out, test convergence.

    ``monitor`` is an optional sequence of extra tasks whose costs are
    recorded every iteration (the weighted baseline uses it).
    """
    cfg = cfg or SolverConfig()
    terms = _as_terms(stack)
    if isinstance(stack, TaskStack):
        stack.validate_for(sys)
    K = len(terms)
    pen = penalties or PenaltyState.initial(K)
    monitor = _as_terms(monitor) if monitor is not None else None
    started = time.perf_counter()

    U = np.array(U0, dtype=float).reshape(-1)
    labels = [t.label for t in terms]
    try:
        traj = rollout(x_s, U, sys)
    except DivergenceError as exc:
        return SolveReport(labels, np.full(K, np.nan), [], "divergence", None, str(exc),
                           time.perf_counter() - started)
    J = costs_of(terms, traj.X, traj.U, sys)
    report = SolveReport(
        labels, J, [], "max_iters", traj,
        monitor_labels=[t.label for t in monitor] if monitor else None,
        initial_monitor_costs=costs_of(monitor, traj.X, traj.U, sys) if monitor else None)
    log.info("initial costs %s", J)

    for it in range(1, cfg.max_main_iters + 1):
        lin = linearize_system(traj, sys)
        try:
            best = solver_step(traj, lin.G, terms, pen, cfg, sys, nominal_costs=J)
        except TuningExhaustedError as exc:
            report.termination = "tuning_exhausted"
            report.message = str(exc)
            break
        steps = [best.levels]
        trials = 0
        if cfg.decrease_search:
            best, more, trials = _decrease_penalties(best, traj, lin.G, terms, cfg, sys, J)
            steps.extend(more)
        pen = best.penalties
        traj = rollout(x_s, traj.U + best.dU, sys)
        J_new = costs_of(terms, traj.X, traj.U, sys)
        report.iterations.append(IterationRecord(
            index=it, costs=J_new, s=pen.s.copy(), r=pen.r.copy(),
            tuning_attempts=[lv.attempts for lv in best.levels],
            decrease_trials=trials, steps=steps,
            monitor_costs=costs_of(monitor, traj.X, traj.U, sys) if monitor else None,
            accepted=best.levels))
        report.trajectory = traj
        log.info("iter %d costs %s s %s", it, J_new, pen.s)
        log.debug("iter %d r %s attempts %s trials %d", it, pen.r,
                  [lv.attempts for lv in best.levels], trials)
        if stop_criterion(J, J_new, cfg):
            report.termination = "converged"
            break
        J = J_new
    report.wall_time = time.perf_counter() - started
    return report

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hiertraj.dynamics import (ArmModel, DiscreteSystem, forward_kinematics, linearize_system,
                               rollout, simulate_trajectory)
from hiertraj.errors import InvalidInputError
from hiertraj.solver import (PenaltyState, SolverConfig, _level_matrices, compute_cost_variation,
                             prioritized_oc, solver_step, stop_criterion, update_penalties)
from hiertraj.tasks import TaskSpec, TaskStack

from conftest import canonical_problem


@pytest.fixture(scope="module")
def canonical_run():
    model, sys, x_s, U0, stack = canonical_problem()
    return prioritized_oc(x_s, U0, stack, sys), (model, sys, x_s, U0, stack)


def test_update_penalties_examples():
    assert update_penalties(1.0, 0.01, 1.5, "increase") == (1.5, 0.015)
    s, r = update_penalties(1.5, 0.015, 1.5, "decrease")
    assert np.isclose(s, 1.0) and np.isclose(r, 0.01)
    with pytest.raises(InvalidInputError):
        update_penalties(1.0, 1.0, 1.5, "sideways")


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1.01, 10.0))
def test_increase_then_decrease_is_identity(s, r, mu):
    s2, r2 = update_penalties(*update_penalties(s, r, mu, "increase"), mu, "decrease")
    assert np.isclose(s2, s, rtol=1e-14) and np.isclose(r2, r, rtol=1e-14)


def test_defaults_and_validation():
    p = PenaltyState.initial(3)
    assert np.array_equal(p.s, np.ones(3)) and np.array_equal(p.r, np.full(3, 1e-2))
    assert p.mu == 1.5 and p.max_tuning_iters == 50
    c = SolverConfig()
    assert (c.epsilon, c.abs_cost_threshold, c.rel_cost_threshold) == (1e-6, 1e-6, 1e-2)
    assert c.pinv.tolerance == 1e-5 and c.max_main_iters == 100
    for bad in (dict(s=[0.0], r=[1.0]), dict(s=[1.0], r=[-1.0]), dict(s=[1.0], r=[1.0], mu=1.0),
                dict(s=[1.0, 1.0], r=[1.0])):
        with pytest.raises(InvalidInputError):
            PenaltyState(**bad)
    for bad in (dict(epsilon=0.0), dict(rel_cost_threshold=-1.0), dict(max_main_iters=0),
                dict(hessian_mode="bfgs")):
        with pytest.raises(InvalidInputError):
            SolverConfig(**bad)


def test_stop_criterion_examples():
    cfg = SolverConfig()
    assert stop_criterion([1, 1, 1], [1e-7, 1e-7, 1e-7], cfg)
    assert stop_criterion([1, 1, 1], [0.995, 0.995, 0.995], cfg)
    assert not stop_criterion([1, 1, 1], [0.5, 0.5, 0.5], cfg)
    assert stop_criterion([0.0], [0.0], cfg)
    assert not stop_criterion([0.0], [1.0], cfg)
    # one task still moving keeps the loop going
    assert not stop_criterion([1, 1], [1e-9, 0.5], cfg)
    with pytest.raises(InvalidInputError):
        stop_criterion([1.0], [1.0, 1.0], cfg)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=5), st.data())
def test_stop_criterion_matches_per_task_rule(prev, data):
    new = data.draw(st.lists(st.floats(0, 1e3), min_size=len(prev), max_size=len(prev)))
    cfg = SolverConfig()

    def done(p, n):
        if n < cfg.abs_cost_threshold:
            return True
        if p == 0:
            return n == 0
        return abs(n - p) / p < cfg.rel_cost_threshold

    assert stop_criterion(prev, new, cfg) == all(done(p, n) for p, n in zip(prev, new))


def test_cost_variation_is_two_rollout_difference(canonical):
    model, sys, x_s, U0, stack = canonical
    traj = rollout(x_s, U0, sys)
    assert compute_cost_variation(0, traj, np.zeros_like(U0), sys, stack) == 0.0
    dU = np.random.default_rng(0).normal(0, 0.3, U0.size)
    U1 = U0 + dU
    X1 = simulate_trajectory(x_s, U1, sys)
    for i, task in enumerate(stack):
        expect = task.cost(X1, U1, sys) - task.cost(traj.X, traj.U, sys)
        assert compute_cost_variation(i, traj, dU, sys, stack) == expect


def test_recorded_variations_are_true_rollout_differences(canonical):
    model, sys, x_s, U0, stack = canonical
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    res = solver_step(traj, G, stack, PenaltyState.initial(3), SolverConfig(), sys)
    steps = [e.dU for e in res.entries[1:]] + [res.dU]
    for lv, dU in zip(res.levels, steps):
        for i in range(lv.level):
            assert lv.variations[i] == compute_cost_variation(i, traj, dU, sys, stack)


def test_single_level_step_is_dense_solve(canonical):
    model, sys, x_s, U0, stack = canonical
    task = stack[0]
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    cfg = SolverConfig()
    res = solver_step(traj, G, [task], PenaltyState.initial(1), cfg, sys)
    lv = res.levels[0]
    T, d = _level_matrices(task, traj, G, sys, cfg)
    S = T + lv.s * G.T @ G + lv.r * np.eye(U0.size)
    assert np.allclose(res.dU, np.linalg.solve(S, d), rtol=1e-8, atol=1e-12)
    assert lv.variations[0] <= cfg.epsilon


def test_optimal_nominal_gives_zero_step(canonical):
    model, sys, x_s, U0, _ = canonical
    q0 = x_s[:3]
    stack = TaskStack([TaskSpec("reach", k, body_point=4 - k,
                                target=forward_kinematics(q0, 4 - k, model)) for k in (1, 2, 3)])
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    res = solver_step(traj, G, stack, PenaltyState.initial(3), SolverConfig(), sys)
    assert np.linalg.norm(res.dU) <= 1e-8
    rep = prioritized_oc(x_s, U0, stack, sys)
    assert rep.termination == "converged" and rep.n_iterations == 1
    assert np.all(rep.final_costs < 1e-6)


def test_projector_nesting(canonical):
    model, sys, x_s, U0, stack = canonical
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    cfg = SolverConfig()
    res = solver_step(traj, G, stack, PenaltyState.initial(3), cfg, sys)
    Ps = [e.P for e in res.entries[1:]] + [res.projector]
    Ts = [_level_matrices(t, traj, G, sys, cfg)[0] for t in stack]
    for k, P in enumerate(Ps):
        assert np.allclose(P, P.T)
        for T in Ts[:k + 1]:
            assert np.linalg.norm(T @ P) <= 1e-8 * np.linalg.norm(T)


def test_warm_restart_reproduces_cold_levels(canonical):
    model, sys, x_s, U0, stack = canonical
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    cfg = SolverConfig()
    cold = solver_step(traj, G, stack, PenaltyState.initial(3), cfg, sys)
    for start in (1, 2):
        warm = solver_step(traj, G, stack, cold.penalties, cfg, sys, restart=cold,
                           start_level=start)
        assert warm.levels[:start] == cold.levels[:start]
        assert np.array_equal(warm.dU, cold.dU)
        assert np.array_equal(warm.costs, cold.costs)


def test_task_one_never_worse_than_nominal(canonical_run):
    rep, _ = canonical_run
    eps = SolverConfig().epsilon
    levels = list(rep.all_levels())
    assert levels
    assert all(lv.variations[0] <= eps for lv in levels)


def test_task_one_cost_monotone(canonical_run):
    rep, _ = canonical_run
    J1 = rep.cost_history[:, 0]
    assert np.all(np.diff(J1) <= 3 * SolverConfig().epsilon)


def test_level_costs_never_grow_past_handed_down_point(canonical_run):
    rep, _ = canonical_run
    eps = SolverConfig().epsilon
    for lv in rep.all_levels():
        assert lv.level_change <= eps
        assert np.all(lv.slack <= eps)


def test_canonical_ordering(canonical_run):
    rep, (model, sys, *_rest, stack) = canonical_run
    assert rep.termination == "converged"
    q = rep.trajectory.states(sys.n)[-1, :3]
    err = [np.linalg.norm(forward_kinematics(q, t.body_point, model) - t.target) for t in stack]
    assert err[0] < min(err[1:])
    assert err[0] <= 1e-3 * model.reach


def test_deterministic(canonical):
    model, sys, x_s, U0, stack = canonical
    cfg = SolverConfig(max_main_iters=2)
    a = prioritized_oc(x_s, U0, stack, sys, cfg)
    b = prioritized_oc(x_s, U0, stack, sys, cfg)
    assert np.array_equal(a.cost_history, b.cost_history)
    assert np.array_equal(a.trajectory.U, b.trajectory.U)


def test_terminations(canonical):
    model, sys, x_s, U0, stack = canonical
    rep = prioritized_oc(x_s, U0, stack, sys, SolverConfig(max_main_iters=1))
    assert rep.termination == "max_iters" and rep.n_iterations == 1
    tight = PenaltyState.initial(3, 1e-8, 1e-10, max_tuning_iters=1)
    rep = prioritized_oc(x_s, U0, stack, sys, penalties=tight)
    assert rep.termination == "tuning_exhausted" and "level" in rep.message
    rep = prioritized_oc(x_s, np.full_like(U0, 1e30), stack, sys)
    assert rep.termination == "divergence" and rep.trajectory is None


def test_penalty_count_must_match_stack(canonical):
    model, sys, x_s, U0, stack = canonical
    traj = rollout(x_s, U0, sys)
    G = linearize_system(traj, sys).G
    with pytest.raises(InvalidInputError):
        solver_step(traj, G, stack, PenaltyState.initial(2), SolverConfig(), sys)


def _double_integrator():
    arm = ArmModel([1.0], [1.0], [1.0], [0.0], [0.0], gravity=0.0)
    return DiscreteSystem(arm, dt=0.02, N=50)


def batch_optimum(x_s, target, effort, dt, N):
    """Closed-form minimum of 0.5*(q_N - target)^2 + 0.5*e*|U|^2 for Euler qdd = u."""
    a = dt * dt * (N - 1 - np.arange(N))
    b = x_s[0] + N * dt * x_s[1] - target
    U = -np.linalg.solve(np.outer(a, a) + effort * np.eye(N), a * b)
    return 0.5 * (a @ U + b) ** 2 + 0.5 * effort * U @ U, U


@pytest.mark.parametrize("x_s,target,effort", [([0.3, -0.2], 1.0, 1e-4), ([0.0, 1.0], -0.5, 1e-2)])
def test_double_integrator_matches_batch_least_squares(x_s, target, effort):
    sys = _double_integrator()
    stack = TaskStack([TaskSpec("joint", 1, target=[target], effort=effort)])
    rep = prioritized_oc(np.array(x_s), np.zeros(sys.N), stack, sys)
    J, U = batch_optimum(np.array(x_s), target, effort, sys.dt, sys.N)
    assert rep.n_iterations <= 20
    assert abs(rep.final_costs[0] - J) <= 1e-6
    assert np.allclose(rep.trajectory.U, U, atol=1e-4)


def test_full_hessian_mode_runs(canonical):
    model, sys, x_s, U0, stack = canonical
    rep = prioritized_oc(x_s, U0, stack, sys, SolverConfig(hessian_mode="full", max_main_iters=2))
    assert rep.n_iterations >= 1
    assert rep.final_costs[0] < rep.initial_costs[0]


def test_monitor_costs_recorded(canonical):
    model, sys, x_s, U0, stack = canonical
    rep = prioritized_oc(x_s, U0, [stack[0]], sys, SolverConfig(max_main_iters=1),
                         PenaltyState.initial(1), monitor=stack)
    assert rep.monitor_labels == [t.label for t in stack]
    it = rep.iterations[0]
    X, U = rep.trajectory.X, rep.trajectory.U
    assert np.array_equal(it.monitor_costs, [t.cost(X, U, sys) for t in stack])

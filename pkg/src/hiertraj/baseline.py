"""Weighted-sum comparator: the task stack collapsed into one scalar cost.

Task k of K gets weight ``w**(K-k)``, so three tasks give
``w^2 g1 + w g2 + g3``. Residual blocks are scaled by the square root of
their weight, which keeps the ``0.5*|c|^2`` form and lets the single-level
solver run unchanged. Effort lives on the last task only and is never
weighted.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .solver import PenaltyState, SolverConfig, prioritized_oc
from .tasks import CostExpansion, TaskStack


@dataclass(frozen=True, eq=False)
class WeightedSpec:
    stack: TaskStack
    w: float

    def __post_init__(self):
        if not isinstance(self.stack, TaskStack):
            object.__setattr__(self, "stack", TaskStack(self.stack))
        if not (np.isfinite(self.w) and self.w > 0):
            raise InvalidInputError(f"weight must be > 0, got {self.w}")

    @property
    def weights(self):
        K = len(self.stack)
        return np.array([float(self.w) ** (K - k) for k in range(1, K + 1)])


class ScalarizedTask:
    """Single task whose cost is the weighted sum of a stack's task costs."""

    def __init__(self, spec):
        self.spec = spec
        self.tasks = tuple(spec.stack)
        self.weights = spec.weights

    @property
    def label(self):
        return f"weighted(w={self.spec.w:g})"

    @property
    def effort(self):
        return self.tasks[-1].effort

    def cost(self, X, U, sys):
        return float(sum(a * t.cost(X, U, sys) for a, t in zip(self.weights, self.tasks)))

    def expand(self, traj, G, sys, mode="gauss_newton"):
        parts = [t.expand(traj, G, sys, mode) for t in self.tasks]
        root = np.sqrt(self.weights)
        residual = np.concatenate([a * p.residual for a, p in zip(root, parts)])
        jacobian = np.vstack([a * p.jacobian for a, p in zip(root, parts)])
        hessian = sum(a * p.hessian for a, p in zip(self.weights, parts))
        rhs = sum(a * p.rhs for a, p in zip(self.weights, parts))
        # only the unweighted last task carries effort
        return CostExpansion(residual, jacobian, hessian, parts[-1].effort, rhs)


def weighted_oc(x_s, U0, spec, sys, cfg=None, penalties=None, scale_penalties=True):
    """Minimize the scalarized cost; per-task costs are tracked alongside.

    With ``scale_penalties`` the initial ``(s, r)`` are multiplied by the
    largest task weight, so the trust region keeps the same size relative
    to the dominant term whatever ``w`` is. Without it, large weights leave
    the penalties negligible and tuning tends to exhaust at once.
    """
    spec.stack.validate_for(sys)
    cfg = cfg or SolverConfig()
    term = ScalarizedTask(spec)
    base = penalties or PenaltyState.initial(1)
    factor = spec.weights[0] if scale_penalties else 1.0
    penalties = PenaltyState.initial(1, base.s[0] * factor, base.r[0] * factor,
                                     base.mu, base.max_tuning_iters)
    return prioritized_oc(x_s, U0, [term], sys, cfg, penalties, monitor=spec.stack.tasks)

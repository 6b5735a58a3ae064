"""Experiment configuration: JSON schema, validation and object construction."""

import json
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import ArmModel, DiscreteSystem
from .errors import InvalidInputError
from .linalg import PinvConfig
from .solver import PenaltyState, SolverConfig
from .tasks import TaskSpec, TaskStack
from .tracker import TrackerConfig

PositiveFloat = Field(gt=0, allow_inf_nan=False)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class ArmConfig(_Strict):
    link_lengths: list[float] = [0.5, 0.5, 0.5]
    link_masses: list[float] = [1.0, 1.0, 1.0]
    link_inertias: list[float] = [0.5 ** 2 / 12.0] * 3
    com_offsets: list[float] = [0.25, 0.25, 0.25]
    joint_damping: list[float] = [0.1, 0.1, 0.1]
    gravity: float = 9.81


class DiscretizationConfig(_Strict):
    dt: float = Field(0.02, gt=0)
    N: int = Field(50, ge=1)


class InitialStateConfig(_Strict):
    q: list[float] = [math.pi / 2, -math.pi / 2, 0.0]
    qd: list[float] | None = None


class TaskConfig(_Strict):
    kind: str = "reach"
    priority: int = Field(ge=1)
    body_point: int | None = None
    target: list[float] | None = None
    window_start: int | None = Field(None, ge=1)
    effort: float = Field(0.0, ge=0)
    name: str | None = None


def _canonical_tasks():
    return [
        TaskConfig(priority=1, body_point=3, target=[1.2, 0.6]),
        TaskConfig(priority=2, body_point=2, target=[0.0, 0.9]),
        TaskConfig(priority=3, body_point=1, target=[-0.3, 0.3], effort=1e-4),
    ]


class SolverSection(_Strict):
    epsilon: float = Field(1e-6, gt=0)
    abs_cost_threshold: float = Field(1e-6, gt=0)
    rel_cost_threshold: float = Field(1e-2, gt=0)
    pinv_tolerance: float = Field(1e-5, gt=0)
    max_main_iters: int = Field(100, ge=1)
    hessian_mode: str = Field("gauss_newton", pattern="^(gauss_newton|full)$")
    decrease_search: bool = True


class PenaltySection(_Strict):
    s0: float = Field(1.0, gt=0)
    r0: float = Field(1e-2, gt=0)
    mu: float = Field(1.5, gt=1)
    max_tuning_iters: int = Field(50, ge=1)


class BaselineSection(_Strict):
    weights: list[float] = [1e2, 1e3, 1e4]
    scale_penalties: bool = True

    @model_validator(mode="after")
    def _positive(self):
        if not self.weights or any(not w > 0 for w in self.weights):
            raise ValueError("weights must be a non-empty list of positive numbers")
        return self


class TrackerSection(_Strict):
    Kp: float | list[float] = 10.0
    Kd: float | list[float] = 5.0
    damping: float = Field(0.02, ge=0)
    raw_damping: float = Field(0.1, ge=0)
    planned_damping: float = Field(0.01, ge=0)
    control_dt: float = Field(1e-3, gt=0)
    duration: float | None = Field(None, gt=0)
    motion_time: float | None = Field(None, gt=0)


class ExperimentConfig(_Strict):
    arm: ArmConfig = ArmConfig()
    discretization: DiscretizationConfig = DiscretizationConfig()
    initial_state: InitialStateConfig = InitialStateConfig()
    tasks: list[TaskConfig] = Field(default_factory=_canonical_tasks)
    solver: SolverSection = SolverSection()
    penalties: PenaltySection = PenaltySection()
    baseline: BaselineSection = BaselineSection()
    tracker: TrackerSection = TrackerSection()
    init_noise: float = Field(0.0, ge=0)
    output_dir: str = "out"
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _domain(self):
        # run every module-level invariant so bad configs fail at load time
        Experiment(self)
        return self


class Experiment:
    """Domain objects built from a validated config."""

    def __init__(self, cfg):
        self.config = cfg
        a = cfg.arm
        try:
            self.model = ArmModel(a.link_lengths, a.link_masses, a.link_inertias,
                                  a.com_offsets, a.joint_damping, a.gravity)
            self.system = DiscreteSystem(self.model, cfg.discretization.dt, cfg.discretization.N)
            q = list(cfg.initial_state.q)
            qd = list(cfg.initial_state.qd) if cfg.initial_state.qd is not None else [0.0] * len(q)
            if len(q) != self.model.m or len(qd) != self.model.m:
                raise InvalidInputError(
                    f"initial_state needs {self.model.m} joint values, got {len(q)} and {len(qd)}")
            self.x_s = q + qd
            self.stack = TaskStack([TaskSpec(**t.model_dump()) for t in cfg.tasks])
            self.stack.validate_for(self.system)
            s = cfg.solver
            self.solver = SolverConfig(s.epsilon, s.abs_cost_threshold, s.rel_cost_threshold,
                                       PinvConfig(s.pinv_tolerance), s.max_main_iters,
                                       s.hessian_mode, s.decrease_search)
            p = cfg.penalties
            self.penalties = PenaltyState.initial(len(self.stack), p.s0, p.r0, p.mu,
                                                  p.max_tuning_iters)
            t = cfg.tracker
            self.tracker = TrackerConfig(t.Kp, t.Kd, t.damping, t.control_dt)
        except InvalidInputError as exc:
            raise ValueError(str(exc)) from exc

    @property
    def horizon(self):
        return self.system.N * self.system.dt

    @property
    def motion_time(self):
        return self.config.tracker.motion_time or self.horizon

    @property
    def track_duration(self):
        return self.config.tracker.duration or self.horizon + 4.0


def format_validation_error(exc):
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def load_config(path=None, overrides=None):
    """Parse and validate a JSON config; raises InvalidInputError with field paths."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a JSON object")
    for dotted, value in (overrides or {}).items():
        node = data
        *head, last = dotted.split(".")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidInputError(format_validation_error(exc)) from exc


def config_to_dict(cfg):
    return cfg.model_dump(mode="json")

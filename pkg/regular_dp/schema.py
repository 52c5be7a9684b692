"""On-disk schemas: model files, experiment configuration and reports."""

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator

from . import config

Token = Union[float, str]


class TransitionEntry(BaseModel):
    prob: float = Field(ge=0.0)
    next: int
    cost: float = 0.0


class ActionEntry(BaseModel):
    state: int
    control: str
    cost: float = 0.0
    transitions: list[TransitionEntry]


class StateEntry(BaseModel):
    id: int
    label: Optional[str] = None


class BuilderSpec(BaseModel):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class ModelFile(BaseModel):
    """Either explicit tables (`states` + `actions`) or a named `builder` invocation."""

    schema_version: Literal[1] = 1
    name: str = "model"
    states: list[StateEntry] = Field(default_factory=list)
    stop_set: list[int] = Field(default_factory=list)
    discount: float = 1.0
    terminal: Optional[list[Token]] = None
    actions: list[ActionEntry] = Field(default_factory=list)
    builder: Optional[BuilderSpec] = None
    generated_by: Optional[BuilderSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.builder is not None and (self.states or self.actions):
            raise ValueError("a model file gives either a builder or explicit tables, not both")
        if self.builder is None and not self.states:
            raise ValueError("a model file needs states and actions, or a builder")
        return self


Algorithm = Literal["vi", "pi", "optimistic-pi", "perturbation", "lp"]


class ExperimentConfig(BaseModel):
    """Everything that determines a run; embedded in every report."""

    algo: Algorithm = "vi"
    tol: float = Field(default=config.TOL, gt=0.0)
    max_iter: int = Field(default=config.MAX_ITER, ge=1)
    start: Optional[list[Token]] = None
    initial_policy: Optional[list[str]] = None
    tie_break: Literal["keep-current", "lowest-id", "always-switch"] = "keep-current"
    evaluation: Literal["exact", "iterative"] = "iterative"
    m: int = Field(default=config.OPTIMISTIC_M, ge=1)
    perturbation_steps: int = Field(default=config.PERTURBATION_STEPS, ge=2)
    inner: Literal["pi", "vi"] = "pi"
    lp_box: float = Field(default=config.LP_BOX, gt=0.0)
    lp_weights: Optional[list[float]] = None
    region: str = "all-real"
    finite_states: Optional[list[int]] = None
    horizon_cap: int = Field(default=config.HORIZON_CAP, ge=1)
    blowup_bound: float = Field(default=config.BLOWUP_BOUND, gt=0.0)
    probe_count: int = Field(default=config.PROBE_COUNT, ge=1)
    enumeration_limit: int = Field(default=config.ENUMERATION_LIMIT, ge=1)
    seed: int = 0
    output_dir: str = "."


class ReportHeader(BaseModel):
    config: ExperimentConfig
    model_name: str
    model_sha256: str


class SolveSummary(ReportHeader):
    outcome: Literal["converged", "stalled", "oscillating", "diverged"]
    iterations: int
    final: list[Token]
    policy: Optional[list[str]] = None
    cycle: list[list[str]] = Field(default_factory=list)
    diverged_states: list[int] = Field(default_factory=list)
    exhausted: bool = False
    box_active: list[int] = Field(default_factory=list)
    per_delta: list[list[Token]] = Field(default_factory=list)


class PolicyRecordEntry(BaseModel):
    policy: list[str]
    proper: Optional[bool]
    s_regular: Literal["certified", "refuted", "unknown"]
    cost: list[Token]
    exact: bool


class WeakPiEntry(BaseModel):
    holds: bool
    witness: list[list[str]] = Field(default_factory=list)
    rule: Optional[str] = None


class StrongPiEntry(BaseModel):
    finite_region: bool
    regular_exists: bool
    minima_attained: bool
    irregular_diverge: bool
    conditions_hold: bool
    property_holds: bool
    failing_policies: list[list[str]] = Field(default_factory=list)


class ClassifyReport(ReportHeader):
    region: str
    sampler_relative: bool = True
    policies: list[PolicyRecordEntry]
    j_star: list[Token]
    j_star_s: list[Token]
    zero_set: list[int]
    infinite_set: list[int]
    weak_pi: Optional[WeakPiEntry] = None
    strong_pi: Optional[StrongPiEntry] = None


class OracleReport(ClassifyReport):
    convention_exercised: bool


class ScanSummary(ReportHeader):
    grid_points: int
    tol: float
    fixed_points: list[list[Token]]

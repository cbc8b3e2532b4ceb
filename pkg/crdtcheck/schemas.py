from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, conint, validator

from . import __version__


class CheckStage(str, Enum):
    WELL_FORMEDNESS = "WellFormedness"
    COMPLIANCE = "Compliance"
    CONVERGENCE = "Convergence"
    SEQUENTIAL_SAFETY = "SequentialSafety"
    CONCURRENT_SAFETY = "ConcurrentSafety"


STAGE_ORDER = list(CheckStage)


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"
    ABORTED = "aborted"


class CheckConfig(BaseModel):
    stop_on_first_failure: bool = True
    max_counterexamples_per_assertion: conint(gt=0) = 3
    leastness_mode: str = "auto"
    leastness_samples: conint(gt=0) = 256
    seed: int = 0
    check_both_pre_merge_orientations: bool = True
    merge_pre_merge_mode: str = "three_state"
    raw_pair_limit: conint(gt=0) = 250_000
    jobs: conint(ge=1) = 1

    @validator("leastness_mode")
    def _leastness_mode(cls, v):
        if v not in ("auto", "exhaustive", "sampled"):
            raise ValueError("leastness_mode must be auto, exhaustive or sampled")
        return v

    @validator("merge_pre_merge_mode")
    def _merge_mode(cls, v):
        if v not in ("three_state", "two_state"):
            raise ValueError("merge_pre_merge_mode must be three_state or two_state")
        return v


class Fact(BaseModel):
    """One evaluated proposition over witness roles.

    kind: inv | pre_merge | pre_op | leq | equal | conforms | present | compiles
    """

    kind: str
    roles: List[str] = []
    me: Optional[str] = None
    operation: Optional[str] = None
    params: Dict[str, Any] = {}
    label: str = ""


class Derivation(BaseModel):
    role: str
    by: str  # op | merge | initial
    inputs: List[str] = []
    operation: Optional[str] = None
    params: Dict[str, Any] = {}
    me: Optional[str] = None


class ClauseReport(BaseModel):
    label: str
    value: bool
    detail: Dict[str, Any] = {}


class Counterexample(BaseModel):
    stage: CheckStage
    assertion_id: str
    operation: Optional[str] = None
    params: Dict[str, Any] = {}
    me: Optional[str] = None
    orientation: Optional[str] = None
    witnesses: Dict[str, Any] = {}
    assumptions: List[Fact] = []
    derivations: List[Derivation] = []
    assertion: Fact
    clauses: List[ClauseReport] = []
    note: str = ""


class ViolationSummary(BaseModel):
    assertion_id: str
    operation: Optional[str] = None
    orientation: Optional[str] = None
    total: int
    shown: int


class StageResult(BaseModel):
    stage: CheckStage
    verdict: Verdict
    counterexamples: List[Counterexample] = []
    violations: List[ViolationSummary] = []
    warnings: List[str] = []
    detail: str = ""
    checked: Dict[str, int] = {}

    @property
    def assertion_ids(self) -> List[str]:
        return sorted({v.assertion_id for v in self.violations})

    def failing_operations(self) -> List[str]:
        return sorted({v.operation for v in self.violations if v.operation})


class CheckStatistics(BaseModel):
    states_enumerated: int = 0
    valid_states: int = 0
    valid_pairs: int = 0
    triples_checked: int = 0
    op_instances: int = 0
    leastness_mode: Optional[str] = None
    leastness_candidates: int = 0
    seed: int = 0
    sampled: List[str] = []
    duration_seconds: float = 0.0


class CheckReport(BaseModel):
    spec: str
    variant: Dict[str, str] = {}
    bounds: Dict[str, Any]
    config: CheckConfig
    stages: List[StageResult]
    statistics: CheckStatistics
    verdict: Verdict
    bounded: str = "within bounds"

    def stage(self, stage: CheckStage) -> StageResult:
        for s in self.stages:
            if s.stage == stage:
                return s
        raise KeyError(stage)

    def verdicts(self) -> Dict[str, str]:
        return {s.stage.value: s.verdict.value for s in self.stages}


class TraceEntry(BaseModel):
    index: int
    event: str
    replica: Optional[str] = None
    detail: str = ""
    msg_id: Optional[int] = None
    before: Optional[Dict[str, Any]] = None
    after: Optional[Dict[str, Any]] = None
    invariant: Optional[bool] = None
    failing_clauses: List[str] = []
    monotone: Optional[bool] = None
    rejected: bool = False


class TraceReport(BaseModel):
    spec: str
    variant: Dict[str, str] = {}
    bounds: Dict[str, Any]
    scenario: Optional[str] = None
    seed: Optional[int] = None
    policy: str = "skip_and_record"
    verdict: str = "clean"  # clean | violation | halted | diverged
    first_violation: Optional[int] = None
    converged: Optional[bool] = None
    replicas: Dict[str, Dict[str, Any]] = {}
    entries: List[TraceEntry] = []
    truncated: int = 0

    @property
    def rejections(self) -> List[TraceEntry]:
        return [e for e in self.entries if e.rejected]


class SpecListing(BaseModel):
    name: str
    description: str
    components: List[str]
    operations: List[str]
    default_bounds: Dict[str, int]
    variants: Dict[str, List[str]] = {}
    preconditions: Dict[str, str] = {}
    invariant: str = ""
    pre_merge: str = ""
    leq: str = ""


class ScenarioListing(BaseModel):
    name: str
    spec: str
    description: str
    events: int


class ReportDocument(BaseModel):
    tool: str = "crdtcheck"
    version: str = __version__
    kind: str  # check | trace | list
    check: Optional[CheckReport] = None
    trace: Optional[TraceReport] = None
    specs: List[SpecListing] = []
    scenarios: List[ScenarioListing] = []

    def to_json(self) -> str:
        return self.json(indent=2, sort_keys=True)

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

NONZERO_FLAG = "nonzero test is numeric: |coords| >= 1 after snapping within snap_tol"


class Verdict(str, Enum):
    OK = "ok"
    AUDIT_FAILED = "audit_failed"
    ERROR = "error"


class StageStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


class VariationReport(BaseModel):
    word: str
    sheet: int = 1
    coords: Tuple[int, int]
    residual: float
    nonzero: bool
    period_matrix: List[List[int]] = Field(default_factory=lambda: [[1, 0], [0, 1]])
    note: str = NONZERO_FLAG


class LedgerStep(BaseModel):
    factor: str
    value: Tuple[float, float]
    expected: Tuple[float, float]
    error: float


class LoopReport(BaseModel):
    word: str
    period_matrix: List[List[int]]
    log_variation: Tuple[int, int]
    residuals: Dict[str, float] = Field(default_factory=dict)
    certificate: Optional[Dict[str, Any]] = None
    lift_closed: bool = True
    predicted_variation: Optional[Tuple[int, int]] = None
    ledger: List[LedgerStep] = Field(default_factory=list)


class RankReport(BaseModel):
    first: LoopReport
    second: LoopReport
    matrix: List[List[int]]
    determinant: int
    rank: int


class StageReport(BaseModel):
    name: str
    status: StageStatus = StageStatus.OK
    payload: Dict[str, Any] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict)
    elapsed: float = 0.0
    error: Optional[Dict[str, Any]] = None


class ReportBundle(BaseModel):
    command: str
    inputs: Dict[str, Any] = Field(default_factory=dict)
    stages: List[StageReport] = Field(default_factory=list)
    residuals: Dict[str, float] = Field(default_factory=dict)
    tolerance_audit: Dict[str, Any] = Field(default_factory=dict)
    verdict: Verdict = Verdict.OK
    timing: float = 0.0
    created_at: datetime = Field(default_factory=datetime.now)

    def stage(self, name: str) -> Optional[StageReport]:
        return next((s for s in self.stages if s.name == name), None)

    def to_json_dict(self) -> Dict[str, Any]:
        # created_at bị bỏ để báo cáo xác định
        return self.model_dump(mode="json", exclude={"created_at"})

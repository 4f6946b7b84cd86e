from typing import Any, Dict, Optional


class MonodromyError(Exception):
    """Lỗi gốc của mọi stage tính toán"""

    stage = "core"

    def __init__(self, message: str, *, stage: Optional[str] = None, **details: Any):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "error": type(self).__name__,
            "message": str(self),
            "details": self.details,
        }


class ConfigError(MonodromyError):
    stage = "config"


# words / rep
class NotInKernel(MonodromyError):
    stage = "words"


class MissingCocycleValue(MonodromyError):
    stage = "rep"


# paths
class GeometryError(MonodromyError):
    stage = "paths"


class EndpointMismatch(MonodromyError):
    stage = "paths"


# periods
class OutOfDomain(MonodromyError):
    stage = "periods"


class StepFailure(MonodromyError):
    stage = "periods"


class SnapFailure(MonodromyError):
    stage = "periods"


class BasePointMismatch(MonodromyError):
    stage = "periods"


# cover
class NearBranchPoint(MonodromyError):
    stage = "cover"


class SheetCollision(MonodromyError):
    stage = "cover"


class LiftNotClosed(MonodromyError):
    stage = "cover"


class NotFound(MonodromyError):
    """Tìm kiếm có giới hạn không cho kết quả; details chứa frontier"""

    stage = "search"


class NotGalois(MonodromyError):
    stage = "pipeline"


# elog
class AmbiguousSnap(MonodromyError):
    stage = "elog"


class DegenerateFrame(MonodromyError):
    stage = "elog"


class FrameNotRestored(MonodromyError):
    stage = "elog"


class TraceNotTorsion(MonodromyError):
    stage = "elog"


class PointAtInfinity(MonodromyError):
    stage = "elog"


# pipeline
class PredictionMismatch(MonodromyError):
    stage = "pipeline"

from typing import Any, Dict, List

from fastapi import APIRouter, Body, HTTPException, Query

from ..core.config import parse_run_config
from ..core.errors import MonodromyError
from ..core.logging import api_logger
from ..models.config import CommandName
from ..models.report import ReportBundle, Verdict
from ..services.shell import run_command

router = APIRouter()


def _respond(bundle: ReportBundle) -> Dict[str, Any]:
    """Bundle lỗi thành HTTP 422 với stage, error, details"""
    if bundle.verdict == Verdict.ERROR:
        failed = next((s for s in reversed(bundle.stages) if s.error), None)
        detail = failed.error if failed and failed.error else {"stage": "unknown", "error": "MonodromyError"}
        raise HTTPException(status_code=422, detail=detail)
    return bundle.to_json_dict()


def _execute(command: CommandName, payload: Dict[str, Any]) -> Dict[str, Any]:
    try:
        config = parse_run_config({**payload, "command": command.value})
        api_logger.info(f"Running {command.value} via HTTP")
        return _respond(run_command(command, config))
    except MonodromyError as e:
        api_logger.error(f"{command.value} failed at stage {e.stage}: {e}")
        raise HTTPException(status_code=422, detail=e.to_dict())
    except HTTPException:
        raise
    except Exception as e:
        api_logger.error(f"Unexpected error in {command.value}: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))


@router.post("/periods")
def periods(payload: Dict[str, Any] = Body(default={})) -> Dict[str, Any]:
    """Ma trận monodromy của chu kỳ dọc một từ"""
    return _execute(CommandName.PERIODS, payload)


@router.post("/kernel")
def kernel(payload: Dict[str, Any] = Body(default={})) -> Dict[str, Any]:
    return _execute(CommandName.KERNEL, payload)


@router.post("/lift")
def lift(payload: Dict[str, Any] = Body(default={})) -> Dict[str, Any]:
    return _execute(CommandName.LIFT, payload)


@router.post("/delta")
def delta(payload: Dict[str, Any] = Body(default={})) -> Dict[str, Any]:
    return _execute(CommandName.DELTA, payload)


@router.post("/gamma")
def gamma(payload: Dict[str, Any] = Body(default={})) -> Dict[str, Any]:
    """Pipeline đầy đủ: alpha, delta, Gamma, Gamma', hạng"""
    return _execute(CommandName.GAMMA, payload)


@router.get("/masser")
def masser() -> Dict[str, Any]:
    return _execute(CommandName.MASSER, {})


@router.get("/dessins")
def dessins(max_n: int = Query(12, ge=2)) -> Dict[str, Any]:
    return _execute(CommandName.DESSINS, {"max_n": max_n})


@router.get("/abhyankar")
def abhyankar(first: List[int] = Query(...), second: List[int] = Query(...)) -> Dict[str, Any]:
    return _execute(CommandName.ABHYANKAR, {"profiles": [first, second]})

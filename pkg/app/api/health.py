from datetime import datetime
from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from ..core.logging import api_logger
from ..services.periods import agm_check, series_frame
from ..services.rep import RHO_G0, RHO_G1, in_gamma2, rho
from ..services.words import A0, A1, Word

router = APIRouter()

AGM_TOL = 1e-10


@router.get("/health")
async def health_check() -> Dict[str, Any]:
    """Tự kiểm tra số học: chuỗi vs AGM và ma trận generator"""
    try:
        series_status = check_series()
        rep_status = check_generators()
        status = {
            "status": "healthy" if all([
                series_status["status"] == "healthy",
                rep_status["status"] == "healthy",
            ]) else "unhealthy",
            "timestamp": datetime.now().isoformat(),
            "services": {
                "periods": series_status,
                "rep": rep_status,
            },
        }
        api_logger.info(f"Health check completed: {status['status']}")
        return status
    except Exception as e:
        api_logger.error(f"Health check failed: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))


def check_series(lam: float = 0.5) -> Dict[str, Any]:
    """omega1 từ chuỗi lũy thừa so với pi / AGM"""
    try:
        frame = series_frame(lam)
        error = abs(frame.omega1 - agm_check(lam)) / abs(frame.omega1)
        return {
            "status": "healthy" if error < AGM_TOL else "unhealthy",
            "message": f"series vs AGM relative error {error:.2e} at lambda={lam}",
        }
    except Exception as e:
        api_logger.error(f"Series health check failed: {str(e)}")
        return {"status": "unhealthy", "message": str(e)}


def check_generators() -> Dict[str, Any]:
    try:
        ok = (
            rho(Word((A0,))) == RHO_G0
            and rho(Word((A1,))) == RHO_G1
            and in_gamma2(rho(Word.parse("a0 A1 a0")))
        )
        return {
            "status": "healthy" if ok else "unhealthy",
            "message": "generator matrices in Gamma(2)" if ok else "generator matrices are wrong",
        }
    except Exception as e:
        api_logger.error(f"Generator health check failed: {str(e)}")
        return {"status": "unhealthy", "message": str(e)}

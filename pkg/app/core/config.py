import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from ..models.config import RunConfig
from .errors import ConfigError

# Load biến môi trường
load_dotenv()


class Settings:
    """Cấu hình cấp process, đọc từ biến môi trường"""

    def __init__(self) -> None:
        self.host = os.getenv("HOST", "0.0.0.0")
        self.port = int(os.getenv("PORT", 8000))
        self.debug = os.getenv("DEBUG", "false").lower() == "true"
        self.snap_tol = float(os.getenv("MONODROMY_SNAP_TOL", 1e-6))
        self.rtol = float(os.getenv("MONODROMY_RTOL", 1e-12))
        self.atol = float(os.getenv("MONODROMY_ATOL", 1e-14))
        self.max_len = int(os.getenv("MONODROMY_MAX_LEN", 12))
        self.max_level = int(os.getenv("MONODROMY_MAX_LEVEL", 2))
        self.denominator_bound = int(os.getenv("MONODROMY_DENOMINATOR_BOUND", 24))
        self.max_workers = int(os.getenv("MONODROMY_MAX_WORKERS", 1))


settings = Settings()


def run_config_defaults() -> Dict[str, Any]:
    return {
        "snap_tol": settings.snap_tol,
        "max_len": settings.max_len,
        "max_level": settings.max_level,
        "denominator_bound": settings.denominator_bound,
    }


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate một document cấu hình, lỗi được đổi thành ConfigError"""
    merged = {**run_config_defaults(), **data}
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e.error_count()} error(s)",
                          errors=json.loads(e.json()))


def load_run_config(path: Optional[Union[str, Path]], **overrides: Any) -> RunConfig:
    """Đọc file JSON cấu hình và áp dụng override từ CLI"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}", path=str(path))
    data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_run_config(data)

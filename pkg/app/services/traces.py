from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd

from ..core.logging import cli_logger

LOG_COLUMNS = ["t", "re_lambda", "im_lambda", "re_z", "im_z", "beta1", "beta2"]


class TraceService:
    """Ghi các vết số ra CSV, chỉ khi có thư mục --trace"""

    def __init__(self, trace_dir: Optional[Union[str, Path]] = None):
        self.trace_dir = Path(trace_dir) if trace_dir else None
        self.written: List[str] = []

    @property
    def enabled(self) -> bool:
        return self.trace_dir is not None

    def _path(self, name: str) -> Path:
        assert self.trace_dir is not None
        self.trace_dir.mkdir(parents=True, exist_ok=True)
        safe = "".join(c if c.isalnum() or c in "-_@" else "_" for c in name)
        return self.trace_dir / f"{safe}.csv"

    def write(self, name: str, df: pd.DataFrame) -> Optional[str]:
        """Lưu một DataFrame; trả về đường dẫn hoặc None khi tắt"""
        if not self.enabled:
            return None
        path = self._path(name)
        df.to_csv(path, index=False)
        self.written.append(str(path))
        cli_logger.info(f"Trace written: {path} ({len(df)} rows)")
        return str(path)

    def write_log_trace(self, name: str, rows: List[Dict[str, float]]) -> Optional[str]:
        df = pd.DataFrame(rows, columns=LOG_COLUMNS)
        return self.write(name, df)

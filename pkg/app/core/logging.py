import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path

# Tạo thư mục logs nếu chưa tồn tại
log_dir = Path(os.getenv("LOG_DIR", "logs"))
log_dir.mkdir(parents=True, exist_ok=True)


# Cấu hình logging
def setup_logger(name: str) -> logging.Logger:
    logger = logging.getLogger(name)
    logger.setLevel(os.getenv("LOG_LEVEL", "INFO").upper())

    # Logger đã được cấu hình trước đó
    if logger.handlers:
        return logger

    # Format cho log
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    # Handler cho console
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # Handler cho file
    log_file = log_dir / f"{name}_{datetime.now().strftime('%Y%m%d')}.log"
    file_handler = RotatingFileHandler(
        log_file,
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger


# Tạo các logger cho từng module
api_logger = setup_logger("api")
cli_logger = setup_logger("cli")
words_logger = setup_logger("words")
periods_logger = setup_logger("periods")
cover_logger = setup_logger("cover")
elog_logger = setup_logger("elog")
pipeline_logger = setup_logger("pipeline")

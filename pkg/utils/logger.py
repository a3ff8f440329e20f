import os
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}"


def configure_logging(log_file: Optional[str] = None, level: str = "INFO", console: bool = True) -> None:
    """
    Cấu hình sink cho loguru: stderr và (tùy chọn) file run.log cạnh artifact.

    Args:
        log_file: Đường dẫn file log, None nếu chỉ log ra stderr
        level: Cấp độ log tối thiểu
        console: Có ghi ra stderr hay không
    """
    logger.remove()
    if os.getenv("DEBUG"):
        level = "DEBUG"
    if console:
        logger.add(sys.stderr, level=level, format=LOG_FORMAT)
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, level=level, format=LOG_FORMAT, mode="w")


def show_log(message: str, level: str = "info") -> None:
    """
    Hiển thị log

    Args:
        message: Nội dung log
        level: Cấp độ log
    """
    if level == "debug":
        if os.getenv("DEBUG"):
            logger.debug(str(message))
    elif level == "error":
        logger.error(str(message))
    elif level == "warning":
        logger.warning(str(message))
    else:
        logger.info(str(message))

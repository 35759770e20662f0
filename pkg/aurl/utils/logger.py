import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

LOGGER_NAME = "aurl"
FILE_FORMAT = '%(asctime)s [%(levelname)s] %(filename)s:%(lineno)d - %(message)s'


class CustomFormatter(logging.Formatter):
    """Colored console lines with a level emoji; tracebacks fall back to the plain format"""

    # levelno -> (ANSI color, emoji); the package never logs at CRITICAL
    STYLES = {
        logging.DEBUG: ("\033[94m", "🔍"),
        logging.INFO: ("\033[92m", "✨"),
        logging.WARNING: ("\033[93m", "⚠️"),
        logging.ERROR: ("\033[91m", "❌"),
    }
    RESET = "\033[0m"

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record):
        if record.exc_info:
            return super().format(record)
        color, emoji = self.STYLES.get(record.levelno, ("", ""))
        reset = self.RESET if color else ""
        if not self.use_color:
            color = reset = ""
        timestamp = datetime.fromtimestamp(record.created).strftime("%Y-%m-%d %H:%M:%S")
        return (f"{color}{timestamp} {emoji} [{record.levelname}] "
                f"{record.filename}:{record.lineno} - {record.getMessage()}{reset}")


def setup_logger(level: Union[str, int] = logging.INFO) -> logging.Logger:
    """Setup application logger (console only; the run directory gets a file handler later)"""
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)
    logger.propagate = False

    if not any(getattr(h, "_aurl_console", False) for h in logger.handlers):
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(CustomFormatter(use_color=sys.stdout.isatty()))
        console_handler._aurl_console = True
        logger.addHandler(console_handler)

    return logger


def set_level(level: Union[str, int]) -> None:
    """Change the level of the application logger"""
    if isinstance(level, str):
        level = level.upper()
    logger.setLevel(level)


def attach_file_handler(path: Union[str, Path]) -> logging.Handler:
    """
    Mirror log records into a plain-text file inside the run directory
    📝 File: logger.py, Function: attach_file_handler
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(path, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
    logger.addHandler(file_handler)
    return file_handler


def detach_handler(handler: Optional[logging.Handler]) -> None:
    if handler is None:
        return
    logger.removeHandler(handler)
    handler.close()


logger = setup_logger()

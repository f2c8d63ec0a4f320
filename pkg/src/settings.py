import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LP_METHODS = ("simplex", "highs")


@dataclass(frozen=True)
class Settings:
    log_level: str
    log_file: Optional[str]
    output_dir: Path
    workers: int
    lp_method: str


def _int_from_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


def load_settings(dotenv_path: Optional[Path] = None) -> Settings:
    """Read configuration from the environment (and a .env file if present)"""
    load_dotenv(dotenv_path=dotenv_path)

    log_level = os.getenv("DIVERSE_PLANNER_LOG_LEVEL", "INFO").upper()
    if not isinstance(logging.getLevelName(log_level), int):
        raise ValueError(f"DIVERSE_PLANNER_LOG_LEVEL is not a logging level: {log_level}")

    lp_method = os.getenv("DIVERSE_PLANNER_LP_METHOD", "simplex").lower()
    if lp_method not in LP_METHODS:
        raise ValueError(f"DIVERSE_PLANNER_LP_METHOD must be one of {LP_METHODS}, got {lp_method!r}")

    workers = _int_from_env("DIVERSE_PLANNER_WORKERS", 1)
    if workers < 1:
        raise ValueError(f"DIVERSE_PLANNER_WORKERS must be >= 1, got {workers}")

    return Settings(
        log_level=log_level,
        log_file=os.getenv("DIVERSE_PLANNER_LOG_FILE") or None,
        output_dir=Path(os.getenv("DIVERSE_PLANNER_OUTPUT_DIR", "./results")),
        workers=workers,
        lp_method=lp_method,
    )


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Install console (and optional file) handlers on the root logger"""
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Replace whatever handlers a previous call installed
    root_logger.handlers = []
    formatter = logging.Formatter(LOG_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    root_logger.addHandler(stream_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    return logging.getLogger('DiversePlanner')

"""
Centralised environment configuration for the lab.
Reads from environment variables with sensible defaults so runs work without
any .env file; per-experiment settings live in the run config instead.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load .env once so all modules relying on Config see environment values
_ENV_PATH = Path(__file__).resolve().parent / ".env"
load_dotenv(_ENV_PATH)
# Also load from working directory if present (no override)
load_dotenv()


def _get_env(name: str, default: Optional[str] = None) -> Optional[str]:
    value = os.getenv(name)
    return value if value is not None and value != "" else default


class Config:
    # Output location; when set it wins over output_dir in the run config
    OUTPUT_DIR: Optional[str] = _get_env("DUALRATE_OUT")
    LOG_LEVEL: str = _get_env("DUALRATE_LOG_LEVEL", "INFO").upper()
    PROGRESS: bool = _get_env("DUALRATE_PROGRESS", "false").lower() == "true"

    DEBUG: bool = _get_env("DEBUG", "false").lower() == "true"

    @classmethod
    def output_override(cls) -> Optional[str]:
        # Read lazily so tests and subprocesses can set the variable after import
        return _get_env("DUALRATE_OUT", cls.OUTPUT_DIR)

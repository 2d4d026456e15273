"""Ledger audit environment configuration.

Uses the LEDGER_AUDIT_ prefix for every variable. Run-level settings live
in ``RunConfig`` (see ``models/run.py``); this module only covers the
process environment: logging and the default output location.
"""

from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables and ``.env``."""

    model_config = SettingsConfigDict(
        env_prefix="LEDGER_AUDIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Logging settings
    log_level: str = "INFO"
    log_format: str = "console"
    log_file: Optional[str] = None
    log_retention_days: int = 30

    # Where run directories are created when a run config names none
    output_dir: str = "runs"


settings = Settings()

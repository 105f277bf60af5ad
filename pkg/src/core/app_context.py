"""Application context holding process-wide settings."""

import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in {"1", "true", "yes", "on"}


class AppContext:
    """Central registry for settings read from the environment."""

    def __init__(self, env_file: Optional[Path] = None):
        """Initialize application context."""
        self._env_file = env_file
        self._config: Optional[Dict[str, Any]] = None

    @property
    def config(self) -> Dict[str, Any]:
        """Get process configuration (loaded once, on first access)."""
        if self._config is None:
            load_dotenv(dotenv_path=self._env_file)
            seed_override = os.getenv("REFDINO_SEED")
            self._config = {
                "log_level": os.getenv("LOG_LEVEL", "INFO"),
                "json_logging": _env_flag("JSON_LOGGING", "true"),
                "console_logging": _env_flag("CONSOLE_LOGGING", "true"),
                "log_dir": os.getenv("LOG_DIR", "./logs"),
                "output_dir": os.getenv("REFDINO_OUTPUT_DIR", "./runs"),
                "seed_override": int(seed_override) if seed_override else None,
            }
        return self._config

    def reset(self) -> None:
        """Forget cached settings so the next access re-reads the environment."""
        self._config = None


# Global app context instance
app_context = AppContext()

"""Command-line entry point."""

import sys

from dotenv import load_dotenv
from pathlib import Path

env_path = Path(__file__).resolve().parent / ".env"
load_dotenv(dotenv_path=env_path)

from src.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())

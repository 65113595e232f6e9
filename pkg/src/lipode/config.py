from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

from .errors import ConfigurationError

PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class Defaults:
    data_dir: Path
    output_dir: Path
    log_dir: Path
    profile: str
    jobs: int
    seed: int


def _env_path(name: str, default: str) -> Path:
    return Path(os.getenv(name, default)).expanduser().resolve()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{name} must be an integer, got {raw!r}") from e


def project_root() -> Path:
    """Best-effort project root.

    Works well for editable installs where src/ is present.
    Fallback is current working directory.
    """
    try:
        # .../src/lipode/config.py -> .../src -> .../(project root)
        return Path(__file__).resolve().parents[2]
    except Exception:
        return Path.cwd().resolve()


def load_defaults(env_file: str | None = None) -> Defaults:
    """Load configuration defaults from .env / environment.

    Nothing is read at import time, so defaults are reloadable/testable.
    """
    if env_file:
        load_dotenv(env_file, override=False)
    else:
        load_dotenv(override=False)

    root = project_root()

    data_dir = _env_path("LIPODE_DATA_DIR", str(root / "data"))
    output_dir = _env_path("LIPODE_OUTPUT_DIR", str(root / "output"))
    log_dir = _env_path("LIPODE_LOG_DIR", str(root / "logs"))

    profile = os.getenv("LIPODE_PROFILE", "desk").strip().lower()
    if profile not in PROFILES:
        raise ConfigurationError(
            f"LIPODE_PROFILE must be one of {', '.join(PROFILES)}, got {profile!r}"
        )

    jobs = _env_int("LIPODE_JOBS", 1)
    if jobs < 1:
        raise ConfigurationError(f"LIPODE_JOBS must be >= 1, got {jobs}")

    return Defaults(
        data_dir=data_dir,
        output_dir=output_dir,
        log_dir=log_dir,
        profile=profile,
        jobs=jobs,
        seed=_env_int("LIPODE_SEED", 0),
    )


def ensure_dirs(*dirs: Path) -> None:
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)

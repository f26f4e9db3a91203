from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from trapnoise.constants import (
    ENV_DENSE_LIMIT,
    ENV_LOG_LEVEL,
    ENV_MEMORY_CAP_GB,
    ENV_THREADS,
    LOG_LEVELS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RuntimeSettings:
    threads: int | None = None
    log_level: str = "INFO"
    dense_limit: int | None = None
    memory_cap_gb: float | None = None


def _parse_dotenv_value(raw_value: str) -> str:
    value = raw_value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in {'"', "'"}:
        return value[1:-1]
    if " #" in value:
        value = value.split(" #", 1)[0].rstrip()
    return value


def _load_dotenv_file(path: Path) -> int:
    if not path.is_file():
        return 0
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except Exception:  # noqa: BLE001
        return 0

    applied = 0
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("export "):
            stripped = stripped[7:].strip()
        key, sep, raw_value = stripped.partition("=")
        env_key = key.strip()
        if not sep or not env_key.startswith("TRAPNOISE_"):
            continue
        if env_key not in os.environ:
            os.environ[env_key] = _parse_dotenv_value(raw_value)
            applied += 1
    return applied


def load_dotenv(extra_dirs: tuple[Path, ...] = ()) -> None:
    candidates: list[Path] = [Path(directory) / ".env" for directory in extra_dirs]
    try:
        candidates.append(Path.cwd() / ".env")
    except Exception:  # noqa: BLE001
        pass
    if sys.argv and sys.argv[0]:
        try:
            candidates.append(Path(sys.argv[0]).resolve().parent / ".env")
        except Exception:  # noqa: BLE001
            pass

    seen: set[str] = set()
    for candidate in candidates:
        key = str(candidate)
        if key in seen:
            continue
        seen.add(key)
        if _load_dotenv_file(candidate):
            logger.debug("loaded environment overrides from %s", candidate)


def _env_int(name: str, minimum: int) -> int | None:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return max(minimum, int(raw))
    except ValueError:
        logger.warning("ignoring %s=%r (not an integer)", name, raw)
        return None


def _env_float(name: str, minimum: float) -> float | None:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return max(minimum, float(raw))
    except ValueError:
        logger.warning("ignoring %s=%r (not a number)", name, raw)
        return None


def runtime_settings() -> RuntimeSettings:
    level = os.getenv(ENV_LOG_LEVEL, "").strip().upper()
    if level not in LOG_LEVELS:
        level = "INFO"
    dense_limit = _env_int(ENV_DENSE_LIMIT, 1)
    memory_cap = _env_float(ENV_MEMORY_CAP_GB, 0.001)
    return RuntimeSettings(
        threads=_env_int(ENV_THREADS, 1),
        log_level=level,
        dense_limit=dense_limit,
        memory_cap_gb=memory_cap,
    )

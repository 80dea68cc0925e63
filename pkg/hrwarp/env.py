"""Environment loading and typed environment readers for hrwarp tools."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Optional

from .tensor_io import ArgumentError

PROJECT_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_ENV_PATH = PROJECT_ROOT / ".env"
ENV_FILE_ENV_VAR = "HRWARP_ENV_FILE"

SEED_VAR = "HRWARP_SEED"
THREADS_VAR = "HRWARP_THREADS"
GAMMA_VAR = "HRWARP_GAMMA"
LOG_LEVEL_VAR = "HRWARP_LOG_LEVEL"


def load_env(
    env_file: str | os.PathLike[str] | None = None,
    *,
    overwrite: bool = False,
) -> Path | None:
    """Load key=value pairs from a .env-style file into ``os.environ``.

    Variables already present in the environment win unless ``overwrite`` is set.
    Blank lines, ``#`` comments and an ``export`` prefix are tolerated; values wrapped in
    matching quotes are unwrapped.

    Args:
        env_file: Explicit path. When omitted, ``HRWARP_ENV_FILE`` and then
            ``PROJECT_ROOT/.env`` are tried.
        overwrite: Replace values that are already set.

    Returns:
        The file that was loaded, or ``None`` when no default file exists.
    """

    candidate = _resolve_env_path(env_file)
    was_explicit = env_file is not None or os.getenv(ENV_FILE_ENV_VAR)
    if not candidate.exists():
        if was_explicit:
            raise FileNotFoundError(f"Environment file '{candidate}' does not exist.")
        return None

    for key, value in _parse_env_file(candidate):
        if overwrite or key not in os.environ:
            os.environ[key] = value
    return candidate


def _resolve_env_path(env_file: str | os.PathLike[str] | None) -> Path:
    if env_file is not None:
        return Path(env_file)

    env_override = os.getenv(ENV_FILE_ENV_VAR)
    if env_override:
        return Path(env_override)

    return DEFAULT_ENV_PATH


def _parse_env_file(path: Path) -> Iterable[tuple[str, str]]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RuntimeError(f"Failed to read environment file '{path}': {exc}") from exc

    for raw_line in lines:
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.lower().startswith("export "):
            line = line[7:]
        if "=" not in line:
            continue

        key, value = line.split("=", 1)
        key = key.strip()
        if key:
            yield key, _strip_quotes(value.strip())


def _strip_quotes(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in {'"', "'"}:
        return value[1:-1]
    return value


def env_str(name: str, default: Optional[str] = None) -> Optional[str]:
    value = os.getenv(name)
    return default if value is None or value == "" else value


def env_int(name: str, default: Optional[int] = None) -> Optional[int]:
    value = env_str(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ArgumentError(f"{name} must be an integer, got '{value}'") from exc


def env_float(name: str, default: Optional[float] = None) -> Optional[float]:
    value = env_str(name)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError as exc:
        raise ArgumentError(f"{name} must be a number, got '{value}'") from exc


__all__ = [
    "GAMMA_VAR",
    "LOG_LEVEL_VAR",
    "SEED_VAR",
    "THREADS_VAR",
    "env_float",
    "env_int",
    "env_str",
    "load_env",
]

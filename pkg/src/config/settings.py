from __future__ import annotations

from dataclasses import dataclass
import os

from dotenv import load_dotenv


def _positive_int(value: str, field: str) -> int:
    try:
        v = int((value or "").strip())
    except ValueError as e:
        raise ValueError(f"{field} must be an integer, got: {value!r}") from e
    if v <= 0:
        raise ValueError(f"{field} must be positive, got: {v}")
    return v


def _log_level(value: str, field: str) -> str:
    v = (value or "").strip().upper()
    if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ValueError(f"{field} must be a logging level name, got: {value!r}")
    return v


@dataclass(frozen=True)
class Settings:
    """Process settings.

    Environment variables (optional):
      - FRACAP_OUTPUT_DIR
      - FRACAP_LOG_LEVEL
      - FRACAP_SOLVE_CONCURRENCY
      - FRACAP_DEFAULT_N
      - FRACAP_RUN_ID_PREFIX
    """

    output_dir: str
    log_level: str
    solve_concurrency: int
    default_n: int
    run_id_prefix: str

    @staticmethod
    def load(env_file: str | None = ".env") -> "Settings":
        # Load local .env if present (no-op otherwise)
        if env_file:
            load_dotenv(env_file, override=False)

        output_dir = (os.getenv("FRACAP_OUTPUT_DIR", "out") or "").strip()
        if not output_dir:
            raise ValueError("FRACAP_OUTPUT_DIR is required")

        return Settings(
            output_dir=output_dir,
            log_level=_log_level(os.getenv("FRACAP_LOG_LEVEL", "INFO"), "FRACAP_LOG_LEVEL"),
            solve_concurrency=_positive_int(os.getenv("FRACAP_SOLVE_CONCURRENCY", "4"), "FRACAP_SOLVE_CONCURRENCY"),
            default_n=_positive_int(os.getenv("FRACAP_DEFAULT_N", "512"), "FRACAP_DEFAULT_N"),
            run_id_prefix=os.getenv("FRACAP_RUN_ID_PREFIX", "run").strip() or "run",
        )

import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, model_validator

DEFAULT_ALPHA = 0.05
DEFAULT_GRID_POINTS = 101
DEFAULT_GRID_POINTS_TWO_SIDED = 41


class Settings(BaseModel):
    threads: int
    report_root: Path
    redis_url: str
    result_backend: str
    replicate_queue: str = "replicates"

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_threads(self) -> "Settings":
        if self.threads < 1:
            raise ValueError("MNARCORR_THREADS must be a positive integer")
        return self


def get_thread_count() -> int:
    """Return the number of threads used for replicate-level parallelism."""

    raw = os.getenv("MNARCORR_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"MNARCORR_THREADS must be an integer, got '{raw}'") from exc
    if value < 1:
        raise ValueError("MNARCORR_THREADS must be a positive integer")
    return value


def get_report_root() -> Path:
    """Return the directory where worker-side experiment artifacts are written."""

    return Path(os.getenv("REPORT_ROOT", "/tmp/mnarcorr/reports"))


def get_settings() -> Settings:
    redis_url = os.getenv("REDIS_URL", "redis://redis:6379/0")
    return Settings(
        threads=get_thread_count(),
        report_root=get_report_root(),
        redis_url=redis_url,
        result_backend=os.getenv("CELERY_RESULT_BACKEND", redis_url),
        replicate_queue=os.getenv("REPLICATE_QUEUE_NAME", "replicates"),
    )


def default_grid_points(two_sided: bool) -> int:
    """Grid points per active γ dimension when none are requested."""

    return DEFAULT_GRID_POINTS_TWO_SIDED if two_sided else DEFAULT_GRID_POINTS

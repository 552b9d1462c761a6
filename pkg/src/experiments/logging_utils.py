from __future__ import annotations

import logging
from typing import Callable

from src.experiments.context import run_id_ctx

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s run_id=%(run_id)s %(message)s"

_installed: Callable[..., logging.LogRecord] | None = None


def configure_logging(level: str = "INFO") -> None:
    """
    Make run_id ALWAYS available on every LogRecord, also for records emitted
    outside a run scope (library use, tests).
    """
    global _installed
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("fracap").setLevel(level)

    # Idempotent: don't re-wrap repeatedly
    if _installed is not None and logging.getLogRecordFactory() is _installed:
        return

    old_factory: Callable[..., logging.LogRecord] = logging.getLogRecordFactory()

    def record_factory(*args, **kwargs) -> logging.LogRecord:
        record = old_factory(*args, **kwargs)
        if not hasattr(record, "run_id"):
            record.run_id = run_id_ctx.get()
        return record

    logging.setLogRecordFactory(record_factory)
    _installed = record_factory

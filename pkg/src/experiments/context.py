from __future__ import annotations

import contextvars
import uuid
from contextlib import contextmanager
from typing import Iterator

# Context variable read by the log-record factory
run_id_ctx: contextvars.ContextVar[str] = contextvars.ContextVar("run_id", default="-")


def new_run_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


@contextmanager
def run_scope(prefix: str = "run", run_id: str | None = None) -> Iterator[str]:
    """Bind a run id (correlation id) for the duration of one command.

    A caller-supplied id is reused; otherwise one is generated from the prefix.
    """
    rid = run_id or new_run_id(prefix)
    token = run_id_ctx.set(rid)
    try:
        yield rid
    finally:
        run_id_ctx.reset(token)

import logging

from src.experiments.context import new_run_id, run_id_ctx, run_scope
from src.experiments.logging_utils import configure_logging
from src.instrumentation import timed


def test_run_id_is_attached_inside_and_outside_a_scope(caplog):
    configure_logging("INFO")
    caplog.set_level(logging.INFO, logger="fracap")
    logger = logging.getLogger("fracap.test")

    with run_scope(run_id="fixed-run"):
        logger.info("inside")
    logger.info("outside")

    by_message = {r.getMessage(): r for r in caplog.records}
    assert by_message["inside"].run_id == "fixed-run"
    assert by_message["outside"].run_id == "-"


def test_scope_generates_prefixed_ids_and_restores_the_previous_one():
    with run_scope(prefix="bench") as rid:
        assert rid.startswith("bench-")
        assert run_id_ctx.get() == rid
    assert run_id_ctx.get() == "-"
    assert new_run_id("x") != new_run_id("x")


def test_configure_logging_is_idempotent():
    configure_logging("INFO")
    factory = logging.getLogRecordFactory()
    configure_logging("INFO")
    assert logging.getLogRecordFactory() is factory


def test_timed_logs_latency(caplog):
    caplog.set_level(logging.INFO, logger="fracap")
    logger = logging.getLogger("fracap.test")

    @timed(logger, "assemble")
    def work(v):
        return v * 2

    assert work(21) == 42
    assert any("assemble latency_ms=" in r.getMessage() for r in caplog.records)

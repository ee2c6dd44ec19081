"""
Test suite for the structured logging helpers.
"""

import json
import logging

import pytest

from jpinn.utils.logging import LogContext, get_logger, log_function_call, setup_logging


@pytest.fixture
def json_log(tmp_path):
    path = tmp_path / "logs" / "run.log"
    setup_logging(level="INFO", format_type="json", log_file=str(path))
    yield path
    root = logging.getLogger()
    for handler in root.handlers[:]:
        handler.close()
        root.removeHandler(handler)


def read_events(path):
    for handler in logging.getLogger().handlers:
        handler.flush()
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class TestStructuredLogging:
    def test_events_are_json_lines(self, json_log):
        get_logger("jpinn.tests").info("epoch_completed", epoch=3, loss=0.25)
        events = [e for e in read_events(json_log) if e["event"] == "epoch_completed"]
        assert events[0]["epoch"] == 3
        assert events[0]["level"] == "info"

    def test_context_is_bound_and_released(self, json_log):
        logger = get_logger("jpinn.tests")
        with LogContext(run_id=7, mode="joint"):
            logger.info("inside")
        logger.info("outside")
        events = {e["event"]: e for e in read_events(json_log)}
        assert events["inside"]["run_id"] == 7
        assert events["inside"]["mode"] == "joint"
        assert "run_id" not in events["outside"]

    def test_function_calls_logged(self, json_log):
        @log_function_call
        def double(x):
            return 2 * x

        assert double(4) == 8
        names = [e["event"] for e in read_events(json_log)]
        assert "call_started" in names
        assert "call_completed" in names

    def test_failures_logged_and_reraised(self, json_log):
        @log_function_call
        def broken():
            raise ValueError("nope")

        with pytest.raises(ValueError):
            broken()
        failed = [e for e in read_events(json_log) if e["event"] == "call_failed"]
        assert failed[0]["error_type"] == "ValueError"

"""Tests for config module - absolute paths and logging setup."""
import logging
import os


def test_base_dir_is_absolute():
    """BASE_DIR should be an absolute path."""
    from config import BASE_DIR
    assert BASE_DIR.is_absolute(), f"BASE_DIR should be absolute, got: {BASE_DIR}"


def test_file_paths_are_absolute_and_inside_base_dir():
    from config import (
        BASE_DIR, SCENARIOS_DIR, DATA_DIR, DEFAULT_SCENARIO_FILE, SAMPLE_TRACE_FILE,
    )

    for name, path in [
        ("SCENARIOS_DIR", SCENARIOS_DIR),
        ("DATA_DIR", DATA_DIR),
        ("DEFAULT_SCENARIO_FILE", DEFAULT_SCENARIO_FILE),
        ("SAMPLE_TRACE_FILE", SAMPLE_TRACE_FILE),
    ]:
        assert os.path.isabs(path), f"{name} should be absolute, got: {path}"
        assert path.startswith(str(BASE_DIR))


def test_bundled_files_exist():
    from config import DEFAULT_SCENARIO_FILE, SAMPLE_TRACE_FILE

    assert os.path.exists(DEFAULT_SCENARIO_FILE), f"Scenario not found: {DEFAULT_SCENARIO_FILE}"
    assert os.path.exists(SAMPLE_TRACE_FILE), f"Trace not found: {SAMPLE_TRACE_FILE}"


def test_reward_targets_are_fractions():
    from config import U_PRED_CPU, U_PRED_MEM
    assert 0 < U_PRED_CPU < 1
    assert 0 < U_PRED_MEM < 1


def test_configure_logging_levels():
    from config import configure_logging

    assert configure_logging("debug") == logging.DEBUG
    assert configure_logging("ERROR") == logging.ERROR


def test_configure_logging_unknown_level_falls_back_to_info(caplog):
    from config import configure_logging

    with caplog.at_level(logging.WARNING, logger="config"):
        assert configure_logging("chatty") == logging.INFO
    assert "chatty" in caplog.text

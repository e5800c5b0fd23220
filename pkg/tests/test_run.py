"""Tests for the run.py command-line entry point."""
import json
from unittest.mock import patch

import numpy as np
import pandas as pd


def _write_trace(path, intervals=60):
    t = np.arange(intervals)
    rows = ["timestamp_s,machine_id,cpu_util,mem_util"]
    for i in t:
        cpu = 0.5 + 0.3 * np.sin(2 * np.pi * i / 24)
        rows.append(f"{i * 300},m1,{cpu:.4f},0.6000")
    path.write_text("\n".join(rows) + "\n")


def test_simulate_baseline_writes_report(tmp_path):
    from run import main

    out = tmp_path / "out"
    assert main(["simulate", "--mode", "threshold-baseline", "--ticks", "30", "--out", str(out)]) == 0
    for name in ("simlog.csv", "summary.json", "metrics.csv", "percentiles.csv"):
        assert (out / name).exists(), name
    assert len(pd.read_csv(out / "simlog.csv")) == 30
    assert not (out / "checkpoints").exists()


def test_simulate_same_seed_writes_identical_files(tmp_path):
    from run import main

    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        code = main(["simulate", "--mode", "drpc", "--ticks", "40", "--seed", "7",
                     "--out", str(out)])
        assert code == 0
    for name in ("simlog.csv", "metrics.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_simulate_drpc_saves_models_then_train_student(tmp_path, capsys):
    from run import main

    out = tmp_path / "drpc"
    assert main(["simulate", "--mode", "drpc", "--ticks", "30", "--out", str(out)]) == 0
    checkpoints = out / "checkpoints"
    assert (checkpoints / "teacher.txt").exists()
    assert (checkpoints / "student_frontend.txt").exists()
    assert (checkpoints / "buffer_backend.csv").exists()

    trained = tmp_path / "students"
    code = main([
        "train-student", "--buffers", str(checkpoints), "--steps", "5",
        "--checkpoints", str(checkpoints), "--out", str(trained),
    ])
    assert code == 0
    assert "[STUDENT] recommend" in capsys.readouterr().out
    assert (trained / "checkpoints" / "student_recommend.txt").exists()


def test_simulate_from_checkpoints(tmp_path):
    from run import main

    first = tmp_path / "first"
    assert main(["simulate", "--mode", "teacher-only", "--ticks", "10", "--out", str(first)]) == 0
    second = tmp_path / "second"
    code = main([
        "simulate", "--mode", "teacher-only", "--ticks", "10", "--frozen",
        "--checkpoints", str(first / "checkpoints"), "--out", str(second),
    ])
    assert code == 0
    with open(second / "summary.json") as f:
        assert json.load(f)["config"]["learn"] is False


def test_train_student_without_buffers(tmp_path, capsys):
    from run import main

    assert main(["train-student", "--buffers", str(tmp_path), "--out", str(tmp_path)]) == 2
    assert "[FATAL]" in capsys.readouterr().out


def test_train_teacher(tmp_path):
    from run import main

    code = main(["train-teacher", "--episodes", "1", "--ticks", "20", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "checkpoints" / "teacher.txt").exists()
    assert len(pd.read_csv(tmp_path / "training_curve.csv")) == 1


def test_evaluate_compares_modes(tmp_path):
    from run import main

    code = main([
        "evaluate", "--mode", "threshold-baseline", "teacher-only", "--ticks", "20",
        "--out", str(tmp_path),
    ])
    assert code == 0
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert list(metrics["mode"]) == ["threshold-baseline", "teacher-only"]
    assert (tmp_path / "teacher-only" / "simlog.csv").exists()


def test_predict_writes_mse_table(tmp_path):
    from run import main

    trace = tmp_path / "trace.csv"
    _write_trace(trace)
    out = tmp_path / "out"
    code = main(["predict", "--trace", str(trace), "--window", "4", "--epochs", "2",
                 "--out", str(out)])
    assert code == 0
    table = pd.read_csv(out / "prediction_mse.csv")
    assert list(table["horizon"]) == [1, 2, 3, 4, 5]
    assert (out / "checkpoints" / "predictor.txt").exists()


def test_report_merges_runs(tmp_path):
    from run import main

    for mode in ("threshold-baseline", "teacher-only"):
        assert main(["simulate", "--mode", mode, "--ticks", "10",
                     "--out", str(tmp_path / mode)]) == 0
    merged = tmp_path / "merged"
    code = main(["report", "--inputs", str(tmp_path / "threshold-baseline"),
                 str(tmp_path / "teacher-only"), "--out", str(merged)])
    assert code == 0
    assert len(pd.read_csv(merged / "metrics.csv")) == 2


def test_fatal_error_exit_code(tmp_path, capsys):
    from run import main

    code = main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
    assert code == 2
    assert "[FATAL]" in capsys.readouterr().out


def test_keyboard_interrupt_exit_code(tmp_path, capsys):
    from run import main

    with patch("orchestrator.run_system", side_effect=KeyboardInterrupt):
        code = main(["simulate", "--out", str(tmp_path)])
    assert code == 1
    assert "[INTERRUPTED]" in capsys.readouterr().out

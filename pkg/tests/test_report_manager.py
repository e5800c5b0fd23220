"""Tests for report_manager module: run reports and model checkpoints."""
import json

import numpy as np
import pandas as pd
import pytest


def _summary(mode, rt=25.0, with_samples=True):
    from metrics import MetricsSummary

    labels = ["50", "99", "99.99"]
    return MetricsSummary(
        mode=mode, ticks=10, arrivals=100, successes=90, failures=10, success_rps=9.0,
        failure_rate=0.1, mean_rt_ms=rt, tps=10.0, mean_reward=0.7, util_gap=0.55,
        worst_qos_reward=0.8,
        percentiles={l: (rt if with_samples else None) for l in labels},
    )


def test_report_writes_three_files(tmp_path):
    from report_manager import report

    paths = report([_summary("drpc"), _summary("threshold-baseline", 40.0)], str(tmp_path / "out"),
                   config_echo={"ticks": 10}, seed=7)
    with open(paths["summary"]) as f:
        payload = json.load(f)
    assert payload["seed"] == 7
    assert payload["config"] == {"ticks": 10}
    assert [s["mode"] for s in payload["summaries"]] == ["drpc", "threshold-baseline"]

    metrics = pd.read_csv(paths["metrics"])
    assert list(metrics["mode"]) == ["drpc", "threshold-baseline"]
    assert metrics.loc[1, "mean_rt_ms"] == 40.0
    assert metrics.loc[0, "util_gap"] == 0.55
    assert metrics.loc[0, "worst_qos_reward"] == 0.8
    assert payload["summaries"][0]["util_gap"] == 0.55

    percentiles = pd.read_csv(paths["percentiles"])
    assert list(percentiles.columns) == ["mode", "50", "99", "99.99"]


def test_report_keeps_missing_percentiles_empty(tmp_path):
    from report_manager import load_report, report

    report([_summary("drpc", with_samples=False)], str(tmp_path))
    assert load_report(str(tmp_path)).summaries[0].percentiles["50"] is None


def test_report_needs_summaries(tmp_path):
    from report_manager import ReportError, report

    with pytest.raises(ReportError):
        report([], str(tmp_path))


def test_load_report_errors(tmp_path):
    from report_manager import ReportError, load_report

    with pytest.raises(ReportError):
        load_report(str(tmp_path))
    (tmp_path / "summary.json").write_text("{broken")
    with pytest.raises(ReportError) as exc_info:
        load_report(str(tmp_path))
    assert exc_info.value.original_error is not None


def test_merge_reports(tmp_path):
    from report_manager import load_report, merge_reports, report

    report([_summary("drpc")], str(tmp_path / "a"), seed=3)
    report([_summary("teacher-only")], str(tmp_path / "b"), seed=3)
    merge_reports([str(tmp_path / "a"), str(tmp_path / "b")], str(tmp_path / "merged"))
    merged = load_report(str(tmp_path / "merged"))
    assert [s.mode for s in merged.summaries] == ["drpc", "teacher-only"]
    assert merged.seed == 3


def test_training_curve_csv(tmp_path):
    from report_manager import write_training_curve
    from teacher_agent import EpisodeStats

    path = tmp_path / "curve.csv"
    write_training_curve([EpisodeStats(0, 0.5), EpisodeStats(1, 0.6, 30.0, 0.01)], str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["episode", "mean_reward", "mean_rt_ms", "failure_rate"]
    assert frame.loc[1, "mean_reward"] == 0.6


def test_teacher_checkpoint_restores_policy(tmp_path):
    from report_manager import load_teacher, save_teacher
    from teacher_agent import TD3Agent, TD3Config

    agent = TD3Agent(4, 3, TD3Config(hidden=(8, 8), seed=2))
    agent.update_count = 11
    path = tmp_path / "teacher.txt"
    save_teacher(agent, str(path))
    loaded = load_teacher(str(path))

    assert loaded.config.hidden == (8, 8)
    assert loaded.update_count == 11
    state = np.linspace(0, 1, 4)
    np.testing.assert_array_equal(loaded.act(state), agent.act(state))
    for a, b in zip(agent.critic2_target.parameters(), loaded.critic2_target.parameters()):
        np.testing.assert_array_equal(a, b)


def test_load_teacher_missing(tmp_path):
    from report_manager import ReportError, load_teacher

    with pytest.raises(ReportError):
        load_teacher(str(tmp_path / "teacher.txt"))


def test_checkpoint_directory(tmp_path):
    from report_manager import load_checkpoints, save_checkpoints
    from student_agent import StudentNet
    from teacher_agent import TD3Agent, TD3Config

    students = {"api": StudentNet.create("api", seed=1), "db": StudentNet.create("db", seed=2)}
    save_checkpoints(str(tmp_path), teacher=TD3Agent(10, 6, TD3Config(hidden=(8,))),
                     students=students)
    models = load_checkpoints(str(tmp_path))

    assert models["predictor"] is None
    assert models["teacher"].actor.sizes == [10, 8, 6]
    assert sorted(models["students"]) == ["api", "db"]
    features = np.full(9, 0.3)
    np.testing.assert_array_equal(
        models["students"]["db"].net(features), students["db"].net(features)
    )


def test_load_checkpoints_missing_directory(tmp_path):
    from report_manager import ReportError, load_checkpoints

    with pytest.raises(ReportError):
        load_checkpoints(str(tmp_path / "nowhere"))

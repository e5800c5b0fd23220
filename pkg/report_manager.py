import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional

import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from config import DEFAULT_SEED
from metrics import MetricsSummary
from neural import NetworkError, load_checkpoint, save_checkpoint
from student_agent import StudentNet
from teacher_agent import TD3Agent, TD3Config
from workload import PredictorModel, load_predictor, save_predictor

SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.csv"
PERCENTILES_FILE = "percentiles.csv"
SIMLOG_FILE = "simlog.csv"
CURVE_FILE = "training_curve.csv"
TEACHER_FILE = "teacher.txt"
PREDICTOR_FILE = "predictor.txt"
STUDENT_PREFIX = "student_"

SCALAR_COLUMNS = (
    "mode", "ticks", "arrivals", "successes", "failures", "success_rps",
    "failure_rate", "mean_rt_ms", "tps", "mean_reward", "util_gap", "worst_qos_reward",
)


class ReportError(Exception):
    """Raised when reports or checkpoints cannot be written or read."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class ReportPayload(BaseModel):
    seed: int = DEFAULT_SEED
    config: dict[str, Any] = Field(default_factory=dict)
    summaries: list[MetricsSummary]


def _ensure_dir(directory: str):
    """Create the output directory if it doesn't exist."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ReportError(f"Cannot create output directory {directory}: {e}", original_error=e) from e


def _load_json(filepath: str) -> Any:
    try:
        with open(filepath, "r") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ReportError(f"Report not found: {filepath}", original_error=e) from e
    except json.JSONDecodeError as e:
        raise ReportError(f"Report {filepath} is not valid JSON: {e}", original_error=e) from e


def _save_json(filepath: str, data: Any):
    _ensure_dir(os.path.dirname(filepath) or ".")
    try:
        with open(filepath, "w") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
    except OSError as e:
        raise ReportError(f"Cannot write {filepath}: {e}", original_error=e) from e


def _write_frame(frame: pd.DataFrame, filepath: str):
    _ensure_dir(os.path.dirname(filepath) or ".")
    try:
        frame.to_csv(filepath, index=False)
    except OSError as e:
        raise ReportError(f"Cannot write {filepath}: {e}", original_error=e) from e


# Run reports
def report(
    summaries: list[MetricsSummary],
    output_dir: str,
    config_echo: Optional[dict] = None,
    seed: int = DEFAULT_SEED,
) -> dict[str, str]:
    """
    Write summary.json, metrics.csv and percentiles.csv.

    The percentile table has one row per mode and one column per reported
    percentile.
    """
    if not summaries:
        raise ReportError("report needs at least one summary")
    _ensure_dir(output_dir)

    payload = ReportPayload(seed=seed, config=config_echo or {}, summaries=summaries)
    paths = {
        "summary": os.path.join(output_dir, SUMMARY_FILE),
        "metrics": os.path.join(output_dir, METRICS_FILE),
        "percentiles": os.path.join(output_dir, PERCENTILES_FILE),
    }
    _save_json(paths["summary"], payload.model_dump(mode="json"))

    metrics = pd.DataFrame([
        {column: getattr(s, column) for column in SCALAR_COLUMNS} for s in summaries
    ])
    _write_frame(metrics, paths["metrics"])

    percentiles = pd.DataFrame([{"mode": s.mode, **s.percentiles} for s in summaries])
    _write_frame(percentiles, paths["percentiles"])
    return paths


def load_report(output_dir: str) -> ReportPayload:
    raw = _load_json(os.path.join(output_dir, SUMMARY_FILE))
    try:
        return ReportPayload.model_validate(raw)
    except ValidationError as e:
        raise ReportError(f"Invalid report in {output_dir}: {e}", original_error=e) from e


def merge_reports(input_dirs: list[str], output_dir: str) -> dict[str, str]:
    """Combine the summaries of several runs into one report."""
    payloads = [load_report(d) for d in input_dirs]
    summaries = [s for p in payloads for s in p.summaries]
    seed = payloads[0].seed if payloads else DEFAULT_SEED
    config = {"inputs": [str(d) for d in input_dirs]}
    return report(summaries, output_dir, config_echo=config, seed=seed)


def write_training_curve(curve, filepath: str):
    frame = pd.DataFrame(
        [(c.episode, c.mean_reward, c.mean_rt_ms, c.failure_rate) for c in curve],
        columns=["episode", "mean_reward", "mean_rt_ms", "failure_rate"],
    )
    _write_frame(frame, filepath)


def write_simlog(log, filepath: str):
    _write_frame(log.to_frame(), filepath)


# Checkpoints
def save_teacher(agent: TD3Agent, filepath: str):
    _ensure_dir(os.path.dirname(filepath) or ".")
    save_checkpoint(filepath, [
        agent.actor, agent.critic1, agent.critic2,
        agent.actor_target, agent.critic1_target, agent.critic2_target,
        ("update_count", agent.update_count),
    ])


def load_teacher(filepath: str, config: Optional[TD3Config] = None) -> TD3Agent:
    try:
        sections = load_checkpoint(filepath)
    except FileNotFoundError as e:
        raise ReportError(f"Teacher checkpoint not found: {filepath}", original_error=e) from e
    except NetworkError as e:
        raise ReportError(f"Teacher checkpoint unreadable: {filepath}", original_error=e) from e
    try:
        actor, critic1, critic2, actor_t, critic1_t, critic2_t = sections[:6]
        meta = {name: values for name, values in sections[6:]}
    except (ValueError, TypeError) as e:
        raise ReportError(f"Malformed teacher checkpoint {filepath}", original_error=e) from e

    base = config or TD3Config()
    agent = TD3Agent(
        actor.input_dim, actor.output_dim, replace(base, hidden=tuple(actor.sizes[1:-1]))
    )
    for name, net in (
        ("actor", actor), ("critic1", critic1), ("critic2", critic2),
        ("actor_target", actor_t), ("critic1_target", critic1_t), ("critic2_target", critic2_t),
    ):
        getattr(agent, name).load_parameters(net.parameters())
    if "update_count" in meta:
        agent.update_count = int(meta["update_count"][0])
    return agent


def save_students(students: dict[str, StudentNet], directory: str):
    _ensure_dir(directory)
    for deployment_id, student in sorted(students.items()):
        save_checkpoint(
            os.path.join(directory, f"{STUDENT_PREFIX}{deployment_id}.txt"), [student.net]
        )


def load_students(directory: str) -> dict[str, StudentNet]:
    students = {}
    for path in sorted(Path(directory).glob(f"{STUDENT_PREFIX}*.txt")):
        deployment_id = path.stem[len(STUDENT_PREFIX):]
        try:
            net = load_checkpoint(str(path))[0]
        except (IndexError, NetworkError) as e:
            raise ReportError(f"Malformed student checkpoint {path}", original_error=e) from e
        students[deployment_id] = StudentNet(net, deployment_id)
    return students


def save_checkpoints(
    directory: str,
    teacher: Optional[TD3Agent] = None,
    students: Optional[dict[str, StudentNet]] = None,
    predictor: Optional[PredictorModel] = None,
):
    _ensure_dir(directory)
    if teacher is not None:
        save_teacher(teacher, os.path.join(directory, TEACHER_FILE))
    if students:
        save_students(students, directory)
    if predictor is not None:
        save_predictor(predictor, os.path.join(directory, PREDICTOR_FILE))


def load_checkpoints(directory: str, config: Optional[TD3Config] = None) -> dict:
    """Whatever of teacher / students / predictor exists in directory."""
    if not os.path.isdir(directory):
        raise ReportError(f"Checkpoint directory not found: {directory}")
    teacher_path = os.path.join(directory, TEACHER_FILE)
    predictor_path = os.path.join(directory, PREDICTOR_FILE)
    return {
        "teacher": load_teacher(teacher_path, config) if os.path.exists(teacher_path) else None,
        "students": load_students(directory),
        "predictor": load_predictor(predictor_path) if os.path.exists(predictor_path) else None,
    }

#!/usr/bin/env python3
"""
DRPC autoscaler - Entry Point

Distributed resource provisioning for chained microservices: a central TD3
teacher, per-deployment student networks, a retraining notifier and a
threshold baseline, all driven by a tick-based cluster simulator.

Usage:
    python run.py <command> [options]

Commands:
    simulate        Run one mode (baseline, or frozen/learning policies) and report
    train-teacher   Pre-train the TD3 teacher on the simulator
    train-student   Train students offline from deployment buffer dumps
    evaluate        Run several modes with the same seed and write a comparison report
    predict         Train and score the workload predictor on a trace
    report          Merge existing run reports into one
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from config import (
    DEFAULT_SCENARIO_FILE, DEFAULT_SEED, OUTPUT_DIR, PREDICTOR_EPOCHS, PREDICTOR_WINDOW,
    PREDICTION_HORIZONS, PREDICTOR_VALIDATION_FRACTION, STUDENT_BATCH_SIZE, STUDENT_LR,
    configure_logging,
)

BUFFER_PREFIX = "buffer_"


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=DEFAULT_SCENARIO_FILE, help="Scenario JSON file")
    parser.add_argument("--trace", default=None, help="Trace CSV driving the load")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Random seed")
    parser.add_argument("--out", default=OUTPUT_DIR, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="DRPC - distributed reinforcement-learning autoscaler on a simulated cluster"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Run one control mode")
    _add_common(simulate)
    simulate.add_argument("--mode", default="threshold-baseline",
                          choices=["drpc", "teacher-only", "threshold-baseline"])
    simulate.add_argument("--ticks", type=int, default=2000)
    simulate.add_argument("--episodes", type=int, default=0,
                          help="Teacher pre-training episodes when no checkpoint is given")
    simulate.add_argument("--checkpoints", default=None, help="Directory of saved models")
    simulate.add_argument("--frozen", action="store_true",
                          help="Do not update the teacher during the run")

    train_teacher = sub.add_parser("train-teacher", help="Pre-train the TD3 teacher")
    _add_common(train_teacher)
    train_teacher.add_argument("--episodes", type=int, default=300)
    train_teacher.add_argument("--ticks", type=int, default=2000,
                               help="Length of the load schedule episodes walk through")

    train_student = sub.add_parser("train-student", help="Offline imitation from buffer dumps")
    train_student.add_argument("--buffers", required=True, help="Directory of buffer_<id>.csv")
    train_student.add_argument("--steps", type=int, default=2000)
    train_student.add_argument("--seed", type=int, default=DEFAULT_SEED)
    train_student.add_argument("--checkpoints", default=None, help="Start from saved students")
    train_student.add_argument("--out", default=OUTPUT_DIR)

    evaluate = sub.add_parser("evaluate", help="Compare modes under the same seed")
    _add_common(evaluate)
    evaluate.add_argument("--mode", nargs="+",
                          default=["drpc", "teacher-only", "threshold-baseline"],
                          choices=["drpc", "teacher-only", "threshold-baseline"])
    evaluate.add_argument("--ticks", type=int, default=2000)
    evaluate.add_argument("--episodes", type=int, default=0)
    evaluate.add_argument("--checkpoints", default=None)

    predict = sub.add_parser("predict", help="Train and score the workload predictor")
    predict.add_argument("--trace", required=True)
    predict.add_argument("--seed", type=int, default=DEFAULT_SEED)
    predict.add_argument("--out", default=OUTPUT_DIR)
    predict.add_argument("--window", type=int, default=PREDICTOR_WINDOW)
    predict.add_argument("--epochs", type=int, default=PREDICTOR_EPOCHS)

    report = sub.add_parser("report", help="Merge run reports")
    report.add_argument("--inputs", nargs="+", required=True)
    report.add_argument("--out", default=OUTPUT_DIR)
    return parser


def _load_models(checkpoint_dir):
    from report_manager import load_checkpoints
    if checkpoint_dir is None:
        return {"teacher": None, "students": {}, "predictor": None}
    return load_checkpoints(checkpoint_dir)


def _write_run(result, out_dir: str):
    """Simulation log, single-mode report, models and buffers of one run."""
    from report_manager import (
        CURVE_FILE, SIMLOG_FILE, report, save_checkpoints, write_simlog, write_training_curve,
    )
    from student_agent import dump_buffer

    config = result.orchestrator.config
    write_simlog(result.log, os.path.join(out_dir, SIMLOG_FILE))
    report([result.summary], out_dir, config_echo=config.model_dump(), seed=config.seed)
    if result.curve:
        write_training_curve(result.curve, os.path.join(out_dir, CURVE_FILE))
    if config.mode == "threshold-baseline":
        return
    checkpoint_dir = os.path.join(out_dir, "checkpoints")
    orchestrator = result.orchestrator
    students = orchestrator.students if config.mode == "drpc" else None
    save_checkpoints(checkpoint_dir, teacher=orchestrator.teacher, students=students)
    if config.mode == "drpc":
        for dep_id, buffer in sorted(orchestrator.buffers.items()):
            if len(buffer):
                dump_buffer(buffer, os.path.join(checkpoint_dir, f"{BUFFER_PREFIX}{dep_id}.csv"))


def _run_config(args, mode: str):
    from orchestrator import make_run_config
    return make_run_config(
        mode=mode, scenario_file=args.config, trace_file=args.trace,
        episodes=args.episodes, ticks=args.ticks, seed=args.seed,
        learn=not getattr(args, "frozen", False),
    )


def cmd_simulate(args) -> int:
    from orchestrator import run_system
    models = _load_models(args.checkpoints)
    config = _run_config(args, args.mode)
    result = run_system(
        config, teacher=models["teacher"], students=models["students"] or None,
        predictor=models["predictor"],
    )
    _write_run(result, args.out)
    s = result.summary
    print(f"[DONE] {s.mode}: failure rate {s.failure_rate:.4f}, mean RT {s.mean_rt_ms:.1f} ms")
    return 0


def cmd_train_teacher(args) -> int:
    from cluster_model import load_scenario, load_scenario_spec
    from config import CONTROL_INTERVAL, SIM_HORIZON
    from orchestrator import build_schedule, make_run_config, sim_config_for
    from report_manager import CURVE_FILE, save_checkpoints, write_training_curve
    from reward import RewardConfig
    from simulator import ClusterEnv
    from teacher_agent import TD3Config, train_td3

    config = make_run_config(
        mode="teacher-only", scenario_file=args.config, trace_file=args.trace,
        ticks=args.ticks, seed=args.seed,
    )
    spec = load_scenario_spec(args.config)
    state = load_scenario(args.config)
    sim_config = sim_config_for(spec.sim, args.seed)
    schedule = build_schedule(state, config, sim_config, spec.user_types)
    env = ClusterEnv(
        state, schedule, sim_config, RewardConfig(rt_max=sim_config.rt_max),
        steps_per_episode=max(1, SIM_HORIZON // CONTROL_INTERVAL),
        ticks_per_step=CONTROL_INTERVAL,
    )
    agent, curve = train_td3(env, TD3Config(episodes=args.episodes, seed=args.seed))
    save_checkpoints(os.path.join(args.out, "checkpoints"), teacher=agent)
    write_training_curve(curve, os.path.join(args.out, CURVE_FILE))
    if curve:
        print(f"[DONE] Teacher trained: last episode reward {curve[-1].mean_reward:.3f}")
    return 0


def cmd_train_student(args) -> int:
    from report_manager import save_checkpoints
    from student_agent import StudentNet, imitation_loss, imitation_step, load_buffer

    students = _load_models(args.checkpoints)["students"]
    paths = sorted(Path(args.buffers).glob(f"{BUFFER_PREFIX}*.csv"))
    if not paths:
        print(f"[FATAL] No {BUFFER_PREFIX}*.csv files in {args.buffers}")
        return 2
    rng = np.random.default_rng(args.seed)
    for i, path in enumerate(paths):
        dep_id = path.stem[len(BUFFER_PREFIX):]
        buffer = load_buffer(str(path))
        student = students.get(dep_id) or StudentNet.create(dep_id, seed=args.seed + i)
        states, targets = buffer.pairs()
        before = imitation_loss(student, states, targets)
        for _ in range(args.steps):
            imitation_step(student, buffer, STUDENT_BATCH_SIZE, STUDENT_LR, rng)
        after = imitation_loss(student, states, targets)
        print(f"[STUDENT] {dep_id}: {len(buffer)} pairs, loss {before:.4f} -> {after:.4f}")
        students[dep_id] = student
    save_checkpoints(os.path.join(args.out, "checkpoints"), students=students)
    return 0


def cmd_evaluate(args) -> int:
    from orchestrator import run_system
    from report_manager import report

    summaries = []
    for mode in args.mode:
        models = _load_models(args.checkpoints)
        mode_out = os.path.join(args.out, mode)
        config = _run_config(args, mode)
        print(f"[EVAL] {mode}")
        result = run_system(
            config, teacher=models["teacher"], students=models["students"] or None,
            predictor=models["predictor"],
        )
        _write_run(result, mode_out)
        summaries.append(result.summary)
    report(summaries, args.out, config_echo={"modes": list(args.mode), "ticks": args.ticks},
           seed=args.seed)
    for s in summaries:
        print(f"[EVAL] {s.mode}: failure rate {s.failure_rate:.4f}, mean RT {s.mean_rt_ms:.1f} ms")
    return 0


def cmd_predict(args) -> int:
    from report_manager import PREDICTOR_FILE, save_checkpoints
    from workload import evaluate_mse, parse_trace, train_predictor

    series = parse_trace(args.trace).series()
    split = int(len(series) * (1.0 - PREDICTOR_VALIDATION_FRACTION))
    model = train_predictor(
        series[:split], window=args.window, epochs=args.epochs, seed=args.seed
    )
    heldout = series[max(split - args.window, 0):]
    errors = evaluate_mse(model, heldout, PREDICTION_HORIZONS)
    rows = [(h, e.cpu, e.mem, e.mean) for h, e in sorted(errors.items())]
    os.makedirs(args.out, exist_ok=True)
    pd.DataFrame(rows, columns=["horizon", "mse_cpu", "mse_mem", "mse_mean"]).to_csv(
        os.path.join(args.out, "prediction_mse.csv"), index=False
    )
    save_checkpoints(os.path.join(args.out, "checkpoints"), predictor=model)
    for h, _, _, mean in rows:
        print(f"[PREDICT] horizon {h}: MSE {mean:.5f}")
    print(f"[DONE] Predictor saved as {PREDICTOR_FILE}")
    return 0


def cmd_report(args) -> int:
    from report_manager import merge_reports
    paths = merge_reports(args.inputs, args.out)
    print(f"[DONE] Report written to {paths['summary']}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()

    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\n[INTERRUPTED] Run terminated by user")
        return 1
    except Exception as e:
        print(f"\n[FATAL] {e}")
        import traceback
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: train, evaluate, ablate, trace.

All subcommands validate configuration fully before touching the filesystem,
so a bad invocation exits (code 2) without partial outputs.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from ramplab.config import (
    MODEL_VARIANTS,
    REPRESENTATIONS,
    ConfigError,
    ExperimentConfig,
    load_experiment_config,
)
from ramplab.network import CheckpointError, QNetwork, network_from_checkpoint, save_checkpoint
from ramplab.representation import grid_width
from ramplab.rewards import compute_reward
from ramplab.runs import (
    MetricsWriter,
    summarize_final_window,
    write_json,
    write_metrics_csv,
    write_run_info,
)
from ramplab.simulation import TRACE_FIELDS, episode_done, reset, step, trace_rows
from ramplab.trainer import (
    METRICS_COLUMNS,
    Trainer,
    evaluate_policy,
    greedy_actions,
    metrics_csv_row,
    snapshot_flags,
)
from ramplab.representation import build_state

TRACE_COLUMNS = TRACE_FIELDS + ("action", "r_speed", "r_collision", "r_intention", "r_total")


def _load_config(args, apply_episodes: bool = True) -> ExperimentConfig:
    """Load the experiment config and fold in CLI overrides.

    ``apply_episodes`` is off for evaluate/trace, where --episodes counts
    rollouts rather than overriding the training schedule.
    """
    cfg = load_experiment_config(args.config)
    updates = {}
    if getattr(args, "variant", None):
        updates["model_variant"] = args.variant
    if getattr(args, "representation", None):
        updates["representation"] = args.representation
    if getattr(args, "out", None):
        updates["output_dir"] = args.out
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    if apply_episodes and getattr(args, "episodes", None) is not None:
        cfg = dataclasses.replace(
            cfg, training=dataclasses.replace(cfg.training, episodes=args.episodes)
        )
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=[args.seed])
    cfg.validate()
    return cfg


def _check_net_matches(net: QNetwork, cfg: ExperimentConfig) -> None:
    expected_width = grid_width(cfg.scenario, cfg.representation)
    problems = []
    if net.variant != cfg.model_variant:
        problems.append(f"variant {net.variant!r} vs config {cfg.model_variant!r}")
    if net.representation != cfg.representation:
        problems.append(f"representation {net.representation!r} vs config {cfg.representation!r}")
    if net.input_width != expected_width:
        problems.append(f"grid width {net.input_width} vs config {expected_width}")
    if problems:
        raise CheckpointError("checkpoint does not fit config: " + "; ".join(problems))


def _train_one_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path):
    seed_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = seed_dir / "checkpoints"
    trainer = Trainer(cfg, seed)
    with MetricsWriter(seed_dir / "metrics.csv") as writer:
        return trainer.train(
            on_episode=writer.write,
            on_checkpoint=lambda net, tag: save_checkpoint(ckpt_dir / tag, net),
        )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", dataclasses.asdict(cfg))
    write_run_info(out_dir, dataclasses.asdict(cfg), cfg.seeds)
    per_seed = {}
    for seed in cfg.seeds:
        print(f"training seed {seed} ({cfg.model_variant}, {cfg.representation})")
        per_seed[seed] = _train_one_seed(cfg, seed, out_dir / f"seed_{seed}")
    window = min(100, cfg.training.episodes)
    summary = summarize_final_window(per_seed, window)
    write_json(out_dir / "summary.json", summary)
    for name, stats in summary["metrics"].items():
        print(f"{name}: {stats['mean']:.4f} +- {stats['std']:.4f} (final {window} episodes)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args, apply_episodes=False)
    net = network_from_checkpoint(args.checkpoint)
    _check_net_matches(net, cfg)
    n_episodes = args.episodes if args.episodes is not None else 10
    seed = args.seed if args.seed is not None else 0
    rows = evaluate_policy(net, cfg, n_episodes, seed)
    out_path = Path(args.out or "evaluation.csv")
    write_metrics_csv(out_path, rows)
    if rows:
        aggregate = {
            "episodes": n_episodes,
            "return_mean": sum(r.return_total for r in rows) / len(rows),
            "success_rate_mean": sum(r.success_rate for r in rows) / len(rows),
            "collisions_mean": sum(r.collisions for r in rows) / len(rows),
            "mean_speed_mean": sum(r.mean_speed for r in rows) / len(rows),
        }
    else:
        aggregate = {"episodes": 0}
    print(json.dumps(aggregate))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", dataclasses.asdict(cfg))
    write_run_info(out_dir, dataclasses.asdict(cfg), cfg.seeds)
    window = min(100, cfg.training.episodes)
    table: dict = {}
    failures: dict = {}
    combined_path = out_dir / "combined.csv"
    with open(combined_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("row_type", "representation") + METRICS_COLUMNS)
        for variant in MODEL_VARIANTS:
            for representation in REPRESENTATIONS:
                cell = f"{variant}/{representation}"
                cell_cfg = dataclasses.replace(
                    cfg, model_variant=variant, representation=representation
                )
                try:
                    per_seed = {}
                    for seed in cell_cfg.seeds:
                        print(f"ablation cell {cell} seed {seed}")
                        trainer = Trainer(cell_cfg, seed)
                        rows = trainer.train()
                        per_seed[seed] = rows
                        for m in rows:
                            writer.writerow(["episode", representation] + metrics_csv_row(m))
                    summary = summarize_final_window(per_seed, window)
                    table[cell] = {
                        name: stats["mean"] for name, stats in summary["metrics"].items()
                    }
                    writer.writerow(
                        ["aggregate", representation, "", "", variant,
                         repr(table[cell]["return"]), repr(table[cell]["success_rate"]),
                         repr(table[cell]["collisions"]), repr(table[cell]["mean_speed"]),
                         "", ""]
                    )
                except Exception as exc:  # cell isolation: keep the grid going
                    failures[cell] = f"{type(exc).__name__}: {exc}"
                    print(f"ablation cell {cell} failed: {failures[cell]}", file=sys.stderr)
                fh.flush()
    report = {"window_episodes": window, "cells": table, "failures": failures}
    write_json(out_dir / "ablation_summary.json", report)
    print(json.dumps(report["cells"], indent=2))
    return 0 if not failures else 1


def cmd_trace(args) -> int:
    cfg = _load_config(args, apply_episodes=False)
    net = network_from_checkpoint(args.checkpoint)
    _check_net_matches(net, cfg)
    seed = args.seed if args.seed is not None else 0
    with_features, with_adjacency = snapshot_flags(net.variant)

    world = reset(cfg.scenario, seed)
    all_rows: list[dict] = []
    for row in trace_rows(world):
        all_rows.append({**row, "action": "", "r_speed": "",
                         "r_collision": "", "r_intention": "", "r_total": ""})
    return_total = 0.0
    while not episode_done(world, cfg.scenario):
        snap = build_state(world, cfg.scenario, cfg.representation,
                           with_features=with_features, with_adjacency=with_adjacency)
        commands, action_idx = greedy_actions(net, snap, world)
        acted = {vid: int(action_idx[row]) for row, vid in enumerate(snap.cav_ids)
                 if vid in commands}
        events = step(world, commands, cfg.scenario)
        reward = compute_reward(world, events, cfg.training.weights, cfg.scenario)
        return_total += reward.total
        for i, row in enumerate(trace_rows(world)):
            # reward cells appear once per step, on its first row, so the
            # r_total column sums to the episode return
            all_rows.append({
                **row,
                "action": acted.get(row["id"], ""),
                "r_speed": repr(reward.speed) if i == 0 else "",
                "r_collision": repr(reward.collision) if i == 0 else "",
                "r_intention": repr(reward.intention) if i == 0 else "",
                "r_total": repr(reward.total) if i == 0 else "",
            })
    out_path = Path(args.out or "trace.csv")
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(all_rows)
    print(json.dumps({"steps": world.step_index, "return": return_total,
                      "trace": str(out_path)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramplab",
        description="Cooperative off-ramp decision-making: training and analysis tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config JSON")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--seed", type=int, help="override: run only this seed")
        p.add_argument("--episodes", type=int, help="override episode count")
        p.add_argument("--out", help="output directory or file")

    p_train = sub.add_parser("train", help="train the configured variant over all seeds")
    common(p_train)
    p_train.add_argument("--variant", choices=MODEL_VARIANTS, help="override model variant")
    p_train.add_argument("--representation", choices=REPRESENTATIONS,
                         help="override grid representation")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="greedy rollouts from a checkpoint")
    common(p_eval, checkpoint=True)
    p_eval.add_argument("--variant", choices=MODEL_VARIANTS, help="override model variant")
    p_eval.add_argument("--representation", choices=REPRESENTATIONS,
                        help="override grid representation")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ablate = sub.add_parser("ablate", help="run the variant x representation grid")
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_trace = sub.add_parser("trace", help="dump one greedy episode as CSV")
    common(p_trace, checkpoint=True)
    p_trace.add_argument("--variant", choices=MODEL_VARIANTS, help="override model variant")
    p_trace.add_argument("--representation", choices=REPRESENTATIONS,
                         help="override grid representation")
    p_trace.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

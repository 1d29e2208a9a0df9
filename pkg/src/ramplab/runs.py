"""Run-directory bookkeeping: metrics CSVs, aggregate summaries, provenance.

A training run directory holds a copy of its config, a provenance record
(package content hash + seeds) sufficient to reproduce the run bit-for-bit,
one metrics CSV per seed, and checkpoints.  Floats in CSVs are written with
``repr`` so parsing them back is exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

import ramplab
from ramplab.trainer import METRICS_COLUMNS, EpisodeMetrics, metrics_csv_row

SUMMARY_METRICS = ("return", "success_rate", "collisions", "mean_speed")


def package_content_hash() -> str:
    """SHA-256 over the package's source files (names + bytes, sorted)."""
    pkg_dir = Path(ramplab.__file__).parent
    digest = hashlib.sha256()
    for path in sorted(pkg_dir.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


class MetricsWriter:
    """Streaming per-episode CSV writer, flushed after every row."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_COLUMNS)
        self._fh.flush()

    def write(self, metrics: EpisodeMetrics) -> None:
        self._writer.writerow(metrics_csv_row(metrics))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_metrics_csv(path: str | Path, rows: list[EpisodeMetrics]) -> None:
    with MetricsWriter(path) as writer:
        for row in rows:
            writer.write(row)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _metric_value(m: EpisodeMetrics, name: str) -> float:
    return {
        "return": m.return_total,
        "success_rate": m.success_rate,
        "collisions": float(m.collisions),
        "mean_speed": m.mean_speed,
    }[name]


def summarize_final_window(
    per_seed: dict[int, list[EpisodeMetrics]], window: int
) -> dict:
    """Mean and std (across seeds) of each metric's per-seed mean over the
    final ``window`` episodes."""
    summary: dict = {
        "window_episodes": window,
        "seeds": sorted(per_seed),
        "metrics": {},
    }
    for name in SUMMARY_METRICS:
        per_seed_mean = {}
        for seed, rows in per_seed.items():
            tail = rows[-window:]
            per_seed_mean[seed] = float(np.mean([_metric_value(m, name) for m in tail]))
        values = [per_seed_mean[s] for s in sorted(per_seed)]
        summary["metrics"][name] = {
            "per_seed_mean": {str(s): per_seed_mean[s] for s in sorted(per_seed)},
            "mean": float(np.mean(values)),
            "std": float(np.std(values)),
        }
    return summary


def write_run_info(directory: str | Path, cfg_dict: dict, seeds: list[int]) -> None:
    info = {
        "package": "ramplab",
        "version": ramplab.__version__,
        "package_sha256": package_content_hash(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": seeds,
        "config": cfg_dict,
    }
    Path(directory, "run_info.json").write_text(json.dumps(info, indent=2) + "\n")


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")

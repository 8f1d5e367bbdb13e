"""Metric rows, CSV emission, and cross-seed aggregation.

``metrics.csv`` files hold only deterministic quantities so that two runs of
the same (config, seed) are byte-identical; wall-clock telemetry goes to a
separate ``timings.csv`` that is exempt from that contract. Values are
written with ``repr`` (shortest round-trip form), which is stable across
runs and platforms.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

from .errors import ConfigError

HEADER = ("run_id", "mode", "seed", "index", "metric", "value")


@dataclass
class MetricRow:
    run_id: str
    mode: str
    seed: int
    index: int
    metric: str
    value: float


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_metrics(path, rows) -> None:
    """Write rows in the fixed column order; an empty set still gets a header."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEADER)
            for row in rows:
                writer.writerow((row.run_id, row.mode, str(row.seed),
                                 str(row.index), row.metric,
                                 format_value(row.value)))
    except OSError as exc:
        raise ConfigError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics(path) -> list[MetricRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ConfigError(f"{path}: unexpected metrics header {header}")
        for record in reader:
            run_id, mode, seed, index, metric, value = record
            rows.append(MetricRow(run_id, mode, int(seed), int(index),
                                  metric, float(value)))
    return rows


def summarize(rows) -> list[tuple]:
    """Mean and standard deviation over seeds per (mode, metric, index).

    Returns sorted tuples ``(mode, metric, index, mean, std, n)``; the std is
    the population form so a single seed reports 0.
    """
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault((row.mode, row.metric, row.index), []).append(row.value)
    out = []
    for (mode, metric, index), values in sorted(groups.items()):
        n = len(values)
        mean = sum(values) / n
        var = sum((v - mean) ** 2 for v in values) / n
        out.append((mode, metric, index, mean, var ** 0.5, n))
    return out


def write_summary(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("mode", "metric", "index", "mean", "std", "n"))
        for mode, metric, index, mean, std, n in summarize(rows):
            writer.writerow((mode, metric, str(index), repr(mean), repr(std), str(n)))


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)

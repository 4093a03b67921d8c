"""Loaders for the frozen CSV fixtures under tests/fixtures."""

import csv
from pathlib import Path

from lossdiag import MetricSeries, SummarySet, read_metric_file

FIXTURES = Path(__file__).parent / "fixtures"


def load_summary_fixture(path):
    """Read a checkpoint_id,mean,p<k>...,count table into SummarySet objects."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for row in rows:
        pct = {
            int(name[1:]): float(value)
            for name, value in row.items()
            if name.startswith("p")
        }
        out[row["checkpoint_id"]] = SummarySet(
            checkpoint_id=row["checkpoint_id"],
            mean=float(row["mean"]),
            percentiles=pct,
            count=int(row["count"]),
        )
    return out


def load_metric_fixture(path, name):
    return MetricSeries(name=name, values=read_metric_file(path))


def load_trajectory_fixture(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["median"])) for r in rows]

"""Relating loss summaries to external quality metrics across checkpoints.

Covers: Pearson/Spearman correlations, the per-percentile correlation sweep,
best-checkpoint selection under different summaries, min-max normalization
with first-crossing detection on training trajectories, and the pass@k
confidence-interval helper for prompt-level success rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .quantiles import SummarySet


@dataclass(frozen=True)
class MetricSeries:
    """An external metric (judge score, accuracy, ...) per checkpoint."""

    name: str
    values: Mapping[str, float]

    def __post_init__(self):
        if not self.values:
            raise ValidationError(f"metric {self.name!r} has no entries")
        object.__setattr__(
            self, "values", {str(k): float(v) for k, v in self.values.items()}
        )

    def aligned(self, checkpoint_ids: Sequence[str]) -> np.ndarray:
        missing = [cid for cid in checkpoint_ids if cid not in self.values]
        if missing:
            raise ValidationError(f"metric {self.name!r} missing checkpoints {missing}")
        return np.array([self.values[cid] for cid in checkpoint_ids], dtype=np.float64)


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("inputs must be one-dimensional and equally long")
    if x.size < 3:
        raise ValidationError("need at least three observations")
    if not np.isfinite(x).all():
        raise ValidationError("first vector contains non-finite values")
    if not np.isfinite(y).all():
        raise ValidationError("second vector contains non-finite values")


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation; degenerate (zero-variance) input is an error."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    _check_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0:
        raise DegenerateInputError("first vector has zero variance")
    if sy == 0.0:
        raise DegenerateInputError("second vector has zero variance")
    return float((xc * yc).sum() / (sx * sy))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson on average ranks."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    _check_pair(x, y)
    return pearson(_average_ranks(x), _average_ranks(y))


@dataclass(frozen=True)
class SweepRow:
    summary: str  # "mean" or "pK"
    pearson_r: float
    spearman_rho: float


def percentile_sweep(
    table: Mapping[str, SummarySet],
    metric: MetricSeries,
    ks: Sequence[int] | None = None,
) -> list[SweepRow]:
    """Correlate the metric against mean CE and against each percentile.

    One row per summary, "mean" first, then ascending k. All checkpoints in
    ``table`` must carry every requested percentile and a metric value.
    """
    ids = sorted(table)
    if len(ids) < 3:
        raise ValidationError("sweep needs at least three checkpoints")
    if ks is None:
        first = table[ids[0]]
        ks = first.ks
    ks = tuple(int(k) for k in ks)
    y = metric.aligned(ids)
    rows = []
    means = np.array([table[cid].mean for cid in ids])
    rows.append(SweepRow("mean", pearson(means, y), spearman(means, y)))
    for k in ks:
        xs = np.array([table[cid].value(f"p{k}") for cid in ids])
        rows.append(SweepRow(f"p{k}", pearson(xs, y), spearman(xs, y)))
    return rows


@dataclass(frozen=True)
class SelectionRule:
    """Pick the checkpoint optimizing one column: CE summaries are minimized,
    quality metrics maximized."""

    name: str
    column: str
    direction: str  # "min" | "max"

    def __post_init__(self):
        if self.direction not in ("min", "max"):
            raise ValidationError(f"direction must be min or max, got {self.direction!r}")


@dataclass(frozen=True)
class SelectionRow:
    rule: str
    checkpoint_id: str
    value: float
    summary_row: Mapping[str, float]


@dataclass(frozen=True)
class SelectionTable:
    rules: tuple[SelectionRule, ...]
    rows: tuple[SelectionRow, ...]


def _column_value(
    cid: str,
    column: str,
    table: Mapping[str, SummarySet],
    metrics: Mapping[str, MetricSeries],
) -> float:
    if column in metrics:
        return metrics[column].aligned([cid])[0]
    return table[cid].value(column)


def select(
    table: Mapping[str, SummarySet],
    rules: Sequence[SelectionRule],
    metrics: Mapping[str, MetricSeries] | None = None,
) -> SelectionTable:
    """Apply each rule over the table; ties break to the lexicographically
    smaller checkpoint id, so selection is deterministic."""
    if not rules:
        raise ValidationError("no selection rules given")
    metrics = metrics or {}
    ids = sorted(table)
    if not ids:
        raise ValidationError("empty summary table")
    rows = []
    for rule in rules:
        best_id = None
        best_value = None
        for cid in ids:
            value = _column_value(cid, rule.column, table, metrics)
            better = (
                best_value is None
                or (rule.direction == "min" and value < best_value)
                or (rule.direction == "max" and value > best_value)
            )
            if better:
                best_id, best_value = cid, value
        summary = table[best_id]
        row_values: dict[str, float] = {"mean": summary.mean}
        for k in summary.ks:
            row_values[f"p{k}"] = summary.percentiles[k]
        for name in sorted(metrics):
            row_values[name] = metrics[name].aligned([best_id])[0]
        rows.append(
            SelectionRow(
                rule=rule.name,
                checkpoint_id=best_id,
                value=float(best_value),
                summary_row=row_values,
            )
        )
    return SelectionTable(rules=tuple(rules), rows=tuple(rows))


def default_rules(names: Sequence[str], metric_names: Sequence[str]) -> list[SelectionRule]:
    """Build rules with the conventional directions: CE summaries are
    minimized, anything that is a known metric is maximized."""
    rules = []
    for name in names:
        direction = "max" if name in metric_names else "min"
        rules.append(SelectionRule(name=name, column=name, direction=direction))
    return rules


def normalize_series(values: Sequence[float]) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant series is a degenerate error."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValidationError("need at least two values to normalize")
    if not np.isfinite(arr).all():
        raise ValidationError("series contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        raise DegenerateInputError("constant series cannot be min-max normalized")
    return (arr - lo) / (hi - lo)


def crossing_step(
    series: Sequence[tuple[int, float]], reference: float
) -> int | None:
    """First step whose value drops strictly below ``reference``.

    The series is ordered by step before scanning; no interpolation between
    evaluation points. Returns None when the series never crosses.
    """
    if not series:
        raise ValidationError("empty series")
    ordered = sorted((int(s), float(v)) for s, v in series)
    steps = [s for s, _ in ordered]
    if len(set(steps)) != len(steps):
        raise ValidationError("duplicate steps in series")
    for step, value in ordered:
        if value < reference:
            return step
    return None


def passk_ci(p_hats: Sequence[float], n_samples: int) -> tuple[float, float]:
    """Mean pass@k over prompts with a 95% normal-approximation half-width.

    Each entry is a per-prompt success fraction out of ``n_samples`` tries
    (conventionally a multiple of 1/n_samples; any value in [0, 1] is
    accepted). Half-width: 1.96 * sqrt(sum p(1-p)/n_samples) / n_prompts.
    """
    arr = np.asarray(p_hats, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("no per-prompt estimates given")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValidationError("n_samples must be a positive integer")
    n_samples = int(n_samples)
    if ((arr < 0) | (arr > 1)).any() or not np.isfinite(arr).all():
        raise ValidationError("per-prompt estimates must lie in [0, 1]")
    mean = float(arr.mean())
    var_sum = float((arr * (1.0 - arr)).sum() / n_samples)
    half = 1.96 * math.sqrt(var_sum) / arr.size
    return mean, half

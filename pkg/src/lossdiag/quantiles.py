"""Exact distributional summaries of per-token loss vectors.

Percentile definition used everywhere in this package: linear interpolation
between closest ranks on the sorted data, index h = (n - 1) * k / 100. The
implementation guards the case where both bracketing order statistics are
+inf (plain ``a + g*(b-a)`` would produce NaN there).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .store import LossVector

# Default percentile grid for summaries: the 5..95 shape grid plus the 1/99
# tails, so downstream profile and sweep consumers always find what they need.
DEFAULT_KS: tuple[int, ...] = (1,) + tuple(range(5, 100, 5)) + (99,)

# Dumps at most this large are summarized exactly by default; the CLI falls
# back to the sketch beyond it unless forced.
EXACT_PATH_MAX = 1 << 26


def _check_ks(ks: Sequence[int]) -> tuple[int, ...]:
    if len(ks) == 0:
        raise ValidationError("percentile list must not be empty")
    out = []
    for k in ks:
        ki = int(k)
        if ki != k or not 1 <= ki <= 99:
            raise ValidationError(f"percentile {k!r} outside 1..99")
        out.append(ki)
    if len(set(out)) != len(out):
        raise ValidationError("duplicate percentiles requested")
    return tuple(out)


def percentiles_of_sorted(sorted_values: np.ndarray, ks: Sequence[int]) -> np.ndarray:
    """Percentiles of an ascending float64 array, +inf tolerated."""
    n = sorted_values.size
    ks_arr = np.asarray(ks, dtype=np.float64)
    h = (n - 1) * ks_arr / 100.0
    lo = np.floor(h).astype(np.int64)
    hi = np.ceil(h).astype(np.int64)
    g = h - lo
    a = sorted_values[lo]
    b = sorted_values[hi]
    # Interpolate only where the bracket is a proper finite gap; b == a and
    # inf brackets both collapse to the lower order statistic.
    with np.errstate(invalid="ignore"):
        interp = a + g * (b - a)
    out = np.where((g == 0) | (a == b) | ~np.isfinite(a), a, interp)
    return out


@dataclass(frozen=True)
class SummarySet:
    """Mean plus a percentile grid for one checkpoint's loss distribution."""

    checkpoint_id: str
    mean: float
    percentiles: Mapping[int, float]
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"{self.checkpoint_id}: count must be >= 1")
        ks = _check_ks(tuple(self.percentiles))
        pct = {k: float(self.percentiles[k]) for k in sorted(ks)}
        values = list(pct.values())
        for left, right, k in zip(values, values[1:], list(pct)[1:]):
            if right < left:
                raise ValidationError(
                    f"{self.checkpoint_id}: percentiles not non-decreasing at p{k}"
                )
        if not self.mean >= 0:
            raise ValidationError(f"{self.checkpoint_id}: mean must be >= 0")
        object.__setattr__(self, "percentiles", pct)
        object.__setattr__(self, "mean", float(self.mean))

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(self.percentiles)

    def value(self, name: str) -> float:
        """Resolve a summary by name: "mean", "median", or "pK" (e.g. "p95")."""
        if name == "mean":
            return self.mean
        if name == "median":
            name = "p50"
        if name.startswith("p"):
            try:
                k = int(name[1:])
            except ValueError:
                k = -1
            if k in self.percentiles:
                return self.percentiles[k]
        raise ValidationError(
            f"checkpoint {self.checkpoint_id!r} has no summary named {name!r}"
        )


def summarize_exact(losses: LossVector, ks: Sequence[int] = DEFAULT_KS) -> SummarySet:
    """Exact mean and percentiles of one loss vector.

    Sorts a float64 copy; fine up to EXACT_PATH_MAX values. A +inf mean is
    documented behavior, not an error (dumps may carry the +inf sentinel).
    """
    ks = _check_ks(ks)
    arr = np.asarray(losses.losses, dtype=np.float64)
    arr = np.sort(arr)
    pct = percentiles_of_sorted(arr, ks)
    return SummarySet(
        checkpoint_id=losses.checkpoint_id,
        mean=float(arr.mean()),
        percentiles={k: float(v) for k, v in zip(ks, pct)},
        count=arr.size,
    )


class GroupedMeans(NamedTuple):
    mean_true: float
    mean_false: float
    ratio: float


def grouped_summary(losses: LossVector, labels: Sequence[bool]) -> GroupedMeans:
    """Mean loss inside/outside a boolean token group, plus their ratio.

    ``labels`` marks the "true" group (e.g. tokens of correctly answered
    prompts); ratio is mean_false / mean_true.
    """
    arr = np.asarray(losses.losses, dtype=np.float64)
    mask = np.asarray(labels, dtype=bool)
    if mask.shape != arr.shape:
        raise ValidationError(
            f"labels length {mask.size} does not match loss count {arr.size}"
        )
    n_true = int(mask.sum())
    if n_true == 0:
        raise DegenerateInputError("true group is empty")
    if n_true == mask.size:
        raise DegenerateInputError("false group is empty")
    mean_true = float(arr[mask].mean())
    mean_false = float(arr[~mask].mean())
    return GroupedMeans(mean_true, mean_false, mean_false / mean_true)


@dataclass
class StreamingSummary:
    """Accumulates mean and sketched percentiles over loss chunks.

    The exact path sorts everything; this path keeps memory bounded and is
    what the CLI uses past EXACT_PATH_MAX. The mean stays exact.
    """

    checkpoint_id: str
    epsilon: float = 1e-3
    _sum: float = field(default=0.0, repr=False)
    _count: int = field(default=0, repr=False)

    def __post_init__(self):
        from .sketch import QuantileSketch

        self._sketch = QuantileSketch(self.epsilon)

    def extend(self, chunk: np.ndarray) -> None:
        arr = np.asarray(chunk, dtype=np.float64)
        self._sum += float(arr.sum())
        self._count += arr.size
        self._sketch.extend(arr)

    def finalize(self, ks: Sequence[int] = DEFAULT_KS) -> SummarySet:
        ks = _check_ks(ks)
        if self._count == 0:
            raise ValidationError(f"{self.checkpoint_id}: no values streamed")
        pct = {k: self._sketch.query(k) for k in ks}
        # The sketch can report locally non-monotone values within its rank
        # tolerance; clamp so the SummarySet invariant holds.
        running = -np.inf
        for k in sorted(pct):
            running = max(running, pct[k])
            pct[k] = running
        return SummarySet(
            checkpoint_id=self.checkpoint_id,
            mean=self._sum / self._count,
            percentiles=pct,
            count=self._count,
        )


def summarize_chunks(
    checkpoint_id: str,
    chunks: Iterable[np.ndarray],
    ks: Sequence[int] = DEFAULT_KS,
    epsilon: float = 1e-3,
) -> SummarySet:
    """Sketch-backed summary of an iterable of loss chunks."""
    acc = StreamingSummary(checkpoint_id, epsilon=epsilon)
    for chunk in chunks:
        acc.extend(chunk)
    return acc.finalize(ks)

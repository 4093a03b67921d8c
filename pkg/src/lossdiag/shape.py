"""Location/scale-free views of a loss distribution's shape.

Two tools: standardized percentile profiles (each percentile re-expressed
as IQR units above the median, which makes checkpoints with different loss
scales comparable) and band tables (what fraction of token losses falls
into fixed nat ranges, i.e. where the probability mass sits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .quantiles import SummarySet
from .store import LossVector

# Percentile grid for profiles; includes the quartiles used as anchors.
PROFILE_GRID: tuple[int, ...] = tuple(range(5, 100, 5))

# Default band bounds in nats; bands are [0, 0.1), [0.1, 0.5), ..., [10, inf).
DEFAULT_BAND_BOUNDS: tuple[float, ...] = (0.1, 0.5, 1.5, 5.0, 10.0)


@dataclass(frozen=True)
class PercentileProfile:
    """Percentiles standardized to (p_k - p50) / (p75 - p25) on a fixed grid."""

    checkpoint_id: str
    grid: tuple[int, ...]
    values: Mapping[int, float]
    iqr: float

    def as_array(self) -> np.ndarray:
        return np.array([self.values[k] for k in self.grid], dtype=np.float64)


def standardize_profile(summary: SummarySet, grid: Sequence[int] = PROFILE_GRID) -> PercentileProfile:
    """Standardize a summary's percentiles; needs p25/p50/p75 on the grid.

    Raises DegenerateInputError when the IQR is zero (a constant-loss
    checkpoint has no shape to standardize; never silently returns NaN).
    """
    grid = tuple(int(k) for k in grid)
    for needed in (25, 50, 75):
        if needed not in grid:
            raise ValidationError(f"profile grid must contain {needed}")
    missing = [k for k in grid if k not in summary.percentiles]
    if missing:
        raise ValidationError(
            f"{summary.checkpoint_id}: summary lacks percentiles {missing}"
        )
    p25 = summary.percentiles[25]
    p50 = summary.percentiles[50]
    p75 = summary.percentiles[75]
    iqr = p75 - p25
    if not iqr > 0 or not math.isfinite(iqr):
        raise DegenerateInputError(
            f"{summary.checkpoint_id}: IQR is {iqr}; profile undefined"
        )
    values = {k: (summary.percentiles[k] - p50) / iqr for k in grid}
    # Pin the anchors so the defining identities hold bitwise: the formula
    # can miss p75-tilde - p25-tilde == 1 by one ulp.
    values[50] = 0.0
    values[75] = (p75 - p50) / iqr
    values[25] = values[75] - 1.0
    return PercentileProfile(
        checkpoint_id=summary.checkpoint_id, grid=grid, values=values, iqr=iqr
    )


def profile_distance(a: PercentileProfile, b: PercentileProfile) -> float:
    """Euclidean distance between two profiles on their shared grid."""
    if a.grid != b.grid:
        raise ValidationError(f"profile grids differ: {a.grid} vs {b.grid}")
    return float(np.linalg.norm(a.as_array() - b.as_array()))


@dataclass(frozen=True)
class BandTable:
    """Percentage of token losses per nat band; bands partition [0, inf)."""

    checkpoint_id: str
    bounds: tuple[float, ...]
    mass: tuple[float, ...]  # one entry per band, in percent

    @property
    def bands(self) -> tuple[tuple[float, float], ...]:
        edges = (0.0,) + self.bounds + (math.inf,)
        return tuple(zip(edges[:-1], edges[1:]))


def _check_bounds(bounds: Sequence[float]) -> tuple[float, ...]:
    out = tuple(float(b) for b in bounds)
    if not out:
        raise ValidationError("need at least one band bound")
    if out[0] <= 0:
        raise ValidationError("band bounds must be positive")
    if any(hi <= lo for lo, hi in zip(out, out[1:])):
        raise ValidationError("band bounds must be strictly increasing")
    if not all(math.isfinite(b) for b in out):
        raise ValidationError("band bounds must be finite")
    return out


def band_masses(
    losses: LossVector, bounds: Sequence[float] = DEFAULT_BAND_BOUNDS
) -> BandTable:
    """Histogram of losses over [0,b1), [b1,b2), ..., [bn,inf), in percent.

    Each band is closed below and open above; +inf losses land in the last
    band. Masses sum to 100 up to float rounding.
    """
    bounds = _check_bounds(bounds)
    arr = np.asarray(losses.losses, dtype=np.float64)
    edges = np.array((0.0,) + bounds + (math.inf,))
    counts, _ = np.histogram(arr, bins=edges)
    mass = tuple(100.0 * c / arr.size for c in counts)
    return BandTable(checkpoint_id=losses.checkpoint_id, bounds=bounds, mass=mass)


def band_delta(a: BandTable, b: BandTable) -> tuple[float, ...]:
    """Per-band mass difference a - b in percentage points."""
    if a.bounds != b.bounds:
        raise ValidationError(f"band bounds differ: {a.bounds} vs {b.bounds}")
    return tuple(ma - mb for ma, mb in zip(a.mass, b.mass))

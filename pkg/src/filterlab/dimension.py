"""Box-counting and correlation dimension estimators for point clouds.

Counts are exact integers: box counting hashes grid cells anchored at the
bounding-box minimum corner (sparse, never a dense grid), and correlation
sums either count all ordered pairs exactly (kd-tree) or a seeded
deterministic sample of ordered pairs when the pair budget is smaller than
the cloud.  Slopes come from ordinary least squares on the log-log table
over a fit window selected by exhaustive R^2 maximization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .sections import PointCloud

__all__ = [
    "ScaleSchedule",
    "DimensionEstimate",
    "FitResult",
    "FitError",
    "box_counting",
    "correlation_dimension",
    "fit_loglog",
    "auto_fit_range",
    "DEFAULT_PAIR_BUDGET",
]

DEFAULT_PAIR_BUDGET = 20_000_000
_SAMPLE_BLOCK = 2_000_000


class FitError(ValueError):
    """The log-log table does not support a slope fit."""


@dataclass(frozen=True)
class ScaleSchedule:
    """Strictly decreasing geometric sequence of scales."""

    scales: tuple[float, ...]

    def __post_init__(self):
        if len(self.scales) < 4:
            raise ValueError("a schedule needs at least 4 scales")
        prev = math.inf
        for s in self.scales:
            if not (0.0 < s < prev):
                raise ValueError("scales must be strictly decreasing and positive")
            prev = s

    @classmethod
    def geometric(cls, delta_max: float, delta_min: float | None = None,
                  per_octave: int = 8, octaves: int = 8) -> "ScaleSchedule":
        """delta_max down to delta_min (default delta_max / 2^octaves)."""
        if delta_max <= 0.0:
            raise ValueError("delta_max must be > 0")
        if per_octave < 1:
            raise ValueError("per_octave must be >= 1")
        if delta_min is None:
            n = octaves * per_octave
        else:
            if not (0.0 < delta_min < delta_max):
                raise ValueError("need 0 < delta_min < delta_max")
            n = round(per_octave * math.log2(delta_max / delta_min))
            n = max(n, 3)
        scales = tuple(delta_max * 2.0 ** (-k / per_octave) for k in range(n + 1))
        return cls(scales)

    @classmethod
    def for_cloud(cls, cloud: PointCloud, per_octave: int = 8,
                  octaves: int = 8) -> "ScaleSchedule":
        """Auto bounds: delta_max = longest bounding-box edge / 4."""
        pts = cloud.points
        if len(pts) == 0:
            raise ValueError("cannot build a schedule for an empty cloud")
        edge = float((pts.max(axis=0) - pts.min(axis=0)).max())
        if edge == 0.0:
            raise ValueError("cloud is a single repeated point; no scale range")
        return cls.geometric(edge / 4.0, per_octave=per_octave, octaves=octaves)

    def __len__(self) -> int:
        return len(self.scales)


class FitResult(NamedTuple):
    slope: float
    stderr: float
    r_squared: float
    n_used: int
    n_excluded: int


@dataclass
class DimensionEstimate:
    """Slope estimate with its fit diagnostics and the raw count table."""

    kind: str                      # "box" | "correlation"
    value: float
    stderr: float
    r_squared: float
    fit_lo: float                  # smallest scale actually fitted
    fit_hi: float                  # largest scale actually fitted
    table: np.ndarray              # (n, 2): scale, count or correlation sum
    n_points: int
    sampled_pairs: int | None = None   # set when pair sampling was used
    degenerate: bool = False


def _ols_loglog(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    n = len(x)
    mx = x.mean()
    my = y.mean()
    sxx = float(((x - mx) ** 2).sum())
    if sxx == 0.0:
        raise FitError("all scales in the fit window are identical")
    slope = float(((x - mx) * (y - my)).sum()) / sxx
    resid = y - (my + slope * (x - mx))
    ssres = float((resid ** 2).sum())
    sstot = float(((y - my) ** 2).sum())
    # A constant table carries no scaling information; score it zero rather
    # than letting 0/0 masquerade as a perfect fit.
    r2 = 1.0 - ssres / sstot if sstot > 0.0 else 0.0
    stderr = math.sqrt(ssres / (n - 2) / sxx) if n > 2 else float("nan")
    return slope, stderr, r2


def fit_loglog(table: np.ndarray, fit_range: tuple[float, float],
               kind: str) -> FitResult:
    """OLS slope of the log-log table restricted to scales in ``fit_range``.

    Box counts regress log(value) on log(1/scale); correlation sums regress
    log(value) on log(scale).  Rows with value <= 0 are excluded and counted.
    """
    if kind not in ("box", "correlation"):
        raise ValueError(f"unknown table kind {kind!r}")
    table = np.asarray(table, dtype=np.float64)
    lo, hi = fit_range
    inside = (table[:, 0] >= lo) & (table[:, 0] <= hi)
    rows = table[inside]
    positive = rows[:, 1] > 0.0
    n_excluded = int((~positive).sum())
    rows = rows[positive]
    if len(rows) < 2:
        raise FitError("fewer than 2 positive rows in the fit range")
    x = -np.log(rows[:, 0]) if kind == "box" else np.log(rows[:, 0])
    y = np.log(rows[:, 1])
    slope, stderr, r2 = _ols_loglog(x, y)
    return FitResult(slope, stderr, r2, len(rows), n_excluded)


def _saturation_mask(values: np.ndarray, kind: str, n_points: int | None,
                     denominator: int | None) -> np.ndarray:
    if kind == "box":
        sat = values == 1.0
        if n_points is not None:
            sat |= values == float(n_points)
        return sat
    return (values == 0.0) | (values == 1.0)


def auto_fit_range(table: np.ndarray, kind: str, n_points: int | None = None,
                   denominator: int | None = None,
                   min_window: int = 4) -> tuple[float, float]:
    """Contiguous scale window (>= ``min_window`` rows) maximizing fit R^2.

    Rows saturated at either end of the table are trimmed first: N = 1 or
    N = point count for box tables, C = 0 or C = 1 for correlation tables.
    Ties break toward longer windows, then toward larger scales.
    """
    table = np.asarray(table, dtype=np.float64)
    scales = table[:, 0]
    values = table[:, 1]
    n = len(table)
    sat = _saturation_mask(values, kind, n_points, denominator)
    lo = 0
    hi = n
    while lo < n and sat[lo]:
        lo += 1
    while hi > lo and sat[hi - 1]:
        hi -= 1
    if hi - lo < min_window:
        raise FitError("no unsaturated window of sufficient length")

    best_key = None
    best_range = None
    for a in range(lo, hi - min_window + 1):
        for b in range(a + min_window, hi + 1):
            v = values[a:b]
            if (v <= 0.0).any():
                continue
            x = -np.log(scales[a:b]) if kind == "box" else np.log(scales[a:b])
            try:
                _, _, r2 = _ols_loglog(x, np.log(v))
            except FitError:
                continue
            key = (r2, b - a, scales[a])
            if best_key is None or key > best_key:
                best_key = key
                best_range = (float(scales[b - 1]), float(scales[a]))
    if best_range is None:
        raise FitError("no fittable window (all candidates were non-positive)")
    return best_range


def _degenerate_estimate(kind: str, schedule: ScaleSchedule | None,
                         n_points: int) -> DimensionEstimate:
    if schedule is not None:
        scales = np.asarray(schedule.scales)
        value = 1.0 if kind == "box" else 1.0
        table = np.column_stack([scales, np.full(len(scales), value)])
    else:
        table = np.empty((0, 2))
    return DimensionEstimate(kind=kind, value=0.0, stderr=0.0, r_squared=0.0,
                             fit_lo=0.0, fit_hi=0.0, table=table,
                             n_points=n_points, degenerate=True)


def _box_count_at(rel: np.ndarray, delta: float) -> int:
    """Number of occupied grid cells of size ``delta`` (grid at the origin)."""
    idx = np.floor(rel / delta).astype(np.int64)
    dims = idx.max(axis=0) + 1
    # pack cell indices into a single integer key when it cannot overflow
    capacity = 1
    for d in dims:
        capacity *= int(d)
    if capacity < 2 ** 62:
        key = idx[:, 0].copy()
        for a in range(1, idx.shape[1]):
            key *= int(dims[a])
            key += idx[:, a]
        return len(np.unique(key))
    return len(np.unique(idx, axis=0))


def box_counting(cloud: PointCloud, schedule: ScaleSchedule | None = None,
                 fit_range: tuple[float, float] | None = None) -> DimensionEstimate:
    """Box-counting dimension of a point cloud.

    N(delta) counts distinct occupied cells of an axis-aligned grid anchored
    at the bounding-box minimum corner (cell index = floor((coord-min)/delta)
    per axis).  The estimate is the OLS slope of log N vs log(1/delta) over
    the fit window.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("box_counting requires a non-empty cloud")
    mins = pts.min(axis=0)
    if float((pts.max(axis=0) - mins).max()) == 0.0:
        return _degenerate_estimate("box", schedule, len(pts))
    if schedule is None:
        schedule = ScaleSchedule.for_cloud(cloud)
    rel = pts - mins
    scales = np.asarray(schedule.scales)
    counts = np.empty(len(scales), dtype=np.int64)
    for i, delta in enumerate(scales):
        counts[i] = _box_count_at(rel, float(delta))
    table = np.column_stack([scales, counts.astype(np.float64)])
    if fit_range is None:
        fit_range = auto_fit_range(table, "box", n_points=len(pts))
    fit = fit_loglog(table, fit_range, "box")
    return DimensionEstimate(kind="box", value=fit.slope, stderr=fit.stderr,
                             r_squared=fit.r_squared, fit_lo=fit_range[0],
                             fit_hi=fit_range[1], table=table, n_points=len(pts))


def _pair_counts_exact(pts: np.ndarray, radii_sorted: np.ndarray) -> np.ndarray:
    """Ordered pairs i != j with distance strictly below each radius."""
    tree = cKDTree(pts)
    # count_neighbors uses d <= r; stepping each radius down one ulp turns
    # that into a strict comparison without re-binning
    below = np.nextafter(radii_sorted, -np.inf)
    counts = tree.count_neighbors(tree, below)
    return counts.astype(np.int64) - len(pts)   # drop the i == j pairs


def _pair_counts_sampled(pts: np.ndarray, radii_sorted: np.ndarray,
                         budget: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = len(pts)
    counts = np.zeros(len(radii_sorted), dtype=np.int64)
    remaining = budget
    while remaining > 0:
        n = min(_SAMPLE_BLOCK, remaining)
        remaining -= n
        i = rng.integers(0, m, size=n)
        jj = rng.integers(0, m - 1, size=n)
        j = jj + (jj >= i)           # uniform over ordered pairs with i != j
        d = np.sqrt(((pts[i] - pts[j]) ** 2).sum(axis=1))
        d.sort()
        counts += np.searchsorted(d, radii_sorted, side="left")
    return counts


def correlation_dimension(cloud: PointCloud,
                          schedule: ScaleSchedule | None = None,
                          pair_budget: int | str | None = None,
                          seed=0,
                          fit_range: tuple[float, float] | None = None,
                          ) -> DimensionEstimate:
    """Correlation (pair-counting) dimension under the Euclidean metric.

    C(r) = #{ordered pairs i != j with |p_i - p_j| < r} / (M (M-1)).  All
    pairs are counted exactly whenever they fit into the pair budget (or
    ``pair_budget="all"``); otherwise a seeded deterministic sample of
    ordered pairs is drawn and the estimate is flagged as sampled.
    """
    pts = cloud.points
    m = len(pts)
    if m < 2:
        raise ValueError("correlation_dimension requires at least 2 points")
    if float((pts.max(axis=0) - pts.min(axis=0)).max()) == 0.0:
        return _degenerate_estimate("correlation", schedule, m)
    if schedule is None:
        schedule = ScaleSchedule.for_cloud(cloud)
    scales = np.asarray(schedule.scales)
    order = np.argsort(scales)
    radii_sorted = scales[order]

    total_pairs = m * (m - 1)
    if pair_budget == "all":
        budget = total_pairs
    else:
        budget = DEFAULT_PAIR_BUDGET if pair_budget is None else int(pair_budget)
        if budget < 1:
            raise ValueError("pair_budget must be >= 1")

    if total_pairs <= budget:
        counts_sorted = _pair_counts_exact(pts, radii_sorted)
        denominator = total_pairs
        sampled = None
    else:
        counts_sorted = _pair_counts_sampled(pts, radii_sorted, budget, seed)
        denominator = budget
        sampled = budget

    counts = np.empty_like(counts_sorted)
    counts[order] = counts_sorted
    csums = counts.astype(np.float64) / float(denominator)
    if not (counts > 0).any():
        raise FitError("no pairs closer than any scale; enlarge delta_max "
                       "or supply a coarser schedule")
    table = np.column_stack([scales, csums])
    if fit_range is None:
        fit_range = auto_fit_range(table, "correlation", denominator=denominator)
    fit = fit_loglog(table, fit_range, "correlation")
    return DimensionEstimate(kind="correlation", value=fit.slope,
                             stderr=fit.stderr, r_squared=fit.r_squared,
                             fit_lo=fit_range[0], fit_hi=fit_range[1],
                             table=table, n_points=m, sampled_pairs=sampled)

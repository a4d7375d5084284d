"""Three-dimensional Poincare sections of four-dimensional orbits.

A section fixes one of the four coordinates: either a thin slab
(|coord - offset| <= thickness/2, the default construction) or classical
plane crossings with linear interpolation.  Because no single fixed
coordinate is obviously the most informative in four dimensions, an offset
scan is provided that counts captured points across candidate offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Orbit

__all__ = [
    "AXES3",
    "AXES4",
    "SectionSpec",
    "PointCloud",
    "OffsetScanReport",
    "slab_section",
    "crossing_section",
    "scan_offsets",
    "project",
    "orbit_cloud",
    "auto_thickness",
]

AXES3 = ("x", "y", "z")
AXES4 = ("x", "y", "z", "w")

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2, "w": 3}


@dataclass(frozen=True)
class SectionSpec:
    """How to cut a 4D orbit down to a 3D point set."""

    drop_axis: str
    offset: float
    thickness: float = math.inf          # slab width; inf keeps everything
    mode: str = "slab"                   # "slab" | "crossing"
    direction: str = "both"              # crossing only: ascending|descending|both

    def __post_init__(self):
        if self.drop_axis not in AXES4:
            raise ValueError(f"drop_axis must be one of {AXES4}, got {self.drop_axis!r}")
        if not math.isfinite(self.offset):
            raise ValueError("offset must be finite")
        if not (self.thickness > 0.0):
            raise ValueError("thickness must be > 0 (may be inf)")
        if self.mode not in ("slab", "crossing"):
            raise ValueError(f"unknown section mode {self.mode!r}")
        if self.direction not in ("ascending", "descending", "both"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class PointCloud:
    """Ordered point set in 3 or 4 dimensions with provenance."""

    points: np.ndarray
    axes: tuple[str, ...]
    source: str | None = None
    section: SectionSpec | None = None
    empty_warning: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != len(self.axes):
            raise ValueError("points shape inconsistent with axis labels")
        if len(self.axes) not in (3, 4):
            raise ValueError("ambient dimension must be 3 or 4")
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    @property
    def dim(self) -> int:
        return len(self.axes)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class OffsetScanReport:
    """Captured-point counts for candidate offsets along one axis."""

    axis: str
    offsets: np.ndarray
    counts: np.ndarray
    thickness: float
    recommended: float
    degenerate: bool = False


def _require_sectionable(orbit: Orbit) -> None:
    if orbit.dim != 4:
        raise ValueError("sections are defined for 4-level orbits only")
    if orbit.diverged:
        raise ValueError("refusing to section a diverged orbit")
    if len(orbit.points) == 0:
        raise ValueError("orbit is empty")


def auto_thickness(orbit: Orbit, axis: str) -> float:
    """Default slab thickness: 1% of the axis range over the orbit.

    Falls back to 1% of the axis magnitude (or 1e-9) when the coordinate is
    constant, so a degenerate slab still captures its own plane.
    """
    _require_sectionable(orbit)
    col = orbit.points[:, _AXIS_INDEX[axis]]
    span = float(col.max() - col.min())
    if span > 0.0:
        return span / 100.0
    return max(abs(float(col[0])) * 0.01, 1e-9)


def _other_axes(drop_axis: str) -> tuple[int, ...]:
    return tuple(i for a, i in _AXIS_INDEX.items() if a != drop_axis)


def slab_section(orbit: Orbit, spec: SectionSpec) -> PointCloud:
    """Points whose drop-axis coordinate lies within the slab, axis removed.

    Order and duplicates are preserved.  An empty result is not an error;
    the returned cloud just carries a warning flag.
    """
    _require_sectionable(orbit)
    if spec.mode != "slab":
        raise ValueError("slab_section requires a slab-mode spec")
    k = _AXIS_INDEX[spec.drop_axis]
    pts = orbit.points
    mask = np.abs(pts[:, k] - spec.offset) <= spec.thickness / 2.0
    kept = pts[mask][:, _other_axes(spec.drop_axis)]
    axes = tuple(a for a in AXES4 if a != spec.drop_axis)
    return PointCloud(kept, axes, source=orbit.describe(), section=spec,
                      empty_warning=(len(kept) == 0))


def crossing_section(orbit: Orbit, spec: SectionSpec) -> PointCloud:
    """Classical crossing construction with linear interpolation.

    Consecutive point pairs whose drop-axis coordinates strictly straddle the
    offset emit the other three coordinates interpolated at the crossing
    parameter t = (c - a_n)/(a_{n+1} - a_n).  A pair sitting exactly on the
    plane (a_n = a_{n+1} = c) emits the first point's coordinates once.
    """
    _require_sectionable(orbit)
    if spec.mode != "crossing":
        raise ValueError("crossing_section requires a crossing-mode spec")
    k = _AXIS_INDEX[spec.drop_axis]
    others = _other_axes(spec.drop_axis)
    pts = orbit.points
    d = pts[:, k] - spec.offset
    lo, hi = d[:-1], d[1:]

    up = (lo < 0.0) & (hi > 0.0)
    down = (lo > 0.0) & (hi < 0.0)
    if spec.direction == "ascending":
        straddle = up
    elif spec.direction == "descending":
        straddle = down
    else:
        straddle = up | down
    degenerate = (lo == 0.0) & (hi == 0.0)

    idx = np.nonzero(straddle | degenerate)[0]
    out = np.empty((len(idx), 3), dtype=np.float64)
    for row, i in enumerate(idx):
        a = pts[i, others]
        if degenerate[i]:
            out[row] = a
        else:
            t = -d[i] / (d[i + 1] - d[i])
            out[row] = a + t * (pts[i + 1, others] - a)
    axes = tuple(a for a in AXES4 if a != spec.drop_axis)
    return PointCloud(out, axes, source=orbit.describe(), section=spec,
                      empty_warning=(len(out) == 0))


def scan_offsets(orbit: Orbit, axis: str, n_candidates: int = 32,
                 thickness: float | None = None) -> OffsetScanReport:
    """Count slab captures over evenly spaced candidate offsets.

    The recommended offset is the candidate with the maximum count; ties go
    to the smaller offset.  A constant coordinate yields a single-candidate
    report flagged as degenerate.
    """
    _require_sectionable(orbit)
    if axis not in AXES4:
        raise ValueError(f"axis must be one of {AXES4}")
    if n_candidates < 2:
        raise ValueError("n_candidates must be >= 2")
    col = orbit.points[:, _AXIS_INDEX[axis]]
    lo, hi = float(col.min()), float(col.max())
    eps = thickness if thickness is not None else auto_thickness(orbit, axis)

    if lo == hi:
        return OffsetScanReport(axis=axis, offsets=np.array([lo]),
                                counts=np.array([len(col)], dtype=np.int64),
                                thickness=eps, recommended=lo, degenerate=True)

    offsets = np.linspace(lo, hi, n_candidates)
    counts = np.empty(n_candidates, dtype=np.int64)
    half = eps / 2.0
    for i, c in enumerate(offsets):
        counts[i] = int(np.count_nonzero(np.abs(col - c) <= half))
    best = int(np.argmax(counts))  # argmax returns the first (smallest) on ties
    return OffsetScanReport(axis=axis, offsets=offsets, counts=counts,
                            thickness=eps, recommended=float(offsets[best]))


def project(orbit: Orbit, drop_axis: str) -> PointCloud:
    """Full projection dropping one axis; equals a slab of infinite thickness."""
    spec = SectionSpec(drop_axis=drop_axis, offset=0.0, thickness=math.inf)
    return slab_section(orbit, spec)


def orbit_cloud(orbit: Orbit) -> PointCloud:
    """The orbit itself as a point cloud in its full phase space."""
    if len(orbit.points) == 0:
        raise ValueError("orbit is empty")
    axes = AXES3 if orbit.dim == 3 else AXES4
    return PointCloud(orbit.points.copy(), axes, source=orbit.describe())

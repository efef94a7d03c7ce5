"""Depth-map ingestion, region depth extraction, and the depth-consistency check.

Depth maps are dense normalized grids in [0, 1] ingested from binary
16-bit PGM files (the canonical interchange format here: header-simple,
lossless, bit-exact across platforms). Whether larger values mean nearer
or farther is the producer's business; the ``convention_note`` field
records it and the consistency check assumes the trace and the map agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .geometry import BBox
from .trace import ReasoningTrace

__all__ = ["DepthMap", "DepthTolerance", "load_depth_map", "region_depth", "depth_reward"]

# Absolute slack on the relative-error comparison so an error of exactly
# the threshold passes despite float rounding (0.05/0.5 evaluates a few
# ulps above 0.1).
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class DepthMap:
    """Row-major normalized depth grid, origin top-left."""

    width: int
    height: int
    values: np.ndarray
    convention_note: str = ""

    def __post_init__(self) -> None:
        # Copy, then freeze: scorers share DepthMaps across threads, and
        # freezing in place would surprise callers who passed their own array.
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {values.shape} != (height={self.height}, width={self.width})"
            )
        if self.width < 1 or self.height < 1:
            raise ValueError("depth map needs at least one pixel")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("depth values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DepthTolerance:
    """Relative-error threshold for the consistency check.

    ``gt_floor`` clamps the denominator so regions with ground-truth depth
    near zero do not blow up the relative error.
    """

    threshold: float = 0.1
    gt_floor: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.gt_floor <= 0.0:
            raise ValueError("gt_floor must be positive")


def load_depth_map(path: str | Path, convention_note: str = "") -> DepthMap:
    """Load a binary 16-bit PGM as a normalized depth map (raw / 65535)."""
    grid = netpbm.read_pgm16(path)
    values = grid.astype(np.float64) / 65535.0
    return DepthMap(
        width=grid.shape[1],
        height=grid.shape[0],
        values=values,
        convention_note=convention_note,
    )


def region_depth(d: DepthMap, b: BBox, statistic: str = "mean") -> float:
    """Depth summary of the pixels whose centers fall inside ``b``.

    Pixel (r, c) has center ((c + 0.5) / width, (r + 0.5) / height);
    membership is a closed comparison against the box edges. When no
    center falls inside, the value of the pixel containing the box center
    is used. ``statistic`` is "mean" (default) or "median".
    """
    if statistic not in ("mean", "median"):
        raise ValueError(f"unknown statistic {statistic!r}")
    cx = (np.arange(d.width) + 0.5) / d.width
    cy = (np.arange(d.height) + 0.5) / d.height
    cols = (cx >= b.x1) & (cx <= b.x2)
    rows = (cy >= b.y1) & (cy <= b.y2)
    if cols.any() and rows.any():
        patch = d.values[np.ix_(rows, cols)]
        return float(np.mean(patch) if statistic == "mean" else np.median(patch))
    col = min(int((b.x1 + b.x2) / 2.0 * d.width), d.width - 1)
    row = min(int((b.y1 + b.y2) / 2.0 * d.height), d.height - 1)
    return float(d.values[row, col])


def depth_reward(
    t: ReasoningTrace,
    d: DepthMap,
    tol: DepthTolerance = DepthTolerance(),
    statistic: str = "mean",
) -> float:
    """1.0 iff every asserted region depth matches the map within tolerance.

    For each (box, depth) region across all steps the relative error
    |depth - gt| / max(gt, gt_floor) must not exceed the threshold; a
    single failing region forces 0.0.
    """
    for step in t.steps:
        for box, asserted in step.regions:
            gt = region_depth(d, box, statistic=statistic)
            err = abs(asserted - gt) / max(gt, tol.gt_floor)
            if err > tol.threshold + _BOUNDARY_EPS:
                return 0.0
    return 1.0

"""Axis-aligned box geometry and the hierarchical IoU metric family.

All coordinates are normalized image fractions in [0, 1] with a top-left
origin (x grows rightward, y grows downward). The metric stack layers three
views of grounding quality:

* ``iou``        -- plain intersection-over-union between two boxes,
* ``giou``       -- IoU between the *union regions* of two box sets (global
                    spatial consistency; not the detection-literature
                    "Generalized IoU" penalty),
* ``piou``       -- mean IoU over an optimal one-to-one box matching,
* ``hiou``       -- the average of ``giou`` and ``piou``.

Splitting credit between a global and an instance-level term keeps a single
sloppy mega-box from collecting full reward on multi-object ground truth,
and keeps per-box precision from being gamed by ignoring coverage.

Union areas are exact (coordinate compression over box edges), never
sampled, so rewards are bit-reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "BBox",
    "BoxSet",
    "MatchResult",
    "InvalidBoxError",
    "EmptyBoxSetError",
    "iou",
    "union_area",
    "giou",
    "match_boxes",
    "assign_max_total",
    "piou",
    "hiou",
]

FULL_IMAGE = (0.0, 0.0, 1.0, 1.0)


class InvalidBoxError(ValueError):
    """Raised for coordinates outside [0,1] or a non-positive-area box."""


class EmptyBoxSetError(ValueError):
    """Raised when an operation requires a nonempty box set."""


@dataclass(frozen=True)
class BBox:
    """Normalized axis-aligned rectangle with strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise InvalidBoxError(f"coordinate {name} is not a number: {v!r}")
            object.__setattr__(self, name, float(v))
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise InvalidBoxError(f"coordinate {name}={v} outside [0, 1]")
        if not self.x1 < self.x2:
            raise InvalidBoxError(f"x1={self.x1} must be < x2={self.x2}")
        if not self.y1 < self.y2:
            raise InvalidBoxError(f"y1={self.y1} must be < y2={self.y2}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, other: "BBox") -> bool:
        """True when ``other`` lies fully inside this box (closed comparison)."""
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def is_full_image(self) -> bool:
        return self.as_tuple() == FULL_IMAGE


@dataclass(frozen=True)
class BoxSet:
    """Ordered collection of boxes. Order is kept for reporting; every metric
    here is invariant under reordering. Duplicates are allowed."""

    boxes: tuple[BBox, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for b in self.boxes:
            if not isinstance(b, BBox):
                raise InvalidBoxError(f"box set element is not a BBox: {b!r}")

    @classmethod
    def from_coords(cls, coords) -> "BoxSet":
        """Build from an iterable of (x1, y1, x2, y2) tuples."""
        return cls(tuple(BBox(*c) for c in coords))

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def is_empty(self) -> bool:
        return not self.boxes


@dataclass(frozen=True)
class MatchResult:
    """One-to-one assignment between predicted and ground-truth boxes.

    ``pairs`` holds (predicted index, ground-truth index, pairwise IoU)
    triples; ``total`` is the summed IoU over the assignment.
    """

    pairs: tuple[tuple[int, int, float], ...]
    total: float = 0.0


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def _compressed_grid(boxes: tuple[BBox, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct x and y edge coordinates of all boxes."""
    xs = sorted({c for b in boxes for c in (b.x1, b.x2)})
    ys = sorted({c for b in boxes for c in (b.y1, b.y2)})
    return np.asarray(xs), np.asarray(ys)


def _cell_cover(boxes: tuple[BBox, ...], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Boolean grid: cell (i, j) of the compressed grid is inside some box.

    A cell is the open rectangle between consecutive edges; membership is
    decided at the cell midpoint, which is exact because no box edge can
    cross a cell interior.
    """
    cx = (xs[:-1] + xs[1:]) / 2.0
    cy = (ys[:-1] + ys[1:]) / 2.0
    cover = np.zeros((len(cy), len(cx)), dtype=bool)
    for b in boxes:
        col = (cx > b.x1) & (cx < b.x2)
        row = (cy > b.y1) & (cy < b.y2)
        cover |= row[:, None] & col[None, :]
    return cover


def union_area(s: BoxSet) -> float:
    """Exact area of the union region of a nonempty box set."""
    if s.is_empty():
        raise EmptyBoxSetError("union_area of an empty box set is undefined")
    xs, ys = _compressed_grid(s.boxes)
    cover = _cell_cover(s.boxes, xs, ys)
    w = np.diff(xs)
    h = np.diff(ys)
    return float((cover * (h[:, None] * w[None, :])).sum())


def giou(pred: BoxSet, gt: BoxSet) -> float:
    """IoU between the union region of ``pred`` and the union region of ``gt``.

    An empty prediction scores 0: a trace that grounds nothing earns no
    spatial-consistency credit.
    """
    if gt.is_empty():
        raise EmptyBoxSetError("giou requires a nonempty ground-truth set")
    if pred.is_empty():
        return 0.0
    boxes = pred.boxes + gt.boxes
    xs, ys = _compressed_grid(boxes)
    cover_p = _cell_cover(pred.boxes, xs, ys)
    cover_g = _cell_cover(gt.boxes, xs, ys)
    cell = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    inter = float(((cover_p & cover_g) * cell).sum())
    union = float(((cover_p | cover_g) * cell).sum())
    return inter / union


def assign_max_total(scores: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Maximum-total one-to-one assignment over a score matrix.

    Returns min(n, m) (row, col) pairs maximizing the summed score. Solved
    as a min-cost assignment on (1 - score); among equally optimal
    assignments, the lexicographically smallest (row, col) pairing is
    returned so reported matches are stable across platforms.
    """
    scores = np.asarray(scores, dtype=float)
    n, m = scores.shape
    rows, cols = linear_sum_assignment(1.0 - scores)
    best = float(scores[rows, cols].sum())

    # Re-derive the pairing deterministically: walk rows in order and give
    # each the smallest column that still permits an optimal completion
    # over the remaining rows. When rows outnumber columns a row with no
    # such column stays unmatched.
    eps = 1e-12
    size = min(n, m)
    pairs: list[tuple[int, int]] = []
    used: set[int] = set()
    fixed_score = 0.0

    def rest_best(row_start: int, also_used: int) -> float:
        rest_r = range(row_start, n)
        rest_c = [j for j in range(m) if j not in used and j != also_used]
        if not rest_r or not rest_c:
            return 0.0
        sub = scores[np.ix_(rest_r, rest_c)]
        rr, cc = linear_sum_assignment(1.0 - sub)
        return float(sub[rr, cc].sum())

    for r in range(n):
        if len(pairs) == size:
            break
        for c in range(m):
            if c in used:
                continue
            if fixed_score + scores[r, c] + rest_best(r + 1, c) >= best - eps:
                pairs.append((r, c))
                used.add(c)
                fixed_score += scores[r, c]
                break
    if len(pairs) < size:
        # Accumulated roundoff starved the greedy walk (not seen in
        # practice); fall back to the solver's own optimal pairing.
        pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return pairs, best


def match_boxes(pred: BoxSet, gt: BoxSet) -> MatchResult:
    """Optimal one-to-one matching between predicted and ground-truth boxes,
    maximizing total pairwise IoU. Exactly min(|pred|, |gt|) pairs."""
    if pred.is_empty() or gt.is_empty():
        raise EmptyBoxSetError("match_boxes requires two nonempty box sets")
    matrix = np.array([[iou(p, g) for g in gt.boxes] for p in pred.boxes])
    pairs, total = assign_max_total(matrix)
    triples = tuple((r, c, float(matrix[r, c])) for r, c in pairs)
    return MatchResult(pairs=triples, total=total)


def piou(pred: BoxSet, gt: BoxSet) -> float:
    """Mean IoU over the optimal matching's pairs.

    The denominator is the matching size min(|pred|, |gt|); surplus
    predictions are penalized through ``giou``, not here.
    """
    result = match_boxes(pred, gt)
    return result.total / len(result.pairs)


def hiou(pred: BoxSet, gt: BoxSet) -> float:
    """Average of the global and pairwise IoU; 0 for an empty prediction."""
    if gt.is_empty():
        raise EmptyBoxSetError("hiou requires a nonempty ground-truth set")
    if pred.is_empty():
        return 0.0
    return (giou(pred, gt) + piou(pred, gt)) / 2.0

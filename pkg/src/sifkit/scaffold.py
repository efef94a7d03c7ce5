"""Coarse-to-fine focus trajectories built by reverse expansion.

Ground-truth boxes are grown outward step by step until they cover the
whole image, overlapping boxes are merged into their envelope along the
way, and the sequence is then reversed, yielding a scaffold that starts
wide (optionally on deliberately wrong, distractor regions), narrows, and
lands exactly on the ground truth. Trajectories feed the dataset pipeline,
which narrates them into training traces.

Step sizes shrink as the expansion proceeds: at step ``t`` each coordinate
moves a fraction ``1/S`` of its remaining margin with ``S = K - t + 1``,
so the final step (``S = 1``) always reaches the full image. Once the set
collapses to a single box the budget ``K`` is rewritten to ``t + 2``
(once; a latch prevents repeats), ending the sequence two steps later.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .geometry import BBox, BoxSet, InvalidBoxError, iou

__all__ = [
    "ScaffoldConfig",
    "FocusTrajectory",
    "expand_step",
    "merge_overlaps",
    "build_forward_sequence",
    "sample_distractors",
    "build_scaffold",
]

_UNIT_BOX = BBox(0.0, 0.0, 1.0, 1.0)
# Smallest side a sampled distractor may have; keeps boxes strictly valid
# after the trace format's 3-decimal quantization.
_MIN_DISTRACTOR_SIDE = 0.002


@dataclass(frozen=True)
class ScaffoldConfig:
    """Knobs for trajectory construction.

    expansion_steps: initial step budget K.
    area_tolerance: relative area slack for distractor sampling.
    max_distractors: upper bound of the uniform distractor-count draw.
    seed: RNG seed used when no explicit generator is supplied.
    attempt_budget: rejection-sampling attempts per distractor before
        giving up and emitting fewer.
    """

    expansion_steps: int = 5
    area_tolerance: float = 0.2
    max_distractors: int = 2
    seed: int = 0
    attempt_budget: int = 1000

    def __post_init__(self) -> None:
        if self.expansion_steps < 1:
            raise ValueError("expansion_steps must be >= 1")
        if not 0.0 < self.area_tolerance < 1.0:
            raise ValueError("area_tolerance must be in (0, 1)")
        if self.max_distractors not in (0, 1, 2):
            raise ValueError("max_distractors must be 0, 1 or 2")
        if self.attempt_budget < 1:
            raise ValueError("attempt_budget must be >= 1")


@dataclass(frozen=True)
class FocusTrajectory:
    """Ordered sequence of box sets.

    Forward order starts at the ground truth and ends at the full-image
    box; reversed (scaffold) order is distractors first, full image next,
    narrowing down to the ground truth as the final set.
    """

    sets: tuple[BoxSet, ...]
    early_stop_step: int | None
    distractor_count: int
    reversed: bool

    def __len__(self) -> int:
        return len(self.sets)


def expand_step(prev: BoxSet, s: int) -> BoxSet:
    """Grow every box of ``prev`` by 1/s of each coordinate's remaining margin.

    (x1, y1, x2, y2) maps to (x1 - x1/s, y1 - y1/s, x2 + (1-x2)/s,
    y2 + (1-y2)/s); the result always contains the input and stays inside
    the unit square. ``s = 1`` consumes the full margins.
    """
    if s < 1:
        raise ValueError("expansion divisor s must be >= 1")
    grown = []
    for b in prev:
        grown.append(
            BBox(
                b.x1 - b.x1 / s,
                b.y1 - b.y1 / s,
                b.x2 + (1.0 - b.x2) / s,
                b.y2 + (1.0 - b.y2) / s,
            )
        )
    return BoxSet(tuple(grown))


def merge_overlaps(s: BoxSet) -> BoxSet:
    """Collapse overlapping boxes into min/max envelopes until pairwise disjoint.

    The lowest-index overlapping pair is merged first; the fixed point is
    independent of merge order (envelopes only grow, so any order reaches
    the same disjoint cover). Touching edges (IoU 0) are not merged.
    """
    boxes = list(s.boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if iou(boxes[i], boxes[j]) > 0.0:
                    a, b = boxes[i], boxes[j]
                    envelope = BBox(
                        min(a.x1, b.x1),
                        min(a.y1, b.y1),
                        max(a.x2, b.x2),
                        max(a.y2, b.y2),
                    )
                    boxes[i] = envelope
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return BoxSet(tuple(boxes))


def build_forward_sequence(gt: BoxSet, cfg: ScaffoldConfig) -> FocusTrajectory:
    """Expand ``gt`` outward for (a possibly rewritten) K steps.

    The loop bound is live: when the set first collapses to a single box,
    K is rewritten to t + 2, so exactly two more steps run (with divisors
    recomputed from the new K). The final step always has divisor 1 and
    therefore produces the full-image box.
    """
    if gt.is_empty():
        raise InvalidBoxError("ground-truth box set must be nonempty")
    sets: list[BoxSet] = [gt]
    early_stop: int | None = None
    k = cfg.expansion_steps
    t = 1
    while t <= k:
        step = merge_overlaps(expand_step(sets[-1], k - t + 1))
        sets.append(step)
        if len(step) == 1 and early_stop is None:
            early_stop = t
            k = t + 2
        t += 1
    return FocusTrajectory(
        sets=tuple(sets),
        early_stop_step=early_stop,
        distractor_count=0,
        reversed=False,
    )


def _disjoint_from(box: BBox, others: list[BBox]) -> bool:
    return all(iou(box, other) == 0.0 for other in others)


def sample_distractors(
    traj: FocusTrajectory,
    gt: BoxSet,
    cfg: ScaffoldConfig,
    rng: random.Random,
) -> list[BoxSet]:
    """Draw 0..max_distractors single-box sets that miss the ground truth.

    Each distractor has zero IoU against every ground-truth box and every
    previously drawn distractor, an area within ``area_tolerance`` relative
    difference of the mean ground-truth box area, and a log-uniform aspect
    ratio in [1/3, 3]. Rejection sampling; when space runs out (the budget
    is exhausted) fewer distractors are returned, never an error.
    """
    count = rng.randint(0, cfg.max_distractors)
    if count == 0:
        return []
    mean_area = sum(b.area for b in gt) / len(gt)
    lo = mean_area * (1.0 - cfg.area_tolerance)
    hi = mean_area * (1.0 + cfg.area_tolerance)
    avoid = list(gt.boxes)
    picked: list[BoxSet] = []
    for _ in range(count):
        box = None
        for _ in range(cfg.attempt_budget):
            area = rng.uniform(lo, hi)
            aspect = math.exp(rng.uniform(math.log(1.0 / 3.0), math.log(3.0)))
            w = math.sqrt(area * aspect)
            h = math.sqrt(area / aspect)
            if not (_MIN_DISTRACTOR_SIDE <= w <= 1.0 and _MIN_DISTRACTOR_SIDE <= h <= 1.0):
                continue
            x1 = rng.uniform(0.0, 1.0 - w)
            y1 = rng.uniform(0.0, 1.0 - h)
            candidate = BBox(x1, y1, x1 + w, y1 + h)
            if abs(candidate.area - mean_area) / mean_area > cfg.area_tolerance:
                continue
            if _disjoint_from(candidate, avoid):
                box = candidate
                break
        if box is None:
            break
        avoid.append(box)
        picked.append(BoxSet((box,)))
    return picked


def build_scaffold(
    gt: BoxSet, cfg: ScaffoldConfig, rng: random.Random | None = None
) -> FocusTrajectory:
    """Full scaffold: forward expansion plus distractors, reversed.

    The reversed order is [distractors..., full image, ..., ground truth];
    the final set is the ground-truth object itself, bit-exact.
    """
    if rng is None:
        rng = random.Random(cfg.seed)
    forward = build_forward_sequence(gt, cfg)
    distractors = sample_distractors(forward, gt, cfg, rng)
    ordered = tuple(reversed(forward.sets + tuple(distractors)))
    return FocusTrajectory(
        sets=ordered,
        early_stop_step=forward.early_stop_step,
        distractor_count=len(distractors),
        reversed=True,
    )

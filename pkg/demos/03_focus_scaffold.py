#!/usr/bin/env python3
"""Build a coarse-to-fine focus trajectory by reverse expansion.

Ground-truth boxes are grown outward (merging when they collide) until the
full image is reached, then the sequence is reversed and salted with
distractor regions, producing the attention-correction arc a training
trace narrates: wrong place, wide view, progressive narrowing, target.
"""

import random

from sifkit import BoxSet, ScaffoldConfig, build_scaffold
from sifkit.scaffold import build_forward_sequence


def show(label, trajectory):
    print(label)
    for k, boxset in enumerate(trajectory.sets):
        rendered = ", ".join(
            f"({b.x1:.3f},{b.y1:.3f},{b.x2:.3f},{b.y2:.3f})" for b in boxset
        )
        print(f"  set {k}: {rendered}")


gt = BoxSet.from_coords([(0.15, 0.2, 0.35, 0.45), (0.4, 0.3, 0.6, 0.5)])
cfg = ScaffoldConfig(expansion_steps=5, area_tolerance=0.2, max_distractors=2, seed=11)

print("=== Forward expansion (ground truth -> full image) ===")
forward = build_forward_sequence(gt, cfg)
show("two boxes merge as they grow:", forward)
print(f"early-stop step: {forward.early_stop_step} (budget rewritten once to end two steps later)\n")

print("=== Reversed scaffold with distractors ===")
scaffold = build_scaffold(gt, cfg, random.Random(11))
show(f"{scaffold.distractor_count} distractor(s) first, ground truth last:", scaffold)

print("\n=== Determinism ===")
again = build_scaffold(gt, cfg, random.Random(11))
print(f"same seed, identical trajectory: {scaffold == again}")
print(f"final set is the ground truth, bit-exact: {scaffold.sets[-1] == gt}")

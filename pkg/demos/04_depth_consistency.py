#!/usr/bin/env python3
"""Depth maps and the all-or-nothing depth-consistency check.

Regions asserted in a trace carry a depth fraction; each is compared with
the mean depth of the map under its box. One region beyond the relative
tolerance zeroes the whole reward.
"""

import tempfile
from pathlib import Path

import numpy as np

from sifkit import DepthTolerance, depth_reward, load_depth_map, parse_trace, region_depth
from sifkit.geometry import BBox
from sifkit.netpbm import write_pgm16

tmp = Path(tempfile.mkdtemp())

# A scene where depth increases left to right: near wall -> open corridor.
grid = np.tile(np.linspace(0.2, 0.9, 64), (48, 1))
path = tmp / "scene.pgm"
write_pgm16(path, np.round(grid * 65535).astype(np.uint16))

scene = load_depth_map(path, convention_note="larger = farther (synthetic)")
print(f"loaded {scene.width}x{scene.height} depth map; note: {scene.convention_note}")

print("\n=== Region depth extraction (mean over covered pixel centers) ===")
for name, box in [
    ("left strip ", BBox(0.0, 0.0, 0.25, 1.0)),
    ("right strip", BBox(0.75, 0.0, 1.0, 1.0)),
    ("full image ", BBox(0.0, 0.0, 1.0, 1.0)),
]:
    print(f"{name}: {region_depth(scene, box):.4f}")

print("\n=== Consistency check at threshold 0.1 ===")
left = region_depth(scene, BBox(0.0, 0.0, 0.25, 1.0))


def trace_with_depth(d: float) -> str:
    return (
        f'<think><area>[{{"bbox":[0.0,0.0,0.25,1.0],"depth":{d:.4f}}}]</area>'
        "<text>the near wall</text></think><answer>wall</answer>"
    )


for asserted in [left, left * 1.09, left * 1.11]:
    trace = parse_trace(trace_with_depth(asserted))
    reward = depth_reward(trace, scene, DepthTolerance(threshold=0.1))
    rel = abs(asserted - left) / left
    print(f"asserted {asserted:.4f} (relative error {rel:.3f}) -> reward {reward}")

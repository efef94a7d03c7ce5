"""Desk-scale synthetic corpus: images, depth maps, and annotations.

Builds a small, fully deterministic fixture exercising the whole pipeline
(multi-box records, overlapping boxes that merge during expansion, varied
depths) without shipping any real dataset. Depth values stay inside
[0.1, 0.9] so region means are comfortably above the relative-error
denominator floor.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import netpbm

__all__ = ["make_fixture"]

_QUESTIONS = [
    "What color is the marked object?",
    "What is the person on the left holding?",
    "How many cups are on the table?",
    "Which animal is closer to the camera?",
    "What is written on the sign?",
]

_ANSWERS = [
    "dark red",
    "a paper map",
    "three",
    "the gray cat",
    "open until late",
    "a striped umbrella",
    "two wooden chairs",
]


def _depth_grid(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
    )
    phase = rng.uniform(0.0, 2.0 * np.pi)
    tilt = rng.uniform(0.3, 1.0)
    v = 0.5 + 0.5 * np.sin(2.0 * np.pi * (tilt * xx + (1.0 - tilt) * yy) + phase)
    return (0.1 + 0.8 * v).astype(np.float64)


def _image_pixels(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    r = ((xx * 255) // max(width - 1, 1)).astype(np.uint8)
    g = ((yy * 255) // max(height - 1, 1)).astype(np.uint8)
    b = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    return np.stack([r, g, b], axis=-1)


def _random_box(rng: np.random.Generator) -> list[float]:
    # Millis keep coordinates exact under the trace format's 3-decimal
    # quantization.
    w = int(rng.integers(60, 300))
    h = int(rng.integers(60, 300))
    x1 = int(rng.integers(0, 1000 - w))
    y1 = int(rng.integers(0, 1000 - h))
    return [x1 / 1000, y1 / 1000, (x1 + w) / 1000, (y1 + h) / 1000]


def make_fixture(
    out_dir: str | Path,
    n_records: int = 10,
    seed: int = 7,
    width: int = 64,
    height: int = 64,
) -> Path:
    """Write ``n_records`` synthetic samples under ``out_dir``.

    Layout: images/<id>.ppm, depths/<id>.pgm, and source.jsonl referencing
    them by relative path. Returns the path to source.jsonl.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "depths").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_records):
        rec_id = f"sample{i:03d}"
        image_rel = f"images/{rec_id}.ppm"
        depth_rel = f"depths/{rec_id}.pgm"
        netpbm.write_ppm(out_dir / image_rel, _image_pixels(rng, width, height))
        grid = np.round(_depth_grid(rng, width, height) * 65535.0).astype(np.uint16)
        netpbm.write_pgm16(out_dir / depth_rel, grid)
        n_boxes = int(rng.integers(1, 4))
        boxes = [_random_box(rng) for _ in range(n_boxes)]
        lines.append(
            json.dumps(
                {
                    "id": rec_id,
                    "image_path": image_rel,
                    "depth_path": depth_rel,
                    "question": _QUESTIONS[i % len(_QUESTIONS)],
                    "answer": _ANSWERS[i % len(_ANSWERS)],
                    "gt_boxes": boxes,
                },
                sort_keys=True,
            )
        )
    source = out_dir / "source.jsonl"
    source.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return source

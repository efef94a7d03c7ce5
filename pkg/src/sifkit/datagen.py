"""End-to-end training-record generation from annotated sources.

Each source record (question, image, ground-truth boxes, answer) is turned
into a coarse-to-fine focus scaffold, overlay frames with the focus boxes
drawn on the image, and a reasoning trace narrating the scaffold, emitted
as one JSON line. Trace completion goes through a completer client: a
vision-chat HTTP endpoint in production, or a deterministic template
stitcher for offline runs and tests.

Ground-truth coordinates are canonicalized to the trace format's 3-decimal
precision at ingest, so the emitted trace's final boxes equal the record's
boxes exactly.

Records fail independently: a bad line, unreadable image, or persistently
invalid completion rejects that record (counted, with a reason) and the
run continues.
"""

from __future__ import annotations

import base64
import json
import logging
import random
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator

import httpx
import numpy as np

from . import netpbm
from .depth import DepthMap, load_depth_map, region_depth
from .geometry import BBox, BoxSet, InvalidBoxError
from .scaffold import FocusTrajectory, ScaffoldConfig, build_scaffold
from .trace import (
    FocusStep,
    ReasoningTrace,
    TraceParseError,
    parse_trace,
    serialize_trace,
)

__all__ = [
    "SourceRecord",
    "SifRecord",
    "RunReport",
    "CompletionError",
    "MockCompleter",
    "HttpCompleter",
    "load_source_records",
    "render_overlays",
    "complete_cot",
    "generate_dataset",
]

logger = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_OUTLINE_PX = 3
_RED = (255, 0, 0)


class CompletionError(RuntimeError):
    """The completer could not produce a valid trace for a record."""


@dataclass(frozen=True)
class SourceRecord:
    """One annotated sample: question, image, ground-truth boxes, answer."""

    id: str
    image_path: str
    question: str
    answer: str
    gt_boxes: BoxSet
    depth_path: str


@dataclass(frozen=True)
class SifRecord:
    """One emitted training record; ``cot`` conforms to the trace grammar
    and its final step's boxes equal ``gt_boxes``."""

    id: str
    question: str
    image_path: str
    depth_path: str
    gt_boxes: BoxSet
    answer: str
    cot: str
    scaffold: FocusTrajectory

    def to_json_line(self) -> str:
        payload = {
            "id": self.id,
            "question": self.question,
            "image_path": self.image_path,
            "depth_path": self.depth_path,
            "gt_boxes": [list(b.as_tuple()) for b in self.gt_boxes],
            "answer": self.answer,
            "cot": self.cot,
            "scaffold": {
                "sets": [[list(b.as_tuple()) for b in s] for s in self.scaffold.sets],
                "early_stop_step": self.scaffold.early_stop_step,
                "distractor_count": self.scaffold.distractor_count,
                "reversed": self.scaffold.reversed,
            },
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass
class RunReport:
    processed: int = 0
    emitted: int = 0
    rejected: int = 0
    rejections: list[dict] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "processed": self.processed,
            "emitted": self.emitted,
            "rejected": self.rejected,
            "rejections": self.rejections,
            "stage_seconds": {k: round(v, 6) for k, v in self.stage_seconds.items()},
        }


def _quantize_box(coords: list[float]) -> BBox:
    return BBox(*(round(float(c), 3) for c in coords))


def load_source_records(path: str | Path) -> Iterator[tuple[int, SourceRecord | str]]:
    """Yield (line number, record-or-rejection-reason) for each input line.

    Bad lines never abort the stream; callers tally them. Box coordinates
    are rounded to 3 decimals (the trace format's precision) and validated
    afterwards.
    """
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, f"invalid JSON: {exc.msg}"
                continue
            try:
                rec_id = str(raw["id"])
                if not _ID_RE.match(rec_id):
                    raise ValueError(f"id {rec_id!r} is not filesystem-safe")
                boxes = raw["gt_boxes"]
                if not isinstance(boxes, list) or not boxes:
                    raise ValueError("gt_boxes must be a nonempty array")
                gt = BoxSet(tuple(_quantize_box(b) for b in boxes))
                answer = str(raw["answer"])
                if not answer.strip():
                    raise ValueError("answer must be nonempty")
                depth_path = raw.get("depth_path")
                if not depth_path:
                    raise ValueError("depth_path is required")
                record = SourceRecord(
                    id=rec_id,
                    image_path=str(raw["image_path"]),
                    question=str(raw["question"]),
                    answer=answer,
                    gt_boxes=gt,
                    depth_path=str(depth_path),
                )
            except (KeyError, TypeError, ValueError, InvalidBoxError) as exc:
                yield lineno, f"schema violation: {exc}"
                continue
            yield lineno, record


def _box_to_pixels(b: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    x_lo = max(0, min(width, round(b.x1 * width)))
    x_hi = max(0, min(width, round(b.x2 * width)))
    y_lo = max(0, min(height, round(b.y1 * height)))
    y_hi = max(0, min(height, round(b.y2 * height)))
    # A box degenerate after rounding keeps the minimum outline footprint.
    if x_hi - x_lo < _OUTLINE_PX:
        x_hi = min(width, x_lo + _OUTLINE_PX)
        x_lo = max(0, x_hi - _OUTLINE_PX)
    if y_hi - y_lo < _OUTLINE_PX:
        y_hi = min(height, y_lo + _OUTLINE_PX)
        y_lo = max(0, y_hi - _OUTLINE_PX)
    return x_lo, y_lo, x_hi, y_hi


def _draw_outline(pixels: np.ndarray, b: BBox) -> None:
    height, width = pixels.shape[:2]
    x_lo, y_lo, x_hi, y_hi = _box_to_pixels(b, width, height)
    t = _OUTLINE_PX
    pixels[y_lo : min(y_lo + t, y_hi), x_lo:x_hi] = _RED
    pixels[max(y_hi - t, y_lo) : y_hi, x_lo:x_hi] = _RED
    pixels[y_lo:y_hi, x_lo : min(x_lo + t, x_hi)] = _RED
    pixels[y_lo:y_hi, max(x_hi - t, x_lo) : x_hi] = _RED


def render_overlays(
    image_path: str | Path, traj: FocusTrajectory, out_dir: str | Path, record_id: str
) -> list[Path]:
    """Draw each trajectory set on the image as red 3 px outlines.

    One output frame per set, named <record-id>_step<k>.ppm; bytes are
    deterministic for identical inputs.
    """
    base = netpbm.read_ppm(image_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for k, boxset in enumerate(traj.sets):
        frame = base.copy()
        for box in boxset:
            _draw_outline(frame, box)
        path = out_dir / f"{record_id}_step{k}.ppm"
        netpbm.write_ppm(path, frame)
        written.append(path)
    return written


def _focus_digest(traj: FocusTrajectory, depth: DepthMap, statistic: str) -> list[list[tuple[BBox, float]]]:
    """Per-set (box, quantized region depth) pairs in scaffold order."""
    digest = []
    for boxset in traj.sets:
        digest.append(
            [(b, round(region_depth(depth, b, statistic=statistic), 3)) for b in boxset]
        )
    return digest


def _narrate(step_index: int, total: int, boxset: BoxSet, traj: FocusTrajectory) -> str:
    n_distractors = traj.distractor_count
    if step_index < n_distractors:
        return (
            "This region looked promising at first, but on inspection it does "
            "not contain what the question asks about; attention should move on."
        )
    if step_index == total - 1:
        noun = "object" if len(boxset) == 1 else "objects"
        return f"Settling on the relevant {noun}; this is what the question is about."
    if len(boxset) == 1 and boxset.boxes[0].is_full_image():
        return "Scanning the whole scene to locate the relevant area."
    return (
        f"Narrowing attention to {len(boxset)} region(s) of interest and "
        "checking their contents against the question."
    )


class MockCompleter:
    """Deterministic trace stitcher: one step per scaffold set, region
    depths read from the depth map, the record's answer as the final
    answer. Output always parses and always lands on the ground truth."""

    def complete(
        self,
        record: SourceRecord,
        traj: FocusTrajectory,
        depth: DepthMap,
        overlays: list[Path],
        statistic: str = "mean",
    ) -> str:
        digest = _focus_digest(traj, depth, statistic)
        total = len(traj.sets)
        steps = []
        for k, (boxset, regions) in enumerate(zip(traj.sets, digest)):
            steps.append(
                FocusStep(
                    regions=tuple(regions),
                    narration=_narrate(k, total, boxset, traj),
                )
            )
        trace = ReasoningTrace(steps=tuple(steps), answer=record.answer)
        return serialize_trace(trace)


def default_cot_template() -> str:
    return resources.files("sifkit").joinpath("templates/cot_prompt.txt").read_text("utf-8")


class HttpCompleter:
    """Vision-chat completer: sends the prompt and overlay frames to a
    chat-completion-style endpoint and returns the reply text."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        model: str | None = None,
        template: str | None = None,
        timeout: float = 60.0,
        retries: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.template = template if template is not None else default_cot_template()
        self.retries = retries
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _render_prompt(self, record: SourceRecord, digest) -> str:
        lines = []
        for k, regions in enumerate(digest):
            parts = ", ".join(
                f"[{b.x1:.3f}, {b.y1:.3f}, {b.x2:.3f}, {b.y2:.3f}] depth {d:.3f}"
                for b, d in regions
            )
            lines.append(f"step {k}: {parts}")
        out = self.template
        out = out.replace("{question}", record.question)
        out = out.replace("{answer}", record.answer)
        out = out.replace("{focus_sequence}", "\n".join(lines))
        return out

    def complete(
        self,
        record: SourceRecord,
        traj: FocusTrajectory,
        depth: DepthMap,
        overlays: list[Path],
        statistic: str = "mean",
    ) -> str:
        digest = _focus_digest(traj, depth, statistic)
        content: list[dict] = [{"type": "text", "text": self._render_prompt(record, digest)}]
        for path in overlays:
            encoded = base64.b64encode(Path(path).read_bytes()).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/x-portable-pixmap;base64,{encoded}"},
                }
            )
        body = {"messages": [{"role": "user", "content": content}]}
        if self.model:
            body["model"] = self.model
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._client.post(self.endpoint, json=body)
                response.raise_for_status()
                payload = response.json()
                return str(payload["choices"][0]["message"]["content"])
            except (httpx.TransportError, httpx.HTTPStatusError, KeyError, IndexError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(min(0.25 * 2**attempt, 2.0))
        raise CompletionError(f"completion request failed: {last_exc}")


def _final_boxes_match(trace_text: str, gt: BoxSet) -> bool:
    trace = parse_trace(trace_text)
    final = sorted(b.as_tuple() for b, _ in trace.steps[-1].regions)
    expected = sorted(b.as_tuple() for b in gt)
    return final == expected


def complete_cot(
    record: SourceRecord,
    traj: FocusTrajectory,
    depth: DepthMap,
    completer,
    overlays: list[Path] | None = None,
    statistic: str = "mean",
    attempts: int = 3,
) -> str:
    """Obtain a reasoning trace for the scaffold and validate it.

    The reply must parse under the trace grammar and its final step's
    boxes must equal the ground truth (as a multiset). Invalid replies are
    retried up to ``attempts`` times, then the record is rejected.
    """
    last_reason = "no attempt made"
    for _ in range(attempts):
        text = completer.complete(record, traj, depth, overlays or [], statistic=statistic)
        try:
            if _final_boxes_match(text, record.gt_boxes):
                return text
            last_reason = "final step boxes do not match ground truth"
        except TraceParseError as exc:
            last_reason = f"completion does not parse: {exc}"
    raise CompletionError(last_reason)


def _resolve(base: Path, path_str: str) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else base / p


def generate_dataset(
    in_path: str | Path,
    out_dir: str | Path,
    cfg: ScaffoldConfig,
    completer,
    statistic: str = "mean",
) -> RunReport:
    """Run the full pipeline over a source JSONL.

    Emits ``sif_records.jsonl`` plus per-record overlay frames under
    ``overlays/`` and a ``run_report.json`` with counts and stage timings.
    Per-record RNG streams are derived from (cfg.seed, record id), so
    output bytes depend only on inputs and seed, not on processing order.
    Per-record failures are tallied, never fatal.
    """
    in_path = Path(in_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overlay_dir = out_dir / "overlays"
    records_path = out_dir / "sif_records.jsonl"
    report = RunReport()
    stage = {"scaffold": 0.0, "overlays": 0.0, "completion": 0.0, "write": 0.0}
    base = in_path.parent

    with records_path.open("w", encoding="utf-8") as out:
        for lineno, item in load_source_records(in_path):
            report.processed += 1
            if isinstance(item, str):
                report.rejected += 1
                report.rejections.append({"line": lineno, "reason": item})
                logger.warning("line %d rejected: %s", lineno, item)
                continue
            record = item
            try:
                t0 = time.perf_counter()
                depth = load_depth_map(_resolve(base, record.depth_path))
                rng = random.Random(f"{cfg.seed}:{record.id}")
                traj = build_scaffold(record.gt_boxes, cfg, rng)
                t1 = time.perf_counter()
                overlays = render_overlays(
                    _resolve(base, record.image_path), traj, overlay_dir, record.id
                )
                t2 = time.perf_counter()
                cot = complete_cot(
                    record, traj, depth, completer, overlays, statistic=statistic
                )
                t3 = time.perf_counter()
                sif = SifRecord(
                    id=record.id,
                    question=record.question,
                    image_path=record.image_path,
                    depth_path=record.depth_path,
                    gt_boxes=record.gt_boxes,
                    answer=record.answer,
                    cot=cot,
                    scaffold=traj,
                )
                out.write(sif.to_json_line() + "\n")
                t4 = time.perf_counter()
                stage["scaffold"] += t1 - t0
                stage["overlays"] += t2 - t1
                stage["completion"] += t3 - t2
                stage["write"] += t4 - t3
                report.emitted += 1
            except Exception as exc:  # noqa: BLE001 - per-record isolation
                report.rejected += 1
                report.rejections.append({"line": lineno, "id": record.id, "reason": str(exc)})
                logger.warning("record %s rejected: %s", record.id, exc)

    report.stage_seconds = stage
    (out_dir / "run_report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    if report.processed == 0:
        logger.warning("input %s contained no records", in_path)
    return report

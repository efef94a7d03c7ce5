"""Parser, serializer, and format reward for interleaved reasoning traces.

A trace interleaves focus regions with grounded narration and ends with a
final answer::

    <think>
      <area>[{"bbox":[x1,y1,x2,y2],"depth":d}, ...]</area><text>...</text>
      ... one or more area/text pairs, strictly alternating ...
    </think><answer>...</answer>

Whitespace *between* tags is ignored; whitespace inside ``<text>`` and
``<answer>`` bodies is preserved verbatim. Each ``<area>`` body is a JSON
array of region objects carrying a normalized bounding box and a depth
fraction. Anything after ``</answer>`` invalidates the trace.

The grammar is published as EBNF in ``docs/trace_grammar.md``. Parsing is
total: any input yields either a :class:`ReasoningTrace` or a
:class:`TraceParseError` carrying a diagnostic code and the byte offset of
the first violation, in linear time.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .geometry import BBox, BoxSet, InvalidBoxError

__all__ = [
    "Diagnostic",
    "TraceParseError",
    "FocusStep",
    "ReasoningTrace",
    "parse_trace",
    "serialize_trace",
    "format_reward",
    "check_format",
    "extract_boxsets",
]


class Diagnostic(enum.Enum):
    MISSING_TAG = "missing_tag"
    MISORDERED_TAG = "misordered_tag"
    UNCLOSED_TAG = "unclosed_tag"
    MALFORMED_JSON = "malformed_json"
    SCHEMA_VIOLATION = "schema_violation"
    INVALID_BOX = "invalid_box"
    DEPTH_OUT_OF_RANGE = "depth_out_of_range"
    EMPTY_ANSWER = "empty_answer"
    TRAILING_CONTENT = "trailing_content"


class TraceParseError(ValueError):
    """Parse failure with a diagnostic code and byte offset of the first
    violation (offset into the UTF-8 encoding of the input)."""

    def __init__(self, code: Diagnostic, byte_offset: int, message: str):
        super().__init__(f"{code.value} at byte {byte_offset}: {message}")
        self.code = code
        self.byte_offset = byte_offset
        self.message = message

    def to_dict(self) -> dict:
        return {
            "code": self.code.value,
            "byte_offset": self.byte_offset,
            "message": self.message,
        }


@dataclass(frozen=True)
class FocusStep:
    """One reasoning step: focused regions with depths, plus narration."""

    regions: tuple[tuple[BBox, float], ...]
    narration: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValueError("a focus step needs at least one region")
        for box, depth in self.regions:
            if not isinstance(box, BBox):
                raise ValueError(f"region box is not a BBox: {box!r}")
            if not 0.0 <= depth <= 1.0:
                raise ValueError(f"region depth {depth} outside [0, 1]")
        if "</text>" in self.narration:
            raise ValueError("narration may not contain the closing text tag")


@dataclass(frozen=True)
class ReasoningTrace:
    """Parsed trace: ordered focus steps and the final answer."""

    steps: tuple[FocusStep, ...]
    answer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("a trace needs at least one step")
        if not self.answer.strip():
            raise ValueError("answer is empty after trimming")
        if "</answer>" in self.answer:
            raise ValueError("answer may not contain the closing answer tag")


_T_THINK, _T_THINK_END = "<think>", "</think>"
_T_AREA, _T_AREA_END = "<area>", "</area>"
_T_TEXT, _T_TEXT_END = "<text>", "</text>"
_T_ANS, _T_ANS_END = "<answer>", "</answer>"

_CANONICAL_KEYS = frozenset({"bbox", "depth"})


def _byte_offset(raw: str, pos: int) -> int:
    return len(raw[:pos].encode("utf-8"))


def _fail(raw: str, pos: int, code: Diagnostic, message: str) -> TraceParseError:
    return TraceParseError(code, _byte_offset(raw, pos), message)


def _skip_ws(raw: str, pos: int) -> int:
    n = len(raw)
    while pos < n and raw[pos].isspace():
        pos += 1
    return pos


def _parse_regions(
    raw: str, body_start: int, body: str, aliases: dict[str, str]
) -> tuple[tuple[BBox, float], ...]:
    try:
        value = json.loads(body)
    except json.JSONDecodeError as exc:
        raise _fail(
            raw, body_start + exc.pos, Diagnostic.MALFORMED_JSON, exc.msg
        ) from exc
    except RecursionError as exc:
        raise _fail(
            raw, body_start, Diagnostic.MALFORMED_JSON, "JSON nesting too deep"
        ) from exc

    def schema(msg: str) -> TraceParseError:
        return _fail(raw, body_start, Diagnostic.SCHEMA_VIOLATION, msg)

    if not isinstance(value, list):
        raise schema("area body must be a JSON array of region objects")
    if not value:
        raise schema("area body must list at least one region")
    regions: list[tuple[BBox, float]] = []
    for i, entry in enumerate(value):
        if not isinstance(entry, dict):
            raise schema(f"region {i} is not a JSON object")
        resolved: dict[str, object] = {}
        for key, val in entry.items():
            canon = aliases.get(key, key)
            if canon in resolved:
                raise schema(f"region {i} repeats key {canon!r}")
            resolved[canon] = val
        if set(resolved) != _CANONICAL_KEYS:
            raise schema(
                f"region {i} must have exactly the keys 'bbox' and 'depth', "
                f"got {sorted(resolved)}"
            )
        coords = resolved["bbox"]
        if (
            not isinstance(coords, list)
            or len(coords) != 4
            or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in coords)
        ):
            raise schema(f"region {i} bbox must be an array of 4 numbers")
        try:
            box = BBox(*coords)
        except InvalidBoxError as exc:
            raise _fail(raw, body_start, Diagnostic.INVALID_BOX, f"region {i}: {exc}")
        depth = resolved["depth"]
        if isinstance(depth, bool) or not isinstance(depth, (int, float)):
            raise schema(f"region {i} depth must be a number")
        if not 0.0 <= depth <= 1.0:
            raise _fail(
                raw,
                body_start,
                Diagnostic.DEPTH_OUT_OF_RANGE,
                f"region {i} depth {depth} outside [0, 1]",
            )
        regions.append((box, float(depth)))
    return tuple(regions)


def parse_trace(raw: str, key_aliases: dict[str, str] | None = None) -> ReasoningTrace:
    """Parse ``raw`` into a :class:`ReasoningTrace` or raise :class:`TraceParseError`.

    ``key_aliases`` maps alternate region keys onto the canonical
    ``"bbox"``/``"depth"`` names (for models trained with different JSON
    schemas); canonical keys are always accepted.
    """
    aliases = dict(key_aliases or {})
    pos = _skip_ws(raw, 0)
    if not raw.startswith(_T_THINK, pos):
        raise _fail(raw, pos, Diagnostic.MISSING_TAG, "expected <think>")
    pos += len(_T_THINK)

    steps: list[FocusStep] = []
    while True:
        pos = _skip_ws(raw, pos)
        if raw.startswith(_T_THINK_END, pos):
            if not steps:
                raise _fail(
                    raw, pos, Diagnostic.MISSING_TAG,
                    "think block needs at least one <area>/<text> pair",
                )
            pos += len(_T_THINK_END)
            break
        if not raw.startswith(_T_AREA, pos):
            if raw.startswith(_T_TEXT, pos):
                raise _fail(
                    raw, pos, Diagnostic.MISORDERED_TAG,
                    "<text> before <area>: pairs must alternate area then text",
                )
            raise _fail(
                raw, pos, Diagnostic.MISORDERED_TAG,
                "expected <area> or </think>",
            )
        pos += len(_T_AREA)
        end = raw.find(_T_AREA_END, pos)
        if end < 0:
            raise _fail(raw, pos, Diagnostic.UNCLOSED_TAG, "missing </area>")
        regions = _parse_regions(raw, pos, raw[pos:end], aliases)
        pos = _skip_ws(raw, end + len(_T_AREA_END))
        if not raw.startswith(_T_TEXT, pos):
            raise _fail(
                raw, pos, Diagnostic.MISORDERED_TAG,
                "each <area> must be followed by exactly one <text>",
            )
        pos += len(_T_TEXT)
        end = raw.find(_T_TEXT_END, pos)
        if end < 0:
            raise _fail(raw, pos, Diagnostic.UNCLOSED_TAG, "missing </text>")
        steps.append(FocusStep(regions=regions, narration=raw[pos:end]))
        pos = end + len(_T_TEXT_END)

    pos = _skip_ws(raw, pos)
    if not raw.startswith(_T_ANS, pos):
        raise _fail(raw, pos, Diagnostic.MISSING_TAG, "expected <answer> after </think>")
    pos += len(_T_ANS)
    end = raw.find(_T_ANS_END, pos)
    if end < 0:
        raise _fail(raw, pos, Diagnostic.UNCLOSED_TAG, "missing </answer>")
    answer = raw[pos:end]
    if not answer.strip():
        raise _fail(raw, pos, Diagnostic.EMPTY_ANSWER, "answer is empty after trimming")
    pos = _skip_ws(raw, end + len(_T_ANS_END))
    if pos != len(raw):
        raise _fail(
            raw, pos, Diagnostic.TRAILING_CONTENT, "content after </answer>"
        )
    return ReasoningTrace(steps=tuple(steps), answer=answer)


def _render_number(v: float) -> str:
    return format(v, ".3f")


def serialize_trace(t: ReasoningTrace) -> str:
    """Canonical rendering: fixed key order, 3 fractional digits, no
    whitespace between tags. Re-parses to an equal trace whenever the
    trace's numbers are already quantized to 3 decimals (the serializer is
    canonicalizing, so serialize-then-parse is the canonical projection)."""
    parts = [_T_THINK]
    for step in t.steps:
        entries = ",".join(
            '{"bbox":[%s,%s,%s,%s],"depth":%s}'
            % (
                _render_number(box.x1),
                _render_number(box.y1),
                _render_number(box.x2),
                _render_number(box.y2),
                _render_number(depth),
            )
            for box, depth in step.regions
        )
        parts.append(f"{_T_AREA}[{entries}]{_T_AREA_END}")
        parts.append(f"{_T_TEXT}{step.narration}{_T_TEXT_END}")
    parts.append(_T_THINK_END)
    parts.append(f"{_T_ANS}{t.answer}{_T_ANS_END}")
    return "".join(parts)


def check_format(raw: str) -> tuple[float, TraceParseError | None]:
    """Format reward plus the diagnostic explaining a zero, if any."""
    try:
        parse_trace(raw)
    except TraceParseError as exc:
        return 0.0, exc
    return 1.0, None


def format_reward(raw: str) -> float:
    """1.0 iff ``raw`` strictly complies with the trace grammar. Never raises."""
    return check_format(raw)[0]


def extract_boxsets(t: ReasoningTrace) -> list[BoxSet]:
    """One BoxSet per focus step, in emission order."""
    return [BoxSet(tuple(box for box, _ in step.regions)) for step in t.steps]

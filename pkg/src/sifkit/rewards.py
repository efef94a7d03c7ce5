"""Composite reward stack and group-normalized advantages.

Four signals are combined per completion: strict format compliance,
judge-scored answer quality with a progressive term (credit for improving
on the previous group's mean), grounding quality with a correction bonus
(final accuracy plus the gain over the first focused region), and binary
depth consistency. Totals feed a group-relative advantage normalization.

Judge scoring goes through a client object: an HTTP chat-completion-style
endpoint in production, or a deterministic lexical mock (token-level F1)
for tests and offline runs. Judge failures raise rather than scoring 0 --
a silent zero would quietly corrupt the group statistics.
"""

from __future__ import annotations

import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx

from .depth import DepthMap, DepthTolerance, depth_reward
from .geometry import BoxSet, hiou
from .trace import ReasoningTrace, TraceParseError, extract_boxsets, parse_trace

__all__ = [
    "RewardWeights",
    "RewardBreakdown",
    "GroupScore",
    "GroundTruthBundle",
    "JudgeError",
    "JudgeTransportError",
    "JudgeResponseError",
    "HistoryConflictError",
    "JudgeHistory",
    "MockJudge",
    "HttpJudge",
    "judge_score",
    "token_f1",
    "progressive_answer_reward",
    "grounding_reward",
    "composite_reward",
    "group_advantages",
    "RewardEngine",
]

logger = logging.getLogger(__name__)

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class JudgeError(RuntimeError):
    """Base class for judge failures. These must never be folded into a 0."""


class JudgeTransportError(JudgeError):
    pass


class JudgeResponseError(JudgeError):
    pass


class HistoryConflictError(ValueError):
    """Iteration number not strictly greater than the stored one."""


@dataclass(frozen=True)
class RewardWeights:
    w_format: float = 1.0
    w_ans: float = 1.0
    w_bbox: float = 1.0
    w_depth: float = 1.0

    def __post_init__(self) -> None:
        for name in ("w_format", "w_ans", "w_bbox", "w_depth"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-completion reward components and supporting diagnostics."""

    r_format: float
    r_ans: float
    r_bbox: float
    r_depth: float
    total: float
    judge_score: float
    s_init: float | None = None
    s_end: float | None = None
    parse_error: dict | None = None

    def to_dict(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_ans": self.r_ans,
            "r_bbox": self.r_bbox,
            "r_depth": self.r_depth,
            "total": self.total,
            "diagnostics": {
                "judge_score": self.judge_score,
                "s_init": self.s_init,
                "s_end": self.s_end,
                "parse_error": self.parse_error,
            },
        }


@dataclass(frozen=True)
class GroupScore:
    """Totals and normalized advantages for one rollout group."""

    group_size: int
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    stability_delta: float = 1e-8


@dataclass(frozen=True)
class GroundTruthBundle:
    """Everything needed to score one sample's completions."""

    answer: str
    boxes: BoxSet
    depth: DepthMap
    question: str = ""


@dataclass(frozen=True)
class HistorySnapshot:
    iteration: int
    scores: tuple[float, ...]


class JudgeHistory:
    """Latest judge-score group per sample, with optional file persistence.

    Snapshots are appended to a JSONL file and replayed at startup, since
    training epochs span process restarts. Single writer, atomic in-memory
    replacement; reads return the latest snapshot or None.
    """

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.Lock()
        self._store: dict[str, HistorySnapshot] = {}
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            self._replay(self._path)

    def _replay(self, path: Path) -> None:
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # A torn final line can follow a crash mid-append.
                    logger.warning("%s:%d: ignoring unparseable history line", path, lineno)
                    continue
                snap = HistorySnapshot(
                    iteration=int(rec["iteration"]),
                    scores=tuple(float(s) for s in rec["scores"]),
                )
                prev = self._store.get(rec["sample_id"])
                if prev is not None and snap.iteration <= prev.iteration:
                    raise HistoryConflictError(
                        f"{path}:{lineno}: iteration {snap.iteration} not above "
                        f"stored {prev.iteration} for sample {rec['sample_id']!r}"
                    )
                self._store[rec["sample_id"]] = snap

    def read(self, sample_id: str) -> HistorySnapshot | None:
        with self._lock:
            return self._store.get(sample_id)

    def update(self, sample_id: str, iteration: int, scores: list[float]) -> None:
        for s in scores:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"judge score {s} outside [0, 1]")
        snap = HistorySnapshot(iteration=int(iteration), scores=tuple(float(s) for s in scores))
        with self._lock:
            prev = self._store.get(sample_id)
            if prev is not None and snap.iteration <= prev.iteration:
                raise HistoryConflictError(
                    f"iteration {snap.iteration} not above stored {prev.iteration} "
                    f"for sample {sample_id!r}"
                )
            if self._path is not None:
                line = json.dumps(
                    {"sample_id": sample_id, "iteration": snap.iteration, "scores": list(snap.scores)},
                    separators=(",", ":"),
                )
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            self._store[sample_id] = snap


def token_f1(prediction: str, ground_truth: str) -> float:
    """Token-level F1 between normalized answers (lowercased alphanumerics)."""
    pred = _TOKEN_RE.findall(prediction.lower())
    gold = _TOKEN_RE.findall(ground_truth.lower())
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    counts: dict[str, int] = {}
    for tok in gold:
        counts[tok] = counts.get(tok, 0) + 1
    overlap = 0
    for tok in pred:
        if counts.get(tok, 0) > 0:
            counts[tok] -= 1
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2.0 * precision * recall / (precision + recall)


class MockJudge:
    """Deterministic lexical judge: token-level F1 against the ground truth."""

    def score(self, question: str, prediction: str, ground_truth: str) -> float:
        return token_f1(prediction, ground_truth)


def default_judge_template() -> str:
    return resources.files("sifkit").joinpath("templates/judge_prompt.txt").read_text("utf-8")


class HttpJudge:
    """Chat-completion-style HTTP judge.

    Renders the prompt template (placeholders {question}, {prediction},
    {ground_truth}), posts one request, and parses a numeric score from
    the reply content, clamped to [0, 1]. Transport errors retry up to
    ``retries`` times and then raise; concurrent in-flight requests are
    bounded by ``max_concurrency``.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        model: str | None = None,
        template: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        max_concurrency: int = 8,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.template = template if template is not None else default_judge_template()
        self.retries = retries
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._gate = threading.BoundedSemaphore(max_concurrency)

    def render_prompt(self, question: str, prediction: str, ground_truth: str) -> str:
        out = self.template
        out = out.replace("{question}", question)
        out = out.replace("{prediction}", prediction)
        out = out.replace("{ground_truth}", ground_truth)
        return out

    def score(self, question: str, prediction: str, ground_truth: str) -> float:
        body = {"messages": [{"role": "user", "content": self.render_prompt(question, prediction, ground_truth)}]}
        if self.model:
            body["model"] = self.model
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    response = self._client.post(self.endpoint, json=body)
                response.raise_for_status()
                return self._parse_score(response.json())
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(min(0.25 * 2**attempt, 2.0))
        raise JudgeTransportError(f"judge request failed after {self.retries + 1} attempts: {last_exc}")

    @staticmethod
    def _parse_score(payload: dict) -> float:
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise JudgeResponseError(f"judge reply missing choices[0].message.content: {payload!r}") from exc
        match = _NUMBER_RE.search(str(content))
        if match is None:
            raise JudgeResponseError(f"no numeric score in judge reply: {content!r}")
        return min(1.0, max(0.0, float(match.group())))


def judge_score(question: str, predicted_answer: str, gt_answer: str, judge) -> float:
    """Score an answer with the given judge client; result clamped to [0, 1]."""
    value = float(judge.score(question, predicted_answer, gt_answer))
    return min(1.0, max(0.0, value))


def progressive_answer_reward(
    s_now: float, sample_id: str, history: JudgeHistory
) -> float:
    """Judge score plus the improvement over the previous group's mean score.

    With no stored history for the sample the progressive term is 0 and
    the raw score is returned.
    """
    if not 0.0 <= s_now <= 1.0:
        raise ValueError(f"judge score {s_now} outside [0, 1]")
    prior = history.read(sample_id)
    if prior is None:
        return s_now
    prior_mean = sum(prior.scores) / len(prior.scores)
    return s_now + (s_now - prior_mean)


def _apply_progressive(s_now: float, prior_mean: float | None) -> float:
    if prior_mean is None:
        return s_now
    return s_now + (s_now - prior_mean)


def _is_full_image_set(bs: BoxSet) -> bool:
    return len(bs) == 1 and bs.boxes[0].is_full_image()


def grounding_reward(t: ReasoningTrace, gt: BoxSet) -> tuple[float, float, float]:
    """Correction-enhanced grounding reward.

    The initial set is the first step's boxes that are not exactly the
    full-image box; the end set is the last step's boxes. The reward is
    the final accuracy plus the improvement over the initial accuracy
    (range [-1, 2]). Returns (r_bbox, s_init, s_end).
    """
    sets = extract_boxsets(t)
    b_end = sets[-1]
    b_ini = next((s for s in sets if not _is_full_image_set(s)), b_end)
    s_end = hiou(b_end, gt)
    s_init = hiou(b_ini, gt)
    return s_end + (s_end - s_init), s_init, s_end


def group_advantages(rewards: list[float], delta: float = 1e-8) -> list[float]:
    """Group-normalized advantages: (r - mean) / (population std + delta)."""
    if not rewards:
        raise ValueError("advantages need at least one reward")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    n = len(rewards)
    if all(r == rewards[0] for r in rewards):
        # Variance is exactly zero; don't let summation roundoff leak
        # through the tiny stabilizer.
        return [0.0] * n
    mean = math.fsum(rewards) / n
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
    return [(r - mean) / (std + delta) for r in rewards]


def _extract_answer_loose(raw: str) -> str | None:
    match = _ANSWER_RE.search(raw)
    return match.group(1) if match else None


def composite_reward(
    raw: str,
    gt: GroundTruthBundle,
    judge,
    weights: RewardWeights = RewardWeights(),
    tolerance: DepthTolerance = DepthTolerance(),
    prior_mean: float | None = None,
) -> RewardBreakdown:
    """Score one completion against its ground truth.

    A failed parse gates the geometric and depth components to 0; the
    answer is still judged on a best-effort ``<answer>`` extraction (0
    when absent, without consulting the judge). ``prior_mean`` is the
    previous group's mean judge score for the progressive term, or None
    on first encounter.
    """
    try:
        trace = parse_trace(raw)
        parse_error = None
    except TraceParseError as exc:
        trace = None
        parse_error = exc.to_dict()

    if trace is not None:
        r_format = 1.0
        r_bbox, s_init, s_end = grounding_reward(trace, gt.boxes)
        r_depth = depth_reward(trace, gt.depth, tolerance)
        s_t = judge_score(gt.question, trace.answer, gt.answer, judge)
        r_ans = _apply_progressive(s_t, prior_mean)
    else:
        r_format = 0.0
        r_bbox = 0.0
        r_depth = 0.0
        s_init = s_end = None
        answer = _extract_answer_loose(raw)
        if answer is None:
            s_t = 0.0
            r_ans = 0.0
        else:
            s_t = judge_score(gt.question, answer, gt.answer, judge)
            r_ans = _apply_progressive(s_t, prior_mean)

    total = (
        weights.w_format * r_format
        + weights.w_ans * r_ans
        + weights.w_bbox * r_bbox
        + weights.w_depth * r_depth
    )
    return RewardBreakdown(
        r_format=r_format,
        r_ans=r_ans,
        r_bbox=r_bbox,
        r_depth=r_depth,
        total=total,
        judge_score=s_t,
        s_init=s_init,
        s_end=s_end,
        parse_error=parse_error,
    )


class RewardEngine:
    """Scores rollout groups and maintains the judge-score history.

    The history is read once per group (for the progressive term) and
    updated once after all completions are scored, so a judge failure
    mid-group leaves the history untouched.
    """

    def __init__(
        self,
        judge,
        weights: RewardWeights = RewardWeights(),
        depth_tolerance: DepthTolerance = DepthTolerance(),
        history: JudgeHistory | None = None,
        stability_delta: float = 1e-8,
    ):
        self.judge = judge
        self.weights = weights
        self.depth_tolerance = depth_tolerance
        self.history = history if history is not None else JudgeHistory()
        self.stability_delta = stability_delta

    def score_group(
        self,
        sample_id: str,
        iteration: int,
        completions: list[str],
        gt: GroundTruthBundle,
        weights: RewardWeights | None = None,
    ) -> tuple[list[RewardBreakdown], GroupScore]:
        if not completions:
            raise ValueError("a rollout group needs at least one completion")
        prior = self.history.read(sample_id)
        if prior is not None and iteration <= prior.iteration:
            raise HistoryConflictError(
                f"iteration {iteration} not above stored {prior.iteration} "
                f"for sample {sample_id!r}"
            )
        prior_mean = sum(prior.scores) / len(prior.scores) if prior else None
        breakdowns = [
            composite_reward(
                raw,
                gt,
                self.judge,
                weights=weights if weights is not None else self.weights,
                tolerance=self.depth_tolerance,
                prior_mean=prior_mean,
            )
            for raw in completions
        ]
        totals = [b.total for b in breakdowns]
        advantages = group_advantages(totals, self.stability_delta)
        self.history.update(sample_id, iteration, [b.judge_score for b in breakdowns])
        return breakdowns, GroupScore(
            group_size=len(completions),
            rewards=tuple(totals),
            advantages=tuple(advantages),
            stability_delta=self.stability_delta,
        )

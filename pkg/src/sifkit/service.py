"""HTTP scoring service and the wire schema shared with the batch CLI.

One POST /v1/score request scores one rollout group (the natural unit of
group-normalized training); batching across samples is the client's loop.
The CLI's ``score`` subcommand and this service funnel through the same
request parsing, scoring, and canonical JSON rendering, so batch and
service scoring of identical inputs are byte-identical.

Error mapping: 400 schema violation, 409 non-monotone iteration, 422
unreadable depth map, 502 judge transport failure.
"""

from __future__ import annotations

import binascii
import json
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__, netpbm
from .depth import DepthMap, DepthTolerance
from .geometry import BBox, BoxSet, InvalidBoxError
from .rewards import (
    GroundTruthBundle,
    HistoryConflictError,
    HttpJudge,
    JudgeError,
    JudgeHistory,
    MockJudge,
    RewardEngine,
    RewardWeights,
)

__all__ = [
    "ServiceConfig",
    "SchemaError",
    "DepthSourceError",
    "ScoreJob",
    "parse_score_request",
    "execute_score",
    "canonical_json",
    "build_engine",
    "create_app",
]


class SchemaError(ValueError):
    """Request body does not match the wire schema."""


class DepthSourceError(ValueError):
    """The referenced or inlined depth map cannot be read."""


@dataclass(frozen=True)
class ServiceConfig:
    """Scoring-service settings.

    Judge endpoint and credential resolve flags > environment
    (SIF_JUDGE_ENDPOINT, SIF_JUDGE_API_KEY) > config file; exactly one of
    ``mock_judge`` or ``judge_endpoint`` must be set.
    """

    host: str = "127.0.0.1"
    port: int = 8077
    mock_judge: bool = False
    judge_endpoint: str | None = None
    judge_api_key: str | None = None
    judge_model: str | None = None
    judge_template_path: str | None = None
    judge_timeout: float = 30.0
    judge_retries: int = 2
    judge_concurrency: int = 8
    weights: RewardWeights = field(default_factory=RewardWeights)
    depth_tolerance: DepthTolerance = field(default_factory=DepthTolerance)
    group_size: int = 8
    stability_delta: float = 1e-8
    history_path: str | None = None

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.stability_delta <= 0.0:
            raise ValueError("stability_delta must be positive")
        if self.judge_concurrency < 1:
            raise ValueError("judge_concurrency must be >= 1")
        if self.mock_judge and self.judge_endpoint:
            raise ValueError("configure either the mock judge or an endpoint, not both")
        if not self.mock_judge and not self.judge_endpoint:
            raise ValueError("a judge is required: set mock_judge or judge_endpoint")


@dataclass(frozen=True)
class ScoreJob:
    """A parsed, validated /v1/score request."""

    sample_id: str
    iteration: int
    completions: tuple[str, ...]
    gt: GroundTruthBundle
    weights: RewardWeights | None = None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaError(message)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_boxes(value) -> BoxSet:
    _require(isinstance(value, list) and value, "ground_truth.boxes must be a nonempty array")
    boxes = []
    for i, coords in enumerate(value):
        _require(
            isinstance(coords, list) and len(coords) == 4 and all(_is_number(c) for c in coords),
            f"ground_truth.boxes[{i}] must be an array of 4 numbers",
        )
        try:
            boxes.append(BBox(*coords))
        except InvalidBoxError as exc:
            raise SchemaError(f"ground_truth.boxes[{i}]: {exc}") from exc
    return BoxSet(tuple(boxes))


def _load_depth_source(spec, base_dir: Path | None) -> DepthMap:
    _require(isinstance(spec, dict), "ground_truth.depth_map must be an object")
    keys = set(spec)
    _require(
        keys in ({"path"}, {"inline_hex"}),
        "ground_truth.depth_map needs exactly one of 'path' or 'inline_hex'",
    )
    if "path" in spec:
        _require(isinstance(spec["path"], str) and spec["path"], "depth_map.path must be a string")
        path = Path(spec["path"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise DepthSourceError(f"cannot read depth map {path}: {exc}") from exc
    else:
        _require(isinstance(spec["inline_hex"], str), "depth_map.inline_hex must be a string")
        try:
            data = binascii.unhexlify(spec["inline_hex"])
        except (binascii.Error, ValueError) as exc:
            raise DepthSourceError(f"inline depth map is not valid hex: {exc}") from exc
    try:
        grid = netpbm.parse_pgm16(data, "depth_map")
    except netpbm.NetpbmError as exc:
        raise DepthSourceError(str(exc)) from exc
    return DepthMap(width=grid.shape[1], height=grid.shape[0], values=grid / 65535.0)


def _parse_weights(value) -> RewardWeights:
    _require(isinstance(value, dict), "weights must be an object")
    allowed = {"w_format", "w_ans", "w_bbox", "w_depth"}
    _require(set(value) <= allowed, f"weights keys must be among {sorted(allowed)}")
    _require(all(_is_number(v) for v in value.values()), "weights values must be numbers")
    try:
        return RewardWeights(**{k: float(v) for k, v in value.items()})
    except ValueError as exc:
        raise SchemaError(f"weights: {exc}") from exc


def parse_score_request(body, base_dir: Path | None = None) -> ScoreJob:
    """Validate a /v1/score body; raises SchemaError or DepthSourceError.

    Relative depth-map paths resolve against ``base_dir`` (the rollouts
    file's directory for batch scoring, the service working directory
    otherwise).
    """
    _require(isinstance(body, dict), "request body must be a JSON object")
    _require(
        set(body) <= {"sample_id", "iteration", "ground_truth", "completions", "weights"},
        "unknown top-level keys in request",
    )
    sample_id = body.get("sample_id")
    _require(isinstance(sample_id, str) and bool(sample_id), "sample_id must be a nonempty string")
    iteration = body.get("iteration")
    _require(isinstance(iteration, int) and not isinstance(iteration, bool), "iteration must be an integer")
    completions = body.get("completions")
    _require(
        isinstance(completions, list) and completions and all(isinstance(c, str) for c in completions),
        "completions must be a nonempty array of strings",
    )
    gt = body.get("ground_truth")
    _require(isinstance(gt, dict), "ground_truth must be an object")
    _require(
        set(gt) <= {"answer", "boxes", "depth_map", "question"},
        "unknown keys in ground_truth",
    )
    answer = gt.get("answer")
    _require(isinstance(answer, str) and bool(answer.strip()), "ground_truth.answer must be nonempty")
    question = gt.get("question", "")
    _require(isinstance(question, str), "ground_truth.question must be a string")
    boxes = _parse_boxes(gt.get("boxes"))
    depth = _load_depth_source(gt.get("depth_map"), base_dir)
    weights = _parse_weights(body["weights"]) if "weights" in body else None
    return ScoreJob(
        sample_id=sample_id,
        iteration=iteration,
        completions=tuple(completions),
        gt=GroundTruthBundle(answer=answer, boxes=boxes, depth=depth, question=question),
        weights=weights,
    )


def execute_score(job: ScoreJob, engine: RewardEngine) -> dict:
    """Score one group; returns the response payload (plain JSON types)."""
    breakdowns, group = engine.score_group(
        job.sample_id, job.iteration, list(job.completions), job.gt, weights=job.weights
    )
    return {
        "rewards": [b.to_dict() for b in breakdowns],
        "advantages": list(group.advantages),
    }


def build_engine(config: ServiceConfig) -> RewardEngine:
    if config.mock_judge:
        judge = MockJudge()
    else:
        template = None
        if config.judge_template_path:
            template = Path(config.judge_template_path).read_text(encoding="utf-8")
        judge = HttpJudge(
            endpoint=config.judge_endpoint,
            api_key=config.judge_api_key,
            model=config.judge_model,
            template=template,
            timeout=config.judge_timeout,
            retries=config.judge_retries,
            max_concurrency=config.judge_concurrency,
        )
    return RewardEngine(
        judge=judge,
        weights=config.weights,
        depth_tolerance=config.depth_tolerance,
        history=JudgeHistory(config.history_path),
        stability_delta=config.stability_delta,
    )


def create_app(config: ServiceConfig, engine: RewardEngine | None = None) -> FastAPI:
    """Build the scoring app; endpoints are sync so the threadpool provides
    request concurrency while the judge gate bounds upstream load."""
    app = FastAPI(title="sifkit scoring service", version=__version__)
    eng = engine if engine is not None else build_engine(config)
    base_dir = Path.cwd()

    @app.exception_handler(RequestValidationError)
    async def _invalid_body(request, exc):  # noqa: ANN001
        return JSONResponse(status_code=400, content={"detail": "request body must be a JSON object"})

    @app.post("/v1/score")
    def score(payload: dict) -> Response:
        try:
            job = parse_score_request(payload, base_dir=base_dir)
        except SchemaError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        except DepthSourceError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        try:
            result = execute_score(job, eng)
        except HistoryConflictError as exc:
            return JSONResponse(status_code=409, content={"detail": str(exc)})
        except JudgeError as exc:
            return JSONResponse(status_code=502, content={"detail": str(exc)})
        return Response(content=canonical_json(result), media_type="application/json")

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/v1/history/{sample_id}")
    def history(sample_id: str):
        snap = eng.history.read(sample_id)
        if snap is None:
            return JSONResponse(status_code=404, content={"detail": f"no history for {sample_id!r}"})
        return {
            "sample_id": sample_id,
            "iteration": snap.iteration,
            "scores": list(snap.scores),
        }

    return app

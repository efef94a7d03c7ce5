"""Typed client for the rollout-group scoring service.

A transport shim only: requests mirror the /v1 wire schema field for
field and no reward math happens client-side, keeping one source of
truth. Transport failures retry idempotently (a replayed group that
already landed surfaces as a duplicate-iteration error, so retries are
detectable, never silently double-applied); HTTP error statuses map to
distinct exception types.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import httpx

__all__ = [
    "ClientError",
    "InvalidRequestError",
    "RequestSchemaError",
    "DuplicateIterationError",
    "DepthMapError",
    "JudgeUpstreamError",
    "TransportError",
    "UnexpectedStatusError",
    "DepthMapRef",
    "GroundTruth",
    "ScoreRequest",
    "RewardBreakdown",
    "ScoreResponse",
    "ScoringClient",
    "score_group",
]


class ClientError(Exception):
    """Base class for scoring-client failures."""


class InvalidRequestError(ClientError, ValueError):
    """Request rejected client-side, before any network call."""


class RequestSchemaError(ClientError):
    """Service rejected the request schema (HTTP 400)."""


class DuplicateIterationError(ClientError):
    """Iteration not above the stored one for this sample (HTTP 409)."""


class DepthMapError(ClientError):
    """Referenced or inlined depth map unreadable (HTTP 422)."""


class JudgeUpstreamError(ClientError):
    """Judge transport failure upstream of the service (HTTP 502)."""


class TransportError(ClientError):
    """Could not reach the service after the configured retries."""


class UnexpectedStatusError(ClientError):
    """Any other non-success status."""

    def __init__(self, status_code: int, detail: str):
        super().__init__(f"unexpected status {status_code}: {detail}")
        self.status_code = status_code


_STATUS_ERRORS: dict[int, type[ClientError]] = {
    400: RequestSchemaError,
    409: DuplicateIterationError,
    422: DepthMapError,
    502: JudgeUpstreamError,
}


@dataclass(frozen=True)
class DepthMapRef:
    """Exactly one of ``path`` (service-visible file) or ``inline_hex``
    (hex-encoded 16-bit PGM bytes)."""

    path: str | None = None
    inline_hex: str | None = None

    def to_wire(self) -> dict:
        if self.path is not None:
            return {"path": self.path}
        return {"inline_hex": self.inline_hex}

    @classmethod
    def from_wire(cls, wire: dict) -> "DepthMapRef":
        return cls(path=wire.get("path"), inline_hex=wire.get("inline_hex"))


@dataclass(frozen=True)
class GroundTruth:
    answer: str
    boxes: tuple[tuple[float, float, float, float], ...]
    depth_map: DepthMapRef
    question: str | None = None

    def to_wire(self) -> dict:
        wire: dict = {
            "answer": self.answer,
            "boxes": [list(b) for b in self.boxes],
            "depth_map": self.depth_map.to_wire(),
        }
        if self.question is not None:
            wire["question"] = self.question
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "GroundTruth":
        return cls(
            answer=wire["answer"],
            boxes=tuple(tuple(b) for b in wire["boxes"]),
            depth_map=DepthMapRef.from_wire(wire["depth_map"]),
            question=wire.get("question"),
        )


@dataclass(frozen=True)
class ScoreRequest:
    sample_id: str
    iteration: int
    ground_truth: GroundTruth
    completions: tuple[str, ...]
    weights: dict[str, float] | None = None

    def validate(self) -> None:
        if not self.sample_id or not isinstance(self.sample_id, str):
            raise InvalidRequestError("sample_id must be a nonempty string")
        if not isinstance(self.iteration, int) or isinstance(self.iteration, bool):
            raise InvalidRequestError("iteration must be an integer")
        if not self.completions or not all(isinstance(c, str) for c in self.completions):
            raise InvalidRequestError("completions must be a nonempty sequence of strings")
        gt = self.ground_truth
        if not gt.answer.strip():
            raise InvalidRequestError("ground_truth.answer must be nonempty")
        if not gt.boxes:
            raise InvalidRequestError("ground_truth.boxes must be nonempty")
        for i, box in enumerate(gt.boxes):
            numeric = all(
                isinstance(c, (int, float)) and not isinstance(c, bool) for c in box
            )
            if len(box) != 4 or not numeric:
                raise InvalidRequestError(f"boxes[{i}] must be 4 numbers")
            x1, y1, x2, y2 = box
            if not (0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1):
                raise InvalidRequestError(f"boxes[{i}] violates 0<=x1<x2<=1, 0<=y1<y2<=1")
        ref = gt.depth_map
        if (ref.path is None) == (ref.inline_hex is None):
            raise InvalidRequestError("depth_map needs exactly one of path or inline_hex")
        if self.weights is not None:
            allowed = {"w_format", "w_ans", "w_bbox", "w_depth"}
            if not set(self.weights) <= allowed:
                raise InvalidRequestError(f"weights keys must be among {sorted(allowed)}")

    def to_wire(self) -> dict:
        wire: dict = {
            "sample_id": self.sample_id,
            "iteration": self.iteration,
            "ground_truth": self.ground_truth.to_wire(),
            "completions": list(self.completions),
        }
        if self.weights is not None:
            wire["weights"] = dict(self.weights)
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "ScoreRequest":
        return cls(
            sample_id=wire["sample_id"],
            iteration=wire["iteration"],
            ground_truth=GroundTruth.from_wire(wire["ground_truth"]),
            completions=tuple(wire["completions"]),
            weights=wire.get("weights"),
        )


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_ans: float
    r_bbox: float
    r_depth: float
    total: float
    diagnostics: dict

    def to_wire(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_ans": self.r_ans,
            "r_bbox": self.r_bbox,
            "r_depth": self.r_depth,
            "total": self.total,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "RewardBreakdown":
        return cls(
            r_format=wire["r_format"],
            r_ans=wire["r_ans"],
            r_bbox=wire["r_bbox"],
            r_depth=wire["r_depth"],
            total=wire["total"],
            diagnostics=wire["diagnostics"],
        )


@dataclass(frozen=True)
class ScoreResponse:
    rewards: tuple[RewardBreakdown, ...]
    advantages: tuple[float, ...]

    def to_wire(self) -> dict:
        return {
            "rewards": [r.to_wire() for r in self.rewards],
            "advantages": list(self.advantages),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "ScoreResponse":
        return cls(
            rewards=tuple(RewardBreakdown.from_wire(r) for r in wire["rewards"]),
            advantages=tuple(wire["advantages"]),
        )


def _raise_for_status(response: httpx.Response) -> None:
    if response.is_success:
        return
    try:
        detail = response.json().get("detail", response.text)
    except ValueError:
        detail = response.text
    err = _STATUS_ERRORS.get(response.status_code)
    if err is not None:
        raise err(detail)
    raise UnexpectedStatusError(response.status_code, str(detail))


@dataclass(frozen=True)
class ScoringClient:
    """Immutable connection settings; safe to share across workers.

    ``timeout`` applies per call and is mandatory by construction.
    """

    endpoint: str
    timeout: float = 30.0
    retries: int = 2
    api_key: str | None = None
    transport: httpx.BaseTransport | None = field(default=None, compare=False)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _request(self, method: str, path: str, **kw) -> httpx.Response:
        url = self.endpoint.rstrip("/") + path
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with httpx.Client(
                    timeout=self.timeout,
                    headers=self._headers(),
                    transport=self.transport,
                ) as client:
                    return client.request(method, url, **kw)
            except httpx.TransportError as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(min(0.2 * 2**attempt, 2.0))
        raise TransportError(f"{method} {url} failed after {self.retries + 1} attempts: {last_exc}")

    def score_group(self, request: ScoreRequest) -> ScoreResponse:
        """Score one rollout group. Validates locally, posts, maps errors."""
        request.validate()
        response = self._request("POST", "/v1/score", json=request.to_wire())
        _raise_for_status(response)
        return ScoreResponse.from_wire(response.json())

    def score_group_raw(self, request: ScoreRequest) -> bytes:
        """Like score_group but returns the exact response bytes, for
        callers that need byte-level agreement with batch scoring."""
        request.validate()
        response = self._request("POST", "/v1/score", json=request.to_wire())
        _raise_for_status(response)
        return response.content

    def health(self) -> dict:
        response = self._request("GET", "/v1/health")
        _raise_for_status(response)
        return response.json()

    def history(self, sample_id: str) -> dict:
        response = self._request("GET", f"/v1/history/{sample_id}")
        _raise_for_status(response)
        return response.json()


def score_group(
    endpoint: str,
    request: ScoreRequest,
    retries: int = 2,
    timeout: float = 30.0,
    api_key: str | None = None,
) -> ScoreResponse:
    """One-shot convenience wrapper around :class:`ScoringClient`."""
    client = ScoringClient(endpoint=endpoint, timeout=timeout, retries=retries, api_key=api_key)
    return client.score_group(request)

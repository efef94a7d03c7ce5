"""Client SDK for the sifkit rollout-group scoring service."""

__version__ = "0.1.0"

from .client import (
    ClientError,
    DepthMapError,
    DepthMapRef,
    DuplicateIterationError,
    GroundTruth,
    InvalidRequestError,
    JudgeUpstreamError,
    RequestSchemaError,
    RewardBreakdown,
    ScoreRequest,
    ScoreResponse,
    ScoringClient,
    TransportError,
    UnexpectedStatusError,
    score_group,
)

__all__ = [
    "__version__",
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

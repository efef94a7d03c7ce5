"""sifkit: rewards and data generation for spatially grounded reasoning traces.

The library scores interleaved box+depth reasoning traces (format,
hierarchical-IoU grounding with a correction bonus, depth consistency,
judge-scored progressive answer quality), normalizes rewards into
group-relative advantages, and fabricates coarse-to-fine focus scaffolds
and training records from annotated sources.
"""

__version__ = "0.1.0"

from .depth import DepthMap, DepthTolerance, depth_reward, load_depth_map, region_depth
from .geometry import (
    BBox,
    BoxSet,
    EmptyBoxSetError,
    InvalidBoxError,
    MatchResult,
    giou,
    hiou,
    iou,
    match_boxes,
    piou,
    union_area,
)
from .rewards import (
    GroundTruthBundle,
    GroupScore,
    JudgeHistory,
    MockJudge,
    RewardBreakdown,
    RewardEngine,
    RewardWeights,
    composite_reward,
    group_advantages,
    grounding_reward,
    progressive_answer_reward,
)
from .scaffold import FocusTrajectory, ScaffoldConfig, build_scaffold
from .trace import (
    Diagnostic,
    FocusStep,
    ReasoningTrace,
    TraceParseError,
    extract_boxsets,
    format_reward,
    parse_trace,
    serialize_trace,
)

__all__ = [
    "__version__",
    "BBox",
    "BoxSet",
    "MatchResult",
    "InvalidBoxError",
    "EmptyBoxSetError",
    "iou",
    "union_area",
    "giou",
    "match_boxes",
    "piou",
    "hiou",
    "Diagnostic",
    "TraceParseError",
    "FocusStep",
    "ReasoningTrace",
    "parse_trace",
    "serialize_trace",
    "format_reward",
    "extract_boxsets",
    "ScaffoldConfig",
    "FocusTrajectory",
    "build_scaffold",
    "DepthMap",
    "DepthTolerance",
    "load_depth_map",
    "region_depth",
    "depth_reward",
    "RewardWeights",
    "RewardBreakdown",
    "GroupScore",
    "GroundTruthBundle",
    "JudgeHistory",
    "MockJudge",
    "RewardEngine",
    "composite_reward",
    "grounding_reward",
    "progressive_answer_reward",
    "group_advantages",
]

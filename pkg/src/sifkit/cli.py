"""Operator CLI: dataset generation, batch scoring, validation, metrics, service.

Exit codes: 0 success, 2 validation or configuration failure, 1 runtime
error. Judge configuration resolves flags > environment
(SIF_JUDGE_ENDPOINT, SIF_JUDGE_API_KEY) > JSON config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .datagen import HttpCompleter, MockCompleter, generate_dataset
from .depth import DepthTolerance
from .geometry import BoxSet, hiou
from .rewards import HistoryConflictError, JudgeError, RewardWeights
from .scaffold import ScaffoldConfig
from .service import (
    DepthSourceError,
    SchemaError,
    ServiceConfig,
    build_engine,
    canonical_json,
    create_app,
    execute_score,
    parse_score_request,
)
from .trace import TraceParseError, parse_trace

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


class ConfigError(ValueError):
    pass


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _resolve_judge(args, file_cfg: dict) -> tuple[bool, str | None, str | None]:
    """Returns (mock, endpoint, api_key) honoring flags > env > file."""
    if args.mock_judge and args.judge_endpoint:
        raise ConfigError("--mock-judge conflicts with --judge-endpoint")
    if args.mock_judge:
        return True, None, None
    endpoint = (
        args.judge_endpoint
        or os.environ.get("SIF_JUDGE_ENDPOINT")
        or file_cfg.get("judge_endpoint")
    )
    api_key = (
        args.judge_api_key
        or os.environ.get("SIF_JUDGE_API_KEY")
        or file_cfg.get("judge_api_key")
    )
    if file_cfg.get("mock_judge") and not endpoint:
        return True, None, None
    if not endpoint:
        raise ConfigError("no judge configured: pass --mock-judge or --judge-endpoint")
    return False, endpoint, api_key


def _weights_from_args(args) -> RewardWeights:
    return RewardWeights(
        w_format=args.w_format,
        w_ans=args.w_ans,
        w_bbox=args.w_bbox,
        w_depth=args.w_depth,
    )


def _add_judge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mock-judge", action="store_true", help="score answers with the lexical mock judge")
    p.add_argument("--judge-endpoint", help="chat-completion-style judge endpoint URL")
    p.add_argument("--judge-api-key", help="bearer credential for the judge endpoint")
    p.add_argument("--judge-model", help="model name forwarded to the judge endpoint")
    p.add_argument("--judge-template", help="prompt template file overriding the built-in one")
    p.add_argument("--judge-concurrency", type=int, default=8)
    p.add_argument("--config", help="JSON config file (lowest-precedence settings)")


def _add_weight_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w-format", type=float, default=1.0)
    p.add_argument("--w-ans", type=float, default=1.0)
    p.add_argument("--w-bbox", type=float, default=1.0)
    p.add_argument("--w-depth", type=float, default=1.0)
    p.add_argument("--depth-threshold", type=float, default=0.1)
    p.add_argument("--depth-gt-floor", type=float, default=1e-3)
    p.add_argument("--delta", type=float, default=1e-8, help="advantage stability constant")


def _service_config(args, history_path: str | None) -> ServiceConfig:
    file_cfg = _load_config_file(getattr(args, "config", None))
    mock, endpoint, api_key = _resolve_judge(args, file_cfg)
    host, port = "127.0.0.1", 8077
    listen = getattr(args, "listen", None) or file_cfg.get("listen")
    if listen:
        host, _, port_str = listen.rpartition(":")
        if not host or not port_str.isdigit():
            raise ConfigError(f"--listen must be HOST:PORT, got {listen!r}")
        port = int(port_str)
    return ServiceConfig(
        host=host,
        port=port,
        mock_judge=mock,
        judge_endpoint=endpoint,
        judge_api_key=api_key,
        judge_model=args.judge_model,
        judge_template_path=args.judge_template,
        judge_concurrency=args.judge_concurrency,
        weights=_weights_from_args(args),
        depth_tolerance=DepthTolerance(threshold=args.depth_threshold, gt_floor=args.depth_gt_floor),
        group_size=getattr(args, "group_size", 8),
        stability_delta=args.delta,
        history_path=history_path,
    )


def cmd_datagen(args) -> int:
    if args.mock_completer and args.completer_endpoint:
        raise ConfigError("--mock-completer conflicts with --completer-endpoint")
    if args.completer_endpoint:
        completer = HttpCompleter(
            endpoint=args.completer_endpoint,
            api_key=args.completer_api_key,
            model=args.completer_model,
        )
    elif args.mock_completer:
        completer = MockCompleter()
    else:
        raise ConfigError("no completer configured: pass --mock-completer or --completer-endpoint")
    cfg = ScaffoldConfig(
        expansion_steps=args.expansion_steps,
        area_tolerance=args.area_tolerance,
        max_distractors=args.max_distractors,
        seed=args.seed,
    )
    report = generate_dataset(args.input, args.out_dir, cfg, completer)
    print(
        f"processed={report.processed} emitted={report.emitted} rejected={report.rejected}"
    )
    if report.emitted == 0:
        print("error: no records emitted", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_score(args) -> int:
    config = _service_config(args, args.history)
    engine = build_engine(config)
    rollouts = Path(args.rollouts)
    base_dir = rollouts.parent
    out_path = Path(args.out)
    groups = 0
    with rollouts.open("r", encoding="utf-8") as fh, out_path.open("w", encoding="utf-8") as out:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                body = json.loads(line)
            except json.JSONDecodeError as exc:
                print(f"error: {rollouts}:{lineno}: invalid JSON: {exc.msg}", file=sys.stderr)
                return EXIT_INVALID
            try:
                job = parse_score_request(body, base_dir=base_dir)
                result = execute_score(job, engine)
            except (SchemaError, DepthSourceError, HistoryConflictError) as exc:
                print(f"error: {rollouts}:{lineno}: {exc}", file=sys.stderr)
                return EXIT_INVALID
            out.write(canonical_json(result) + "\n")
            groups += 1
    print(f"scored {groups} group(s) -> {out_path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    raw = Path(args.trace_file).read_text(encoding="utf-8")
    try:
        trace = parse_trace(raw)
    except TraceParseError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True))
        return EXIT_INVALID
    print(f"valid: {len(trace.steps)} step(s), answer {trace.answer.strip()!r}")
    return EXIT_OK


def _boxset_from_file(path: str) -> BoxSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a JSON array of [x1, y1, x2, y2] boxes")
    return BoxSet.from_coords(data)


def cmd_hiou(args) -> int:
    pred = _boxset_from_file(args.pred)
    gt = _boxset_from_file(args.gt)
    print(hiou(pred, gt))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    config = _service_config(args, args.history)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sifkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sifkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate training records from a source JSONL")
    p.add_argument("--input", required=True, help="source JSONL of annotated records")
    p.add_argument("--out-dir", required=True, help="output directory for records and overlays")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--expansion-steps", type=int, default=5)
    p.add_argument("--area-tolerance", type=float, default=0.2)
    p.add_argument("--max-distractors", type=int, default=2)
    p.add_argument("--mock-completer", action="store_true")
    p.add_argument("--completer-endpoint")
    p.add_argument("--completer-api-key")
    p.add_argument("--completer-model")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("score", help="score a rollout-group JSONL")
    p.add_argument("--rollouts", required=True, help="JSONL of score requests, one group per line")
    p.add_argument("--out", required=True, help="output JSONL of breakdowns and advantages")
    p.add_argument("--history", help="judge-history JSONL (read and appended)")
    _add_judge_flags(p)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("validate", help="check a trace file against the grammar")
    p.add_argument("trace_file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("hiou", help="hierarchical IoU between two box-set files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_hiou)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--listen", help="HOST:PORT (default 127.0.0.1:8077)")
    p.add_argument("--history", help="judge-history JSONL (read and appended)")
    p.add_argument("--group-size", type=int, default=8)
    _add_judge_flags(p)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except JudgeError as exc:
        print(f"error: judge failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main(argv=None))

"""End-to-end client tests against a locally launched scoring service.

The service runs as a subprocess of the primary package's CLI; the client
talks to it over HTTP only. A second service with an unreachable judge
exercises the 502 path.
"""

import json
import socket
import struct
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest

from sifclient import (
    DepthMapError,
    DepthMapRef,
    DuplicateIterationError,
    GroundTruth,
    InvalidRequestError,
    JudgeUpstreamError,
    RequestSchemaError,
    ScoreRequest,
    ScoreResponse,
    ScoringClient,
    TransportError,
    score_group,
)

VALID_TRACE = (
    '<think><area>[{"bbox":[0.1,0.1,0.5,0.5],"depth":0.5}]</area>'
    "<text>look</text></think><answer>dark red</answer>"
)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def write_depth_pgm(path: Path, width=4, height=4, value=32768) -> Path:
    samples = [value] * (width * height)
    header = f"P5\n{width} {height}\n65535\n".encode()
    path.write_bytes(header + struct.pack(f">{len(samples)}H", *samples))
    return path


def launch_service(tmp: Path, port: int, extra_args=()) -> subprocess.Popen:
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "sifkit.cli",
            "serve",
            "--listen",
            f"127.0.0.1:{port}",
            "--history",
            str(tmp / f"history_{port}.jsonl"),
            *extra_args,
        ],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    deadline = time.monotonic() + 15
    url = f"http://127.0.0.1:{port}/v1/health"
    while time.monotonic() < deadline:
        try:
            if httpx.get(url, timeout=1.0).status_code == 200:
                return proc
        except httpx.TransportError:
            time.sleep(0.1)
    proc.terminate()
    raise RuntimeError("service did not come up")


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("svc")
    port = free_port()
    proc = launch_service(tmp, port, ["--mock-judge"])
    yield f"http://127.0.0.1:{port}"
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture(scope="module")
def broken_judge_service(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("svc-broken")
    port = free_port()
    proc = launch_service(
        tmp, port, ["--judge-endpoint", "http://127.0.0.1:9/dead"]
    )
    yield f"http://127.0.0.1:{port}"
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture(scope="module")
def depth_file(tmp_path_factory) -> Path:
    return write_depth_pgm(tmp_path_factory.mktemp("depth") / "d.pgm")


def make_request(depth_file, sample_id="s1", iteration=1, completions=None):
    return ScoreRequest(
        sample_id=sample_id,
        iteration=iteration,
        ground_truth=GroundTruth(
            answer="dark red",
            boxes=((0.1, 0.1, 0.5, 0.5),),
            depth_map=DepthMapRef(path=str(depth_file)),
        ),
        completions=tuple(completions or [VALID_TRACE, "garbage", VALID_TRACE]),
    )


class TestRoundTrip:
    def test_matches_cli_byte_for_byte(self, service, depth_file, tmp_path):
        request = make_request(depth_file, sample_id="parity", iteration=1)
        rollouts = tmp_path / "g.jsonl"
        rollouts.write_text(json.dumps(request.to_wire()) + "\n")
        out = tmp_path / "cli.jsonl"
        subprocess.run(
            [
                sys.executable,
                "-m",
                "sifkit.cli",
                "score",
                "--rollouts",
                str(rollouts),
                "--out",
                str(out),
                "--mock-judge",
            ],
            check=True,
            capture_output=True,
        )
        cli_bytes = out.read_bytes().rstrip(b"\n")

        client = ScoringClient(endpoint=service, timeout=10.0)
        raw = client.score_group_raw(request)
        assert raw == cli_bytes

        parsed = ScoreResponse.from_wire(json.loads(raw))
        assert parsed == client.score_group(
            make_request(depth_file, sample_id="parity2", iteration=1)
        )

    def test_response_values(self, service, depth_file):
        response = score_group(
            service, make_request(depth_file, sample_id="vals"), timeout=10.0
        )
        assert len(response.rewards) == 3
        assert len(response.advantages) == 3
        assert response.rewards[0].r_format == 1.0
        assert response.rewards[1].r_format == 0.0
        assert abs(sum(response.advantages)) <= 1e-9

    def test_history_visible_after_scoring(self, service, depth_file):
        client = ScoringClient(endpoint=service, timeout=10.0)
        client.score_group(make_request(depth_file, sample_id="hist", iteration=3))
        snap = client.history("hist")
        assert snap["iteration"] == 3
        assert len(snap["scores"]) == 3

    def test_health(self, service):
        assert ScoringClient(endpoint=service, timeout=5.0).health()["status"] == "ok"


class TestErrorMapping:
    def test_400_schema(self, service, depth_file):
        # Bypass local validation to prove the service-side mapping.
        from sifclient.client import _raise_for_status

        wire = make_request(depth_file, sample_id="schema").to_wire()
        wire["completions"] = []
        response = httpx.post(f"{service}/v1/score", json=wire, timeout=10.0)
        assert response.status_code == 400
        with pytest.raises(RequestSchemaError):
            _raise_for_status(response)

    def test_409_duplicate_iteration(self, service, depth_file):
        client = ScoringClient(endpoint=service, timeout=10.0)
        client.score_group(make_request(depth_file, sample_id="dup", iteration=1))
        with pytest.raises(DuplicateIterationError):
            client.score_group(make_request(depth_file, sample_id="dup", iteration=1))

    def test_422_depth_map(self, service, tmp_path):
        client = ScoringClient(endpoint=service, timeout=10.0)
        with pytest.raises(DepthMapError):
            client.score_group(make_request(tmp_path / "missing.pgm", sample_id="d422"))

    def test_502_judge_upstream(self, broken_judge_service, depth_file):
        client = ScoringClient(endpoint=broken_judge_service, timeout=30.0)
        with pytest.raises(JudgeUpstreamError):
            client.score_group(make_request(depth_file, sample_id="j502"))

    def test_errors_are_distinct_types(self):
        kinds = {RequestSchemaError, DuplicateIterationError, DepthMapError, JudgeUpstreamError}
        assert len(kinds) == 4
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)


class TestClientSideValidation:
    def test_empty_completions_rejected_before_network(self, depth_file):
        client = ScoringClient(endpoint="http://127.0.0.1:1", timeout=1.0)
        request = make_request(depth_file, completions=[VALID_TRACE])
        bad = ScoreRequest(
            sample_id=request.sample_id,
            iteration=request.iteration,
            ground_truth=request.ground_truth,
            completions=(),
        )
        with pytest.raises(InvalidRequestError):
            client.score_group(bad)  # would be TransportError if it hit the wire

    def test_bad_box_rejected(self, depth_file):
        request = make_request(depth_file)
        bad_gt = GroundTruth(
            answer="a",
            boxes=((0.5, 0.5, 0.1, 0.9),),
            depth_map=DepthMapRef(path=str(depth_file)),
        )
        bad = ScoreRequest("s", 1, bad_gt, (VALID_TRACE,))
        with pytest.raises(InvalidRequestError):
            bad.validate()

    def test_depth_ref_exactly_one_source(self, depth_file):
        gt = GroundTruth(
            answer="a",
            boxes=((0.1, 0.1, 0.5, 0.5),),
            depth_map=DepthMapRef(path=str(depth_file), inline_hex="00"),
        )
        with pytest.raises(InvalidRequestError):
            ScoreRequest("s", 1, gt, (VALID_TRACE,)).validate()


class TestTransport:
    def test_unreachable_raises_transport_error(self, depth_file):
        client = ScoringClient(endpoint="http://127.0.0.1:1", timeout=0.3, retries=1)
        with pytest.raises(TransportError):
            client.score_group(make_request(depth_file))

    def test_retries_then_succeeds(self, depth_file):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] == 1:
                raise httpx.ConnectError("flaky")
            return httpx.Response(
                200,
                json={
                    "rewards": [
                        {
                            "r_format": 1.0,
                            "r_ans": 1.0,
                            "r_bbox": 1.0,
                            "r_depth": 1.0,
                            "total": 4.0,
                            "diagnostics": {},
                        }
                    ],
                    "advantages": [0.0],
                },
            )

        client = ScoringClient(
            endpoint="http://svc.test",
            timeout=1.0,
            retries=2,
            transport=httpx.MockTransport(handler),
        )
        response = client.score_group(make_request(depth_file, completions=[VALID_TRACE]))
        assert calls["n"] == 2
        assert response.advantages == (0.0,)


class TestWireRoundTrip:
    def test_request_encode_decode_identity(self, depth_file):
        for request in [
            make_request(depth_file),
            ScoreRequest(
                "s",
                2,
                GroundTruth(
                    answer="two words",
                    boxes=((0.1, 0.2, 0.3, 0.4), (0.5, 0.5, 0.9, 0.8)),
                    depth_map=DepthMapRef(inline_hex="00ff"),
                    question="what?",
                ),
                (VALID_TRACE,),
                weights={"w_depth": 2.0},
            ),
        ]:
            wire = request.to_wire()
            assert ScoreRequest.from_wire(wire).to_wire() == wire

    def test_response_encode_decode_identity(self):
        wire = {
            "rewards": [
                {
                    "r_format": 1.0,
                    "r_ans": 0.5,
                    "r_bbox": -0.25,
                    "r_depth": 0.0,
                    "total": 1.25,
                    "diagnostics": {"judge_score": 0.5, "s_init": None, "s_end": 0.75, "parse_error": None},
                }
            ],
            "advantages": [0.0],
        }
        assert ScoreResponse.from_wire(wire).to_wire() == wire

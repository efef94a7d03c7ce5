import json
import random
from pathlib import Path

import httpx
import numpy as np
import pytest

from sifkit import netpbm
from sifkit.datagen import (
    CompletionError,
    HttpCompleter,
    MockCompleter,
    complete_cot,
    generate_dataset,
    load_source_records,
    render_overlays,
)
from sifkit.depth import depth_reward, load_depth_map
from sifkit.fixtures import make_fixture
from sifkit.geometry import BoxSet
from sifkit.rewards import grounding_reward
from sifkit.scaffold import ScaffoldConfig, build_scaffold
from sifkit.trace import format_reward, parse_trace


@pytest.fixture(scope="module")
def corpus(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("fixture")
    return make_fixture(root, n_records=10, seed=7)


class TestLoadSourceRecords:
    def test_all_valid(self, corpus):
        items = list(load_source_records(corpus))
        assert len(items) == 10
        assert all(not isinstance(rec, str) for _, rec in items)

    def test_bad_box_rejected_with_line(self, tmp_path):
        good = {
            "id": "ok",
            "image_path": "i.ppm",
            "depth_path": "d.pgm",
            "question": "?",
            "answer": "a",
            "gt_boxes": [[0.1, 0.1, 0.5, 0.5]],
        }
        bad = dict(good, id="bad", gt_boxes=[[0.5, 0.1, 0.2, 0.5]])  # x2 < x1
        p = tmp_path / "src.jsonl"
        p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
        items = list(load_source_records(p))
        assert not isinstance(items[0][1], str)
        assert isinstance(items[1][1], str)
        assert items[1][0] == 2

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        assert list(load_source_records(p)) == []

    def test_invalid_json_line(self, tmp_path):
        p = tmp_path / "src.jsonl"
        p.write_text("{not json}\n")
        [(lineno, reason)] = list(load_source_records(p))
        assert lineno == 1 and "invalid JSON" in reason

    def test_coordinates_quantized_to_millis(self, tmp_path):
        rec = {
            "id": "q",
            "image_path": "i.ppm",
            "depth_path": "d.pgm",
            "question": "?",
            "answer": "a",
            "gt_boxes": [[0.123456, 0.2, 0.59999999, 0.9]],
        }
        p = tmp_path / "src.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        [(_, record)] = list(load_source_records(p))
        assert record.gt_boxes.boxes[0].as_tuple() == (0.123, 0.2, 0.6, 0.9)

    def test_unsafe_id_rejected(self, tmp_path):
        rec = {
            "id": "../evil",
            "image_path": "i.ppm",
            "depth_path": "d.pgm",
            "question": "?",
            "answer": "a",
            "gt_boxes": [[0.1, 0.1, 0.5, 0.5]],
        }
        p = tmp_path / "src.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        [(_, reason)] = list(load_source_records(p))
        assert isinstance(reason, str)

    def test_missing_depth_rejected(self, tmp_path):
        rec = {
            "id": "nodepth",
            "image_path": "i.ppm",
            "question": "?",
            "answer": "a",
            "gt_boxes": [[0.1, 0.1, 0.5, 0.5]],
        }
        p = tmp_path / "src.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        [(_, reason)] = list(load_source_records(p))
        assert isinstance(reason, str) and "depth_path" in reason


class TestRenderOverlays:
    def make_image(self, path, w=40, h=30):
        netpbm.write_ppm(path, np.zeros((h, w, 3), dtype=np.uint8))

    def test_one_frame_per_set_with_naming(self, tmp_path):
        self.make_image(tmp_path / "img.ppm")
        traj = build_scaffold(
            BoxSet.from_coords([(0.2, 0.2, 0.6, 0.6)]),
            ScaffoldConfig(max_distractors=0),
            random.Random(0),
        )
        out = render_overlays(tmp_path / "img.ppm", traj, tmp_path / "ov", "rec1")
        assert [p.name for p in out] == [f"rec1_step{k}.ppm" for k in range(len(traj.sets))]

    def test_unit_box_hugs_border(self, tmp_path):
        self.make_image(tmp_path / "img.ppm", w=20, h=20)
        traj = build_scaffold(
            BoxSet.from_coords([(0.0, 0.0, 1.0, 1.0)]),
            ScaffoldConfig(max_distractors=0),
            random.Random(0),
        )
        out = render_overlays(tmp_path / "img.ppm", traj, tmp_path / "ov", "u")
        pixels = netpbm.read_ppm(out[0])
        assert tuple(pixels[0, 0]) == (255, 0, 0)
        assert tuple(pixels[-1, -1]) == (255, 0, 0)
        assert tuple(pixels[10, 10]) == (0, 0, 0)  # interior untouched

    def test_deterministic_bytes(self, tmp_path):
        self.make_image(tmp_path / "img.ppm")
        traj = build_scaffold(
            BoxSet.from_coords([(0.3, 0.3, 0.7, 0.7)]),
            ScaffoldConfig(max_distractors=0),
            random.Random(0),
        )
        a = render_overlays(tmp_path / "img.ppm", traj, tmp_path / "a", "r")
        b = render_overlays(tmp_path / "img.ppm", traj, tmp_path / "b", "r")
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_degenerate_box_keeps_minimum_outline(self, tmp_path):
        self.make_image(tmp_path / "img.ppm", w=10, h=10)
        traj = build_scaffold(
            BoxSet.from_coords([(0.5, 0.5, 0.52, 0.52)]),
            ScaffoldConfig(max_distractors=0),
            random.Random(0),
        )
        out = render_overlays(tmp_path / "img.ppm", traj, tmp_path / "ov", "tiny")
        pixels = netpbm.read_ppm(out[-1])  # final frame = the tiny gt box
        assert (pixels == (255, 0, 0)).all(axis=-1).sum() >= 9


class TestCompleteCot:
    def setup_record(self, tmp_path):
        src = make_fixture(tmp_path, n_records=1, seed=3)
        [(_, record)] = list(load_source_records(src))
        depth = load_depth_map(tmp_path / record.depth_path)
        traj = build_scaffold(record.gt_boxes, ScaffoldConfig(seed=1), random.Random(1))
        return record, traj, depth

    def test_mock_output_is_valid(self, tmp_path):
        record, traj, depth = self.setup_record(tmp_path)
        text = complete_cot(record, traj, depth, MockCompleter())
        assert format_reward(text) == 1.0
        trace = parse_trace(text)
        assert len(trace.steps) == len(traj.sets)
        final = sorted(b.as_tuple() for b, _ in trace.steps[-1].regions)
        assert final == sorted(b.as_tuple() for b in record.gt_boxes)

    def test_mock_depths_pass_consistency(self, tmp_path):
        record, traj, depth = self.setup_record(tmp_path)
        text = complete_cot(record, traj, depth, MockCompleter())
        assert depth_reward(parse_trace(text), depth) == 1.0

    def test_invalid_completion_rejected_after_retries(self, tmp_path):
        record, traj, depth = self.setup_record(tmp_path)

        class Broken:
            calls = 0

            def complete(self, *a, **kw):
                Broken.calls += 1
                return "not a trace"

        with pytest.raises(CompletionError):
            complete_cot(record, traj, depth, Broken(), attempts=3)
        assert Broken.calls == 3

    def test_wrong_final_boxes_rejected(self, tmp_path):
        record, traj, depth = self.setup_record(tmp_path)
        wrong = (
            '<think><area>[{"bbox":[0.9,0.9,0.95,0.95],"depth":0.5}]</area>'
            "<text>t</text></think><answer>a</answer>"
        )

        class Wrong:
            def complete(self, *a, **kw):
                return wrong

        with pytest.raises(CompletionError):
            complete_cot(record, traj, depth, Wrong(), attempts=2)

    def test_http_completer_round_trip(self, tmp_path):
        record, traj, depth = self.setup_record(tmp_path)
        valid = MockCompleter().complete(record, traj, depth, [])

        def handler(request):
            body = json.loads(request.content)
            content = body["messages"][0]["content"]
            assert content[0]["type"] == "text"
            assert record.question in content[0]["text"]
            return httpx.Response(200, json={"choices": [{"message": {"content": valid}}]})

        completer = HttpCompleter("http://cot.test/v1/chat", transport=httpx.MockTransport(handler))
        got = complete_cot(record, traj, depth, completer)
        assert got == valid


class TestGenerateDataset:
    def test_full_run(self, corpus, tmp_path):
        report = generate_dataset(corpus, tmp_path / "out", ScaffoldConfig(seed=42), MockCompleter())
        assert (report.processed, report.emitted, report.rejected) == (10, 10, 0)
        lines = (tmp_path / "out" / "sif_records.jsonl").read_text().splitlines()
        assert len(lines) == 10
        for line in lines:
            rec = json.loads(line)
            assert format_reward(rec["cot"]) == 1.0
            trace = parse_trace(rec["cot"])
            gt = BoxSet.from_coords(rec["gt_boxes"])
            _, _, s_end = grounding_reward(trace, gt)
            assert s_end == pytest.approx(1.0)
        assert (tmp_path / "out" / "run_report.json").exists()

    def test_seed_determinism_byte_identical(self, corpus, tmp_path):
        generate_dataset(corpus, tmp_path / "a", ScaffoldConfig(seed=42), MockCompleter())
        generate_dataset(corpus, tmp_path / "b", ScaffoldConfig(seed=42), MockCompleter())
        a = (tmp_path / "a" / "sif_records.jsonl").read_bytes()
        b = (tmp_path / "b" / "sif_records.jsonl").read_bytes()
        assert a == b
        for pa in sorted((tmp_path / "a" / "overlays").iterdir()):
            pb = tmp_path / "b" / "overlays" / pa.name
            assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_changes_output(self, corpus, tmp_path):
        generate_dataset(corpus, tmp_path / "a", ScaffoldConfig(seed=42), MockCompleter())
        generate_dataset(corpus, tmp_path / "b", ScaffoldConfig(seed=43), MockCompleter())
        a = (tmp_path / "a" / "sif_records.jsonl").read_bytes()
        b = (tmp_path / "b" / "sif_records.jsonl").read_bytes()
        assert a != b

    def test_bad_record_isolated(self, corpus, tmp_path):
        # Written next to the fixture so relative asset paths still resolve.
        src = corpus.parent / "src_with_bad.jsonl"
        lines = Path(corpus).read_text().splitlines()
        broken = json.loads(lines[0])
        broken["id"] = "brokenimg"
        broken["image_path"] = "images/missing.ppm"
        src.write_text("\n".join([json.dumps(broken)] + lines[1:]) + "\n")
        report = generate_dataset(src, tmp_path / "out", ScaffoldConfig(seed=1), MockCompleter())
        assert report.processed == 10
        assert report.emitted == 9
        assert report.rejected == 1
        assert report.rejections[0]["id"] == "brokenimg"

    def test_counts_add_up(self, corpus, tmp_path):
        report = generate_dataset(corpus, tmp_path / "out", ScaffoldConfig(seed=1), MockCompleter())
        assert report.emitted + report.rejected == report.processed

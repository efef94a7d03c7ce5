import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_max_total, raster_giou, raster_union_area
from sifkit.geometry import (
    BBox,
    BoxSet,
    EmptyBoxSetError,
    InvalidBoxError,
    assign_max_total,
    giou,
    hiou,
    iou,
    match_boxes,
    piou,
    union_area,
)

from conftest import random_boxset, random_milli_box


def boxes(*coords):
    return BoxSet.from_coords(coords)


class TestBBox:
    def test_valid(self):
        b = BBox(0.1, 0.2, 0.3, 0.4)
        assert b.area == pytest.approx(0.2 * 0.2)

    @pytest.mark.parametrize(
        "coords",
        [
            (0.3, 0.3, 0.2, 0.9),  # x2 < x1
            (0.0, 0.0, 0.0, 1.0),  # zero width
            (0.5, 0.5, 0.5, 0.5),  # zero area
            (-0.1, 0.0, 0.5, 0.5),  # negative coordinate
            (0.0, 0.0, 1.2, 1.0),  # above 1
        ],
    )
    def test_rejects_degenerate(self, coords):
        with pytest.raises(InvalidBoxError):
            BBox(*coords)

    def test_rejects_non_numeric(self):
        with pytest.raises(InvalidBoxError):
            BBox("a", 0.0, 1.0, 1.0)


class TestIou:
    def test_identity(self):
        b = BBox(0, 0, 0.5, 0.5)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 0.4, 0.4), BBox(0.6, 0.6, 1, 1)) == 0.0

    def test_partial_overlap(self):
        # intersection 0.0625, union 0.4375 (cross-checked by rasterization)
        got = iou(BBox(0, 0, 0.5, 0.5), BBox(0.25, 0.25, 0.75, 0.75))
        assert got == pytest.approx(0.0625 / 0.4375, abs=1e-12)

    def test_symmetry(self):
        rng = random.Random(1)
        for _ in range(50):
            a, b = random_milli_box(rng), random_milli_box(rng)
            assert iou(a, b) == iou(b, a)

    def test_touching_edges_is_zero(self):
        assert iou(BBox(0, 0, 0.5, 1), BBox(0.5, 0, 1, 1)) == 0.0


class TestUnionArea:
    def test_partition_of_unit_square(self):
        assert union_area(boxes((0, 0, 0.5, 1), (0.5, 0, 1, 1))) == pytest.approx(1.0)

    def test_duplicate_absorption(self):
        assert union_area(boxes((0, 0, 1, 1), (0, 0, 1, 1))) == pytest.approx(1.0)

    def test_inclusion_exclusion(self):
        got = union_area(boxes((0, 0, 0.5, 0.5), (0.25, 0.25, 0.75, 0.75)))
        assert got == pytest.approx(0.4375, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyBoxSetError):
            union_area(BoxSet(()))

    def test_against_rasterization(self):
        rng = random.Random(7)
        for _ in range(100):
            s = random_boxset(rng)
            exact = union_area(s)
            approx = raster_union_area([b.as_tuple() for b in s], 1000)
            assert abs(exact - approx) <= 2e-3


class TestGiou:
    def test_identity(self):
        s = boxes((0.1, 0.1, 0.6, 0.6))
        assert giou(s, s) == pytest.approx(1.0)

    def test_half_coverage(self):
        pred = boxes((0, 0, 0.5, 0.5))
        gt = boxes((0, 0, 0.5, 0.5), (0.5, 0.5, 1, 1))
        assert giou(pred, gt) == pytest.approx(0.5, abs=1e-12)

    def test_empty_pred_scores_zero(self):
        assert giou(BoxSet(()), boxes((0, 0, 1, 1))) == 0.0

    def test_empty_gt_rejected(self):
        with pytest.raises(EmptyBoxSetError):
            giou(boxes((0, 0, 1, 1)), BoxSet(()))

    def test_against_rasterization(self):
        rng = random.Random(11)
        for _ in range(100):
            pred, gt = random_boxset(rng), random_boxset(rng)
            exact = giou(pred, gt)
            approx = raster_giou(
                [b.as_tuple() for b in pred], [b.as_tuple() for b in gt], 1000
            )
            assert abs(exact - approx) <= 2e-3


class TestMatching:
    def test_identity_pair(self):
        s = boxes((0.2, 0.2, 0.6, 0.6))
        result = match_boxes(s, s)
        assert result.pairs == ((0, 0, 1.0),)
        assert result.total == pytest.approx(1.0)

    def test_known_matrix(self):
        # [[0.6, 0.1], [0.5, 0.4]] -> diagonal, total 1.0 (2! enumeration)
        pairs, total = assign_max_total(np.array([[0.6, 0.1], [0.5, 0.4]]))
        assert pairs == [(0, 0), (1, 1)]
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_rectangular_cardinality(self):
        pred = boxes((0, 0, 0.3, 0.3), (0.4, 0.4, 0.7, 0.7), (0.8, 0.8, 1, 1))
        gt = boxes((0, 0, 0.3, 0.3), (0.4, 0.4, 0.7, 0.7))
        result = match_boxes(pred, gt)
        assert len(result.pairs) == 2
        pred_idx = [p for p, _, _ in result.pairs]
        gt_idx = [g for _, g, _ in result.pairs]
        assert len(set(pred_idx)) == 2 and len(set(gt_idx)) == 2

    def test_total_is_sum_of_pairs(self):
        rng = random.Random(3)
        for _ in range(50):
            pred, gt = random_boxset(rng), random_boxset(rng)
            result = match_boxes(pred, gt)
            assert result.total == pytest.approx(
                sum(v for _, _, v in result.pairs), abs=1e-12
            )

    def test_optimal_against_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n, m = rng.integers(1, 7), rng.integers(1, 7)
            matrix = rng.random((n, m))
            _, total = assign_max_total(matrix)
            assert total == pytest.approx(brute_force_max_total(matrix), abs=1e-9)

    def test_tie_break_lowest_index(self):
        # All-equal scores: every assignment optimal; expect the diagonal.
        pairs, _ = assign_max_total(np.full((3, 3), 0.5))
        assert pairs == [(0, 0), (1, 1), (2, 2)]

    def test_tie_break_is_lexicographic_minimum(self):
        # Among optimal assignments the reported pairing must be the
        # lexicographically smallest; checked by full enumeration on
        # score matrices quantized to force ties.
        import itertools

        def brute_lex_min(scores):
            n, m = scores.shape
            size = min(n, m)
            best_total, best_pairs = -1.0, []
            for rows in itertools.combinations(range(n), size):
                for cols in itertools.permutations(range(m), size):
                    t = sum(scores[r, c] for r, c in zip(rows, cols))
                    pairs = sorted(zip(rows, cols))
                    if t > best_total + 1e-12:
                        best_total, best_pairs = t, [pairs]
                    elif abs(t - best_total) <= 1e-12:
                        best_pairs.append(pairs)
            return min(best_pairs), best_total

        rng = np.random.default_rng(0)
        for _ in range(100):
            n, m = rng.integers(1, 5), rng.integers(1, 5)
            scores = np.round(rng.random((n, m)) * 4) / 4
            got_pairs, got_total = assign_max_total(scores)
            exp_pairs, exp_total = brute_lex_min(scores)
            assert abs(got_total - exp_total) < 1e-9
            assert got_pairs == exp_pairs

    def test_empty_rejected(self):
        with pytest.raises(EmptyBoxSetError):
            match_boxes(BoxSet(()), boxes((0, 0, 1, 1)))

    def test_box_level_total_beats_every_permutation(self):
        import itertools

        rng = random.Random(19)
        for _ in range(30):
            pred = random_boxset(rng, max_boxes=4)
            gt = random_boxset(rng, max_boxes=4)
            total = match_boxes(pred, gt).total
            n, m = len(pred), len(gt)
            size = min(n, m)
            for rows in itertools.combinations(range(n), size):
                for cols in itertools.permutations(range(m), size):
                    alt = sum(iou(pred.boxes[r], gt.boxes[c]) for r, c in zip(rows, cols))
                    assert total >= alt - 1e-9


class TestPiou:
    def test_identity(self):
        s = boxes((0.1, 0.1, 0.4, 0.4), (0.5, 0.5, 0.9, 0.9))
        assert piou(s, s) == pytest.approx(1.0)

    def test_disjoint_pair(self):
        assert piou(boxes((0, 0, 0.2, 0.2)), boxes((0.8, 0.8, 1, 1))) == 0.0

    def test_mean_over_min_cardinality(self):
        pred = boxes((0, 0, 0.5, 0.5))
        gt = boxes((0, 0, 0.5, 0.5), (0.5, 0.5, 1, 1))
        assert piou(pred, gt) == pytest.approx(1.0)


class TestHiou:
    def test_identity(self):
        s = boxes((0.1, 0.2, 0.4, 0.5), (0.6, 0.6, 0.9, 0.8))
        assert hiou(s, s) == pytest.approx(1.0)

    def test_half_plus_perfect_pair(self):
        pred = boxes((0, 0, 0.5, 0.5))
        gt = boxes((0, 0, 0.5, 0.5), (0.5, 0.5, 1, 1))
        assert hiou(pred, gt) == pytest.approx(0.75, abs=1e-12)

    def test_disjoint_is_zero(self):
        assert hiou(boxes((0, 0, 0.2, 0.2)), boxes((0.8, 0.8, 1, 1))) == 0.0

    def test_empty_pred(self):
        assert hiou(BoxSet(()), boxes((0, 0, 1, 1))) == 0.0

    def test_symmetry(self):
        rng = random.Random(13)
        for _ in range(50):
            p, g = random_boxset(rng), random_boxset(rng)
            assert hiou(p, g) == pytest.approx(hiou(g, p), abs=1e-12)

    def test_reward_hacking_ordering(self):
        # One tight box on a two-object ground truth must score strictly
        # below the exact two-box prediction.
        gt = boxes((0, 0, 0.4, 0.4), (0.6, 0.6, 1, 1))
        lazy = boxes((0, 0, 0.4, 0.4))
        exact = boxes((0, 0, 0.4, 0.4), (0.6, 0.6, 1, 1))
        assert hiou(exact, gt) == pytest.approx(1.0)
        assert hiou(lazy, gt) < hiou(exact, gt)

    def test_permutation_invariance(self):
        rng = random.Random(17)
        for _ in range(20):
            p, g = random_boxset(rng, max_boxes=4), random_boxset(rng, max_boxes=4)
            p2 = BoxSet(tuple(reversed(p.boxes)))
            g2 = BoxSet(tuple(reversed(g.boxes)))
            assert hiou(p, g) == pytest.approx(hiou(p2, g2), abs=1e-12)


@st.composite
def milli_boxsets(draw, max_boxes=4):
    n = draw(st.integers(1, max_boxes))
    out = []
    for _ in range(n):
        x1 = draw(st.integers(0, 990))
        y1 = draw(st.integers(0, 990))
        x2 = draw(st.integers(x1 + 10, 1000))
        y2 = draw(st.integers(y1 + 10, 1000))
        out.append((x1 / 1000, y1 / 1000, x2 / 1000, y2 / 1000))
    return BoxSet.from_coords(out)


@settings(max_examples=60, deadline=None)
@given(p=milli_boxsets(), g=milli_boxsets())
def test_metric_bounds_and_symmetry(p, g):
    for value in (giou(p, g), piou(p, g), hiou(p, g)):
        assert 0.0 <= value <= 1.0
    assert hiou(p, g) == pytest.approx(hiou(g, p), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(s=milli_boxsets())
def test_hiou_identity_property(s):
    assert hiou(s, s) == pytest.approx(1.0, abs=1e-12)
    assert union_area(s) <= 1.0 + 1e-12
    assert union_area(s) >= max(b.area for b in s) - 1e-12

"""Flow-based pseudo-label pipeline: maps, candidates, DP selection, quality."""

import itertools

import numpy as np
import pytest

from difftrack.core import BinaryMask, BoundingBox, diou, iou
from difftrack.pseudolabel import (
    CandidateBox,
    FlowField,
    QualityReport,
    binarize,
    boxes_from_mask,
    flow_distance_map,
    label_video,
    quality_filter,
    score_box,
    select_sequence,
)


def brute_force_select(per_frame, gamma):
    """Enumerate every path in lexicographic order; replace only on strict gain."""
    best_total, best_path = None, None
    for path in itertools.product(*[range(len(c)) for c in per_frame]):
        boxes = [per_frame[t][i].box for t, i in enumerate(path)]
        total = sum(per_frame[t][i].score for t, i in enumerate(path))
        total += gamma * sum(diou(boxes[t - 1], boxes[t]) for t in range(1, len(boxes)))
        if best_total is None or total > best_total:
            best_total, best_path = total, boxes
    return best_path


# --- flow distance map ------------------------------------------------------


def test_uniform_flow_gives_zero_map():
    f = FlowField(np.full((12, 9, 2), 3.7))
    np.testing.assert_allclose(flow_distance_map(f), 0.0, atol=1e-12)


def test_moving_square_matches_closed_form():
    h = w = 40
    v = np.zeros((h, w, 2))
    v[10:20, 10:20, 0] = 4.0
    frac = 100.0 / (h * w)
    d = flow_distance_map(FlowField(v))
    np.testing.assert_allclose(d[10:20, 10:20], 4.0 * (1 - frac), atol=1e-10)
    outside = d.copy()
    outside[10:20, 10:20] = np.nan
    np.testing.assert_allclose(outside[np.isfinite(outside)], 4.0 * frac, atol=1e-10)
    assert d.min() >= 0


def test_flow_validation():
    with pytest.raises(ValueError):
        FlowField(np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        FlowField(np.full((4, 4, 2), np.nan))


# --- binarization -----------------------------------------------------------


def test_binarize_relative_threshold():
    d = np.array([[0.0, 2.9], [3.0, 10.0]])
    m = binarize(d, 0.3)
    np.testing.assert_array_equal(m.values, [[0, 0], [1, 1]])


def test_binarize_zero_map_stays_zero():
    m = binarize(np.zeros((5, 5)))
    assert m.area == 0


def test_binarize_two_level_exact():
    d = np.where(np.arange(16).reshape(4, 4) % 2 == 0, 1.0, 5.0)
    m = binarize(d, 0.5)
    np.testing.assert_array_equal(m.values, (np.arange(16).reshape(4, 4) % 2 == 1))


def test_binarize_absolute_mode_and_validation():
    d = np.array([[1.0, 4.0]])
    np.testing.assert_array_equal(binarize(d, 2.0, relative=False).values, [[0, 1]])
    with pytest.raises(ValueError):
        binarize(d, 0.0)
    with pytest.raises(ValueError):
        binarize(d, 1.5)
    with pytest.raises(ValueError):
        binarize(np.array([[-1.0]]), 0.3)


# --- candidate boxes --------------------------------------------------------


def test_score_box_center_and_sigma():
    dims = (200, 100)  # sigma = 25
    centered = BoundingBox(40, 90, 20, 20)
    assert score_box(centered, dims) == 1.0
    offset = BoundingBox(40 + 25, 90, 20, 20)  # center moved by exactly sigma
    np.testing.assert_allclose(score_box(offset, dims), np.exp(-0.5), atol=1e-12)
    scores = [score_box(BoundingBox(40 + dx, 90, 20, 20), dims) for dx in (0, 5, 10, 20, 40)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_candidate_box_validation():
    with pytest.raises(ValueError):
        CandidateBox(BoundingBox(0, 0, 7, 7), 0.5)  # 49 px
    with pytest.raises(ValueError):
        CandidateBox(BoundingBox(0, 0, 70, 10), 0.5)  # aspect 7
    CandidateBox(BoundingBox(0, 0, 60, 10), 0.5)  # aspect 6 passes


def test_boxes_from_mask_filters():
    m = np.zeros((100, 120), dtype=np.uint8)
    m[10:20, 10:20] = 1     # 100 px, kept
    m[40:45, 40:45] = 1     # 25 px, dropped
    m[60:70, 30:100] = 1    # aspect 7, dropped
    cands = boxes_from_mask(BinaryMask(m))
    assert len(cands) == 1
    assert cands[0].box == BoundingBox(10.0, 10.0, 10.0, 10.0)
    np.testing.assert_allclose(cands[0].score,
                               score_box(cands[0].box, (100, 120)), atol=1e-12)


def test_boxes_from_mask_component_pixels_not_box_pixels():
    m = np.zeros((60, 60), dtype=np.uint8)
    m[10:20, 10:20] = 1
    m[10, 10:15] = 0  # carve the component below 100 but above 50 pixels
    cands = boxes_from_mask(BinaryMask(m), min_area=96)
    assert cands == []
    assert len(boxes_from_mask(BinaryMask(m), min_area=90)) == 1


def test_boxes_from_mask_separates_diagonal_components():
    m = np.zeros((64, 64), dtype=np.uint8)
    m[5:15, 5:15] = 1
    m[15:25, 15:25] = 1  # touches only at a corner: separate under 4-connectivity
    cands = boxes_from_mask(BinaryMask(m))
    assert len(cands) == 2
    assert cands[0].box == BoundingBox(5.0, 5.0, 10.0, 10.0)


# --- trajectory selection ---------------------------------------------------


def cand(x, y, w, h, score):
    return CandidateBox(BoundingBox(x, y, w, h), score)


def test_single_candidate_per_frame_is_forced():
    frames = [[cand(10 * t, 0, 10, 10, 0.5)] for t in range(4)]
    got = select_sequence(frames)
    assert got == [c[0].box for c in frames]


def test_gamma_zero_is_per_frame_argmax():
    frames = [
        [cand(0, 0, 10, 10, 0.2), cand(50, 50, 10, 10, 0.9)],
        [cand(0, 0, 10, 10, 0.8), cand(50, 50, 10, 10, 0.3)],
    ]
    got = select_sequence(frames, gamma=0.0)
    assert got == [frames[0][1].box, frames[1][0].box]


def test_ties_pick_earliest_candidate():
    a, b = cand(0, 0, 10, 10, 0.5), cand(40, 40, 10, 10, 0.5)
    assert select_sequence([[a, b]]) == [a.box]
    # two optimal paths (a, a) and (b, b); the earlier-indexed one wins
    got = select_sequence([[a, b], [a, b]])
    assert got == [a.box, a.box]


def test_select_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    sizes = [8, 10, 14, 20, 30]
    for _ in range(25):
        n_frames = int(rng.integers(1, 5))
        frames = []
        for _ in range(n_frames):
            cands = []
            for _ in range(int(rng.integers(1, 5))):
                w, h = rng.choice(sizes, size=2)
                cands.append(cand(float(rng.integers(0, 80)), float(rng.integers(0, 80)),
                                  float(w), float(h), float(rng.uniform(0, 1))))
            frames.append(cands)
        gamma = float(rng.choice([0.0, 1.0, 4.1]))
        assert select_sequence(frames, gamma) == brute_force_select(frames, gamma)


def test_empty_frames_carry_previous_selection():
    a = cand(10, 10, 10, 10, 0.9)
    b = cand(12, 12, 10, 10, 0.8)
    got = select_sequence([[a], [], [b]])
    assert got == [a.box, a.box, b.box]


def test_leading_empty_frames_backfill():
    a = cand(10, 10, 10, 10, 0.9)
    got = select_sequence([[], [], [a]])
    assert got == [a.box, a.box, a.box]


def test_all_empty_frames_error():
    with pytest.raises(ValueError):
        select_sequence([[], [], []])
    with pytest.raises(ValueError):
        select_sequence([])


# --- quality filter ---------------------------------------------------------


def test_quality_all_point_nine():
    box = BoundingBox(100, 100, 20, 20)
    s = 0.9 * 5.1 - 4.1  # with perfect overlap, quality lands exactly on 0.9
    rep = quality_filter([box] * 3, [s] * 3)
    np.testing.assert_allclose(rep.qualities, 0.9, atol=1e-12)
    np.testing.assert_allclose(rep.video_score, 0.9, atol=1e-12)
    assert rep.keep
    assert rep.frame_weights == (1.0, 1.0, 1.0)


def test_quality_low_video_discarded():
    boxes = [BoundingBox(60.0 * t, 60.0 * t, 10, 10) for t in range(4)]
    rep = quality_filter(boxes, [0.0] * 4)
    assert rep.video_score < 0.4
    assert not rep.keep


def test_quality_mixed_hand_case():
    b0 = BoundingBox(100, 100, 20, 20)
    b2 = BoundingBox(200, 200, 20, 20)
    rep = quality_filter([b0, b0, b2], [0.9, 0.0, 0.5])
    # frame 0: (0.9 + 4.1) / 5.1; frame 1: 4.1 / 5.1
    # frame 2: disjoint, center gap^2 / enclosing diag^2 = 25/36,
    #          (0.5 - 4.1 * 25/36) / 5.1 < 0, clipped
    np.testing.assert_allclose(rep.qualities, (5.0 / 5.1, 4.1 / 5.1, 0.0), atol=1e-12)
    np.testing.assert_allclose(rep.video_score, (5.0 / 5.1 + 4.1 / 5.1) / 3, atol=1e-12)
    assert rep.keep
    assert rep.frame_weights == (1.0, 1.0, 0.0)


def test_quality_frame_weight_bands():
    box = BoundingBox(50, 50, 20, 20)
    # with d = 1 fixed, invert the quality formula for each target band
    targets = [0.39, 0.42, 0.46]
    scores = [q * 5.1 - 4.1 for q in targets]
    reps = [quality_filter([box], [s]) for s in scores]
    assert [r.frame_weights[0] for r in reps] == [0.0, 0.5, 1.0]


def test_quality_validation():
    with pytest.raises(ValueError):
        quality_filter([BoundingBox(0, 0, 10, 10)], [0.5, 0.5])
    with pytest.raises(ValueError):
        quality_filter([], [])


# --- full pipeline ----------------------------------------------------------


def planted_flows(path, size=256, side=40, velocity=(6.0, 3.0)):
    flows, boxes = [], []
    for x, y in path:
        f = np.zeros((size, size, 2))
        f[y:y + side, x:x + side] = velocity
        flows.append(FlowField(f))
        boxes.append(BoundingBox(float(x), float(y), float(side), float(side)))
    return flows, boxes


def test_label_video_recovers_planted_trajectory():
    path = [(80 + 10 * t, 90 + 6 * t) for t in range(6)]
    flows, planted = planted_flows(path)
    got, report = label_video(flows)
    ious = [iou(a, b) for a, b in zip(got, planted)]
    assert np.mean(ious) >= 0.9
    assert report.keep
    assert len(report.qualities) == 6

    again, _ = label_video(flows)
    assert again == got


def test_label_video_validation():
    with pytest.raises(ValueError):
        label_video([])
    flows, _ = planted_flows([(80, 80)])
    other = FlowField(np.zeros((64, 64, 2)))
    with pytest.raises(ValueError):
        label_video([flows[0], other])

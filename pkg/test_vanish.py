"""Vertical-prior vanishing points: proposals, scoring, refinement, classification"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import DegenerateClusterError, UnderdeterminedError
from geometry import CameraIntrinsics, Pose, Segment2D, line_angle_deg
from vanish import (
    HORIZONTAL_0,
    HORIZONTAL_1,
    PROPOSAL_COUNT,
    UNSTRUCTURED,
    VERTICAL,
    VPTolerances,
    classify_segments,
    estimate_frame,
    generate_proposals,
    horizontal_seed,
    refine_vp,
    score_proposal,
    vp_direction,
    vp_residual,
)

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
D_V = np.array([0.2, -0.9, 0.4]) / np.linalg.norm([0.2, -0.9, 0.4])
PLANTED_INDEX = 37


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def image_point(d):
    x = K.matrix @ d
    return x[:2] / x[2]


def segment_towards(p, target, length=60.0):
    p = np.asarray(p, dtype=float)
    u = unit(np.asarray(target) - p)
    return Segment2D(p, p + length * u)


def planted_frame(rng, per_axis=8):
    """Camera whose axes are exactly proposal PLANTED_INDEX; segments above the horizon"""
    dirs = generate_proposals(D_V)[PLANTED_INDEX - 1].dirs
    pose = Pose(np.column_stack([dirs[1], dirs[2], dirs[0]]), np.zeros(3))
    segments, truth = [], []
    for label, d in zip((VERTICAL, "h-a", "h-b"), dirs):
        vp = image_point(d)
        for _ in range(per_axis):
            p = rng.uniform([0.0, 0.0], [640.0, 300.0])
            segments.append(segment_towards(p, vp))
            truth.append(label)
    return pose, dirs, segments, truth


def test_horizontal_seed_examples():
    assert_allclose(horizontal_seed([0, 0, 1]), [1, 0, 0])
    assert_allclose(horizontal_seed([1, 0, 0]), [0, -1, 0], atol=1e-15)


def test_horizontal_seed_is_orthogonal():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d_v = unit(rng.normal(size=3))
        assert abs(horizontal_seed(d_v) @ d_v) < 1e-12


def test_generate_proposals_are_orthonormal():
    rng = np.random.default_rng(1)
    d_v = unit(rng.normal(size=3))
    proposals = generate_proposals(d_v)
    assert len(proposals) == PROPOSAL_COUNT == 360
    assert [p.theta_index for p in proposals] == list(range(1, 361))
    for p in proposals:
        m = np.column_stack(p.dirs)
        assert_allclose(m.T @ m, np.eye(3), atol=1e-9)
        assert_allclose(p.dirs[0], d_v)


def test_proposals_repeat_every_quarter_turn():
    proposals = generate_proposals(D_V)
    for i in (1, 45, 200):
        a = proposals[i - 1].dirs
        b = proposals[i + 89].dirs
        assert line_angle_deg(a[1], b[2]) < 1e-6
        assert line_angle_deg(a[2], b[1]) < 1e-6


def test_score_proposal_perfect_consistency():
    rng = np.random.default_rng(2)
    _, _, segments, _ = planted_frame(rng)
    planted = generate_proposals(D_V)[PLANTED_INDEX - 1]
    assert score_proposal(planted, segments, K, 2.0) == len(segments)


def test_score_proposal_rotated_away():
    rng = np.random.default_rng(3)
    _, dirs, _, _ = planted_frame(rng)
    horizontal = [
        segment_towards(rng.uniform([0.0, 0.0], [640.0, 300.0]), image_point(d))
        for d in (dirs[1], dirs[2])
        for _ in range(20)
    ]
    rotated = generate_proposals(D_V)[PLANTED_INDEX + 45 - 1]
    assert score_proposal(rotated, horizontal, K, 2.0) <= len(horizontal) // 4


def test_score_proposal_empty():
    assert score_proposal(generate_proposals(D_V)[0], [], K, 2.0) == 0


def test_refine_vp_through_planted_point():
    rng = np.random.default_rng(4)
    target = np.array([100.0, 200.0])
    cluster = []
    for angle in rng.uniform(0, math.pi, size=6):
        u = np.array([math.cos(angle), math.sin(angle)])
        cluster.append(Segment2D(target + 50 * u, target + 80 * u))
    x = refine_vp(cluster)
    assert np.linalg.norm(x) == pytest.approx(1.0)
    assert x[2] > 0
    assert_allclose(x[:2] / x[2], target, atol=1e-6)
    assert vp_residual(cluster, x) < 1e-9


def test_refine_vp_two_segments():
    x = refine_vp([Segment2D([0.0, 0.0], [0.5, 0.5]), Segment2D([0.0, 2.0], [0.5, 1.5])])
    assert_allclose(x[:2] / x[2], [1.0, 1.0], atol=1e-12)


def test_refine_vp_parallel_segments():
    x = refine_vp([Segment2D([0.0, 0.0], [1.0, 0.0]), Segment2D([0.0, 1.0], [2.0, 1.0])])
    assert_allclose(x, [1.0, 0.0, 0.0], atol=1e-12)


def test_refine_vp_errors():
    with pytest.raises(UnderdeterminedError):
        refine_vp([Segment2D([0.0, 0.0], [1.0, 1.0])])
    with pytest.raises(DegenerateClusterError):
        refine_vp([Segment2D([0.0, 0.0], [1.0, 1.0]), Segment2D([2.0, 2.0], [3.0, 3.0])])


def test_refine_vp_ignores_endpoint_order():
    rng = np.random.default_rng(5)
    target = np.array([-250.0, 40.0])
    cluster = [segment_towards(p, target) for p in rng.uniform(0, 400, size=(5, 2))]
    swapped = [Segment2D(seg.e, seg.s) for seg in cluster]
    assert_allclose(refine_vp(swapped), refine_vp(cluster), atol=1e-12)


def test_refined_residual_not_worse_than_coarse():
    rng = np.random.default_rng(6)
    target = np.array([300.0, -500.0])
    cluster = []
    for p in rng.uniform(0, 400, size=(10, 2)):
        seg = segment_towards(p, target)
        cluster.append(Segment2D(seg.s + rng.normal(size=2), seg.e + rng.normal(size=2)))
    refined = refine_vp(cluster)
    coarse = np.append(target + [5.0, -3.0], 1.0)
    assert vp_residual(cluster, refined) <= vp_residual(cluster, coarse)
    assert vp_residual(cluster, refined) <= vp_residual(cluster, np.append(target, 1.0))


VPS = [np.array([100.0, 200.0, 1.0]), np.array([-300.0, 50.0, 1.0]), np.array([0.0, 1.0, 0.0])]


def test_classify_segments_examples():
    segments = [
        Segment2D([150.0, 250.0], [200.0, 300.0]),
        Segment2D([0.0, 0.0], [10.0, 1.0]),
        Segment2D([5.0, 0.0], [5.0, 10.0]),
    ]
    classes = classify_segments(segments, VPS, 3.0, ids=["a", "b", "c"])
    assert classes == {"a": HORIZONTAL_0, "b": UNSTRUCTURED, "c": VERTICAL}


def test_classify_segments_edge_cases():
    assert classify_segments([], VPS, 3.0) == {}
    seg = Segment2D([150.0, 250.0], [200.0, 300.0])
    assert classify_segments([seg], [], 3.0) == {0: UNSTRUCTURED}


def test_classify_segments_with_pixel_noise():
    rng = np.random.default_rng(7)
    vps = [np.array([100.0, 100.0, 1.0]), np.array([600.0, 120.0, 1.0]), np.array([320.0, 450.0, 1.0])]
    labels = (HORIZONTAL_0, HORIZONTAL_1, VERTICAL)
    segments, truth = [], []
    for label, vp in zip(labels, vps):
        for _ in range(70):
            angle = rng.uniform(0, 2 * math.pi)
            u = np.array([math.cos(angle), math.sin(angle)])
            near = vp[:2] + 30 * u + rng.normal(size=2)
            far = vp[:2] + 150 * u + rng.normal(size=2)
            segments.append(Segment2D(far, near))
            truth.append(label)
    classes = classify_segments(segments, vps, 3.0, labels)
    correct = sum(classes[i] == label for i, label in enumerate(truth))
    assert correct >= 0.95 * len(truth)


def test_estimate_frame_planted_scene():
    rng = np.random.default_rng(8)
    pose, dirs, segments, truth = planted_frame(rng)
    result = estimate_frame(segments, [0.0, 0.0, 1.0], pose, K, VPTolerances())

    assert result.proposal_count == 360
    assert result.best_index % 90 == PLANTED_INDEX
    assert set(result.vps) == {VERTICAL, HORIZONTAL_0, HORIZONTAL_1}
    for d in dirs:
        expected = image_point(d)
        closest = min(result.vps.values(), key=lambda vp: line_angle_deg(vp_direction(vp, K), d))
        assert line_angle_deg(vp_direction(closest, K), d) < 1e-6
        assert_allclose(closest[:2] / closest[2], expected, rtol=1e-9, atol=1e-6)

    by_truth = {}
    for i, label in enumerate(truth):
        by_truth.setdefault(label, set()).add(result.classes[i])
    assert by_truth[VERTICAL] == {VERTICAL}
    assert {tuple(v) for k, v in by_truth.items() if k != VERTICAL} == {(HORIZONTAL_0,), (HORIZONTAL_1,)}


def test_estimate_frame_all_vertical():
    rng = np.random.default_rng(9)
    pose, dirs, _, _ = planted_frame(rng)
    vertical_vp = image_point(dirs[0])
    segments = [segment_towards(p, vertical_vp) for p in rng.uniform([0.0, 0.0], [640.0, 300.0], size=(12, 2))]
    result = estimate_frame(segments, [0.0, 0.0, 1.0], pose, K)
    assert set(result.vps) == {VERTICAL}
    assert set(result.classes.values()) == {VERTICAL}
    assert len(result.classes) == 12


def test_estimate_frame_pure_noise():
    rng = np.random.default_rng(10)
    pose, _, _, _ = planted_frame(rng)
    segments = []
    for p in rng.uniform([0.0, 0.0], [640.0, 480.0], size=(10, 2)):
        angle = rng.uniform(0, math.pi)
        segments.append(Segment2D(p, p + 40 * np.array([math.cos(angle), math.sin(angle)])))
    tight = VPTolerances(angle_tol_deg=0.01, dist_tol=0.01, min_cluster_size=3)
    result = estimate_frame(segments, [0.0, 0.0, 1.0], pose, K, tight)
    assert result.vps == {}
    assert set(result.classes.values()) == {UNSTRUCTURED}


def test_estimate_frame_without_segments():
    result = estimate_frame([], [0.0, 0.0, 1.0], Pose.identity(), K)
    assert result.proposal_count == 360
    assert result.vps == {}
    assert result.classes == {}
    assert result.best_index is None

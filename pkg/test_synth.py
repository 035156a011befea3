"""Synthetic scenes, metrics and the parameterization benchmark"""
import math

import numpy as np
import pytest

from axes import AxisPolicy
from ba import LMConfig, Stage, build_layout, evaluate_cost, linearize, solve
from config import RUN_BENCH
from errors import MismatchError
from geometry import PluckerLine, Pose, plucker_from_point_direction
from storage import scene_to_json
from synth import (
    PARAMETERIZATIONS,
    SCENARIOS,
    BenchRow,
    SceneConfig,
    aggregate,
    build_graph,
    error_l,
    generate_scene,
    graph_lines,
    ground_truth_graph,
    run_benchmark,
    trans_rmse,
)

SMALL = SceneConfig(lines_per_axis=8, n_points=20, n_poses=5)
EXACT = dict(
    axis_angular_spread_deg=0.0,
    pixel_noise_sigma=0.0,
    line_init_angle_deg=0.0,
    line_init_depth_ratio=0.0,
    point_init_noise=0.0,
    small_pose_noise=(0.0, 0.0),
    large_pose_noise=(0.0, 0.0),
)
bench_only = pytest.mark.skipif(not RUN_BENCH, reason="set AXISLINE_RUN_BENCH=1 for benchmark ordering checks")


def zero_noise(**overrides) -> SceneConfig:
    params = {**SMALL.__dict__, **EXACT, **overrides}
    return SceneConfig(**params)


def test_scene_is_deterministic():
    a = generate_scene(SMALL, "small", 4)
    b = generate_scene(SMALL, "small", 4)
    assert scene_to_json(a) == scene_to_json(b)
    assert scene_to_json(generate_scene(SMALL, "small", 5)) != scene_to_json(a)


def test_scenarios_share_ground_truth():
    small = generate_scene(SMALL, "small", 2)
    large = generate_scene(SMALL, "large", 2)
    for line_id, line in small.lines_true.items():
        assert np.array_equal(line.as_vector(), large.lines_true[line_id].as_vector())
    assert [o.segment.s.tolist() for o in small.segment_obs] == [o.segment.s.tolist() for o in large.segment_obs]


def test_gauge_and_fixed_scenario():
    scene = generate_scene(SMALL, "small", 0)
    assert scene.fixed_poses == {0}
    assert scene.poses_init[0] is scene.poses_true[0]
    fixed = generate_scene(SMALL, "fixed", 0)
    assert fixed.fixed_poses == set(fixed.poses_true)


def test_every_line_seen_in_front_of_cameras():
    scene = generate_scene(SMALL, "small", 1)
    assert {o.line_id for o in scene.segment_obs} == set(scene.lines_true)
    for obs in scene.segment_obs:
        assert obs.segment.length >= 1.0


@pytest.mark.parametrize("param", PARAMETERIZATIONS)
def test_zero_noise_initial_cost_is_zero(param):
    scene = generate_scene(zero_noise(), "small", 0)
    assert evaluate_cost(build_graph(scene, param)) < 1e-15


def test_pixel_noise_level():
    stds = []
    for seed in range(10):
        scene = generate_scene(SMALL, "small", seed)
        r = linearize(ground_truth_graph(scene), LMConfig(huber_width=None)).residuals
        stds.append(math.sqrt(np.mean(r ** 2)))
    assert np.mean(stds) == pytest.approx(1.0, rel=0.1)


def test_graph_parameter_counts():
    scene = generate_scene(zero_noise(), "small", 0)
    n = len(scene.lines_true)
    counts = {param: build_layout(build_graph(scene, param)).counts() for param in PARAMETERIZATIONS}
    assert counts["3p"]["line_related"] == n + 2 * 3
    assert counts["4p"]["line_related"] == 4 * n
    assert counts["2p"]["line_related"] == 2 * n
    graph = build_graph(scene, "3p")
    assert all(v.stage is Stage.AXIS_ANCHORED for v in graph.lines.values())
    assert all(len(axis.member_lines) == 8 for axis in graph.axes.values())


def test_unassociated_lines_start_on_vp_directions():
    scene = generate_scene(zero_noise(line_init_angle_deg=1.0), "fixed", 3)
    graph = build_graph(scene, "3p", AxisPolicy(gate_angle_deg=0.01))
    graph.validate()
    first = {i: v for i, v in graph.lines.items() if v.stage is Stage.INITIAL_TEMP_AXIS}
    assert len(first) >= len(graph.lines) // 3
    close = 0
    for line_id, vertex in first.items():
        truth = scene.axes_true[scene.line_axis[line_id]]
        close += abs(vertex.temp_dir @ truth) > math.cos(math.radians(1.0))
        assert vertex.solves == 0
    assert close >= 0.9 * len(first)
    assert all(v.stage in (Stage.INITIAL_TEMP_AXIS, Stage.ORTHO_FALLBACK) for v in graph.lines.values())


def test_unknown_parameterization():
    scene = generate_scene(SMALL, "small", 0)
    with pytest.raises(ValueError):
        build_graph(scene, "5p")
    with pytest.raises(ValueError):
        generate_scene(SMALL, "huge", 0)


def test_error_l_examples():
    line = plucker_from_point_direction([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    assert error_l({0: line}, {0: line}) == 0.0
    scaled = PluckerLine(7 * line.n, 7 * line.v)
    assert error_l({0: scaled}, {0: line}) == pytest.approx(0.0, abs=1e-15)
    flipped = PluckerLine(-line.n, -line.v)
    assert error_l({0: flipped}, {0: line}) == pytest.approx(0.0, abs=1e-15)

    a = math.radians(1.0)
    c, s = math.cos(a), math.sin(a)
    rotated = plucker_from_point_direction([0.0, 1.0, 0.0], [c, s, 0.0])
    q = 1.0 / math.sqrt(1.0 + c * c)
    expected = math.sqrt(2 * (c * q - 1 / math.sqrt(2)) ** 2 + (s * q) ** 2)
    assert error_l({0: rotated}, {0: line}) == pytest.approx(expected, abs=1e-12)

    with pytest.raises(MismatchError):
        error_l({0: line}, {1: line})


def test_error_l_is_stable_when_a_direction_component_crosses_zero():
    line = plucker_from_point_direction([1.0, 0.0, 0.0], [0.0, 0.6, 0.8])
    for tilt in (1e-9, -1e-9, 1e-4, -1e-4):
        near = plucker_from_point_direction([1.0, 0.0, 0.0], [tilt, 0.6, 0.8])
        assert error_l({0: near}, {0: line}) < 1e-3
        assert error_l({0: PluckerLine(-near.n, -near.v)}, {0: line}) < 1e-3


def test_trans_rmse_examples():
    rng = np.random.default_rng(0)
    true = {i: Pose.from_rotvec(rng.normal(size=3) * 0.3, rng.normal(size=3)) for i in range(5)}
    assert trans_rmse(true, true, {0}) == 0.0

    shifted = {i: p if i == 0 else Pose(p.rotation, p.translation + [0.1, 0.0, 0.0]) for i, p in true.items()}
    assert trans_rmse(shifted, true, {0}) == pytest.approx(0.1)

    offsets = {i: rng.normal(size=3) * 0.2 for i in true}
    moved = {i: Pose(p.rotation, p.translation + offsets[i]) for i, p in true.items()}
    expected = math.sqrt(sum(np.sum((p.rotation.T @ offsets[i]) ** 2) for i, p in true.items() if i) / 4)
    assert trans_rmse(moved, true, {0}) == pytest.approx(expected)

    with pytest.raises(MismatchError):
        trans_rmse({0: true[0]}, true)


@pytest.mark.parametrize("param", PARAMETERIZATIONS)
def test_zero_noise_converges_from_perturbed_start(param):
    cfg = zero_noise(small_pose_noise=(0.5, 0.02), line_init_depth_ratio=0.05, point_init_noise=0.05)
    scene = generate_scene(cfg, "small", 1)
    graph = build_graph(scene, param)
    report = solve(graph, LMConfig(max_iters=100))
    assert report.initial_cost > 1.0
    assert report.converged
    assert report.final_cost < 1e-15
    assert all(b <= a for a, b in zip(report.cost_trace, report.cost_trace[1:]))


def test_fixed_zero_noise_benchmark_has_no_error():
    report = run_benchmark(zero_noise(), PARAMETERIZATIONS, ("fixed",), n_seeds=1)
    assert len(report.rows) == 3
    for result in report.results:
        assert result.error_l < 1e-9
        assert result.trans_rmse == 0.0
        assert result.time_s > 0
        assert result.n_runs == 1


def test_benchmark_rows_are_reproducible():
    a = run_benchmark(SMALL, ("3p",), ("small",), n_seeds=2)
    b = run_benchmark(SMALL, ("3p",), ("small",), n_seeds=2)
    assert [(r.seed, r.error_l, r.trans_rmse) for r in a.rows] == [(r.seed, r.error_l, r.trans_rmse) for r in b.rows]
    assert a.rows[0].parameter_counts["line_related"] == len(graph_lines(build_graph(generate_scene(SMALL, "small", 0), "3p"))) + 6


def test_aggregate_excludes_diverged_runs():
    rows = [
        BenchRow("small", "3p", 0, 1.0, 0.2, 0.1),
        BenchRow("small", "3p", 1, 3.0, 0.4, 0.3),
        BenchRow("small", "3p", 2, 9.0, 9.0, 9.0, diverged=True),
        BenchRow("fixed", "4p", 0, 2.0, 0.5, 0.0, diverged=True),
    ]
    fixed, small = aggregate(rows)
    assert (fixed.scenario, fixed.param) == ("fixed", "4p")
    assert math.isnan(fixed.error_l)
    assert fixed.n_runs == 0 and fixed.n_diverged == 1
    assert small.time_s == pytest.approx(2.0)
    assert small.error_l == pytest.approx(0.3)
    assert small.n_runs == 2 and small.n_diverged == 1


@bench_only
def test_structural_parameterization_is_fastest():
    report = run_benchmark(SceneConfig(), PARAMETERIZATIONS, SCENARIOS, n_seeds=10)
    for scenario in SCENARIOS:
        fast = report.cell(scenario, "3p").time_s
        assert fast < report.cell(scenario, "2p").time_s
        assert fast < report.cell(scenario, "4p").time_s


@bench_only
def test_structural_parameterization_is_most_accurate_under_noise():
    report = run_benchmark(SceneConfig(), PARAMETERIZATIONS, ("small", "large"), n_seeds=10)
    for scenario in ("small", "large"):
        cells = {param: report.cell(scenario, param) for param in PARAMETERIZATIONS}
        assert cells["3p"].error_l < cells["2p"].error_l
        assert cells["3p"].error_l < cells["4p"].error_l
        assert cells["3p"].trans_rmse <= 1.02 * min(cells["2p"].trans_rmse, cells["4p"].trans_rmse)


@bench_only
def test_fixed_poses_favour_orthonormal_lines():
    report = run_benchmark(SceneConfig(), ("4p", "3p"), ("fixed",), n_seeds=10)
    assert report.cell("fixed", "4p").error_l <= report.cell("fixed", "3p").error_l


@bench_only
def test_translation_error_grows_with_pose_noise():
    report = run_benchmark(SceneConfig(), PARAMETERIZATIONS, SCENARIOS, n_seeds=10)
    for param in PARAMETERIZATIONS:
        rmse = [report.cell(scenario, param).trans_rmse for scenario in SCENARIOS]
        assert rmse[0] <= rmse[1] <= rmse[2]

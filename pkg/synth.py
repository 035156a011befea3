"""
Synthetic Atlanta-world scenes and the line-parameterization benchmark.

A scene is built in a z-up frame (one vertical axis, the rest horizontal),
observed from cameras on a circular arc around the origin, then rotated as a
whole so that no axis sits near a pole of the latitude/longitude chart.
"""
import math
import time
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from axes import AxisPolicy, PrincipalAxis, associate, line_axis_angles
from ba import (
    FactorGraph,
    Information,
    LineVertex,
    LMConfig,
    PointObservation,
    SegmentObservation,
    Stage,
    build_layout,
    frame_directions,
    solve,
    stage_policy,
    start_fresh_lines,
    vp_temp_directions,
)
from errors import BehindCameraError, EmptySceneError, MismatchError, ParallelRayError
from geometry import (
    CameraIntrinsics,
    FixedDirectionLine,
    PluckerLine,
    Pose,
    Segment2D,
    inverse_depth_from_plucker,
    ortho_from_plucker,
    plucker_distance,
    plucker_from_points,
    plucker_from_point_direction,
    tangent_basis,
)
from vanish import VPTolerances

logger = logging.getLogger(__name__)

SCENARIOS = ("fixed", "small", "large")
PARAMETERIZATIONS = ("2p", "4p", "3p")
MIN_CAMERA_DEPTH = 0.1
MIN_SEGMENT_PIXELS = 1.0
LINE_HALF_LENGTH = 1.0
WORLD_TILT = Rotation.from_euler("xy", [35.0, 20.0], degrees=True)


@dataclass(frozen=True)
class SceneConfig:
    n_axes: int = 3
    lines_per_axis: int = 20
    axis_angular_spread_deg: float = 2.0
    n_points: int = 50
    n_poses: int = 10
    trajectory_radius: float = 8.0
    trajectory_step_deg: float = 6.0
    focal: float = 500.0
    image_width: int = 640
    image_height: int = 480
    pixel_noise_sigma: float = 1.0
    small_pose_noise: Tuple[float, float] = (0.5, 0.02)
    large_pose_noise: Tuple[float, float] = (3.0, 0.2)
    line_init_angle_deg: float = 1.0
    line_init_depth_ratio: float = 0.05
    point_init_noise: float = 0.05
    scenario: str = "small"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "small_pose_noise", tuple(float(x) for x in self.small_pose_noise))
        object.__setattr__(self, "large_pose_noise", tuple(float(x) for x in self.large_pose_noise))
        for name in ("n_axes", "lines_per_axis", "n_poses", "trajectory_radius", "focal",
                     "image_width", "image_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SceneConfig.{name} must be positive")
        if self.n_points < 0:
            raise ValueError("SceneConfig.n_points must be >= 0")
        for name in ("axis_angular_spread_deg", "trajectory_step_deg", "pixel_noise_sigma",
                     "line_init_angle_deg", "line_init_depth_ratio", "point_init_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"SceneConfig.{name} must be >= 0")
        for name in ("small_pose_noise", "large_pose_noise"):
            pair = getattr(self, name)
            if len(pair) != 2 or min(pair) < 0:
                raise ValueError(f"SceneConfig.{name} must be two non-negative numbers")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"SceneConfig.scenario must be one of {SCENARIOS}, got {self.scenario!r}")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal, self.image_width / 2.0, self.image_height / 2.0)

    def pose_noise(self, scenario: str) -> Tuple[float, float]:
        """(rotation deg, translation units) for a scenario"""
        return {"fixed": (0.0, 0.0), "small": self.small_pose_noise, "large": self.large_pose_noise}[scenario]


@dataclass
class Scene:
    """Ground truth, observations and initial estimates of one synthetic run"""
    scenario: str
    seed: int
    k: CameraIntrinsics
    axes_true: Dict[int, np.ndarray]
    line_axis: Dict[int, int]
    poses_true: Dict[int, Pose]
    points_true: Dict[int, np.ndarray]
    lines_true: Dict[int, PluckerLine]
    anchors: Dict[int, Tuple[np.ndarray, int]]
    point_obs: List[PointObservation]
    segment_obs: List[SegmentObservation]
    fixed_poses: Set[int]
    poses_init: Dict[int, Pose]
    points_init: Dict[int, np.ndarray]
    lines_init: Dict[int, PluckerLine]
    axes_init: Dict[int, np.ndarray]


@dataclass
class BenchRow:
    scenario: str
    param: str
    seed: int
    time_s: float
    error_l: float
    trans_rmse: float
    diverged: bool = False
    parameter_counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class BenchResult:
    """Mean over the non-diverged seeds of one (scenario, parameterization) cell"""
    scenario: str
    param: str
    time_s: float
    error_l: float
    trans_rmse: float
    n_runs: int
    n_diverged: int = 0


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    results: List[BenchResult] = field(default_factory=list)

    def cell(self, scenario: str, param: str) -> BenchResult:
        for result in self.results:
            if result.scenario == scenario and result.param == param:
                return result
        raise KeyError((scenario, param))

    @property
    def any_diverged(self) -> bool:
        return any(row.diverged for row in self.rows)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _perturb_direction(rng: np.random.Generator, d: np.ndarray, sigma_deg: float) -> np.ndarray:
    """Tilt d by a Gaussian angle about a random perpendicular axis"""
    axis = _unit(tangent_basis(d) @ rng.standard_normal(2))
    angle = math.radians(sigma_deg) * rng.standard_normal()
    return _unit(Rotation.from_rotvec(angle * axis).apply(d))


def _axis_directions(rng: np.random.Generator, n_axes: int) -> List[np.ndarray]:
    """Vertical first, then horizontals spread over half a turn with jitter"""
    dirs = [np.array([0.0, 0.0, 1.0])]
    n_horizontal = n_axes - 1
    if n_horizontal:
        base = rng.uniform(0.0, math.pi)
        step = math.pi / n_horizontal
        for i in range(n_horizontal):
            a = base + i * step + rng.uniform(-0.15, 0.15) * step
            dirs.append(np.array([math.cos(a), math.sin(a), 0.0]))
    return dirs


def _look_at(center: np.ndarray, target: np.ndarray) -> Pose:
    """T_cw of a camera at center looking at target, image y pointing down"""
    forward = _unit(target - center)
    right = _unit(np.cross(forward, [0.0, 0.0, 1.0]))
    down = np.cross(forward, right)
    r_cw = np.vstack([right, down, forward])
    return Pose(r_cw, -r_cw @ center)


def _camera_trajectory(cfg: SceneConfig) -> List[Pose]:
    span = cfg.trajectory_step_deg * (cfg.n_poses - 1)
    poses = []
    for i in range(cfg.n_poses):
        a = math.radians(-0.5 * span + i * cfg.trajectory_step_deg)
        center = np.array([cfg.trajectory_radius * math.cos(a), cfg.trajectory_radius * math.sin(a), 0.5])
        poses.append(_look_at(center, np.zeros(3)))
    return poses


def _perturb_pose(rng: np.random.Generator, pose: Pose, rot_deg: float, trans: float) -> Pose:
    rotvec = rng.standard_normal(3) * math.radians(rot_deg) / math.sqrt(3.0)
    dt = rng.standard_normal(3) * trans / math.sqrt(3.0)
    return Pose(Rotation.from_rotvec(rotvec).as_matrix() @ pose.rotation, pose.translation + dt)


def generate_scene(cfg: SceneConfig, scenario: str = None, seed: int = None) -> Scene:
    """
    Deterministic synthetic scene for (cfg, scenario, seed).

    Ground truth, observation noise and initial-estimate noise come from
    three independent streams seeded by the seed alone, so scenarios of one
    seed share their ground truth and differ only in pose perturbation size.

    Raises:
        EmptySceneError: no segment is visible in any pose
    """
    scenario = scenario or cfg.scenario
    seed = cfg.seed if seed is None else seed
    if scenario not in SCENARIOS:
        raise ValueError(f"Unknown scenario {scenario!r}")
    world_rng = np.random.default_rng([seed, 0])
    obs_rng = np.random.default_rng([seed, 1])
    init_rng = np.random.default_rng([seed, 2])
    k = cfg.intrinsics

    # ground truth in the z-up frame, then tilted
    tilt = WORLD_TILT * Rotation.from_euler("z", world_rng.uniform(0.0, 360.0), degrees=True)
    tilt_inv = Pose(tilt.inv().as_matrix(), np.zeros(3))
    axes_true = {j: _unit(tilt.apply(d)) for j, d in enumerate(_axis_directions(world_rng, cfg.n_axes))}
    poses_true = {i: pose.compose(tilt_inv) for i, pose in enumerate(_camera_trajectory(cfg))}

    lines_true, endpoints, line_axis = {}, {}, {}
    box = np.array([3.0, 3.0, 2.0])
    for j, axis in axes_true.items():
        for _ in range(cfg.lines_per_axis):
            line_id = len(lines_true)
            d = _perturb_direction(world_rng, axis, cfg.axis_angular_spread_deg)
            mid = tilt.apply(world_rng.uniform(-box, box))
            p1, p2 = mid - LINE_HALF_LENGTH * d, mid + LINE_HALF_LENGTH * d
            endpoints[line_id] = (p1, p2)
            lines_true[line_id] = plucker_from_points(p1, p2)
            line_axis[line_id] = j
    points_true = {i: tilt.apply(world_rng.uniform(-box, box)) for i in range(cfg.n_points)}

    # observations
    sigma = cfg.pixel_noise_sigma
    point_obs, segment_obs = [], []
    for pose_id, pose in poses_true.items():
        for point_id, x in points_true.items():
            p_c = pose.transform_point(x)
            noise = obs_rng.standard_normal(2) * sigma
            if p_c[2] > MIN_CAMERA_DEPTH:
                point_obs.append(PointObservation(pose_id, point_id, k.project(p_c) + noise))
        for line_id, (p1, p2) in endpoints.items():
            c1, c2 = pose.transform_point(p1), pose.transform_point(p2)
            noise = obs_rng.standard_normal(4) * sigma
            if min(c1[2], c2[2]) <= MIN_CAMERA_DEPTH:
                continue
            s, e = k.project(c1) + noise[:2], k.project(c2) + noise[2:]
            if np.linalg.norm(e - s) < MIN_SEGMENT_PIXELS:
                continue
            segment_obs.append(SegmentObservation(pose_id, line_id, Segment2D(s, e)))
    if not segment_obs:
        raise EmptySceneError("No line segment is visible from any pose")

    # anchors: midpoint of the segment in the first observing keyframe
    anchors = {}
    for obs in segment_obs:
        if obs.line_id not in anchors:
            anchors[obs.line_id] = (obs.segment.midpoint, obs.pose_id)

    # initial estimates
    rot_deg, trans = cfg.pose_noise(scenario)
    fixed_poses = set(poses_true) if scenario == "fixed" else {min(poses_true)}
    poses_init = {}
    for pose_id, pose in poses_true.items():
        perturbed = _perturb_pose(init_rng, pose, rot_deg, trans)
        poses_init[pose_id] = pose if pose_id in fixed_poses else perturbed
    points_init = {
        i: x + init_rng.standard_normal(3) * cfg.point_init_noise / math.sqrt(3.0)
        for i, x in points_true.items()
    }
    axes_init = {j: _perturb_direction(init_rng, d, cfg.line_init_angle_deg) for j, d in axes_true.items()}

    lines_init = {}
    for line_id, line in lines_true.items():
        d_init = _perturb_direction(init_rng, _unit(line.v), cfg.line_init_angle_deg)
        scale = 1.0 + cfg.line_init_depth_ratio * init_rng.standard_normal()
        if line_id not in anchors:
            lines_init[line_id] = plucker_from_point_direction(line.closest_point(), d_init)
            continue
        anchor, ref = anchors[line_id]
        try:
            r_true = inverse_depth_from_plucker(line, anchor, poses_true[ref].inverse(), k)
        except (ParallelRayError, BehindCameraError) as e:
            logger.warning(f"[SYNTH] Line {line_id} initialized from its closest point: {e}")
            lines_init[line_id] = plucker_from_point_direction(line.closest_point(), d_init)
            continue
        depth = max(scale, 0.2) / r_true
        p_anchor = poses_init[ref].inverse().transform_point(k.back_project(anchor) * depth)
        lines_init[line_id] = plucker_from_point_direction(p_anchor, d_init)

    logger.info(
        f"[SYNTH] Scene seed={seed} scenario={scenario}: {len(lines_true)} lines, {len(points_true)} points, "
        f"{len(poses_true)} poses, {len(segment_obs)} segments, {len(point_obs)} point observations"
    )
    return Scene(
        scenario=scenario,
        seed=seed,
        k=k,
        axes_true=axes_true,
        line_axis=line_axis,
        poses_true=poses_true,
        points_true=points_true,
        lines_true=lines_true,
        anchors=anchors,
        point_obs=point_obs,
        segment_obs=segment_obs,
        fixed_poses=fixed_poses,
        poses_init=poses_init,
        points_init=points_init,
        lines_init=lines_init,
        axes_init=axes_init,
    )


# ---------------------------------------------------------------------------
# Graphs for the three parameterizations
# ---------------------------------------------------------------------------

def build_graph(scene: Scene, param: str, policy: AxisPolicy = AxisPolicy(),
                information: Information = Information(), vp_tols: VPTolerances = VPTolerances()) -> FactorGraph:
    """
    Factor graph of a scene's initial state with the chosen line form.

    4p: every line orthonormal. 3p: lines associated with the initial axis
    estimates become anchored; the others start in the first stage on the
    VP direction of their reference keyframe (vertical: the first initial
    axis), or stay orthonormal when their segment there is unstructured. 2p: every
    line keeps the direction of its associated axis estimate, or its own
    initial direction when unassociated, and optimizes two offsets.
    """
    if param not in PARAMETERIZATIONS:
        raise ValueError(f"Unknown parameterization {param!r}, expected one of {PARAMETERIZATIONS}")
    observed = {obs.line_id for obs in scene.segment_obs}
    graph = FactorGraph(
        k=scene.k,
        poses=dict(scene.poses_init),
        fixed_poses=set(scene.fixed_poses),
        points={i: np.array(x) for i, x in scene.points_init.items()},
        point_obs=list(scene.point_obs),
        segment_obs=list(scene.segment_obs),
        information=information,
    )
    for line_id in sorted(observed):
        anchor, ref = scene.anchors[line_id]
        graph.lines[line_id] = LineVertex.ortho(ortho_from_plucker(scene.lines_init[line_id]), anchor, ref)
    if param == "4p":
        return graph

    axes = {j: PrincipalAxis.from_vector(j, d) for j, d in scene.axes_init.items()}
    graph.axes = dict(axes)
    angles = line_axis_angles(frame_directions(graph), list(axes.values()))
    table = associate(angles, list(axes.values()), policy)
    logger.debug(f"[SYNTH] {len(angles) - len(table.unassociated)}/{len(angles)} lines associated on the initial state")

    if param == "3p":
        anchored = stage_policy(graph, table)
        loose = [i for i, v in anchored.lines.items() if v.stage is Stage.ORTHO_FALLBACK]
        if loose:
            vertical = scene.axes_init[min(scene.axes_init)]
            anchored = start_fresh_lines(anchored, vp_temp_directions(anchored, vertical, vp_tols, loose))
        for axis_id, axis in anchored.axes.items():
            members = {k: w for (k, j), w in anchored.weights.items() if j == axis_id and w > 0}
            anchored.axes[axis_id] = PrincipalAxis(axis.id, axis.dir, axis.prior_dir, 0, members)
        return anchored

    graph.axes = {}
    for line_id, vertex in list(graph.lines.items()):
        best = table.best_axis(line_id)
        init = scene.lines_init[line_id]
        direction = scene.axes_init[best] if best is not None else init.v
        fixed = FixedDirectionLine.from_plucker(init, direction)
        graph.lines[line_id] = LineVertex.fixed_direction(fixed, vertex.anchor_pixel, vertex.ref_keyframe)
    return graph


def ground_truth_graph(scene: Scene, param: str = "4p") -> FactorGraph:
    """Graph at the true state, used to measure observation noise"""
    truth = Scene(**{**scene.__dict__,
                     "poses_init": scene.poses_true,
                     "points_init": scene.points_true,
                     "lines_init": scene.lines_true,
                     "axes_init": scene.axes_true})
    return build_graph(truth, param)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def error_l(estimated: Dict[int, PluckerLine], true: Dict[int, PluckerLine]) -> float:
    """
    Mean distance between unit Plücker 6-vectors, each pair compared under
    the relative sign that brings them closest.

    Raises:
        MismatchError: the id sets differ
    """
    if set(estimated) != set(true):
        raise MismatchError(f"Line ids differ: {sorted(set(estimated) ^ set(true))}")
    if not true:
        return 0.0
    return float(np.mean([
        plucker_distance(estimated[i], true[i]) for i in sorted(true)
    ]))


def trans_rmse(estimated: Dict[int, Pose], true: Dict[int, Pose], fixed: Set[int] = frozenset()) -> float:
    """RMSE of camera centres over the free poses; no trajectory alignment"""
    free = sorted(set(true) - set(fixed))
    if set(estimated) != set(true):
        raise MismatchError(f"Pose ids differ: {sorted(set(estimated) ^ set(true))}")
    if not free:
        return 0.0
    sq = [np.sum((estimated[i].center - true[i].center) ** 2) for i in free]
    return float(math.sqrt(np.mean(sq)))


def graph_lines(graph: FactorGraph) -> Dict[int, PluckerLine]:
    return {line_id: graph.line_plucker(line_id) for line_id in graph.lines}


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def run_cell(cfg: SceneConfig, scenario: str, param: str, seed: int, lm_cfg: LMConfig = LMConfig(),
             policy: AxisPolicy = AxisPolicy(), information: Information = Information(),
             scene: Scene = None) -> BenchRow:
    """One (scenario, parameterization, seed) run; timing covers the solve only"""
    scene = scene or generate_scene(cfg, scenario, seed)
    graph = build_graph(scene, param, policy, information)
    start = time.perf_counter()
    report = solve(graph, lm_cfg)
    elapsed = time.perf_counter() - start

    result = report.graph
    truth = {i: scene.lines_true[i] for i in result.lines}
    row = BenchRow(
        scenario=scenario,
        param=param,
        seed=seed,
        time_s=elapsed,
        error_l=error_l(graph_lines(result), truth),
        trans_rmse=trans_rmse(result.poses, scene.poses_true, scene.fixed_poses),
        diverged=report.diverged,
        parameter_counts=build_layout(graph).counts(),
    )
    if row.diverged:
        logger.warning(f"[BENCH] {scenario}/{param} seed {seed} diverged")
    else:
        logger.info(
            f"[BENCH] {scenario}/{param} seed {seed}: {elapsed:.3f}s, error_l {row.error_l:.4f}, "
            f"trans {row.trans_rmse:.4f}"
        )
    return row


def aggregate(rows: Sequence[BenchRow]) -> List[BenchResult]:
    """Per-cell means over non-diverged seeds, in scenario then parameterization order"""
    cells = {}
    for row in rows:
        cells.setdefault((row.scenario, row.param), []).append(row)

    def order(key):
        scenario, param = key
        return (SCENARIOS.index(scenario) if scenario in SCENARIOS else len(SCENARIOS),
                PARAMETERIZATIONS.index(param), scenario)

    results = []
    for (scenario, param) in sorted(cells, key=order):
        cell = cells[(scenario, param)]
        ok = [row for row in cell if not row.diverged]
        mean = (lambda attr: float(np.mean([getattr(r, attr) for r in ok]))) if ok else (lambda attr: math.nan)
        results.append(BenchResult(
            scenario=scenario,
            param=param,
            time_s=mean("time_s"),
            error_l=mean("error_l"),
            trans_rmse=mean("trans_rmse"),
            n_runs=len(ok),
            n_diverged=len(cell) - len(ok),
        ))
    return results


def run_benchmark(
    cfg: SceneConfig,
    parameterizations: Sequence[str] = PARAMETERIZATIONS,
    scenarios: Sequence[str] = SCENARIOS,
    n_seeds: int = 10,
    lm_cfg: LMConfig = LMConfig(),
    policy: AxisPolicy = AxisPolicy(),
    information: Information = Information(),
) -> BenchReport:
    """
    Sequential benchmark over scenario x parameterization x seed.

    Seeds run cfg.seed, cfg.seed + 1, ...; the scene of a (scenario, seed)
    pair is generated once and shared by every parameterization.
    scheduler.run_cells gives the concurrent variant.
    """
    unknown = set(parameterizations) - set(PARAMETERIZATIONS)
    if unknown:
        raise ValueError(f"Unknown parameterizations {sorted(unknown)}")
    rows = []
    for scenario in scenarios:
        for seed in range(cfg.seed, cfg.seed + n_seeds):
            scene = generate_scene(cfg, scenario, seed)
            for param in parameterizations:
                rows.append(run_cell(cfg, scenario, param, seed, lm_cfg, policy, information, scene))
    return BenchReport(rows, aggregate(rows))

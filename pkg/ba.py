"""
Factor graph and Levenberg-Marquardt bundle adjustment for points and lines.

Four residual families share one sparse Jacobian:
  - point reprojection (free poses 6, free points 3)
  - structural lines in the three-parameter form (inverse depth 1, axis 2,
    reference pose 6), one residual per positively weighted line-axis pair,
    scaled by sqrt(w)
  - orthonormal lines (4) and the fixed-direction baseline (2)
  - axis priors on the latitude/longitude chart (2)

Pose tangents are [dθ, dt] with R <- Exp(dθ) R, t <- t + dt. Axis tangents
live in the plane orthogonal to the current direction; the axis prior is
measured on a lat/long chart rotated away from the prior (chart_rotation),
so axes on or near the z pole keep a finite, well-conditioned Jacobian.
"""
import math
import time
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Set, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial.transform import Rotation

from axes import (
    AssociationTable,
    AxisPolicy,
    AxisUpdate,
    MeanShiftConfig,
    PrincipalAxis,
    associate,
    line_axis_angles,
    propose_axes,
    update_axes,
)
from errors import (
    BehindCameraError,
    InvalidDepthError,
    InvalidGraphError,
    ParallelRayError,
)
from geometry import (
    AnchoredLine,
    CameraIntrinsics,
    FixedDirectionLine,
    OrthoLine,
    PluckerLine,
    Pose,
    Segment2D,
    chart_rotation,
    interpretation_plane_normal,
    inverse_depth_from_plucker,
    latlong_from_direction,
    latlong_gradient,
    line_reprojection_error,
    ortho_from_plucker,
    plucker_from_ortho,
    project_line,
    reconstruct_line,
    rotate_direction,
    tangent_basis,
    transform_line,
    wrap_angle,
)
from vanish import VPTolerances, estimate_frame, vp_direction

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-9
LINE_BLOCK = 9  # widest per-hypothesis parameter block: r + axis(2) + ref pose(6)


class Stage(str, Enum):
    INITIAL_TEMP_AXIS = "InitialTempAxis"
    ORTHO_FALLBACK = "OrthoFallback"
    AXIS_ANCHORED = "AxisAnchored"
    FIXED_DIRECTION = "FixedDirection"  # 2-p baseline only, never transitions


STAGE_DIMS = {
    Stage.INITIAL_TEMP_AXIS: 1,
    Stage.AXIS_ANCHORED: 1,
    Stage.ORTHO_FALLBACK: 4,
    Stage.FIXED_DIRECTION: 2,
}


@dataclass(frozen=True)
class LMConfig:
    max_iters: int = 50
    initial_lambda: float = 1e-4
    lambda_up: float = 2.0
    lambda_down: float = 3.0
    cost_tol: float = 1e-10
    param_tol: float = 1e-12
    huber_width: Optional[float] = 2.0
    min_lambda: float = 1e-9
    max_lambda: float = 1e10
    abs_cost_tol: float = 1e-24

    def __post_init__(self):
        for name in ("max_iters", "initial_lambda", "lambda_up", "lambda_down", "cost_tol",
                     "param_tol", "min_lambda", "max_lambda", "abs_cost_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LMConfig.{name} must be positive")
        if self.huber_width is not None and not self.huber_width > 0:
            raise ValueError("LMConfig.huber_width must be positive or None")
        if not (self.lambda_up > 1 and self.lambda_down > 1):
            raise ValueError("LMConfig lambda factors must exceed 1")


@dataclass(frozen=True)
class Information:
    """Isotropic information weight per residual family"""
    point: float = 1.0
    line: float = 1.0
    axis: float = 1.0 / math.radians(5.0) ** 2

    def __post_init__(self):
        for name in ("point", "line", "axis"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Information.{name} must be positive")


@dataclass(frozen=True)
class LineVertex:
    stage: Stage
    state: Union[AnchoredLine, OrthoLine, FixedDirectionLine]
    anchor_pixel: np.ndarray
    ref_keyframe: int
    temp_dir: Optional[np.ndarray] = None
    solves: int = 0

    @classmethod
    def initial(cls, line: AnchoredLine, temp_dir) -> "LineVertex":
        d = np.asarray(temp_dir, dtype=float)
        return cls(Stage.INITIAL_TEMP_AXIS, replace(line, axis_ref=None), line.anchor_pixel,
                   line.ref_keyframe, d / np.linalg.norm(d))

    @classmethod
    def anchored(cls, line: AnchoredLine) -> "LineVertex":
        return cls(Stage.AXIS_ANCHORED, line, line.anchor_pixel, line.ref_keyframe)

    @classmethod
    def ortho(cls, line: OrthoLine, anchor_pixel, ref_keyframe: int) -> "LineVertex":
        return cls(Stage.ORTHO_FALLBACK, line, np.asarray(anchor_pixel, dtype=float), ref_keyframe)

    @classmethod
    def fixed_direction(cls, line: FixedDirectionLine, anchor_pixel, ref_keyframe: int) -> "LineVertex":
        return cls(Stage.FIXED_DIRECTION, line, np.asarray(anchor_pixel, dtype=float), ref_keyframe)


@dataclass(frozen=True)
class PointObservation:
    pose_id: int
    point_id: int
    pixel: np.ndarray


@dataclass(frozen=True)
class SegmentObservation:
    pose_id: int
    line_id: int
    segment: Segment2D


@dataclass
class FactorGraph:
    k: CameraIntrinsics
    poses: Dict[int, Pose] = field(default_factory=dict)
    fixed_poses: Set[int] = field(default_factory=set)
    points: Dict[int, np.ndarray] = field(default_factory=dict)
    fixed_points: Set[int] = field(default_factory=set)
    lines: Dict[int, LineVertex] = field(default_factory=dict)
    axes: Dict[int, PrincipalAxis] = field(default_factory=dict)
    point_obs: List[PointObservation] = field(default_factory=list)
    segment_obs: List[SegmentObservation] = field(default_factory=list)
    weights: Dict[Tuple[int, int], float] = field(default_factory=dict)
    information: Information = field(default_factory=Information)

    def copy(self) -> "FactorGraph":
        return replace(
            self,
            poses=dict(self.poses),
            fixed_poses=set(self.fixed_poses),
            points=dict(self.points),
            fixed_points=set(self.fixed_points),
            lines=dict(self.lines),
            axes=dict(self.axes),
            weights=dict(self.weights),
        )

    def validate(self):
        """
        Check references and the gauge.

        Raises:
            InvalidGraphError: on the first inconsistency found
        """
        if not self.poses:
            raise InvalidGraphError("Graph has no poses")
        if not self.fixed_poses & set(self.poses):
            raise InvalidGraphError("At least one pose must be fixed")
        for obs in self.point_obs:
            if obs.pose_id not in self.poses or obs.point_id not in self.points:
                raise InvalidGraphError(f"Point observation references missing vertex: {obs.pose_id}/{obs.point_id}")
        for obs in self.segment_obs:
            if obs.pose_id not in self.poses or obs.line_id not in self.lines:
                raise InvalidGraphError(f"Segment observation references missing vertex: {obs.pose_id}/{obs.line_id}")
        for line_id, vertex in self.lines.items():
            if vertex.ref_keyframe not in self.poses:
                raise InvalidGraphError(f"Line {line_id} references missing keyframe {vertex.ref_keyframe}")
            if vertex.stage is Stage.INITIAL_TEMP_AXIS and vertex.temp_dir is None:
                raise InvalidGraphError(f"Line {line_id} is in the first stage without a temporary axis")
            if vertex.stage is Stage.AXIS_ANCHORED:
                row = self.weight_row(line_id)
                axis_ids = set(row) if row else {vertex.state.axis_ref}
                if not axis_ids <= set(self.axes):
                    raise InvalidGraphError(f"Line {line_id} references missing axes {sorted(axis_ids - set(self.axes), key=str)}")
            expected = {
                Stage.INITIAL_TEMP_AXIS: AnchoredLine,
                Stage.AXIS_ANCHORED: AnchoredLine,
                Stage.ORTHO_FALLBACK: OrthoLine,
                Stage.FIXED_DIRECTION: FixedDirectionLine,
            }[vertex.stage]
            if not isinstance(vertex.state, expected):
                raise InvalidGraphError(f"Line {line_id}: stage {vertex.stage.value} needs {expected.__name__}")
        for (line_id, axis_id) in self.weights:
            if line_id not in self.lines or axis_id not in self.axes:
                raise InvalidGraphError(f"Association weight for missing pair ({line_id}, {axis_id})")

    def weight_row(self, line_id: int) -> Dict[int, float]:
        return {j: w for (k, j), w in self.weights.items() if k == line_id}

    def line_axis(self, line_id: int) -> Optional[int]:
        """Axis a line is drawn with: highest weight, else its axis_ref"""
        vertex = self.lines[line_id]
        if vertex.stage is not Stage.AXIS_ANCHORED:
            return None
        row = {j: w for j, w in self.weight_row(line_id).items() if w > 0}
        if row:
            return min(row, key=lambda j: (-row[j], j))
        return vertex.state.axis_ref

    def line_plucker(self, line_id: int) -> PluckerLine:
        """Current world-frame line estimate"""
        vertex = self.lines[line_id]
        if vertex.stage is Stage.ORTHO_FALLBACK:
            return plucker_from_ortho(vertex.state)
        if vertex.stage is Stage.FIXED_DIRECTION:
            return vertex.state.to_plucker()
        if vertex.stage is Stage.INITIAL_TEMP_AXIS:
            direction = vertex.temp_dir
        else:
            direction = self.axes[self.line_axis(line_id)].vector
        ref_pose = self.poses[vertex.ref_keyframe].inverse()
        return reconstruct_line(vertex.state, direction, ref_pose, self.k)


@dataclass
class ParameterLayout:
    pose_cols: Dict[int, int] = field(default_factory=dict)
    point_cols: Dict[int, int] = field(default_factory=dict)
    line_cols: Dict[int, int] = field(default_factory=dict)
    line_dims: Dict[int, int] = field(default_factory=dict)
    axis_cols: Dict[int, int] = field(default_factory=dict)
    size: int = 0

    def counts(self) -> Dict[str, int]:
        lines = sum(self.line_dims.values())
        axes = 2 * len(self.axis_cols)
        return {
            "poses": 6 * len(self.pose_cols),
            "points": 3 * len(self.point_cols),
            "lines": lines,
            "axes": axes,
            "line_related": lines + axes,
            "total": self.size,
        }


def build_layout(graph: FactorGraph) -> ParameterLayout:
    layout = ParameterLayout()
    col = 0
    for pose_id in sorted(graph.poses):
        if pose_id not in graph.fixed_poses:
            layout.pose_cols[pose_id] = col
            col += 6
    for point_id in sorted(graph.points):
        if point_id not in graph.fixed_points:
            layout.point_cols[point_id] = col
            col += 3
    for line_id in sorted(graph.lines):
        dim = STAGE_DIMS[graph.lines[line_id].stage]
        layout.line_cols[line_id] = col
        layout.line_dims[line_id] = dim
        col += dim
    for axis_id in sorted(graph.axes):
        layout.axis_cols[axis_id] = col
        col += 2
    layout.size = col
    return layout


class Linearization(NamedTuple):
    residuals: np.ndarray
    jacobian: sp.csr_matrix
    cost: float


@dataclass
class OptimizationReport:
    graph: FactorGraph
    initial_cost: float
    final_cost: float
    iterations: int
    accepted: int
    wall_time: float
    cost_trace: List[float] = field(default_factory=list)
    iteration_times: List[float] = field(default_factory=list)
    parameter_counts: Dict[str, int] = field(default_factory=dict)
    converged: bool = False
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "accepted": self.accepted,
            "wall_time": self.wall_time,
            "cost_trace": list(self.cost_trace),
            "iteration_times": list(self.iteration_times),
            "parameter_counts": dict(self.parameter_counts),
            "converged": self.converged,
            "diverged": self.diverged,
        }


# ---------------------------------------------------------------------------
# Single residuals
# ---------------------------------------------------------------------------

def residual_point(pose: Pose, point, obs, k: CameraIntrinsics) -> np.ndarray:
    """
    Projected minus observed pixel (pose is T_cw).

    Raises:
        InvalidDepthError: point not in front of the camera
    """
    p_c = pose.transform_point(point)
    if not p_c[2] > MIN_DEPTH:
        raise InvalidDepthError(f"Point at depth {p_c[2]:.3e} is behind the camera")
    return k.project(p_c) - np.asarray(obs, dtype=float)


def residual_structural_line(line: AnchoredLine, axis_dir, ref_pose: Pose, obs_pose: Pose,
                             obs: Segment2D, k: CameraIntrinsics) -> np.ndarray:
    """Unweighted line error of an anchored line; both poses are T_cw"""
    world = reconstruct_line(line, axis_dir, ref_pose.inverse(), k)
    return line_reprojection_error(project_line(transform_line(world, obs_pose), k), obs)


def residual_ortho_line(line: OrthoLine, obs_pose: Pose, obs: Segment2D, k: CameraIntrinsics) -> np.ndarray:
    world = plucker_from_ortho(line)
    return line_reprojection_error(project_line(transform_line(world, obs_pose), k), obs)


def residual_axis(axis: PrincipalAxis) -> np.ndarray:
    """
    Lat/long offset of the axis from its prior, measured on the chart
    picked by chart_rotation(prior) so neither sits near a pole.
    """
    chart = chart_rotation(axis.prior_dir)
    if np.array_equal(chart, np.eye(3)):
        current = axis.dir
    else:
        current = latlong_from_direction(chart @ axis.vector)
    prior = latlong_from_direction(chart @ axis.prior_dir)
    return np.array([current.phi - prior.phi, wrap_angle(current.theta - prior.theta)])


# ---------------------------------------------------------------------------
# Batched evaluation
# ---------------------------------------------------------------------------

def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _block(start: Optional[int], size: int) -> np.ndarray:
    if start is None:
        return np.full(size, -1, dtype=int)
    return np.arange(start, start + size)


class _ObservationIndex:
    """Static observation arrays and their parameter columns, built once per solve"""

    def __init__(self, graph: FactorGraph, layout: ParameterLayout = None):
        layout = layout or build_layout(graph)
        self.pose_ids = sorted(graph.poses)
        self.pose_position = {pose_id: i for i, pose_id in enumerate(self.pose_ids)}
        self.pose_cols = np.array([_block(layout.pose_cols.get(p), 6) for p in self.pose_ids]).reshape(-1, 6)

        self.point_ids = sorted(graph.points)
        point_position = {point_id: i for i, point_id in enumerate(self.point_ids)}
        self.pt_pose = np.array([self.pose_position[o.pose_id] for o in graph.point_obs], dtype=int)
        self.pt_point = np.array([point_position[o.point_id] for o in graph.point_obs], dtype=int)
        self.pt_pixels = np.array([o.pixel for o in graph.point_obs], dtype=float).reshape(-1, 2)
        point_cols = np.array([_block(layout.point_cols.get(i), 3) for i in self.point_ids]).reshape(-1, 3)
        self.pt_cols = point_cols[self.pt_point]

        self.seg_pose = np.array([self.pose_position[o.pose_id] for o in graph.segment_obs], dtype=int)
        ones = np.ones((len(graph.segment_obs), 1))
        starts = np.array([o.segment.s for o in graph.segment_obs], dtype=float).reshape(-1, 2)
        ends = np.array([o.segment.e for o in graph.segment_obs], dtype=float).reshape(-1, 2)
        self.seg_p1 = np.hstack([starts, ones])
        self.seg_p2 = np.hstack([ends, ones])
        by_line = defaultdict(list)
        for i, o in enumerate(graph.segment_obs):
            by_line[o.line_id].append(i)
        self.seg_by_line = {line_id: np.array(idx, dtype=int) for line_id, idx in by_line.items()}


class _Hypotheses(NamedTuple):
    """One row per (line, direction) pair drawn into the line residuals"""
    line_ids: np.ndarray
    n: np.ndarray      # (H, 3)
    v: np.ndarray      # (H, 3)
    jac: np.ndarray    # d(n, v)/d(params), (H, 6, LINE_BLOCK)
    cols: np.ndarray   # (H, LINE_BLOCK) column indices, -1 for unused
    weight: np.ndarray


def _ortho_hypotheses(graph: FactorGraph, layout: ParameterLayout, ids: List[int]) -> _Hypotheses:
    states = [graph.lines[i].state for i in ids]
    u = Rotation.from_rotvec(np.array([s.psi for s in states])).as_matrix().reshape(-1, 3, 3)
    phi = np.array([s.phi for s in states])
    w1, w2 = np.cos(phi)[:, None], np.sin(phi)[:, None]
    u1, u2, u3 = u[:, :, 0], u[:, :, 1], u[:, :, 2]
    jac = np.zeros((len(ids), 6, LINE_BLOCK))
    jac[:, :3, 1] = -w1 * u3
    jac[:, :3, 2] = w1 * u2
    jac[:, :3, 3] = -w2 * u1
    jac[:, 3:, 0] = w2 * u3
    jac[:, 3:, 2] = -w2 * u1
    jac[:, 3:, 3] = w1 * u2
    cols = np.full((len(ids), LINE_BLOCK), -1, dtype=int)
    cols[:, :4] = np.array([layout.line_cols[i] for i in ids])[:, None] + np.arange(4)
    return _Hypotheses(np.array(ids), w1 * u1, w2 * u2, jac, cols, np.ones(len(ids)))


def _fixed_direction_hypotheses(graph: FactorGraph, layout: ParameterLayout, ids: List[int]) -> _Hypotheses:
    states = [graph.lines[i].state for i in ids]
    d = np.array([s.direction for s in states])
    basis = np.array([s.basis for s in states])
    p = np.einsum("lij,lj->li", basis, np.array([s.offset for s in states]))
    jac = np.zeros((len(ids), 6, LINE_BLOCK))
    jac[:, :3, :2] = -_skew_batch(d) @ basis
    cols = np.full((len(ids), LINE_BLOCK), -1, dtype=int)
    cols[:, :2] = np.array([layout.line_cols[i] for i in ids])[:, None] + np.arange(2)
    return _Hypotheses(np.array(ids), np.cross(p, d), d, jac, cols, np.ones(len(ids)))


def _anchored_hypotheses(graph: FactorGraph, layout: ParameterLayout, index: _ObservationIndex,
                         rots: np.ndarray, trans: np.ndarray,
                         pairs: List[Tuple[int, Optional[int], float]]) -> _Hypotheses:
    """pairs: (line id, axis id or None for the temporary direction, weight)"""
    k = graph.k
    ids = [line_id for line_id, _, _ in pairs]
    states = [graph.lines[i].state for i in ids]
    count = len(pairs)

    pixels = np.array([s.anchor_pixel for s in states])
    rays = np.column_stack([(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy, np.ones(count)])
    r = np.array([s.inv_depth for s in states])
    ref = np.array([index.pose_position[s.ref_keyframe] for s in states], dtype=int)
    rot, t = rots[ref], trans[ref]
    rot_t = np.transpose(rot, (0, 2, 1))
    q = rays / r[:, None] - t
    p_w = np.einsum("hij,hj->hi", rot_t, q)
    dp_dr = np.einsum("hij,hj->hi", rot_t, -rays / (r * r)[:, None])
    dp_dpose = np.concatenate([rot_t @ _skew_batch(q), -rot_t], axis=2)

    v = np.array([
        graph.axes[axis_id].vector if axis_id is not None else graph.lines[line_id].temp_dir
        for line_id, axis_id, _ in pairs
    ])
    sv = _skew_batch(v)
    jac = np.zeros((count, 6, LINE_BLOCK))
    cols = np.full((count, LINE_BLOCK), -1, dtype=int)
    jac[:, :3, 0] = -np.cross(v, dp_dr)
    cols[:, 0] = [layout.line_cols[i] for i in ids]
    jac[:, :3, 3:9] = -sv @ dp_dpose
    cols[:, 3:9] = index.pose_cols[ref]

    bases = {axis_id: tangent_basis(graph.axes[axis_id].vector) for axis_id in layout.axis_cols}
    free = [h for h, (_, axis_id, _) in enumerate(pairs) if axis_id in bases]
    if free:
        basis = np.array([bases[pairs[h][1]] for h in free])
        jac[free, :3, 1:3] = _skew_batch(p_w[free]) @ basis
        jac[free, 3:, 1:3] = basis
        cols[free, 1:3] = np.array([layout.axis_cols[pairs[h][1]] for h in free])[:, None] + np.arange(2)
    weight = np.array([w for _, _, w in pairs], dtype=float)
    return _Hypotheses(np.array(ids), np.cross(p_w, v), v, jac, cols, weight)


def _line_hypotheses(graph: FactorGraph, layout: ParameterLayout, index: _ObservationIndex,
                     rots: np.ndarray, trans: np.ndarray) -> Optional[_Hypotheses]:
    rows = defaultdict(list)
    for (line_id, axis_id), w in sorted(graph.weights.items()):
        if w > 0:
            rows[line_id].append((axis_id, w))

    ortho, fixed, pairs = [], [], []
    for line_id in sorted(graph.lines):
        vertex = graph.lines[line_id]
        if vertex.stage is Stage.ORTHO_FALLBACK:
            ortho.append(line_id)
        elif vertex.stage is Stage.FIXED_DIRECTION:
            fixed.append(line_id)
        elif vertex.stage is Stage.INITIAL_TEMP_AXIS:
            pairs.append((line_id, None, 1.0))
        else:
            choices = rows.get(line_id) or [(vertex.state.axis_ref, 1.0)]
            pairs.extend((line_id, axis_id, w) for axis_id, w in choices)

    parts = []
    if ortho:
        parts.append(_ortho_hypotheses(graph, layout, ortho))
    if fixed:
        parts.append(_fixed_direction_hypotheses(graph, layout, fixed))
    if pairs:
        parts.append(_anchored_hypotheses(graph, layout, index, rots, trans, pairs))
    if not parts:
        return None
    return _Hypotheses(*(np.concatenate(field_parts) for field_parts in zip(*parts)))


def _robust_weights(e: np.ndarray, info, width: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Huber as iteratively reweighted least squares.

    Returns the factor applied to both residual and Jacobian rows
    (sqrt(info * w) with w = min(1, width/|e|)) and the per-residual cost
    info * rho(|e|). 2 J'^T r' is then the exact gradient of the cost.
    """
    norm = np.linalg.norm(e, axis=1)
    if width is None:
        return np.sqrt(info) * np.ones_like(norm), info * norm * norm
    outside = norm > width
    weight = np.where(outside, width / np.where(outside, norm, 1.0), 1.0)
    rho = np.where(outside, 2.0 * width * norm - width * width, norm * norm)
    return np.sqrt(info * weight), info * rho


class _Assembler:
    def __init__(self, need_jacobian: bool):
        self.need_jacobian = need_jacobian
        self.residuals = []
        self.data, self.rows, self.cols = [], [], []
        self.offset = 0
        self.cost = 0.0

    def add(self, e: np.ndarray, cost: np.ndarray, blocks=()):
        """e: (m, 2) scaled residuals; cost: (m,) robust cost terms; blocks: [(J (m, 2, c), cols (m, c))]"""
        m = e.shape[0]
        if m == 0:
            return
        self.residuals.append(e.reshape(-1))
        self.cost += float(np.sum(cost))
        if self.need_jacobian:
            row_idx = self.offset + 2 * np.arange(m)[:, None, None] + np.arange(2)[None, :, None]
            for jac, cols in blocks:
                rows = np.broadcast_to(row_idx, jac.shape)
                col_idx = np.broadcast_to(cols[:, None, :], jac.shape)
                mask = col_idx >= 0
                self.data.append(jac[mask])
                self.rows.append(rows[mask])
                self.cols.append(col_idx[mask])
        self.offset += 2 * m

    def finish(self, size: int) -> Tuple[np.ndarray, Optional[sp.csr_matrix]]:
        r = np.concatenate(self.residuals) if self.residuals else np.zeros(0)
        if not self.need_jacobian:
            return r, None
        if self.data:
            data = np.concatenate(self.data)
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
        else:
            data, rows, cols = np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        jac = sp.coo_matrix((data, (rows, cols)), shape=(r.size, size)).tocsr()
        return r, jac


def _evaluate(graph: FactorGraph, cfg: LMConfig, layout: ParameterLayout,
              index: _ObservationIndex, need_jacobian: bool) -> Tuple[np.ndarray, Optional[sp.csr_matrix], float]:
    k = graph.k
    info = graph.information
    out = _Assembler(need_jacobian)

    rots = np.array([graph.poses[p].rotation for p in index.pose_ids])
    trans = np.array([graph.poses[p].translation for p in index.pose_ids])

    # point reprojection
    if index.pt_pose.size:
        pts = np.array([graph.points[i] for i in index.point_ids])[index.pt_point]
        rot = rots[index.pt_pose]
        rx = np.einsum("nij,nj->ni", rot, pts)
        p_c = rx + trans[index.pt_pose]
        ok = p_c[:, 2] > MIN_DEPTH
        if not ok.all():
            logger.warning(f"[BA] Dropped {int((~ok).sum())} point residuals behind the camera")
        rot, rx, p_c = rot[ok], rx[ok], p_c[ok]
        x, y, z = p_c[:, 0], p_c[:, 1], p_c[:, 2]
        e = np.column_stack([k.fx * x / z + k.cx, k.fy * y / z + k.cy]) - index.pt_pixels[ok]
        scale, cost = _robust_weights(e, info.point, cfg.huber_width)
        blocks = ()
        if need_jacobian:
            dproj = np.zeros((len(e), 2, 3))
            dproj[:, 0, 0] = k.fx / z
            dproj[:, 0, 2] = -k.fx * x / (z * z)
            dproj[:, 1, 1] = k.fy / z
            dproj[:, 1, 2] = -k.fy * y / (z * z)
            dproj *= scale[:, None, None]
            dpose = np.concatenate([-_skew_batch(rx), np.broadcast_to(np.eye(3), rx.shape[:1] + (3, 3))], axis=2)
            blocks = (
                (dproj @ dpose, index.pose_cols[index.pt_pose][ok]),
                (dproj @ rot, index.pt_cols[ok]),
            )
        out.add(e * scale[:, None], cost, blocks)

    # lines
    hyps = _line_hypotheses(graph, layout, index, rots, trans)
    if hyps is not None:
        empty = np.zeros(0, dtype=int)
        per_hyp = [index.seg_by_line.get(line_id, empty) for line_id in hyps.line_ids]
        obs_idx = np.concatenate(per_hyp)
        hyp_idx = np.repeat(np.arange(len(per_hyp)), [idx.size for idx in per_hyp])
    if hyps is not None and obs_idx.size:
        pose_pos = index.seg_pose[obs_idx]
        rot = rots[pose_pos]
        t = trans[pose_pos]
        rn = np.einsum("nij,nj->ni", rot, hyps.n[hyp_idx])
        rv = np.einsum("nij,nj->ni", rot, hyps.v[hyp_idx])
        n_c = rn + np.cross(t, rv)
        kl = k.line_matrix
        img = n_c @ kl.T
        rho2 = img[:, 0] ** 2 + img[:, 1] ** 2
        ok = rho2 >= 1e-20
        if not ok.all():
            logger.warning(f"[BA] Dropped {int((~ok).sum())} degenerate line projections")
        p1 = index.seg_p1[obs_idx][ok]
        p2 = index.seg_p2[obs_idx][ok]
        img, rho2 = img[ok], rho2[ok]
        rho = np.sqrt(rho2)
        d1 = np.sum(p1 * img, axis=1)
        d2 = np.sum(p2 * img, axis=1)
        e = np.column_stack([d1, d2]) / rho[:, None]
        scale, cost = _robust_weights(e, hyps.weight[hyp_idx][ok] * info.line, cfg.huber_width)
        blocks = ()
        if need_jacobian:
            planar = img.copy()
            planar[:, 2] = 0.0
            de_dl = np.stack([
                p1 / rho[:, None] - (d1 / rho ** 3)[:, None] * planar,
                p2 / rho[:, None] - (d2 / rho ** 3)[:, None] * planar,
            ], axis=1)
            de_dn = (de_dl @ kl) * scale[:, None, None]
            rot_ok, t_ok, rn_ok, rv_ok = rot[ok], t[ok], rn[ok], rv[ok]
            skew_t = _skew_batch(t_ok)
            dn_dline = np.concatenate([rot_ok, skew_t @ rot_ok], axis=2)
            dn_dpose = np.concatenate([-_skew_batch(rn_ok) - skew_t @ _skew_batch(rv_ok), -_skew_batch(rv_ok)], axis=2)
            blocks = (
                (de_dn @ dn_dpose, index.pose_cols[pose_pos[ok]]),
                (de_dn @ dn_dline @ hyps.jac[hyp_idx[ok]], hyps.cols[hyp_idx[ok]]),
            )
        out.add(e * scale[:, None], cost, blocks)

    # axis priors
    if graph.axes:
        sqrt_info = math.sqrt(info.axis)
        axis_ids = sorted(graph.axes)
        e = np.array([residual_axis(graph.axes[a]) for a in axis_ids]) * sqrt_info
        blocks = ()
        if need_jacobian:
            jac = []
            for a in axis_ids:
                v = graph.axes[a].vector
                chart = chart_rotation(graph.axes[a].prior_dir)
                jac.append(sqrt_info * latlong_gradient(chart @ v) @ chart @ tangent_basis(v))
            cols = np.array([_block(layout.axis_cols.get(a), 2) for a in axis_ids])
            blocks = ((np.array(jac), cols),)
        out.add(e, np.sum(e * e, axis=1), blocks)

    r, jac = out.finish(layout.size)
    return r, jac, out.cost


def linearize(graph: FactorGraph, cfg: LMConfig = LMConfig(), layout: ParameterLayout = None,
              index: _ObservationIndex = None) -> Linearization:
    """
    Stacked scaled residuals, sparse Jacobian and robustified cost.

    The residuals carry the Huber reweighting, so r @ r equals the cost only
    when every residual is inside the kernel; 2 J^T r is always its gradient.

    Raises:
        InvalidGraphError: inconsistent references
    """
    if layout is None:
        graph.validate()
        layout = build_layout(graph)
    index = index or _ObservationIndex(graph, layout)
    r, jac, cost = _evaluate(graph, cfg, layout, index, True)
    return Linearization(r, jac, cost)


def evaluate_cost(graph: FactorGraph, cfg: LMConfig = LMConfig(), layout: ParameterLayout = None,
                  index: _ObservationIndex = None) -> float:
    layout = layout or build_layout(graph)
    index = index or _ObservationIndex(graph, layout)
    return _evaluate(graph, cfg, layout, index, False)[2]


def retract(graph: FactorGraph, layout: ParameterLayout, delta: np.ndarray) -> FactorGraph:
    """Apply a tangent-space step to every free vertex"""
    new = graph.copy()
    for pose_id, c in layout.pose_cols.items():
        new.poses[pose_id] = graph.poses[pose_id].retract(delta[c:c + 6])
    for point_id, c in layout.point_cols.items():
        new.points[point_id] = np.asarray(graph.points[point_id]) + delta[c:c + 3]

    ortho = [line_id for line_id in layout.line_cols if graph.lines[line_id].stage is Stage.ORTHO_FALLBACK]
    if ortho:
        cols = np.array([layout.line_cols[i] for i in ortho])[:, None] + np.arange(4)
        step = delta[cols]
        psi = np.array([graph.lines[i].state.psi for i in ortho])
        moved = (Rotation.from_rotvec(psi) * Rotation.from_rotvec(step[:, :3])).as_rotvec().reshape(-1, 3)
        for line_id, rotvec, dphi in zip(ortho, moved, step[:, 3]):
            vertex = graph.lines[line_id]
            new.lines[line_id] = replace(vertex, state=OrthoLine(rotvec, vertex.state.phi + dphi))
    for line_id, c in layout.line_cols.items():
        vertex = graph.lines[line_id]
        if vertex.stage is Stage.FIXED_DIRECTION:
            state = replace(vertex.state, offset=vertex.state.offset + delta[c:c + 2])
        elif vertex.stage in (Stage.INITIAL_TEMP_AXIS, Stage.AXIS_ANCHORED):
            state = replace(vertex.state, inv_depth=vertex.state.inv_depth + delta[c])
        else:
            continue
        new.lines[line_id] = replace(vertex, state=state)
    for axis_id, c in layout.axis_cols.items():
        axis = graph.axes[axis_id]
        moved = rotate_direction(axis.vector, delta[c:c + 2])
        new.axes[axis_id] = replace(axis, dir=latlong_from_direction(moved))
    return new


def _clamp_inverse_depths(graph: FactorGraph, layout: ParameterLayout, delta: np.ndarray) -> np.ndarray:
    """Shrink the whole step so no inverse depth reaches zero"""
    alpha = 1.0
    for line_id, c in layout.line_cols.items():
        vertex = graph.lines[line_id]
        if vertex.stage in (Stage.INITIAL_TEMP_AXIS, Stage.AXIS_ANCHORED):
            r = vertex.state.inv_depth
            if r + delta[c] <= 0.0:
                alpha = min(alpha, 0.5 * r / -delta[c])
    if alpha < 1.0:
        logger.debug(f"[BA] Step rescaled by {alpha:.3e} to keep inverse depths positive")
    return delta * alpha


def _damped_step(hessian: np.ndarray, gradient: np.ndarray, lam: float) -> np.ndarray:
    """
    Solve (H + lam diag(H)) delta = -g through the Jacobi-scaled system, whose
    diagonal is one; unobserved gauge directions then only see lam.
    """
    diag = np.diag(hessian)
    scale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    scaled = hessian * scale[:, None] * scale[None, :]
    scaled[np.diag_indices_from(scaled)] += lam
    y = scipy.linalg.cho_solve(scipy.linalg.cho_factor(scaled), -gradient * scale)
    return y * scale


def solve(graph: FactorGraph, cfg: LMConfig = LMConfig()) -> OptimizationReport:
    """
    Levenberg-Marquardt with Marquardt diagonal damping.

    The damping follows the gain ratio between actual and predicted
    decrease: it shrinks by at most lambda_down after a good step and grows
    by lambda_up, doubling on each further rejection. Only cost-decreasing
    steps are accepted. On a non-finite cost the report is flagged as
    diverged and carries the best state reached.
    """
    graph.validate()
    layout = build_layout(graph)
    index = _ObservationIndex(graph, layout)
    start = time.perf_counter()

    lin = linearize(graph, cfg, layout, index)
    report = OptimizationReport(
        graph=graph,
        initial_cost=lin.cost,
        final_cost=lin.cost,
        iterations=0,
        accepted=0,
        wall_time=0.0,
        cost_trace=[lin.cost],
        parameter_counts=layout.counts(),
    )
    if not np.isfinite(lin.cost):
        logger.error("[BA] Initial cost is not finite")
        report.diverged = True
        report.wall_time = time.perf_counter() - start
        return report

    current = graph
    lam = cfg.initial_lambda
    growth = cfg.lambda_up
    while report.iterations < cfg.max_iters:
        if lin.cost <= cfg.abs_cost_tol or layout.size == 0:
            report.converged = True
            break
        iter_start = time.perf_counter()
        jac = lin.jacobian
        hessian = (jac.T @ jac).toarray()
        gradient = jac.T @ lin.residuals
        if not (np.all(np.isfinite(hessian)) and np.all(np.isfinite(gradient))):
            logger.error("[BA] Non-finite linearization, stopping")
            report.diverged = True
            break

        report.iterations += 1
        try:
            delta = _damped_step(hessian, gradient, lam)
        except (np.linalg.LinAlgError, ValueError):
            lam, growth = lam * growth, growth * 2.0
            report.iteration_times.append(time.perf_counter() - iter_start)
            if lam > cfg.max_lambda:
                break
            continue
        delta = _clamp_inverse_depths(current, layout, delta)
        if np.linalg.norm(delta) < cfg.param_tol:
            report.converged = True
            report.iteration_times.append(time.perf_counter() - iter_start)
            break

        # quadratic model of the robust cost: cost + 2 g.d + d.H.d
        predicted = -(2.0 * gradient @ delta + delta @ hessian @ delta)
        candidate = retract(current, layout, delta)
        new_cost = _evaluate(candidate, cfg, layout, index, False)[2]
        if np.isfinite(new_cost) and new_cost < lin.cost:
            decrease = (lin.cost - new_cost) / lin.cost
            gain = (lin.cost - new_cost) / predicted if predicted > 0 else 0.0
            logger.debug(
                f"[BA] Iteration {report.iterations}: cost {lin.cost:.6e} -> {new_cost:.6e}, "
                f"lambda {lam:.1e}, gain {gain:.2f}"
            )
            current = candidate
            lam = max(lam * max(1.0 / cfg.lambda_down, 1.0 - (2.0 * gain - 1.0) ** 3), cfg.min_lambda)
            growth = cfg.lambda_up
            lin = linearize(current, cfg, layout, index)
            report.accepted += 1
            report.cost_trace.append(lin.cost)
            report.iteration_times.append(time.perf_counter() - iter_start)
            if decrease < cfg.cost_tol:
                report.converged = True
                break
        else:
            lam, growth = lam * growth, growth * 2.0
            report.iteration_times.append(time.perf_counter() - iter_start)
            if lam > cfg.max_lambda:
                logger.debug(f"[BA] Damping reached {lam:.1e}, no further decrease")
                report.converged = True
                break

    report.wall_time = time.perf_counter() - start
    report.final_cost = lin.cost
    report.graph = current.copy()
    for line_id, vertex in current.lines.items():
        report.graph.lines[line_id] = replace(vertex, solves=vertex.solves + 1)
    logger.info(
        f"[BA] Cost {report.initial_cost:.6e} -> {report.final_cost:.6e} in {report.iterations} iterations "
        f"({report.accepted} accepted, {report.wall_time:.3f}s)"
    )
    return report


# ---------------------------------------------------------------------------
# Stage policy and the association loop
# ---------------------------------------------------------------------------

def _to_ortho(graph: FactorGraph, line_id: int) -> LineVertex:
    vertex = graph.lines[line_id]
    return replace(
        LineVertex.ortho(ortho_from_plucker(graph.line_plucker(line_id)), vertex.anchor_pixel, vertex.ref_keyframe),
        solves=vertex.solves,
    )


def stage_policy(graph: FactorGraph, table: AssociationTable = None) -> FactorGraph:
    """
    Move lines between optimization stages.

    Associated lines become AxisAnchored (ortho lines via the anchor-ray
    intersection). Unassociated lines stay in the first stage until solved
    once and then fall back to the orthonormal form; anchored lines that lost
    every axis fall back too. Lines absent from the table keep their stage,
    apart from the first-stage to fallback move.
    """
    table = table or AssociationTable()
    listed = table.lines()
    new = graph.copy()
    for line_id, vertex in graph.lines.items():
        if vertex.stage is Stage.FIXED_DIRECTION:
            continue
        row = {j: w for j, w in table.row(line_id).items() if j in graph.axes and w > 0}

        if row:
            best = min(row, key=lambda j: (-row[j], j))
            if vertex.stage is Stage.ORTHO_FALLBACK:
                try:
                    r = inverse_depth_from_plucker(
                        plucker_from_ortho(vertex.state), vertex.anchor_pixel,
                        graph.poses[vertex.ref_keyframe].inverse(), graph.k,
                    )
                except (ParallelRayError, BehindCameraError) as e:
                    logger.info(f"[BA] Line {line_id} stays in {vertex.stage.value}: {e}")
                    continue
            else:
                r = vertex.state.inv_depth
            anchored = AnchoredLine(vertex.anchor_pixel, vertex.ref_keyframe, r, best)
            if vertex.stage is not Stage.AXIS_ANCHORED:
                logger.info(f"[BA] Line {line_id}: {vertex.stage.value} -> {Stage.AXIS_ANCHORED.value} (axis {best})")
            new.lines[line_id] = replace(LineVertex.anchored(anchored), solves=vertex.solves)
            for key in [key for key in new.weights if key[0] == line_id]:
                del new.weights[key]
            for axis_id, w in row.items():
                new.weights[(line_id, axis_id)] = w
            continue

        released = line_id in listed or vertex.stage is Stage.INITIAL_TEMP_AXIS
        if not released:
            continue
        if vertex.stage is Stage.INITIAL_TEMP_AXIS and vertex.solves == 0:
            continue
        if vertex.stage in (Stage.INITIAL_TEMP_AXIS, Stage.AXIS_ANCHORED):
            logger.info(f"[BA] Line {line_id}: {vertex.stage.value} -> {Stage.ORTHO_FALLBACK.value}")
            new.lines[line_id] = _to_ortho(graph, line_id)
            for key in [key for key in new.weights if key[0] == line_id]:
                del new.weights[key]
    return new


def vp_temp_directions(graph: FactorGraph, vertical, tols: VPTolerances = VPTolerances(),
                       line_ids=None) -> Dict[int, np.ndarray]:
    """
    World direction of the VP cluster each line falls in within its reference
    keyframe: R_wc · vp_direction(vp). VPs are estimated from every segment
    of that keyframe under the world vertical. Lines classified as
    unstructured there get no entry.
    """
    wanted = set(graph.lines if line_ids is None else line_ids)
    frames = {graph.lines[line_id].ref_keyframe for line_id in wanted}
    directions = {}
    for pose_id in sorted(frames):
        observations = [o for o in graph.segment_obs if o.pose_id == pose_id]
        if not observations:
            continue
        pose = graph.poses[pose_id]
        result = estimate_frame([o.segment for o in observations], vertical, pose, graph.k, tols,
                                [o.line_id for o in observations])
        r_wc = pose.rotation.T
        for obs in observations:
            line_id = obs.line_id
            if line_id not in wanted or graph.lines[line_id].ref_keyframe != pose_id:
                continue
            label = result.classes.get(line_id)
            if label in result.vps:
                directions[line_id] = r_wc @ vp_direction(result.vps[label], graph.k)
    logger.debug(f"[BA] VP directions for {len(directions)}/{len(wanted)} lines")
    return directions


def start_fresh_lines(graph: FactorGraph, directions: Dict[int, np.ndarray]) -> FactorGraph:
    """
    Put never-solved orthonormal lines that have a VP direction into the
    first stage: anchored where the current line meets the anchor ray, with
    the VP direction as temporary axis.
    """
    new = graph.copy()
    for line_id, temp_dir in sorted(directions.items()):
        vertex = graph.lines.get(line_id)
        if vertex is None or vertex.stage is not Stage.ORTHO_FALLBACK or vertex.solves:
            continue
        try:
            r = inverse_depth_from_plucker(
                plucker_from_ortho(vertex.state), vertex.anchor_pixel,
                graph.poses[vertex.ref_keyframe].inverse(), graph.k,
            )
        except (ParallelRayError, BehindCameraError) as e:
            logger.info(f"[BA] Line {line_id} stays in {vertex.stage.value}: {e}")
            continue
        anchored = AnchoredLine(vertex.anchor_pixel, vertex.ref_keyframe, r)
        new.lines[line_id] = LineVertex.initial(anchored, temp_dir)
    return new


def frame_directions(graph: FactorGraph) -> Dict[int, List[Optional[np.ndarray]]]:
    """
    Per-frame VP direction of every non-baseline line: the direction in the
    segment's interpretation plane closest to the line's current 3D direction.
    """
    per_line = defaultdict(list)
    cache = {}
    for obs in graph.segment_obs:
        vertex = graph.lines[obs.line_id]
        if vertex.stage is Stage.FIXED_DIRECTION:
            continue
        if obs.line_id not in cache:
            v = graph.line_plucker(obs.line_id).v
            cache[obs.line_id] = v / np.linalg.norm(v)
        d = cache[obs.line_id]
        normal = interpretation_plane_normal(obs.segment, graph.poses[obs.pose_id], graph.k)
        in_plane = d - (d @ normal) * normal
        norm = np.linalg.norm(in_plane)
        per_line[obs.line_id].append(in_plane / norm if norm > 1e-9 else None)
    return dict(per_line)


@dataclass
class StructuralRun:
    graph: FactorGraph
    reports: List[OptimizationReport] = field(default_factory=list)
    axis_updates: List[AxisUpdate] = field(default_factory=list)
    tables: List[AssociationTable] = field(default_factory=list)


def _drop_axes(graph: FactorGraph, update: AxisUpdate) -> FactorGraph:
    """
    Remove the deleted axes. Released lines keep their surviving axes with
    renormalized weights; those left without one fall back to OrthoFallback.
    """
    new = graph.copy()
    gone = set(update.deleted_ids)
    for line_id in sorted(update.released_lines):
        vertex = graph.lines.get(line_id)
        if vertex is None or vertex.stage is not Stage.AXIS_ANCHORED:
            continue
        row = {j: w for j, w in graph.weight_row(line_id).items() if w > 0}
        if not row:
            row = {vertex.state.axis_ref: 1.0}
        remaining = {j: w for j, w in row.items() if j not in gone}
        if len(remaining) == len(row):
            continue
        for key in [key for key in new.weights if key[0] == line_id]:
            del new.weights[key]
        if not remaining:
            logger.info(f"[AXES] Line {line_id} released by axis deletion")
            new.lines[line_id] = _to_ortho(graph, line_id)
            continue
        total = sum(remaining.values())
        for j, w in remaining.items():
            new.weights[(line_id, j)] = w / total
        best = min(remaining, key=lambda j: (-remaining[j], j))
        new.lines[line_id] = replace(vertex, state=replace(vertex.state, axis_ref=best))
    for axis_id in gone:
        new.axes.pop(axis_id, None)
    for key in [key for key in new.weights if key[1] in gone]:
        del new.weights[key]
    return new


def optimize_structural(
    graph: FactorGraph,
    policy: AxisPolicy = AxisPolicy(),
    ms_cfg: MeanShiftConfig = MeanShiftConfig(),
    lm_cfg: LMConfig = LMConfig(),
    rounds: int = 3,
    vertical=None,
    vp_tols: VPTolerances = VPTolerances(),
) -> StructuralRun:
    """
    Association / optimization alternation.

    With a world vertical, never-solved orthonormal lines first move to the
    first stage on their VP direction (vp_temp_directions). Each round then
    proposes axes from unassociated lines, associates every line with the
    axes, applies the stage policy, solves, accepts or rejects the post-BA
    axis directions and prunes axes, releasing the members of deleted ones.
    """
    run = StructuralRun(graph=graph)
    current = graph
    if vertical is not None:
        fresh = [i for i, v in current.lines.items() if v.stage is Stage.ORTHO_FALLBACK and not v.solves]
        if fresh:
            current = start_fresh_lines(current, vp_temp_directions(current, vertical, vp_tols, fresh))
    for round_index in range(rounds):
        unassociated, structural = [], 0
        for line_id, vertex in sorted(current.lines.items()):
            if vertex.stage is Stage.AXIS_ANCHORED:
                structural += 1
            elif vertex.stage is not Stage.FIXED_DIRECTION:
                v = current.line_plucker(line_id).v
                unassociated.append((line_id, v / np.linalg.norm(v)))
        ratio = len(unassociated) / structural if structural else math.inf
        created = propose_axes(unassociated, list(current.axes.values()), ratio, policy, ms_cfg)
        if created:
            current = current.copy()
            for axis in created:
                current.axes[axis.id] = axis

        angles = line_axis_angles(frame_directions(current), list(current.axes.values()))
        table = associate(angles, list(current.axes.values()), policy)
        run.tables.append(table)
        current = stage_policy(current, table)
        for axis_id, axis in list(current.axes.items()):
            members = {k: w for (k, j), w in current.weights.items() if j == axis_id and w > 0}
            current.axes[axis_id] = replace(axis, member_lines=members)

        report = solve(current, lm_cfg)
        run.reports.append(report)
        pre_ba = list(current.axes.values())
        post = {axis_id: axis.dir for axis_id, axis in report.graph.axes.items()}
        update = update_axes(pre_ba, post, policy)
        run.axis_updates.append(update)

        current = report.graph.copy()
        for axis in update.axes:
            current.axes[axis.id] = axis
        current = _drop_axes(current, update)
        logger.info(
            f"[BA] Round {round_index + 1}/{rounds}: {len(current.axes)} axes, "
            f"{sum(v.stage is Stage.AXIS_ANCHORED for v in current.lines.values())} anchored lines, "
            f"cost {report.final_cost:.6e}"
        )
    run.graph = current
    return run

"""
Vanishing points under a vertical prior.

Given the vertical direction in the camera frame, the horizontal pair is a
one-parameter family: 360 proposals at 1° steps are scored against the
observed segments, the winner's clusters are refined by SVD and the
segments are reclassified against the refined points.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from errors import UnderdeterminedError, DegenerateClusterError
from geometry import CameraIntrinsics, Pose, Segment2D

logger = logging.getLogger(__name__)

VERTICAL = "vertical"
HORIZONTAL_0 = "horizontal-0"
HORIZONTAL_1 = "horizontal-1"
UNSTRUCTURED = "unstructured"
PROPOSAL_LABELS = (VERTICAL, HORIZONTAL_0, HORIZONTAL_1)

PROPOSAL_COUNT = 360
INFINITY_TOL = 1e-8


@dataclass(frozen=True)
class VPProposal:
    dirs: Tuple[np.ndarray, np.ndarray, np.ndarray]
    theta_index: int


@dataclass(frozen=True)
class VPTolerances:
    angle_tol_deg: float = 2.0
    dist_tol: float = 3.0
    min_cluster_size: int = 3

    def __post_init__(self):
        for name in ("angle_tol_deg", "dist_tol", "min_cluster_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VPTolerances.{name} must be positive")


@dataclass
class VPResult:
    vps: Dict[str, np.ndarray] = field(default_factory=dict)
    classes: Dict[object, str] = field(default_factory=dict)
    residuals: Dict[str, float] = field(default_factory=dict)
    proposal_count: int = 0
    best_index: Optional[int] = None


def horizontal_seed(d_v) -> np.ndarray:
    """
    Direction orthogonal to d_v.

    With d_v = [sin a sin b, sin a cos b, cos a], returns [cos b, -sin b, 0];
    at the pole b is taken as 0.
    """
    x, y, _ = np.asarray(d_v, dtype=float)
    b = 0.0 if (x == 0.0 and y == 0.0) else math.atan2(x, y)
    return np.array([math.cos(b), -math.sin(b), 0.0])


def generate_proposals(d_v) -> List[VPProposal]:
    d_v = np.asarray(d_v, dtype=float)
    d_v = d_v / np.linalg.norm(d_v)
    d_h = horizontal_seed(d_v)
    proposals = []
    for i in range(1, PROPOSAL_COUNT + 1):
        h = Rotation.from_rotvec(math.radians(i) * d_v).apply(d_h)
        h = h - (h @ d_v) * d_v
        h /= np.linalg.norm(h)
        proposals.append(VPProposal((d_v, h, np.cross(d_v, h)), i))
    return proposals


def _endpoints(segments: Sequence[Segment2D]) -> Tuple[np.ndarray, np.ndarray]:
    starts = np.array([seg.s for seg in segments], dtype=float).reshape(-1, 2)
    ends = np.array([seg.e for seg in segments], dtype=float).reshape(-1, 2)
    return starts, ends


def _consistency_angles(starts: np.ndarray, ends: np.ndarray, vps: np.ndarray) -> np.ndarray:
    """
    Angle (deg, mod 180) between each segment and the direction from its
    midpoint to each VP. vps has shape (..., m, 3); result (..., n, m).
    """
    seg_dir = ends - starts
    seg_dir = seg_dir / np.linalg.norm(seg_dir, axis=1, keepdims=True)
    mid = 0.5 * (starts + ends)
    unit = vps / np.linalg.norm(vps, axis=-1, keepdims=True)
    w = unit[..., 2]
    finite = np.abs(w) > INFINITY_TOL
    safe_w = np.where(finite, w, 1.0)
    points = unit[..., :2] / safe_w[..., None]
    # (..., 1, m, 2) - (n, 1, 2)
    to_vp = np.where(
        finite[..., None, :, None],
        points[..., None, :, :] - mid[:, None, :],
        unit[..., None, :, :2],
    )
    to_norm = np.linalg.norm(to_vp, axis=-1)
    cos = np.abs(np.sum(to_vp * seg_dir[:, None, :], axis=-1)) / np.where(to_norm > 0, to_norm, 1.0)
    angles = np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))
    return np.where(to_norm > 0, angles, 0.0)


def _proposal_vps(p: VPProposal, k: CameraIntrinsics) -> np.ndarray:
    return np.array([k.matrix @ d for d in p.dirs])


def score_proposal(p: VPProposal, segments: Sequence[Segment2D], k: CameraIntrinsics, angle_tol_deg: float) -> int:
    """Number of segments pointing within angle_tol_deg at one of the proposal's VPs"""
    if not segments:
        return 0
    starts, ends = _endpoints(segments)
    angles = _consistency_angles(starts, ends, _proposal_vps(p, k))
    return int(np.sum(angles.min(axis=1) <= angle_tol_deg))


def refine_vp(cluster: Sequence[Segment2D]) -> np.ndarray:
    """
    Least-squares intersection of the segments' infinite lines.

    Rows of M are the unit-normalized lines s̃ × ẽ; the result is the right
    singular vector of the smallest singular value, unit norm, w >= 0.

    Raises:
        UnderdeterminedError: fewer than two segments
        DegenerateClusterError: all segments on one line
    """
    if len(cluster) < 2:
        raise UnderdeterminedError(f"Need at least 2 segments to refine a VP, got {len(cluster)}")
    m = np.array([seg.homogeneous_line() for seg in cluster])
    m = m / np.linalg.norm(m, axis=1, keepdims=True)
    _, sv, vt = np.linalg.svd(m)
    if sv[1] <= 1e-12 * sv[0]:
        raise DegenerateClusterError("Cluster segments are collinear")
    x = vt[-1]
    x = x / np.linalg.norm(x)
    if abs(x[2]) > 1e-12:
        return x if x[2] > 0 else -x
    lead = x[int(np.argmax(np.abs(x)))]
    return x if lead > 0 else -x


def vp_residual(cluster: Sequence[Segment2D], vp) -> float:
    """‖Mx‖ for the row-normalized line matrix of a cluster and a unit VP"""
    m = np.array([seg.homogeneous_line() for seg in cluster])
    m = m / np.linalg.norm(m, axis=1, keepdims=True)
    x = np.asarray(vp, dtype=float)
    return float(np.linalg.norm(m @ (x / np.linalg.norm(x))))


def vp_direction(vp, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame unit direction whose image is vp"""
    d = k.inverse_matrix @ np.asarray(vp, dtype=float)
    return d / np.linalg.norm(d)


def classify_segments(
    segments: Sequence[Segment2D],
    vps: Sequence[np.ndarray],
    dist_tol: float,
    labels: Sequence[str] = (HORIZONTAL_0, HORIZONTAL_1, VERTICAL),
    angle_tol_deg: float = 2.0,
    ids: Sequence = None,
) -> Dict[object, str]:
    """
    Assign each segment to its most consistent VP.

    Finite VPs use the perpendicular pixel distance of the VP to the segment's
    infinite line (within dist_tol); VPs at infinity use the angle between
    the segment and the VP direction (within angle_tol_deg). Measures are
    compared as fractions of their tolerance; ties go to the lower index.
    """
    ids = list(range(len(segments))) if ids is None else list(ids)
    if not segments:
        return {}
    if not len(vps):
        return {seg_id: UNSTRUCTURED for seg_id in ids}

    lines = np.array([seg.homogeneous_line() for seg in segments])
    lines = lines / np.linalg.norm(lines[:, :2], axis=1, keepdims=True)
    starts, ends = _endpoints(segments)
    ratios = np.empty((len(segments), len(vps)))
    for j, vp in enumerate(vps):
        unit = np.asarray(vp, dtype=float) / np.linalg.norm(vp)
        if abs(unit[2]) > INFINITY_TOL:
            ratios[:, j] = np.abs(lines @ (unit / unit[2])) / dist_tol
        else:
            ratios[:, j] = _consistency_angles(starts, ends, unit[None, :])[:, 0] / angle_tol_deg

    classes = {}
    for i, seg_id in enumerate(ids):
        j = int(np.argmin(ratios[i]))
        classes[seg_id] = labels[j] if ratios[i, j] <= 1.0 else UNSTRUCTURED
    return classes


def estimate_frame(
    segments: Sequence[Segment2D],
    d_v_world,
    pose: Pose,
    k: CameraIntrinsics,
    tols: VPTolerances = VPTolerances(),
    ids: Sequence = None,
) -> VPResult:
    """
    Vertical-prior VP estimation for one frame (pose is T_cw).

    Proposals are ranked by consistency count, ties broken by the smaller
    summed inlier angle. Clusters of the winning proposal with at least
    min_cluster_size segments are refined and kept; every segment is then
    reclassified against the kept VPs.
    """
    ids = list(range(len(segments))) if ids is None else list(ids)
    d_v = pose.rotation @ np.asarray(d_v_world, dtype=float)
    proposals = generate_proposals(d_v)
    result = VPResult(proposal_count=len(proposals))
    if not segments:
        return result

    starts, ends = _endpoints(segments)
    all_vps = np.einsum("ij,pkj->pki", k.matrix, np.array([p.dirs for p in proposals]))
    angles = _consistency_angles(starts, ends, all_vps)  # (P, n, 3)
    best_angle = angles.min(axis=2)
    inliers = best_angle <= tols.angle_tol_deg
    counts = inliers.sum(axis=1)
    spread = np.where(inliers, best_angle, 0.0).sum(axis=1)
    best = min(range(len(proposals)), key=lambda i: (-counts[i], spread[i], i))
    logger.debug(f"[VP] Best proposal {proposals[best].theta_index}° with {counts[best]}/{len(segments)} consistent segments")

    if counts[best] == 0:
        result.classes = {seg_id: UNSTRUCTURED for seg_id in ids}
        return result
    result.best_index = proposals[best].theta_index

    owner = np.argmin(angles[best], axis=1)
    kept_vps: List[np.ndarray] = []
    kept_labels: List[str] = []
    for j, label in enumerate(PROPOSAL_LABELS):
        members = [segments[i] for i in np.flatnonzero(inliers[best] & (owner == j))]
        if len(members) < tols.min_cluster_size:
            continue
        coarse = all_vps[best, j] / np.linalg.norm(all_vps[best, j])
        try:
            vp = refine_vp(members)
        except (UnderdeterminedError, DegenerateClusterError) as e:
            logger.warning(f"[VP] Keeping coarse {label} VP: {e}")
            vp = coarse
        result.residuals[label] = vp_residual(members, vp)
        kept_vps.append(vp)
        kept_labels.append(label)
    result.vps = dict(zip(kept_labels, kept_vps))
    result.classes = classify_segments(
        segments, kept_vps, tols.dist_tol, kept_labels, tols.angle_tol_deg, ids
    )
    return result

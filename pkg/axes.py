"""
Principal-axis lifecycle: creation by mean shift over line directions,
probabilistic line-axis association, and post-BA update/deletion.

Directions are sign-free everywhere: a line direction and its negation
describe the same axis.
"""
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from errors import NoCandidatesError, InconsistentGraphError
from geometry import (
    AxisDirection,
    direction_from_latlong,
    latlong_from_direction,
    line_angle_deg,
)

logger = logging.getLogger(__name__)

MERGE_ANGLE_DEG = 10.0
UNSTRUCTURED_RATIO = 0.6


@dataclass(frozen=True)
class PrincipalAxis:
    id: int
    dir: AxisDirection
    prior_dir: np.ndarray
    change_count: int = 0
    member_lines: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        prior = np.array(self.prior_dir, dtype=float).reshape(3)
        prior = prior / np.linalg.norm(prior)
        prior.setflags(write=False)
        object.__setattr__(self, "prior_dir", prior)
        if self.change_count < 0:
            raise ValueError(f"Axis {self.id}: change_count must be >= 0")

    @classmethod
    def from_vector(cls, axis_id: int, v, member_lines: Mapping[int, float] = None) -> "PrincipalAxis":
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        return cls(axis_id, latlong_from_direction(v), v, 0, dict(member_lines or {}))

    @property
    def vector(self) -> np.ndarray:
        return direction_from_latlong(self.dir)


@dataclass
class AssociationTable:
    """Per-pair weights w_kj; rows sum to one or are all zero (unassociated)"""
    weights: Dict[Tuple[int, int], float] = field(default_factory=dict)
    unassociated: Set[int] = field(default_factory=set)

    def row(self, line_id: int) -> Dict[int, float]:
        return {j: w for (k, j), w in self.weights.items() if k == line_id}

    def lines(self) -> Set[int]:
        return {k for k, _ in self.weights} | set(self.unassociated)

    def is_associated(self, line_id: int) -> bool:
        return any(w > 0 for w in self.row(line_id).values())

    def best_axis(self, line_id: int) -> Optional[int]:
        row = {j: w for j, w in self.row(line_id).items() if w > 0}
        if not row:
            return None
        # highest weight, lower axis id on ties
        return min(row, key=lambda j: (-row[j], j))


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth_deg: float = 15.0
    kernel_c: float = 1.0 / (2.0 * 5.0 ** 2)
    max_iters: int = 50
    convergence_deg: float = 0.1
    merge_angle_deg: float = MERGE_ANGLE_DEG

    def __post_init__(self):
        for name in ("bandwidth_deg", "kernel_c", "max_iters", "convergence_deg", "merge_angle_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MeanShiftConfig.{name} must be positive")


@dataclass(frozen=True)
class AxisPolicy:
    creation_threshold: int = 20
    merge_angle_deg: float = MERGE_ANGLE_DEG
    unstructured_ratio: float = UNSTRUCTURED_RATIO
    update_angle_deg: float = 2.0
    max_changes: int = 3
    gate_angle_deg: float = 15.0
    assoc_sigma_deg: float = 5.0
    min_axis_support: int = 5

    def __post_init__(self):
        for name in ("creation_threshold", "update_angle_deg", "max_changes",
                     "gate_angle_deg", "assoc_sigma_deg", "min_axis_support"):
            if not getattr(self, name) > 0:
                raise ValueError(f"AxisPolicy.{name} must be positive")
        if self.merge_angle_deg != MERGE_ANGLE_DEG:
            raise ValueError(f"AxisPolicy.merge_angle_deg is fixed at {MERGE_ANGLE_DEG}")
        if self.unstructured_ratio != UNSTRUCTURED_RATIO:
            raise ValueError(f"AxisPolicy.unstructured_ratio is fixed at {UNSTRUCTURED_RATIO}")


class AxisUpdate(NamedTuple):
    axes: List[PrincipalAxis]
    deleted_ids: List[int]
    released_lines: Set[int]


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Largest-magnitude component positive"""
    return v if v[int(np.argmax(np.abs(v)))] >= 0 else -v


def _sign_free_angles_deg(modes: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    dots = np.clip(np.abs(modes @ dirs.T), 0.0, 1.0)
    return np.degrees(np.arccos(dots))


def kernel_density(d, dirs, cfg: MeanShiftConfig) -> float:
    """Truncated Gaussian kernel density of directions around d"""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    d = np.asarray(d, dtype=float)
    angles = _sign_free_angles_deg(d[None, :] / np.linalg.norm(d), dirs)[0]
    inside = angles <= cfg.bandwidth_deg
    return float(np.sum(np.exp(-cfg.kernel_c * angles[inside] ** 2)))


def mean_shift_directions(dirs: Sequence, cfg: MeanShiftConfig) -> List[np.ndarray]:
    """
    Modes of a set of line directions.

    Every input direction seeds a trajectory; each step replaces the query by
    the kernel-weighted mean of its neighbours within the bandwidth (flipped
    onto the query's hemisphere) and renormalizes. Converged seeds are merged
    when closer than merge_angle_deg; modes come back ordered by density.

    Raises:
        NoCandidatesError: empty input
    """
    if len(dirs) == 0:
        raise NoCandidatesError("Mean shift needs at least one direction")
    data = np.asarray(dirs, dtype=float).reshape(-1, 3)
    data = data / np.linalg.norm(data, axis=1, keepdims=True)
    modes = data.copy()

    for iteration in range(cfg.max_iters):
        dots = modes @ data.T
        signs = np.where(dots < 0.0, -1.0, 1.0)
        angles = np.degrees(np.arccos(np.clip(np.abs(dots), 0.0, 1.0)))
        weights = np.where(angles <= cfg.bandwidth_deg, np.exp(-cfg.kernel_c * angles ** 2), 0.0)
        shifted = (weights * signs) @ data
        norms = np.linalg.norm(shifted, axis=1, keepdims=True)
        shifted = np.where(norms > 0, shifted / np.where(norms > 0, norms, 1.0), modes)
        shift_deg = np.degrees(np.arccos(np.clip(np.abs(np.sum(shifted * modes, axis=1)), 0.0, 1.0)))
        modes = shifted
        if shift_deg.max() < cfg.convergence_deg:
            logger.debug(f"[AXES] Mean shift converged after {iteration + 1} iterations")
            break

    densities = [kernel_density(m, data, cfg) for m in modes]
    order = sorted(range(len(modes)), key=lambda i: -densities[i])
    unique: List[np.ndarray] = []
    for i in order:
        mode = _canonical_sign(modes[i])
        if all(line_angle_deg(mode, u) >= cfg.merge_angle_deg for u in unique):
            unique.append(mode)
    return unique


def propose_axes(
    unclassified: Sequence[Tuple[int, np.ndarray]],
    existing: Sequence[PrincipalAxis],
    local_ratio: float,
    policy: AxisPolicy,
    cfg: MeanShiftConfig,
) -> List[PrincipalAxis]:
    """
    Create new principal axes from unclassified structural lines.

    Args:
        unclassified: (line id, unit direction) of lines without an axis
        existing: current axes
        local_ratio: non-structural / structural line count in the local map
        policy: creation thresholds
        cfg: mean shift settings

    Returns:
        New axes (possibly empty), best candidate first
    """
    if len(unclassified) < policy.creation_threshold:
        logger.debug(f"[AXES] {len(unclassified)} unclassified lines, below threshold {policy.creation_threshold}")
        return []
    if not local_ratio > policy.unstructured_ratio:
        logger.debug(f"[AXES] Local ratio {local_ratio:.2f} does not exceed {policy.unstructured_ratio}")
        return []

    ids = [line_id for line_id, _ in unclassified]
    dirs = np.asarray([d for _, d in unclassified], dtype=float)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    modes = mean_shift_directions(dirs, cfg)

    candidates = []
    for mode in modes:
        closest = min((line_angle_deg(mode, ax.vector) for ax in existing), default=180.0)
        if closest < policy.merge_angle_deg:
            logger.info(f"[AXES] Candidate {np.round(mode, 4).tolist()} discarded, {closest:.2f}° from an existing axis")
            continue
        angles = _sign_free_angles_deg(mode[None, :], dirs)[0]
        support = angles <= cfg.bandwidth_deg
        if support.sum() < policy.min_axis_support:
            continue
        members = {ids[i]: 1.0 for i in np.flatnonzero(support)}
        candidates.append((float(angles[support].mean()), -int(support.sum()), mode, members))

    candidates.sort(key=lambda c: (c[0], c[1]))
    next_id = max((ax.id for ax in existing), default=-1) + 1
    created: List[PrincipalAxis] = []
    for mean_angle, _, mode, members in candidates:
        if any(line_angle_deg(mode, ax.vector) < policy.merge_angle_deg for ax in created):
            continue
        axis = PrincipalAxis.from_vector(next_id, mode, members)
        logger.info(f"[AXES] Created axis {next_id} with {len(members)} lines, mean angle {mean_angle:.2f}°")
        created.append(axis)
        next_id += 1
    return created


def mean_axis_angle(frame_dirs: Sequence[Optional[np.ndarray]], axis_dir) -> Optional[float]:
    """Arithmetic mean over frames of the angle to the axis; frames without a direction are skipped"""
    angles = [line_angle_deg(d, axis_dir) for d in frame_dirs if d is not None]
    if not angles:
        return None
    return float(np.mean(angles))


def line_axis_angles(
    frame_dirs: Mapping[int, Sequence[Optional[np.ndarray]]],
    axes: Sequence[PrincipalAxis],
) -> Dict[int, Dict[int, float]]:
    """Mean per-frame VP-direction angle of every line to every axis"""
    table: Dict[int, Dict[int, float]] = {}
    for line_id, dirs in frame_dirs.items():
        row = {}
        for ax in axes:
            angle = mean_axis_angle(dirs, ax.vector)
            if angle is not None:
                row[ax.id] = angle
        table[line_id] = row
    return table


def associate(
    lines: Mapping[int, Mapping[int, float]],
    axes: Sequence[PrincipalAxis],
    policy: AxisPolicy,
) -> AssociationTable:
    """
    Soft line-axis association.

    Pairs beyond the gate get weight 0; the rest score exp(-a²/2σ²) and are
    normalized per line. A line with every pair gated is unassociated.
    """
    table = AssociationTable()
    two_sigma2 = 2.0 * policy.assoc_sigma_deg ** 2
    for line_id, angles in lines.items():
        scores = {}
        for ax in axes:
            angle = angles.get(ax.id)
            if angle is None or angle > policy.gate_angle_deg:
                scores[ax.id] = 0.0
            else:
                scores[ax.id] = math.exp(-angle * angle / two_sigma2)
        total = sum(scores.values())
        for axis_id, score in scores.items():
            table.weights[(line_id, axis_id)] = score / total if total > 0 else 0.0
        if not total > 0:
            table.unassociated.add(line_id)
    logger.debug(f"[AXES] Associated {len(lines) - len(table.unassociated)}/{len(lines)} lines")
    return table


def update_axes(
    axes: Sequence[PrincipalAxis],
    post_ba_dirs: Mapping[int, AxisDirection],
    policy: AxisPolicy,
) -> AxisUpdate:
    """
    Accept or reject post-BA axis directions and prune axes.

    Raises:
        InconsistentGraphError: an axis has no post-BA direction
    """
    missing = [ax.id for ax in axes if ax.id not in post_ba_dirs]
    if missing:
        raise InconsistentGraphError(f"No post-BA direction for axes {missing}")

    updated: List[PrincipalAxis] = []
    for ax in axes:
        new_dir = post_ba_dirs[ax.id]
        new_vec = direction_from_latlong(new_dir)
        change = line_angle_deg(ax.prior_dir, new_vec)
        if change > policy.update_angle_deg:
            logger.info(f"[AXES] Axis {ax.id} moved {change:.2f}°, adopting post-BA direction")
            updated.append(replace(ax, dir=new_dir, prior_dir=new_vec, change_count=ax.change_count + 1))
        else:
            updated.append(ax)

    deleted: List[int] = []
    kept: List[PrincipalAxis] = []
    for ax in sorted(updated, key=lambda a: a.id):
        if ax.change_count > policy.max_changes:
            logger.info(f"[AXES] Axis {ax.id} changed {ax.change_count} times, deleting")
            deleted.append(ax.id)
        elif any(line_angle_deg(ax.vector, other.vector) < policy.merge_angle_deg for other in kept):
            logger.info(f"[AXES] Axis {ax.id} is adjacent to an earlier axis, deleting")
            deleted.append(ax.id)
        else:
            kept.append(ax)

    released: Set[int] = set()
    for ax in updated:
        if ax.id in deleted:
            released.update(ax.member_lines)
    kept_ids = {ax.id for ax in kept}
    return AxisUpdate([ax for ax in updated if ax.id in kept_ids], deleted, released)

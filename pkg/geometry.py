"""
Line representations and camera geometry.

Poses map points from frame b into frame a: p_a = R @ p_b + t. Factor graph
vertices store T_cw (world -> camera); reconstruction of anchored lines takes
the reference pose as T_wc. Plücker pairs are kept unnormalized.
"""
import math
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from errors import (
    InvalidLineError,
    InvalidDirectionError,
    BehindCameraError,
    DegenerateProjectionError,
    ParallelRayError,
)

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
DEGENERATE_PROJECTION_TOL = 1e-20
TWO_PI = 2.0 * math.pi
CHART_POLE_MARGIN_DEG = 40.0


def _frozen(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


def tangent_basis(v) -> np.ndarray:
    """
    Orthonormal basis (3x2) of the plane orthogonal to v.

    The seed axis is the coordinate axis least aligned with v, so the basis
    is a deterministic, smooth-enough function of v away from switch points.
    """
    v = np.asarray(v, dtype=float)
    u = v / np.linalg.norm(v)
    seed = np.zeros(3)
    seed[int(np.argmin(np.abs(u)))] = 1.0
    b1 = np.cross(seed, u)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(u, b1)
    return np.column_stack([b1, b2])


def line_angle_deg(a, b) -> float:
    """Sign-free angle between two line directions, degrees in [0, 90]"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, c)))


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]"""
    w = math.remainder(a, TWO_PI)
    return math.pi if w == -math.pi else w


# ---------------------------------------------------------------------------
# Poses and intrinsics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if np.linalg.norm(r.T @ r - np.eye(3)) >= 1e-9 or np.linalg.det(r) <= 0:
            raise ValueError("Pose rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other first"""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def retract(self, delta) -> "Pose":
        """
        Left perturbation used by the solver: R <- Exp(dθ) R, t <- t + dt,
        with delta = [dθ, dt].
        """
        delta = np.asarray(delta, dtype=float)
        rot = Rotation.from_rotvec(delta[:3]) * Rotation.from_matrix(np.array(self.rotation))
        return Pose(rot.as_matrix(), self.translation + delta[3:])

    @property
    def center(self) -> np.ndarray:
        """Origin of frame a expressed in frame b: -Rᵀt (camera centre for T_cw)"""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def line_matrix(self) -> np.ndarray:
        """K_L mapping a camera-frame Plücker moment to an image line"""
        return np.array([
            [self.fy, 0.0, 0.0],
            [0.0, self.fx, 0.0],
            [-self.fy * self.cx, -self.fx * self.cy, self.fx * self.fy],
        ])

    def project(self, p_c) -> np.ndarray:
        x, y, z = p_c
        return np.array([self.fx * x / z + self.cx, self.fy * y / z + self.cy])

    def back_project(self, pixel) -> np.ndarray:
        """Ray through a pixel, scaled to unit depth"""
        u, v = pixel
        return np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])


# ---------------------------------------------------------------------------
# Line representations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PluckerLine:
    n: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = _frozen(self.n, (3,))
        v = _frozen(self.v, (3,))
        v_norm = np.linalg.norm(v)
        if not v_norm > 0:
            raise InvalidLineError("Plücker direction must be non-zero")
        if abs(n @ v) > ORTHO_TOL * max(1.0, np.linalg.norm(n) * v_norm):
            raise InvalidLineError(f"Plücker constraint violated: n·v = {n @ v:.3e}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "v", v)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.n, self.v])

    def closest_point(self) -> np.ndarray:
        """Point of the line closest to the origin"""
        return np.cross(self.v, self.n) / (self.v @ self.v)


def plucker_from_points(p1, p2) -> PluckerLine:
    """
    Plücker line through two points: n = p1 × p2, v = p2 − p1.

    Raises:
        InvalidLineError: when the points coincide
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if np.linalg.norm(p2 - p1) <= 1e-12:
        raise InvalidLineError(f"Degenerate line: identical points {p1.tolist()}")
    return PluckerLine(np.cross(p1, p2), p2 - p1)


def plucker_from_point_direction(p, v) -> PluckerLine:
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return PluckerLine(np.cross(p, v), v)


def plucker_distance(a: PluckerLine, b: PluckerLine) -> float:
    """Projective distance: unit-normalized 6-vectors, min over sign"""
    x = a.as_vector() / np.linalg.norm(a.as_vector())
    y = b.as_vector() / np.linalg.norm(b.as_vector())
    return float(min(np.linalg.norm(x - y), np.linalg.norm(x + y)))


@dataclass(frozen=True)
class AxisDirection:
    phi: float
    theta: float


def latlong_from_direction(v) -> AxisDirection:
    """
    Latitude/longitude of a direction.

    phi = arccos(v_z/|v|), theta = atan2(v_x, v_y) + pi mapped into [0, 2pi).
    At the poles theta is pi by convention.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise InvalidDirectionError("Cannot take latitude/longitude of a zero vector")
    phi = math.acos(max(-1.0, min(1.0, v[2] / norm)))
    if v[0] == 0.0 and v[1] == 0.0:
        return AxisDirection(phi, math.pi)
    theta = (math.atan2(v[0], v[1]) + math.pi) % TWO_PI
    return AxisDirection(phi, theta)


def direction_from_latlong(a: AxisDirection) -> np.ndarray:
    sp = math.sin(a.phi)
    return np.array([-sp * math.sin(a.theta), -sp * math.cos(a.theta), math.cos(a.phi)])


def latlong_gradient(v) -> np.ndarray:
    """d(phi, theta)/dv for a unit vector off the poles (2x3)"""
    x, y, z = v
    rho2 = max(x * x + y * y, 1e-300)
    grad = np.zeros((2, 3))
    grad[0, 2] = -1.0 / math.sqrt(max(1.0 - z * z, 1e-300))
    grad[1, 0] = y / rho2
    grad[1, 1] = -x / rho2
    return grad


_POLE_SWAP = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def chart_rotation(reference) -> np.ndarray:
    """
    Rotation taking directions into a latitude/longitude chart whose poles
    sit at least CHART_POLE_MARGIN_DEG away from `reference`.

    Identity for references near the equator; otherwise a quarter turn about
    x that moves the z pole onto the y axis.
    """
    r = np.asarray(reference, dtype=float)
    r = r / np.linalg.norm(r)
    if abs(r[2]) <= math.cos(math.radians(CHART_POLE_MARGIN_DEG)):
        return np.eye(3)
    return _POLE_SWAP


def rotate_direction(v, delta) -> np.ndarray:
    """Move unit v along its tangent plane by delta (2-vector, radians)"""
    v = np.asarray(v, dtype=float)
    basis = tangent_basis(v)
    step = basis @ np.asarray(delta, dtype=float)
    moved = Rotation.from_rotvec(np.cross(v, step)).apply(v)
    return moved / np.linalg.norm(moved)


@dataclass(frozen=True)
class OrthoLine:
    """Orthonormal representation: U = Exp(psi) in SO(3), W = R(phi) in SO(2)"""
    psi: np.ndarray
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", _frozen(self.psi, (3,)))
        object.__setattr__(self, "phi", float(self.phi))

    @property
    def u(self) -> np.ndarray:
        return Rotation.from_rotvec(np.array(self.psi)).as_matrix()

    def retract(self, delta) -> "OrthoLine":
        """U <- U Exp(dψ), phi <- phi + dφ"""
        delta = np.asarray(delta, dtype=float)
        rot = Rotation.from_rotvec(np.array(self.psi)) * Rotation.from_rotvec(delta[:3])
        return OrthoLine(rot.as_rotvec(), self.phi + delta[3])


def ortho_from_plucker(line: PluckerLine) -> OrthoLine:
    n, v = line.n, line.v
    n_norm = np.linalg.norm(n)
    v_norm = np.linalg.norm(v)
    if not v_norm > 0:
        raise InvalidLineError("Orthonormal representation needs a non-zero direction")
    u2 = v / v_norm
    if n_norm <= 1e-15 * v_norm:
        # line through the origin, any normal orthogonal to v will do
        u1 = tangent_basis(u2)[:, 0]
    else:
        u1 = n / n_norm
        u1 = u1 - (u1 @ u2) * u2
        u1 /= np.linalg.norm(u1)
    u3 = np.cross(u1, u2)
    rotvec = Rotation.from_matrix(np.column_stack([u1, u2, u3])).as_rotvec()
    return OrthoLine(rotvec, math.atan2(v_norm, n_norm))


def plucker_from_ortho(o: OrthoLine) -> PluckerLine:
    u = o.u
    return PluckerLine(math.cos(o.phi) * u[:, 0], math.sin(o.phi) * u[:, 1])


@dataclass(frozen=True)
class AnchoredLine:
    """
    Three-parameter structural line: fixed anchor pixel in the reference
    keyframe, inverse depth along its ray, and the axis it is bound to.
    axis_ref None means the line uses a temporary per-line direction.
    """
    anchor_pixel: np.ndarray
    ref_keyframe: int
    inv_depth: float
    axis_ref: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "anchor_pixel", _frozen(self.anchor_pixel, (2,)))
        object.__setattr__(self, "inv_depth", float(self.inv_depth))


@dataclass(frozen=True)
class FixedDirectionLine:
    """Line with a frozen direction and two positional parameters"""
    direction: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        d = np.array(self.direction, dtype=float).reshape(3)
        object.__setattr__(self, "direction", _frozen(d / np.linalg.norm(d), (3,)))
        object.__setattr__(self, "offset", _frozen(self.offset, (2,)))

    @property
    def basis(self) -> np.ndarray:
        return tangent_basis(self.direction)

    def to_plucker(self) -> PluckerLine:
        return plucker_from_point_direction(self.basis @ self.offset, self.direction)

    @classmethod
    def from_plucker(cls, line: PluckerLine, direction) -> "FixedDirectionLine":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        p = line.closest_point()
        p = p - (p @ d) * d
        return cls(d, tangent_basis(d).T @ p)


@dataclass(frozen=True)
class Segment2D:
    s: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        s = _frozen(self.s, (2,))
        e = _frozen(self.e, (2,))
        if np.array_equal(s, e):
            raise InvalidLineError(f"Segment endpoints coincide at {s.tolist()}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "e", e)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.s + self.e)

    @property
    def direction(self) -> np.ndarray:
        d = self.e - self.s
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.e - self.s))

    def homogeneous_line(self) -> np.ndarray:
        return np.cross(np.append(self.s, 1.0), np.append(self.e, 1.0))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def anchor_point(line: AnchoredLine, ref_pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """World point of the anchor at the line's inverse depth (ref_pose is T_wc)"""
    if not line.inv_depth > 0:
        raise BehindCameraError(f"Inverse depth must be positive, got {line.inv_depth}")
    p_c = k.back_project(line.anchor_pixel) / line.inv_depth
    return ref_pose.transform_point(p_c)


def reconstruct_line(line: AnchoredLine, axis_dir, ref_pose: Pose, k: CameraIntrinsics) -> PluckerLine:
    """
    Plücker line of an anchored structural line.

    Args:
        line: anchored line (anchor pixel, inverse depth)
        axis_dir: unit direction of its axis (or temporary direction)
        ref_pose: T_wc of the reference keyframe
        k: camera intrinsics

    Returns:
        [P_w × v; v]
    """
    p_w = anchor_point(line, ref_pose, k)
    return plucker_from_point_direction(p_w, axis_dir)


def inverse_depth_from_plucker(line: PluckerLine, anchor_pixel, ref_pose: Pose, k: CameraIntrinsics) -> float:
    """
    Inverse depth of the point on the anchor ray closest to a line.

    Exact when the line meets the ray; the closest point otherwise.
    ref_pose is T_wc.
    """
    center = ref_pose.translation
    ray = ref_pose.rotation @ k.back_project(anchor_pixel)
    u = line.v / np.linalg.norm(line.v)
    w0 = center - line.closest_point()
    a = ray @ ray
    b = ray @ u
    d = ray @ w0
    e = u @ w0
    denom = a - b * b
    if denom <= 1e-12 * a:
        raise ParallelRayError("Line is parallel to the anchor ray")
    depth = (b * e - d) / denom
    if not depth > 0:
        raise BehindCameraError(f"Line meets the anchor ray behind the camera (depth {depth:.3e})")
    return 1.0 / depth


def transform_line(line: PluckerLine, pose: Pose) -> PluckerLine:
    """Move a line into the frame of pose (T_cw)"""
    r = pose.rotation
    rv = r @ line.v
    return PluckerLine(r @ line.n + np.cross(pose.translation, rv), rv)


def project_line(line_c: PluckerLine, k: CameraIntrinsics) -> np.ndarray:
    return k.line_matrix @ line_c.n


def line_reprojection_error(image_line, obs: Segment2D) -> np.ndarray:
    """Signed pixel distances of the segment endpoints to the image line"""
    image_line = np.asarray(image_line, dtype=float)
    denom2 = image_line[0] ** 2 + image_line[1] ** 2
    if denom2 < DEGENERATE_PROJECTION_TOL:
        raise DegenerateProjectionError("Projected line has no finite image")
    denom = math.sqrt(denom2)
    return np.array([
        (np.append(obs.s, 1.0) @ image_line) / denom,
        (np.append(obs.e, 1.0) @ image_line) / denom,
    ])


def interpretation_plane_normal(obs: Segment2D, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """World-frame unit normal of the plane through the camera and a segment (pose is T_cw)"""
    normal_c = k.matrix.T @ obs.homogeneous_line()
    normal_w = pose.rotation.T @ normal_c
    return normal_w / np.linalg.norm(normal_w)

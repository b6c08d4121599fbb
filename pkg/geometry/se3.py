"""
SE(3) value types and operations.

Conventions
-----------
- One right-handed world frame, +z up, meters and radians.
- Quaternions are (w, x, y, z) and canonicalized so the first non-zero
  component is positive; q and -q therefore construct equal Rotations.
- Rotation perturbations are left-multiplied world-frame rotation vectors:
  R' = exp(delta) * R.
- The 4x4 matrix form is an import/export codec only.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation
from scipy.spatial.transform import Slerp

from utils.errors import GeometryError

TOL = 1e-9


# ---------------------------------------------------------------------------
# Quaternion kernels (numpy, wxyz)
# ---------------------------------------------------------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return q / np.linalg.norm(q)
    s = math.sin(0.5 * theta) / theta
    return np.array([math.cos(0.5 * theta), s * v[0], s * v[1], s * v[2]])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    if q[0] < 0:
        q = -q
    vn = float(np.linalg.norm(q[1:]))
    if vn < 1e-15:
        return 2.0 * q[1:] / max(q[0], 1e-15)
    angle = 2.0 * math.atan2(vn, q[0])
    return q[1:] * (angle / vn)


def quat_geodesic(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation, in [0, pi]."""
    r = quat_mul(quat_conj(a), b)
    return 2.0 * math.atan2(float(np.linalg.norm(r[1:])), abs(float(r[0])))


def quat_canonical(q: np.ndarray) -> np.ndarray:
    for c in q:
        if c > 0:
            return q
        if c < 0:
            return -q
    return q


def world_half_extents(q: np.ndarray, extent: Sequence[float]) -> np.ndarray:
    """Half-sizes of the world-aligned box enclosing a rotated box."""
    return np.abs(quat_to_matrix(q)) @ np.asarray(extent, dtype=float)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

def _check_finite(values: Iterable[float], what: str):
    for v in values:
        if not math.isfinite(v):
            raise GeometryError(f"{what} components must be finite")


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite((self.x, self.y, self.z), "Point3")

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Point3":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def distance(self, other: "Point3") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))


@dataclass(frozen=True)
class UnitVector3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite((self.x, self.y, self.z), "UnitVector3")
        n = math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2)
        if abs(n - 1.0) > TOL:
            raise GeometryError(f"UnitVector3 norm must be 1, got {n}")

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "UnitVector3":
        v = np.asarray(a, dtype=float)
        n = float(np.linalg.norm(v))
        if n < 1e-12:
            raise GeometryError("cannot normalize a zero vector")
        v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z), stored in canonical sign."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        _check_finite(q, "Rotation")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > TOL:
            raise GeometryError(f"Rotation quaternion must have unit norm, got {n}")
        q = quat_canonical(q)
        object.__setattr__(self, "w", float(q[0]))
        object.__setattr__(self, "x", float(q[1]))
        object.__setattr__(self, "y", float(q[2]))
        object.__setattr__(self, "z", float(q[3]))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: Sequence[float]) -> "Rotation":
        """Build from any non-zero (w, x, y, z); the quaternion is normalized."""
        q = np.asarray(q, dtype=float)
        n = float(np.linalg.norm(q))
        if not math.isfinite(n) or n < 1e-12:
            raise GeometryError("quaternion must be finite and non-zero")
        q = q / n
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    @classmethod
    def from_rotvec(cls, v: Sequence[float]) -> "Rotation":
        return cls.from_array(quat_from_rotvec(np.asarray(v, dtype=float)))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        a = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise GeometryError("rotation axis must be non-zero")
        return cls.from_rotvec(a / n * angle)

    @classmethod
    def about_z(cls, angle: float) -> "Rotation":
        return cls.from_axis_angle((0.0, 0.0, 1.0), angle)

    @classmethod
    def from_matrix(cls, m: Sequence[Sequence[float]]) -> "Rotation":
        xyzw = ScipyRotation.from_matrix(np.asarray(m, dtype=float)).as_quat()
        return cls.from_array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])

    @classmethod
    def from_scipy(cls, r: ScipyRotation) -> "Rotation":
        xyzw = r.as_quat()
        return cls.from_array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])

    def to_scipy(self) -> ScipyRotation:
        return ScipyRotation.from_quat([self.x, self.y, self.z, self.w])

    @property
    def q(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def as_rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.q)

    def axis(self, name: str) -> np.ndarray:
        """World direction of the local x, y or z axis."""
        index = {"x": 0, "y": 1, "z": 2}.get(name)
        if index is None:
            raise GeometryError(f"unknown axis '{name}'")
        return self.as_matrix()[:, index]

    def rotate(self, v: Sequence[float]) -> np.ndarray:
        return quat_rotate(self.q, np.asarray(v, dtype=float))

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation.from_array(quat_mul(self.q, other.q))

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def isclose(self, other: "Rotation", tol: float = TOL) -> bool:
        return rotation_geodesic(self, other) <= tol


class GripperCommand(str, Enum):
    OPEN = "open"
    CLOSE = "close"
    HOLD = "hold"


@dataclass(frozen=True)
class Pose:
    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: Point3 = field(default_factory=lambda: Point3(0.0, 0.0, 0.0))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(Rotation.identity(), Point3(x, y, z))

    @classmethod
    def from_arrays(cls, q: Sequence[float], t: Sequence[float]) -> "Pose":
        return cls(Rotation.from_array(q), Point3.from_array(t))

    @classmethod
    def from_quaternion(cls, w: float, x: float, y: float, z: float, translation: Sequence[float]) -> "Pose":
        return cls.from_arrays([w, x, y, z], translation)

    @classmethod
    def from_matrix(cls, m: Sequence[Sequence[float]]) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise GeometryError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise GeometryError("pose matrix bottom row must be [0, 0, 0, 1]")
        rot = m[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) <= 0:
            raise GeometryError("pose matrix rotation block is not a proper rotation")
        return cls(Rotation.from_matrix(rot), Point3.from_array(m[:3, 3]))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation.as_array()
        return m

    def as_rows(self) -> list:
        return [[float(v) for v in row] for row in self.as_matrix()]

    @property
    def position(self) -> np.ndarray:
        return self.translation.as_array()

    def compose(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def inverse(self) -> "Pose":
        return pose_inverse(self)

    def transform(self, x: Point3) -> Point3:
        return transform_point(self, x)

    def transform_array(self, v: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation.q, v) + self.translation.as_array()

    def isclose(self, other: "Pose", tol: float = TOL) -> bool:
        return (self.translation.distance(other.translation) <= tol
                and rotation_geodesic(self.rotation, other.rotation) <= tol)


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    gripper: GripperCommand = GripperCommand.HOLD

    def __post_init__(self):
        if not isinstance(self.gripper, GripperCommand):
            object.__setattr__(self, "gripper", GripperCommand(self.gripper))


@dataclass(frozen=True)
class Trajectory:
    waypoints: Tuple[Waypoint, ...]
    stage_index: int
    converged: bool = True
    terminal_cost: float = 0.0
    objective: float = 0.0
    iteration_log: Tuple[Tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if not self.waypoints:
            raise GeometryError("trajectory must contain at least one waypoint")
        if self.stage_index < 1:
            raise GeometryError("stage_index must be >= 1")
        object.__setattr__(self, "waypoints", tuple(self.waypoints))

    @property
    def terminal(self) -> Waypoint:
        return self.waypoints[-1]

    def path_length(self) -> float:
        total = 0.0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            total += a.pose.translation.distance(b.pose.translation)
        return total


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its corners."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    @classmethod
    def from_center(cls, center: Sequence[float], half: Sequence[float]) -> "Box":
        c = np.asarray(center, dtype=float)
        h = np.asarray(half, dtype=float)
        return cls(tuple(float(v) for v in c - h), tuple(float(v) for v in c + h))

    @property
    def volume(self) -> float:
        return float(np.prod(np.maximum(np.asarray(self.hi) - np.asarray(self.lo), 0.0)))

    def contains(self, p: Sequence[float], tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= np.asarray(self.lo) - tol) and np.all(p <= np.asarray(self.hi) + tol))

    def clamp(self, p: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(p, np.asarray(self.lo)), np.asarray(self.hi))

    def distance(self, p: Sequence[float]) -> float:
        p = np.asarray(p, dtype=float)
        d = np.maximum(np.maximum(np.asarray(self.lo) - p, p - np.asarray(self.hi)), 0.0)
        return float(np.linalg.norm(d))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def pose_compose(a: Pose, b: Pose) -> Pose:
    """Rigid transform applying b first, then a."""
    q = quat_mul(a.rotation.q, b.rotation.q)
    t = quat_rotate(a.rotation.q, b.translation.as_array()) + a.translation.as_array()
    return Pose(Rotation.from_array(q), Point3.from_array(t))


def pose_inverse(a: Pose) -> Pose:
    inv = a.rotation.inverse()
    t = -quat_rotate(inv.q, a.translation.as_array())
    return Pose(inv, Point3.from_array(t))


def rotation_geodesic(a: Rotation, b: Rotation) -> float:
    return quat_geodesic(a.q, b.q)


def transform_point(p: Pose, x: Point3) -> Point3:
    return Point3.from_array(p.transform_array(x.as_array()))


def interpolate(a: Pose, b: Pose, t: float) -> Pose:
    """Linear in translation, shortest-geodesic slerp in rotation."""
    if not (0.0 <= t <= 1.0):
        raise GeometryError(f"interpolation parameter must lie in [0, 1], got {t}")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return interpolate_many(a, b, [t])[0]


def interpolate_many(a: Pose, b: Pose, ts: Sequence[float]) -> List[Pose]:
    """``interpolate`` at several parameters with a single slerp."""
    ts = np.asarray(ts, dtype=float)
    if ts.size == 0:
        return []
    if np.any((ts < 0.0) | (ts > 1.0)):
        raise GeometryError(f"interpolation parameters must lie in [0, 1], got {ts.tolist()}")
    key_rots = ScipyRotation.concatenate([a.rotation.to_scipy(), b.rotation.to_scipy()])
    rots = Slerp([0.0, 1.0], key_rots)(ts)
    ta, tb = a.translation.as_array(), b.translation.as_array()
    return [
        Pose(Rotation.from_scipy(rots[i]), Point3.from_array((1.0 - t) * ta + t * tb))
        for i, t in enumerate(ts)
    ]


def perturb_pose(p: Pose, delta: np.ndarray) -> Pose:
    """Apply a 6-vector (translation, world rotation vector) perturbation."""
    q = quat_mul(quat_from_rotvec(np.asarray(delta[3:], dtype=float)), p.rotation.q)
    t = p.translation.as_array() + np.asarray(delta[:3], dtype=float)
    return Pose(Rotation.from_array(q), Point3.from_array(t))

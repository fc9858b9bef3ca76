"""Rigid-body math, pinhole camera, triangle meshes and rotation sampling.

Quaternions are stored scalar-first, ``(w, x, y, z)``. Poses map object
coordinates into the camera frame: ``p_cam = R @ p_obj + t`` (meters).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation
from scipy.stats import qmc

from .errors import NonPositiveDepth

ORTHO_TOL = 1e-9
REGISTRATION_LEVEL = 2


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    # canonical hemisphere keeps conversions deterministic
    return -q if w < 0 else q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    # grouped as (aw*bv + bw*av) + av x bv so that conj(q) * q cancels exactly
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            (aw * bx + bw * ax) + (ay * bz - az * by),
            (aw * by + bw * ay) + (az * bx - ax * bz),
            (aw * bz + bw * az) + (ax * by - ay * bx),
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_exp(rotvec) -> np.ndarray:
    """Unit quaternion of the rotation vector ``rotvec`` (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        return quat_normalize(np.array([1.0, *(0.5 * rotvec)]))
    axis = rotvec / angle
    return np.array([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])


def quat_log(q) -> np.ndarray:
    """Rotation vector of ``q``, angle in [0, pi]."""
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return v / s * angle


def slerp(a, b, fraction: float) -> np.ndarray:
    a = quat_normalize(a)
    b = quat_normalize(b)
    if np.dot(a, b) < 0:
        b = -b
    delta = quat_log(quat_mul(b, quat_conj(a)))
    return quat_normalize(quat_mul(quat_exp(fraction * delta), a))


def rotation_geodesic_deg(a, b) -> float:
    """Angle of the relative rotation between unit quaternions, degrees."""
    rel = quat_mul(quat_conj(quat_normalize(a)), quat_normalize(b))
    # atan2 form of 2*acos(|w|): well conditioned near zero
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))))


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return quat_to_matrix(quat_exp(axis / np.linalg.norm(axis) * angle))


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from the object frame to the camera frame."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL or np.linalg.det(R) < 0:
            raise ValueError("pose rotation is not a proper orthonormal matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, q, t) -> Pose:
        return cls(quat_to_matrix(q), t)

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @property
    def quat(self) -> np.ndarray:
        return matrix_to_quat(self.R)

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.t)

    def transform(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def with_translation(self, t) -> Pose:
        return Pose(self.R, t)

    def with_rotation(self, R) -> Pose:
        return Pose(R, self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def __repr__(self):
        q = np.round(self.quat, 6).tolist()
        return f"Pose(q={q}, t={np.round(self.t, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    R = a.R @ b.R
    # re-orthonormalize so long chains stay inside the invariant tolerance
    u, _, vt = np.linalg.svd(R)
    return Pose(u @ vt, a.R @ b.t + a.t)


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def default(cls) -> CameraModel:
        return cls(600.0, 600.0, 320.0, 240.0, 640, 480)


def project(camera: CameraModel, point) -> np.ndarray:
    x, y, z = np.asarray(point, dtype=np.float64)
    if not z > 0:
        raise NonPositiveDepth(f"cannot project point with z={z}")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])


def project_points(camera: CameraModel, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("cannot project points with z <= 0")
    return np.stack(
        [camera.fx * points[:, 0] / z + camera.cx, camera.fy * points[:, 1] / z + camera.cy],
        axis=1,
    )


def backproject(camera: CameraModel, pixel, z: float) -> np.ndarray:
    if not z > 0:
        raise NonPositiveDepth(f"cannot backproject at depth {z}")
    u, v = pixel
    return np.array([z * (u - camera.cx) / camera.fx, z * (v - camera.cy) / camera.fy, z])


# ---------------------------------------------------------------------------
# meshes


def _max_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    try:
        points = points[ConvexHull(points).vertices]
    except (QhullError, ValueError):
        pass  # degenerate (planar/collinear): fall back to all points
    if len(points) <= 4000:
        return float(pdist(points).max())
    best = 0.0
    for i in range(0, len(points), 1000):
        d = np.linalg.norm(points[i : i + 1000, None, :] - points[None, :, :], axis=-1)
        best = max(best, float(d.max()))
    return best


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle soup in the object frame; ``scale`` multiplies every vertex."""

    vertices: np.ndarray
    faces: np.ndarray
    scale: float = 1.0
    name: str = field(default="mesh", compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise ValueError("mesh needs at least one vertex and one face")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face index out of range")
        if not self.scale > 0:
            raise ValueError("mesh scale must be positive")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "scale", float(self.scale))

    @functools.cached_property
    def _base_diameter(self) -> float:
        return _max_pairwise_distance(self.vertices)

    @property
    def diameter(self) -> float:
        return self.scale * self._base_diameter

    @property
    def scaled_vertices(self) -> np.ndarray:
        return self.vertices * self.scale

    def with_scale(self, scale: float) -> TriangleMesh:
        mesh = TriangleMesh(self.vertices, self.faces, scale, self.name)
        if "_base_diameter" in self.__dict__:
            mesh.__dict__["_base_diameter"] = self._base_diameter
        return mesh

    def rescaled(self, factor: float) -> TriangleMesh:
        return self.with_scale(self.scale * factor)


def load_obj(path) -> TriangleMesh:
    """Read the ``v``/``f`` subset of Wavefront OBJ (1-based triangle faces)."""
    vertices, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "v":
            vertices.append([float(x) for x in tokens[1:4]])
        elif tokens[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in tokens[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}:{lineno}: only triangle faces are supported")
            faces.append([i - 1 for i in idx])
    return TriangleMesh(np.array(vertices), np.array(faces), name=Path(path).stem)


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.scaled_vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# rotation sampling


@dataclass(frozen=True, eq=False)
class RotationGrid:
    rotations: np.ndarray  # (N, 4) unit quaternions, wxyz

    @property
    def count(self) -> int:
        return len(self.rotations)

    def __len__(self):
        return len(self.rotations)

    def __iter__(self):
        return iter(self.rotations)

    def matrices(self) -> np.ndarray:
        return np.stack([quat_to_matrix(q) for q in self.rotations]) if len(self) else np.zeros((0, 3, 3))


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere vertices and faces; 12, 42, 162, ... vertices."""
    phi = (1 + 5**0.5) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]  # fmt: skip
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def look_at_rotation(view_dir) -> np.ndarray:
    """Rotation that puts the camera on ``view_dir`` (object frame), looking at the origin."""
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    z_axis = -d
    up = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(up, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return np.stack([x_axis, y_axis, z_axis])


@functools.lru_cache(maxsize=8)
def _grid_quats(level: int, n_inplane: int) -> np.ndarray:
    if level == 0:
        return np.array([[1.0, 0.0, 0.0, 0.0]])
    views, _ = icosphere(level - 1)
    quats = []
    for d in views:
        R_view = look_at_rotation(d)
        for k in range(n_inplane):
            Rz = axis_angle_matrix([0, 0, 1], 2 * np.pi * k / n_inplane)
            quats.append(matrix_to_quat(Rz @ R_view))
    out = np.array(quats)
    out.flags.writeable = False
    return out


def sample_rotation_grid(level: int = REGISTRATION_LEVEL, n_inplane: int = 6) -> RotationGrid:
    """Icosphere viewpoints times in-plane rotations.

    ``level`` 0 gives the identity only; level ``L >= 1`` uses the icosahedron
    subdivided ``L - 1`` times (12, 42, 162 ... views). The default level with
    six in-plane steps gives the 252 registration hypotheses.
    """
    if level < 0 or n_inplane < 1:
        raise ValueError("level must be >= 0 and n_inplane >= 1")
    return RotationGrid(_grid_quats(level, n_inplane))


def sample_rotations_near(center, count: int, max_angle: float = np.radians(30), seed: int = 0) -> RotationGrid:
    """``count`` rotations within ``max_angle`` of ``center``, center first.

    Offsets are scrambled-Halton points mapped uniformly into the axis-angle
    ball of radius ``max_angle`` and applied on the left (camera frame).
    """
    if count < 1 or not 0 < max_angle <= np.pi:
        raise ValueError("count must be >= 1 and max_angle in (0, pi]")
    center = quat_normalize(center)
    quats = [center]
    if count > 1:
        u = qmc.Halton(d=3, scramble=True, seed=seed).random(count - 1)
        cos_t = 1 - 2 * u[:, 0]
        sin_t = np.sqrt(np.clip(1 - cos_t**2, 0, None))
        phi = 2 * np.pi * u[:, 1]
        axes = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
        radii = max_angle * np.cbrt(u[:, 2])
        for axis, r in zip(axes, radii):
            quats.append(quat_normalize(quat_mul(quat_exp(axis * r), center)))
    return RotationGrid(np.array(quats))


def covering_radius_deg(grid: RotationGrid, n_samples: int = 20000, seed: int = 0) -> float:
    """Monte Carlo estimate of the largest distance from SO(3) to the grid."""
    samples = Rotation.random(n_samples, random_state=seed).as_quat()  # xyzw
    samples = samples[:, [3, 0, 1, 2]]
    dots = np.abs(samples @ grid.rotations.T).max(axis=1)
    return float(np.degrees(2 * np.arccos(np.clip(dots.min(), -1, 1))))

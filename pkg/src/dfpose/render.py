"""Deterministic z-buffer rasterizer for binary masks and depth maps.

Masks are ``(h, w)`` boolean arrays and depth maps ``(h, w)`` float arrays in
meters with 0 meaning "no measurement". Pixel ``(u, v)`` is sampled at its
center, which sits at integer image coordinates (the same convention as
:func:`dfpose.geom.project`). Ties on shared edges follow the top-left rule so
every interior pixel is owned by exactly one triangle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import EmptyMask, EmptyRender, NoValidDepth
from .geom import CameraModel, Pose, TriangleMesh

NEAR_PLANE = 0.01


@numba.njit(cache=True, inline="always", error_model="numpy")
def _inside(w, top_left):
    return w > 0.0 or (w == 0.0 and top_left)


@numba.njit(cache=True, error_model="numpy")
def _raster_triangle(u0, v0, z0, u1, v1, z1, u2, v2, z2, buf, x0, y0, x1, y1):
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    if area == 0.0:
        return
    if area < 0.0:
        u1, v1, z1, u2, v2, z2 = u2, v2, z2, u1, v1, z1
        area = -area
    ja = max(int(np.ceil(min(v0, v1, v2))), y0)
    jb = min(int(np.floor(max(v0, v1, v2))), y1 - 1)
    ia = max(int(np.ceil(min(u0, u1, u2))), x0)
    ib = min(int(np.floor(max(u0, u1, u2))), x1 - 1)
    if ia > ib or ja > jb:
        return
    # edge k runs a->b and is opposite vertex k; top-left edges own ties
    ax = (u1, u2, u0)
    ay = (v1, v2, v0)
    dx = (u2 - u1, u0 - u2, u1 - u0)
    dy = (v2 - v1, v0 - v2, v1 - v0)
    tl0 = dy[0] < 0.0 or (dy[0] == 0.0 and dx[0] > 0.0)
    tl1 = dy[1] < 0.0 or (dy[1] == 0.0 and dx[1] > 0.0)
    tl2 = dy[2] < 0.0 or (dy[2] == 0.0 and dx[2] > 0.0)
    iz0 = 1.0 / z0
    iz1 = 1.0 / z1
    iz2 = 1.0 / z2
    for j in range(ja, jb + 1):
        py = float(j)
        # w_k(px) = dx_k*(py-ay_k) - dy_k*(px-ax_k) is affine in px: bound the
        # span analytically, then run the exact tests on it (one pixel slack)
        lo = float(ia)
        hi = float(ib)
        empty = False
        for k in range(3):
            c = dx[k] * (py - ay[k]) + dy[k] * ax[k]
            if dy[k] < 0.0:
                lo = max(lo, c / dy[k])
            elif dy[k] > 0.0:
                hi = min(hi, c / dy[k])
            elif c < 0.0:
                empty = True
        if empty or lo > hi + 1.0:
            continue
        i_lo = max(int(np.floor(lo)) - 1, ia)
        i_hi = min(int(np.ceil(hi)) + 1, ib)
        for i in range(i_lo, i_hi + 1):
            px = float(i)
            w0 = dx[0] * (py - ay[0]) - dy[0] * (px - ax[0])
            if not _inside(w0, tl0):
                continue
            w1 = dx[1] * (py - ay[1]) - dy[1] * (px - ax[1])
            if not _inside(w1, tl1):
                continue
            w2 = dx[2] * (py - ay[2]) - dy[2] * (px - ax[2])
            if not _inside(w2, tl2):
                continue
            # perspective-correct depth: 1/z is affine in screen space
            z = area / (w0 * iz0 + w1 * iz1 + w2 * iz2)
            if z < buf[j - y0, i - x0]:
                buf[j - y0, i - x0] = z


@numba.njit(cache=True, error_model="numpy")
def _rasterize(verts, faces, fx, fy, cx, cy, near, x0, y0, x1, y1, buf):
    """Fill ``buf`` (window rows y0..y1, cols x0..x1) with the nearest z."""
    pts = np.empty((4, 3))
    clipped = np.empty((4, 3))
    for f in range(faces.shape[0]):
        n_in = 0
        for k in range(3):
            if verts[faces[f, k], 2] >= near:
                n_in += 1
        if n_in == 0:
            continue
        # clip the triangle against z = near (Sutherland-Hodgman, one plane)
        m = 0
        for k in range(3):
            a = verts[faces[f, k]]
            b = verts[faces[f, (k + 1) % 3]]
            a_in = a[2] >= near
            b_in = b[2] >= near
            if a_in:
                clipped[m, 0] = a[0]
                clipped[m, 1] = a[1]
                clipped[m, 2] = a[2]
                m += 1
            if a_in != b_in:
                s = (near - a[2]) / (b[2] - a[2])
                clipped[m, 0] = a[0] + s * (b[0] - a[0])
                clipped[m, 1] = a[1] + s * (b[1] - a[1])
                clipped[m, 2] = near
                m += 1
        for k in range(m):
            z = clipped[k, 2]
            pts[k, 0] = fx * clipped[k, 0] / z + cx
            pts[k, 1] = fy * clipped[k, 1] / z + cy
            pts[k, 2] = z
        for k in range(1, m - 1):
            _raster_triangle(
                pts[0, 0], pts[0, 1], pts[0, 2],
                pts[k, 0], pts[k, 1], pts[k, 2],
                pts[k + 1, 0], pts[k + 1, 1], pts[k + 1, 2],
                buf, x0, y0, x1, y1,
            )  # fmt: skip


@dataclass(frozen=True, eq=False)
class Window:
    """Rendered depth over the sub-rectangle ``[y0:y1, x0:x1]`` of the image."""

    x0: int
    y0: int
    depth: np.ndarray  # 0 where empty

    @property
    def x1(self) -> int:
        return self.x0 + self.depth.shape[1]

    @property
    def y1(self) -> int:
        return self.y0 + self.depth.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return self.depth > 0

    def area(self) -> int:
        return int(np.count_nonzero(self.depth))

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[self.y0 : self.y1, self.x0 : self.x1]

    def full(self, shape) -> tuple[np.ndarray, np.ndarray]:
        depth = np.zeros(shape)
        depth[self.y0 : self.y1, self.x0 : self.x1] = self.depth
        return depth > 0, depth


def camera_vertices(mesh: TriangleMesh, pose: Pose) -> np.ndarray:
    return (mesh.scaled_vertices @ pose.R.T) + pose.t


def render_window(mesh: TriangleMesh, pose: Pose, camera: CameraModel, near: float = NEAR_PLANE) -> Window:
    """Rasterize only the image rectangle the mesh can touch."""
    verts = np.ascontiguousarray(camera_vertices(mesh, pose))
    w, h = camera.width, camera.height
    z = verts[:, 2]
    if np.all(z < near):
        raise EmptyRender("mesh lies entirely behind the near plane")
    if np.all(z >= near):
        u = camera.fx * verts[:, 0] / z + camera.cx
        v = camera.fy * verts[:, 1] / z + camera.cy
        x0 = max(int(np.ceil(u.min())), 0)
        x1 = min(int(np.floor(u.max())) + 1, w)
        y0 = max(int(np.ceil(v.min())), 0)
        y1 = min(int(np.floor(v.max())) + 1, h)
    else:
        x0, y0, x1, y1 = 0, 0, w, h  # clipped triangles can reach anywhere
    if x0 >= x1 or y0 >= y1:
        raise EmptyRender("mesh projects outside the image")
    buf = np.full((y1 - y0, x1 - x0), np.inf)
    _rasterize(verts, mesh.faces, camera.fx, camera.fy, camera.cx, camera.cy, near, x0, y0, x1, y1, buf)
    hit = np.isfinite(buf)
    if not hit.any():
        raise EmptyRender("no pixel center is covered by the mesh")
    buf[~hit] = 0.0
    return Window(x0, y0, buf)


def render(mesh: TriangleMesh, pose: Pose, camera: CameraModel, near: float = NEAR_PLANE) -> tuple[np.ndarray, np.ndarray]:
    """Binary mask and z-buffer depth of ``mesh`` at ``pose``.

    Raises :class:`EmptyRender` if no pixel is covered.
    """
    return render_window(mesh, pose, camera, near).full(camera.shape)


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def mask_centroid(mask: np.ndarray) -> np.ndarray:
    """Mean ``(u, v)`` of the set pixels."""
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise EmptyMask("centroid of an empty mask")
    return np.array([cols.mean(), rows.mean()])


def median_masked_depth(depth: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        raise EmptyMask("median depth over an empty mask")
    values = depth[mask]
    values = values[values > 0]
    if len(values) == 0:
        raise NoValidDepth("no positive depth under the mask")
    return float(np.median(values))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a) + np.count_nonzero(b) - inter
    return inter / union if union else 0.0


# ---------------------------------------------------------------------------
# dumps


def write_mask_pgm(mask: np.ndarray, path) -> None:
    """Binary PGM (P5): 0 background, 255 object."""
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((np.asarray(mask, dtype=bool).astype(np.uint8) * 255).tobytes())


def read_mask_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w) > 0


def write_depth_raw(depth: np.ndarray, path) -> None:
    """Little-endian: uint32 width, uint32 height, then float32 row-major."""
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(np.asarray(depth, dtype="<f4").tobytes())


def read_depth_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h = struct.unpack("<II", data[:8])
    return np.frombuffer(data[8:], dtype="<f4", count=w * h).reshape(h, w).astype(np.float64)

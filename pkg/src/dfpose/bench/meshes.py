"""Built-in parametric meshes, all centered on their bounding-box center."""

from __future__ import annotations

import numpy as np

from ..geom import TriangleMesh, icosphere, load_obj


def _centered(vertices, faces, name) -> TriangleMesh:
    vertices = np.asarray(vertices, dtype=np.float64)
    vertices = vertices - 0.5 * (vertices.min(axis=0) + vertices.max(axis=0))
    return TriangleMesh(vertices, np.asarray(faces), name=name)


def sphere(radius: float = 0.05, subdivisions: int = 3) -> TriangleMesh:
    v, f = icosphere(subdivisions)
    return TriangleMesh(v * radius, f, name="sphere")


def box(size=(0.1, 0.1, 0.1), subdivisions: int = 0) -> TriangleMesh:
    """Axis-aligned box; each face split into ``(n+1)^2`` quads."""
    sx, sy, sz = np.asarray(size, dtype=np.float64) / 2
    n = subdivisions + 1
    grid = np.linspace(-1.0, 1.0, n + 1)
    vertices, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            base = len(vertices)
            a, b = [k for k in range(3) if k != axis]
            for s in grid:
                for r in grid:
                    p = np.zeros(3)
                    p[axis] = sign
                    p[a], p[b] = s, r
                    vertices.append(p)
            for i in range(n):
                for j in range(n):
                    q00 = base + i * (n + 1) + j
                    q01, q10, q11 = q00 + 1, q00 + n + 1, q00 + n + 2
                    faces += [(q00, q10, q11), (q00, q11, q01)]
    return TriangleMesh(np.array(vertices) * [sx, sy, sz], faces, name="box")


def extrude(polygon, height: float, top_scale: float = 1.0, top_center=None, name="prism") -> TriangleMesh:
    """Closed prism/frustum over a star-shaped polygon (fanned from its first kernel point)."""
    poly = np.asarray(polygon, dtype=np.float64)
    n = len(poly)
    kernel = poly.mean(axis=0) if top_center is None else np.asarray(top_center, dtype=np.float64)
    top = kernel + top_scale * (poly - kernel)
    vertices = [(x, y, -height / 2) for x, y in poly] + [(x, y, height / 2) for x, y in top]
    vertices += [(*kernel, -height / 2), (*kernel, height / 2)]
    cb, ct = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [(i, j, n + j), (i, n + j, n + i)]
        faces += [(cb, j, i), (ct, n + i, n + j)]
    return _centered(vertices, faces, name)


def notched_polyhedron(size: float = 0.12) -> TriangleMesh:
    """Asymmetric L-shaped frustum; no non-trivial rotational symmetry."""
    outline = np.array(
        [(0.0, 0.0), (1.0, 0.0), (1.0, 0.42), (0.55, 0.42), (0.55, 0.7), (0.0, 0.7)]
    )
    return extrude(outline * size, 0.38 * size, top_scale=0.72, top_center=(0.22 * size, 0.2 * size), name="notched")


def bottle(height: float = 0.19, radius: float = 0.035, segments: int = 48) -> TriangleMesh:
    """Lathe-generated squeeze bottle with an off-axis spout (YCB-mustard-like)."""
    profile = [
        (0.0, 0.0), (0.85, 0.0), (1.0, 0.06), (1.0, 0.62), (0.9, 0.74),
        (0.55, 0.84), (0.3, 0.88), (0.3, 0.97), (0.0, 0.97),
    ]  # fmt: skip
    r = np.array([p[0] for p in profile]) * radius
    z = np.array([p[1] for p in profile]) * height
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    # flatten one side so the body is not rotationally symmetric
    squash = 1.0 - 0.35 * np.clip(np.cos(ang), 0, None) ** 2
    vertices, faces = [], []
    ring = []
    for k in range(len(profile)):
        if r[k] == 0:
            vertices.append((0.0, 0.0, z[k]))
            ring.append([len(vertices) - 1] * segments)
        else:
            idx = []
            for a, s in zip(ang, squash):
                vertices.append((r[k] * s * np.cos(a), r[k] * np.sin(a), z[k]))
                idx.append(len(vertices) - 1)
            ring.append(idx)
    for k in range(len(profile) - 1):
        lo, hi = ring[k], ring[k + 1]
        for i in range(segments):
            j = (i + 1) % segments
            if lo[i] != lo[j]:
                faces.append((lo[i], lo[j], hi[j]))
            if hi[i] != hi[j]:
                faces.append((lo[i], hi[j], hi[i]))
    # spout: small box sticking out sideways near the top
    nozzle = box((0.012, 0.012, 0.03))
    offset = len(vertices)
    vertices += [tuple(v + (-0.012, 0.0, 0.97 * height + 0.012)) for v in nozzle.vertices]
    faces += [tuple(f + offset) for f in nozzle.faces]
    return _centered(vertices, faces, "bottle")


def plane(size: float = 0.1) -> TriangleMesh:
    """Flat square in the z = 0 plane."""
    s = size / 2
    return TriangleMesh([(-s, -s, 0), (s, -s, 0), (s, s, 0), (-s, s, 0)], [(0, 1, 2), (0, 2, 3)], name="plane")


BUILTIN = {
    "sphere": sphere,
    "box": box,
    "notched": notched_polyhedron,
    "bottle": bottle,
    "plane": plane,
}


def make_mesh(spec: dict) -> TriangleMesh:
    """Build a mesh from a scenario entry: ``{"kind": name, ...params}`` or ``{"obj": path}``."""
    spec = dict(spec)
    if "obj" in spec:
        return load_obj(spec["obj"])
    kind = spec.pop("kind")
    if kind not in BUILTIN:
        raise ValueError(f"unknown mesh kind {kind!r}; expected one of {sorted(BUILTIN)}")
    return BUILTIN[kind](**spec)

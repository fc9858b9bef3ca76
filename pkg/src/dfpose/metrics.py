"""BOP-style pose errors (VSD, MSSD, MSPD), recall grids and average recall.

Every error can take an ``est_mesh`` distinct from the ground-truth ``mesh``
(same vertex indexing, possibly a different scale), so an estimate made with a
wrongly scaled CAD model is judged by the surface it actually claims.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyInput, EmptyRender, VertexBehindCamera
from .geom import CameraModel, Pose, TriangleMesh, rotation_geodesic_deg
from .render import render_window

VSD_DELTA = 0.015  # m, visibility tolerance against the scene depth
N_STEPS = 10


def vsd_taus(diameter: float) -> np.ndarray:
    return diameter * 0.05 * np.arange(1, N_STEPS + 1)


def vsd_thetas() -> np.ndarray:
    return 0.05 * np.arange(1, N_STEPS + 1)


def mssd_thresholds(diameter: float) -> np.ndarray:
    return diameter * 0.05 * np.arange(1, N_STEPS + 1)


def mspd_thresholds(width: int) -> np.ndarray:
    r = width / 640
    return 5 * r * np.arange(1, N_STEPS + 1)


@functools.lru_cache(maxsize=4)
def _ray_length(camera: CameraModel) -> np.ndarray:
    """Per-pixel factor turning z-depth into distance from the camera center."""
    u = (np.arange(camera.width) - camera.cx) / camera.fx
    v = (np.arange(camera.height) - camera.cy) / camera.fy
    return np.sqrt(u[None, :] ** 2 + v[:, None] ** 2 + 1.0)


def vsd(
    estimated: Pose | None,
    truth: Pose,
    mesh: TriangleMesh,
    camera: CameraModel,
    scene_depth: np.ndarray,
    tau,
    delta: float = VSD_DELTA,
    est_mesh: TriangleMesh | None = None,
):
    """Visible surface discrepancy for one ``tau`` (meters) or an array of them.

    Visibility masks follow the BOP'19 rule: a model pixel is visible if its
    distance is within ``delta`` of the scene or the scene has no measurement;
    the estimate additionally inherits ground-truth-visible pixels it covers.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    gt = render_window(mesh, truth, camera)  # EmptyRender here is invalid input
    windows = [gt]
    if estimated is not None:
        try:
            windows.append(render_window(est_mesh or mesh, estimated, camera))
        except EmptyRender:
            pass
    x0, y0 = min(w.x0 for w in windows), min(w.y0 for w in windows)
    x1, y1 = max(w.x1 for w in windows), max(w.y1 for w in windows)

    def paste(w):
        out = np.zeros((y1 - y0, x1 - x0))
        out[w.y0 - y0 : w.y1 - y0, w.x0 - x0 : w.x1 - x0] = w.depth
        return out

    ray = _ray_length(camera)[y0:y1, x0:x1]
    d_test = scene_depth[y0:y1, x0:x1] * ray
    d_gt = paste(gt) * ray
    d_est = paste(windows[1]) * ray if len(windows) > 1 else np.zeros_like(d_gt)

    visib_gt = (d_gt > 0) & ((d_gt - d_test <= delta) | (d_test == 0))
    visib_est = (d_est > 0) & ((d_est - d_test <= delta) | (d_test == 0))
    visib_est |= visib_gt & (d_est > 0)
    inter = visib_gt & visib_est
    union = np.count_nonzero(visib_gt | visib_est)
    if union == 0:
        errors = np.ones_like(taus)
    else:
        mismatch = union - np.count_nonzero(inter)
        diffs = np.abs(d_gt[inter] - d_est[inter])
        errors = np.array([(np.count_nonzero(diffs >= t) + mismatch) / union for t in taus])
    return float(errors[0]) if np.ndim(tau) == 0 else errors


def _symmetries(symmetries) -> list[Pose]:
    return [Pose.identity()] if not symmetries else list(symmetries)


def mssd(
    estimated: Pose,
    truth: Pose,
    mesh: TriangleMesh,
    symmetries=None,
    est_mesh: TriangleMesh | None = None,
) -> float:
    """min over symmetries S of max over vertices of |P_est x - P_gt S x| (meters)."""
    pts_est = estimated.transform((est_mesh or mesh).scaled_vertices)
    best = math.inf
    for S in _symmetries(symmetries):
        pts_gt = truth.transform(S.transform(mesh.scaled_vertices))
        best = min(best, float(np.linalg.norm(pts_est - pts_gt, axis=1).max()))
    return best


def _project_checked(camera: CameraModel, pts: np.ndarray) -> np.ndarray:
    if np.any(pts[:, 2] <= 0):
        raise VertexBehindCamera("a model vertex lies behind the camera")
    return np.stack([camera.fx * pts[:, 0] / pts[:, 2] + camera.cx, camera.fy * pts[:, 1] / pts[:, 2] + camera.cy], axis=1)


def mspd(
    estimated: Pose,
    truth: Pose,
    mesh: TriangleMesh,
    symmetries,
    camera: CameraModel,
    est_mesh: TriangleMesh | None = None,
) -> float:
    """min over symmetries of the max vertex reprojection distance (pixels)."""
    proj_est = _project_checked(camera, estimated.transform((est_mesh or mesh).scaled_vertices))
    best = math.inf
    for S in _symmetries(symmetries):
        proj_gt = _project_checked(camera, truth.transform(S.transform(mesh.scaled_vertices)))
        best = min(best, float(np.linalg.norm(proj_est - proj_gt, axis=1).max()))
    return best


def pose_errors(estimated: Pose, truth: Pose) -> tuple[float, float]:
    """Translation distance (m) and geodesic rotation angle (deg), symmetry-unaware."""
    return float(np.linalg.norm(estimated.t - truth.t)), rotation_geodesic_deg(estimated.quat, truth.quat)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class FrameErrors:
    vsd: tuple[float, ...]  # one entry per tau of the grid
    mssd: float
    mspd: float
    t_err: float
    r_err: float

    @classmethod
    def missing(cls) -> FrameErrors:
        """A frame without a pose estimate: fails every threshold."""
        return cls((math.inf,) * N_STEPS, math.inf, math.inf, math.inf, math.inf)


def evaluate_frame(
    estimated: Pose | None,
    truth: Pose,
    mesh: TriangleMesh,
    camera: CameraModel,
    scene_depth: np.ndarray,
    symmetries=None,
    est_mesh: TriangleMesh | None = None,
) -> FrameErrors:
    if estimated is None:
        return FrameErrors.missing()
    e_vsd = vsd(estimated, truth, mesh, camera, scene_depth, vsd_taus(mesh.diameter), est_mesh=est_mesh)
    try:
        e_mspd = mspd(estimated, truth, mesh, symmetries, camera, est_mesh)
    except VertexBehindCamera:
        e_mspd = math.inf
    t_err, r_err = pose_errors(estimated, truth)
    return FrameErrors(
        tuple(float(e) for e in e_vsd), mssd(estimated, truth, mesh, symmetries, est_mesh), e_mspd, t_err, r_err
    )


def recall(errors, thresholds) -> np.ndarray:
    """Fraction of frames with error strictly below each threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    return np.array([np.mean(errors < th) for th in np.atleast_1d(thresholds)])


@dataclass
class MetricReport:
    frames: list[FrameErrors]
    diameter: float
    width: int
    recall_vsd: list[list[float]]  # [tau][theta]
    recall_mssd: list[float]
    recall_mspd: list[float]
    ar_vsd: float
    ar_mssd: float
    ar_mspd: float
    ar: float
    mean_t_err: float
    mean_r_err: float
    thresholds: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "AR": self.ar,
            "AR_VSD": self.ar_vsd,
            "AR_MSSD": self.ar_mssd,
            "AR_MSPD": self.ar_mspd,
            "mean_t_err": self.mean_t_err,
            "mean_r_err": self.mean_r_err,
            "n_frames": len(self.frames),
            "diameter": self.diameter,
            "width": self.width,
            "recall_vsd": self.recall_vsd,
            "recall_mssd": self.recall_mssd,
            "recall_mspd": self.recall_mspd,
            "thresholds": self.thresholds,
        }

    def to_json(self) -> str:
        data = asdict(self)
        return json.dumps(data, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        data = json.loads(text)
        data["frames"] = [
            FrameErrors(tuple(f["vsd"]), f["mssd"], f["mspd"], f["t_err"], f["r_err"]) for f in data["frames"]
        ]
        return cls(**data)


def _finite_mean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    return float(values.mean()) if len(values) else math.inf


def combine_ar(ar_vsd: float, ar_mssd: float, ar_mspd: float) -> float:
    return (ar_vsd + ar_mssd + ar_mspd) / 3


def average_recalls(frames: list[FrameErrors], diameter: float, camera: CameraModel) -> MetricReport:
    """Recall over the BOP threshold grids and their averages."""
    if not frames:
        raise EmptyInput("no frames to aggregate")
    e_vsd = np.array([f.vsd for f in frames], dtype=np.float64)
    if e_vsd.shape[1] != N_STEPS:
        raise ValueError(f"expected {N_STEPS} VSD errors per frame")
    thetas = vsd_thetas()
    th_mssd = mssd_thresholds(diameter)
    th_mspd = mspd_thresholds(camera.width)
    r_vsd = np.stack([recall(e_vsd[:, k], thetas) for k in range(N_STEPS)])
    r_mssd = recall([f.mssd for f in frames], th_mssd)
    r_mspd = recall([f.mspd for f in frames], th_mspd)
    ar_vsd, ar_mssd, ar_mspd = float(r_vsd.mean()), float(r_mssd.mean()), float(r_mspd.mean())
    return MetricReport(
        frames=list(frames),
        diameter=float(diameter),
        width=camera.width,
        recall_vsd=r_vsd.tolist(),
        recall_mssd=r_mssd.tolist(),
        recall_mspd=r_mspd.tolist(),
        ar_vsd=ar_vsd,
        ar_mssd=ar_mssd,
        ar_mspd=ar_mspd,
        ar=combine_ar(ar_vsd, ar_mssd, ar_mspd),
        mean_t_err=_finite_mean([f.t_err for f in frames]),
        mean_r_err=_finite_mean([f.r_err for f in frames]),
        thresholds={
            "vsd_tau": vsd_taus(diameter).tolist(),
            "vsd_theta": thetas.tolist(),
            "mssd": th_mssd.tolist(),
            "mspd": th_mspd.tolist(),
        },
    )

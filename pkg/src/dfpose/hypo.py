"""Pose hypotheses, translation initialization, and refiner/scorer plug-ins.

The refiner and scorer are the two black boxes the registration, tracking and
recovery loops call. :class:`SilhouetteRefiner` and :class:`SilhouetteScorer`
are classical mask-based implementations; :class:`OracleRefiner` and
:class:`OracleScorer` cheat with the ground truth and exist for testing the
surrounding algorithms in isolation.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyRender
from .geom import CameraModel, Pose, RotationGrid, TriangleMesh, axis_angle_matrix, backproject, quat_to_matrix
from .render import mask_area, mask_centroid, median_masked_depth, render_window


@dataclass(frozen=True)
class Observation:
    """One camera frame as seen by the pose estimator.

    ``depth`` is ``None`` (or all zeros) when no depth measurement is
    available. ``rgb`` is carried for interface compatibility only; none of
    the reference implementations look at it.
    """

    mask: np.ndarray
    camera: CameraModel
    depth: np.ndarray | None = None
    rgb: np.ndarray | None = None

    def __post_init__(self):
        shape = self.camera.shape
        for name in ("mask", "depth", "rgb"):
            image = getattr(self, name)
            if image is not None and tuple(np.shape(image)[:2]) != shape:
                raise ValueError(f"{name} has shape {np.shape(image)}, camera expects {shape}")

    def without_depth(self) -> Observation:
        return replace(self, depth=None)

    def has_depth(self) -> bool:
        """True if some masked pixel carries a positive depth."""
        return self.depth is not None and bool(np.any(self.depth[self.mask] > 0))


@dataclass(frozen=True)
class Hypothesis:
    pose: Pose
    score: float = math.nan


def init_translation_from_depth(observation: Observation) -> np.ndarray:
    """Median masked depth for z, mask centroid back-projected for x and y."""
    z = median_masked_depth(observation.depth, observation.mask)
    return backproject(observation.camera, mask_centroid(observation.mask), z)


def make_hypotheses(rotations: RotationGrid, translation) -> list[Hypothesis]:
    t = np.asarray(translation, dtype=np.float64)
    return [Hypothesis(Pose(quat_to_matrix(q), t)) for q in rotations.rotations]


class Refiner(abc.ABC):
    #: largest pose change the refiner may apply to an already-correct pose
    step_tolerance: float = 0.0

    @abc.abstractmethod
    def refine(self, hypotheses: list[Hypothesis], observation: Observation, mesh: TriangleMesh) -> list[Hypothesis]:
        """Return refined hypotheses, same count and order."""


class Scorer(abc.ABC):
    @abc.abstractmethod
    def score(self, hypotheses: list[Hypothesis], observation: Observation, mesh: TriangleMesh) -> np.ndarray:
        """Higher is better; ``-inf`` for hypotheses that cannot be evaluated."""

    @staticmethod
    def best(hypotheses: list[Hypothesis]) -> Hypothesis:
        """First hypothesis attaining the maximum score."""
        if not hypotheses:
            raise ValueError("no hypotheses to choose from")
        scores = np.array([h.score for h in hypotheses], dtype=np.float64)
        return hypotheses[int(np.argmax(np.where(np.isnan(scores), -np.inf, scores)))]

    def select(self, hypotheses, observation, mesh) -> Hypothesis:
        scores = self.score(hypotheses, observation, mesh)
        return self.best([replace(h, score=float(s)) for h, s in zip(hypotheses, scores)])


# ---------------------------------------------------------------------------
# silhouette-based reference implementations


class _Target:
    """Per-call cache of the observed mask statistics."""

    def __init__(self, observation: Observation):
        self.mask = observation.mask
        self.camera = observation.camera
        self.area = mask_area(self.mask)
        self.centroid = mask_centroid(self.mask) if self.area else None
        self.depth = None
        if self.area and observation.has_depth():
            self.depth = median_masked_depth(observation.depth, self.mask)

    def iou(self, window) -> float:
        inter = np.count_nonzero(window.mask & window.crop(self.mask))
        union = window.area() + self.area - inter
        return inter / union if union else 0.0


def _window_centroid(window) -> np.ndarray:
    rows, cols = np.nonzero(window.depth)
    return np.array([cols.mean() + window.x0, rows.mean() + window.y0])


class SilhouetteRefiner(Refiner):
    """Align a hypothesis to the observed mask.

    Each call runs, per hypothesis: a centroid shift at the current depth; a
    depth step (area ratio, or median depth difference when the observation
    carries depth), clamped to ``max_depth_step``; and a greedy hill climb over
    ``±step_deg`` rotations about the camera axes, keeping IoU improvements,
    for at most ``rounds`` rounds.
    """

    step_tolerance = 0.0

    def __init__(self, rounds: int = 10, step_deg: float = 2.5, max_depth_step: float = 0.2):
        self.rounds = rounds
        self.step_deg = step_deg
        self.max_depth_step = max_depth_step
        self._perturbations = [
            axis_angle_matrix(axis, sign * math.radians(step_deg))
            for axis in np.eye(3)
            for sign in (1.0, -1.0)
        ]

    def refine(self, hypotheses, observation, mesh):
        target = _Target(observation)
        if target.area == 0:
            return list(hypotheses)
        return [replace(h, pose=self._refine_pose(h.pose, target, mesh)) for h in hypotheses]

    def _refine_pose(self, pose: Pose, target: _Target, mesh: TriangleMesh) -> Pose:
        cam = target.camera
        try:
            window = render_window(mesh, pose, cam)
        except EmptyRender:
            return pose
        z = pose.t[2]
        du, dv = target.centroid - _window_centroid(window)
        pose = pose.with_translation(pose.t + [du * z / cam.fx, dv * z / cam.fy, 0.0])
        try:
            window = render_window(mesh, pose, cam)
        except EmptyRender:
            return pose
        if target.depth is not None:
            rendered = float(np.median(window.depth[window.depth > 0]))
            factor = (z + target.depth - rendered) / z
        else:
            factor = math.sqrt(window.area() / target.area)
        factor = min(max(factor, 1.0 - self.max_depth_step), 1.0 + self.max_depth_step)
        # scale along the viewing ray so the image position is kept
        pose = pose.with_translation(pose.t * factor)
        try:
            best = target.iou(render_window(mesh, pose, cam))
        except EmptyRender:
            return pose
        R = pose.R
        for _ in range(self.rounds):
            improved = False
            for delta in self._perturbations:
                candidate = pose.with_rotation(delta @ R)
                try:
                    score = target.iou(render_window(mesh, candidate, cam))
                except EmptyRender:
                    continue
                if score > best:
                    best, pose, R, improved = score, candidate, candidate.R, True
            if not improved:
                break
        return pose


def _boundary(mask: np.ndarray) -> np.ndarray:
    """``(n, 2)`` pixel coordinates (u, v) of 4-connected mask boundary pixels."""
    padded = np.pad(mask, 1)
    interior = padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    rows, cols = np.nonzero(mask & ~interior)
    return np.stack([cols, rows], axis=1).astype(np.float64)


class SilhouetteScorer(Scorer):
    """IoU minus ``chamfer_weight`` times the boundary chamfer distance.

    The chamfer term is the symmetric mean nearest-boundary distance divided by
    the square root of the observed mask area.
    """

    def __init__(self, chamfer_weight: float = 0.1):
        self.chamfer_weight = chamfer_weight

    def score(self, hypotheses, observation, mesh):
        target = _Target(observation)
        if target.area == 0:
            return np.full(len(hypotheses), -np.inf)
        obs_edge = _boundary(target.mask)
        obs_tree = cKDTree(obs_edge)
        scale = math.sqrt(target.area)
        cache: dict[bytes, float] = {}
        scores = np.empty(len(hypotheses))
        for i, h in enumerate(hypotheses):
            key = h.pose.R.tobytes() + h.pose.t.tobytes()
            if key not in cache:
                cache[key] = self._score_pose(h.pose, target, mesh, obs_edge, obs_tree, scale)
            scores[i] = cache[key]
        return scores

    def _score_pose(self, pose, target, mesh, obs_edge, obs_tree, scale) -> float:
        try:
            window = render_window(mesh, pose, target.camera)
        except EmptyRender:
            return -np.inf
        edge = _boundary(window.mask) + [window.x0, window.y0]
        d_ro, _ = obs_tree.query(edge)
        d_or, _ = cKDTree(edge).query(obs_edge)
        chamfer = 0.5 * (d_ro.mean() + d_or.mean()) / scale
        return target.iou(window) - self.chamfer_weight * chamfer


# ---------------------------------------------------------------------------
# ground-truth oracles for tests


@dataclass
class OracleRefiner(Refiner):
    """Snap every hypothesis to the true rotation.

    With ``keep_depth`` the translation is moved onto the true viewing ray but
    keeps the hypothesis depth, so depth must still be found by the caller;
    otherwise the hypothesis becomes the true pose.
    """

    truth: Pose
    keep_depth: bool = True
    step_tolerance: float = field(default=0.0, init=False)

    def refine(self, hypotheses, observation, mesh):
        out = []
        for h in hypotheses:
            t = self.truth.t * (h.pose.t[2] / self.truth.t[2]) if self.keep_depth else self.truth.t
            out.append(replace(h, pose=Pose(self.truth.R, t)))
        return out


@dataclass
class OracleScorer(Scorer):
    """Negative maximum vertex displacement from the true pose."""

    truth: Pose

    def score(self, hypotheses, observation, mesh):
        ref = self.truth.transform(mesh.scaled_vertices)
        return np.array(
            [-np.linalg.norm(h.pose.transform(mesh.scaled_vertices) - ref, axis=1).max() for h in hypotheses]
        )

"""First-frame pose registration and CAD scale recovery.

``register_depth_free`` bisects the object depth by comparing the silhouette
area of the best refined hypothesis with the observed mask: a rendering that
is too large means the hypothesis sits too close, so the lower bound moves up.
This relies on the rendered area decreasing monotonically with depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, EmptyRender, NoConvergence
from .geom import Pose, RotationGrid, TriangleMesh, backproject, sample_rotation_grid
from .hypo import Hypothesis, Observation, Refiner, Scorer, init_translation_from_depth, make_hypotheses
from .render import mask_area, mask_centroid, render_window


@dataclass(frozen=True)
class DepthSearchConfig:
    z_min: float = 0.2
    z_max: float = 2.0
    depth_convergence: float = 1e-2
    range_convergence: float = 1e-2
    max_iterations: int = 30

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")
        if self.depth_convergence <= 0 or self.range_convergence <= 0:
            raise ValueError("tolerances must be positive")

    def iteration_bound(self) -> int:
        return math.ceil(math.log2((self.z_max - self.z_min) / self.range_convergence)) + 1


@dataclass(frozen=True)
class ScaleSearchConfig:
    s_min: float = 0.1
    s_max: float = 10.0
    relative_convergence: float = 1e-2
    max_iterations: int = 30
    anchor_steps: int = 2

    def __post_init__(self):
        if not 0 < self.s_min < self.s_max:
            raise ValueError("need 0 < s_min < s_max")


@dataclass(frozen=True)
class SearchStep:
    """One bisection iteration, kept for inspection."""

    iteration: int
    low: float
    high: float
    probe: float  # depth (m) or scale multiplier being tested
    depth: float  # z of the selected pose
    rendered_area: int
    observed_area: int
    score: float


def _rendered_area(mesh, pose, camera) -> int:
    try:
        return render_window(mesh, pose, camera).area()
    except EmptyRender:
        return 0


def _select(rotations, translation, observation, mesh, refiner, scorer) -> Hypothesis:
    hypotheses = make_hypotheses(rotations, translation)
    hypotheses = refiner.refine(hypotheses, observation, mesh)
    return scorer.select(hypotheses, observation, mesh)


def register_depth_free(
    mesh: TriangleMesh,
    observation: Observation,
    config: DepthSearchConfig,
    refiner: Refiner,
    scorer: Scorer,
    rotations: RotationGrid | None = None,
    trace: list | None = None,
) -> Pose:
    """Register the first frame from mask and intrinsics only.

    Raises :class:`NoConvergence` (carrying the last pose and bracket) if
    ``max_iterations`` runs out while the bracket is still wider than
    ``range_convergence``.
    """
    observed = mask_area(observation.mask)
    if observed == 0:
        raise EmptyMask("registration needs a non-empty mask")
    observation = observation.without_depth()
    rotations = sample_rotation_grid() if rotations is None else rotations
    center = mask_centroid(observation.mask)
    camera = observation.camera

    low, high = config.z_min, config.z_max
    last_depth = math.inf
    pose = None
    for iteration in range(1, config.max_iterations + 1):
        if low > high:
            break
        z_r = 0.5 * (low + high)
        best = _select(rotations, backproject(camera, center, z_r), observation, mesh, refiner, scorer)
        pose = best.pose
        area = _rendered_area(mesh, pose, camera)
        current_depth = pose.t[2]
        if trace is not None:
            trace.append(SearchStep(iteration, low, high, z_r, current_depth, area, observed, best.score))
        if abs(current_depth - last_depth) < config.depth_convergence:
            break
        last_depth = current_depth
        if abs(high - low) < config.range_convergence:
            break
        if area > observed:
            low = z_r
        elif area < observed:
            high = z_r
        else:
            break  # exact match: the bracket would never move again
    else:
        if abs(high - low) >= config.range_convergence:
            raise NoConvergence(f"depth bracket [{low:.4f}, {high:.4f}] still open", pose, low, high)
    return pose


def register_depth_sweep(
    mesh: TriangleMesh,
    observation: Observation,
    n_depths: int,
    config: DepthSearchConfig,
    refiner: Refiner,
    scorer: Scorer,
    rotations: RotationGrid | None = None,
) -> Pose:
    """Brute force over ``n_depths`` uniform depths times the rotation grid."""
    if n_depths < 1:
        raise ValueError("n_depths must be >= 1")
    if mask_area(observation.mask) == 0:
        raise EmptyMask("registration needs a non-empty mask")
    observation = observation.without_depth()
    rotations = sample_rotation_grid() if rotations is None else rotations
    center = mask_centroid(observation.mask)
    depths = np.linspace(config.z_min, config.z_max, n_depths) if n_depths > 1 else [config.z_min]
    candidates = []
    for z in depths:  # one batch per depth keeps memory flat
        candidates.append(_select(rotations, backproject(observation.camera, center, z), observation, mesh, refiner, scorer))
    return Scorer.best(candidates).pose


def register_with_depth(
    mesh: TriangleMesh,
    observation: Observation,
    refiner: Refiner,
    scorer: Scorer,
    rotations: RotationGrid | None = None,
) -> Pose:
    """Standard RGB-D registration: median-depth translation plus the rotation grid."""
    translation = init_translation_from_depth(observation)
    rotations = sample_rotation_grid() if rotations is None else rotations
    return _select(rotations, translation, observation, mesh, refiner, scorer).pose


def anchor_to_depth(mesh: TriangleMesh, pose: Pose, camera, target_depth: float, steps: int = 2) -> Pose:
    """Slide ``pose`` along its viewing ray until the rendered median depth hits ``target_depth``."""
    for _ in range(steps):
        try:
            window = render_window(mesh, pose, camera)
        except EmptyRender:
            break
        rendered = float(np.median(window.depth[window.depth > 0]))
        z = pose.t[2]
        new_z = z + (target_depth - rendered)
        if new_z <= 0:
            break
        pose = pose.with_translation(pose.t * (new_z / z))
    return pose


def recover_scale(
    mesh: TriangleMesh,
    observation: Observation,
    config: ScaleSearchConfig,
    refiner: Refiner,
    scorer: Scorer,
    rotations: RotationGrid | None = None,
    trace: list | None = None,
) -> float:
    """Multiplier that brings ``mesh`` to the metric size seen in a depth frame.

    The translation is anchored by the observed median depth; candidate scales
    are bisected geometrically between ``s_min`` and ``s_max`` by comparing
    rendered and observed mask areas. Returns the factor to apply on top of
    ``mesh.scale``.
    """
    observed = mask_area(observation.mask)
    if observed == 0:
        raise EmptyMask("scale recovery needs a non-empty mask")
    translation = init_translation_from_depth(observation)
    target_depth = translation[2]
    rotations = sample_rotation_grid() if rotations is None else rotations
    camera = observation.camera

    low, high = config.s_min, config.s_max
    last = math.inf
    s = 1.0
    for iteration in range(1, config.max_iterations + 1):
        s = math.sqrt(low * high)
        scaled = mesh.rescaled(s)
        best = _select(rotations, translation, observation, scaled, refiner, scorer)
        pose = anchor_to_depth(scaled, best.pose, camera, target_depth, config.anchor_steps)
        area = _rendered_area(scaled, pose, camera)
        if trace is not None:
            trace.append(SearchStep(iteration, low, high, s, pose.t[2], area, observed, best.score))
        if abs(s - last) / s < config.relative_convergence:
            break
        last = s
        if high / low - 1.0 < config.relative_convergence:
            break
        if area > observed:
            high = s
        elif area < observed:
            low = s
        else:
            break
    else:
        if high / low - 1.0 >= config.relative_convergence:
            raise NoConvergence(f"scale bracket [{low:.4f}, {high:.4f}] still open", s, low, high)
    return s

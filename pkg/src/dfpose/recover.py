"""Tracking-loss detection, Kalman prediction, and re-acquisition.

The tracker runs a three-state machine. While TRACKING, every frame is refined
from the previous estimate and fed to a Kalman filter. When a loss test fires
and the mask is unusable, the Kalman prediction is reported as a stand-in pose
(LOST). When the mask is usable, a small set of rotations around the predicted
orientation is refined and scored; the winner is accepted only if it passes
the same loss test (otherwise RECOVERING, still reporting the prediction).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyMask, EmptyRender, NoValidDepth
from .geom import CameraModel, Pose, TriangleMesh, backproject, project, quat_conj, quat_exp, quat_log, quat_mul, quat_normalize, quat_to_matrix, sample_rotations_near, slerp
from .hypo import Observation, Refiner, Scorer, init_translation_from_depth, make_hypotheses
from .render import mask_area, mask_centroid, median_masked_depth, render_window
from .track import TrackConfig, track_frame


# ---------------------------------------------------------------------------
# Kalman filter: constant velocity on translation, decoupled quaternion track


@dataclass(frozen=True)
class KalmanConfig:
    q_pos: float = 1e-4  # m^2 / frame^2
    q_vel: float = 1e-4
    r: float = 1e-4  # m^2
    p0_pos: float = 1e-4
    p0_vel: float = 1.0


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: np.ndarray  # [position (m), velocity (m/frame)]
    P: np.ndarray
    quat: np.ndarray
    omega: np.ndarray  # rotation vector per frame, camera frame
    anchor_quat: np.ndarray  # last accepted rotation
    steps_since_update: int
    config: KalmanConfig

    @property
    def pose(self) -> Pose:
        return Pose(quat_to_matrix(self.quat), self.x[:3])


_F = np.block([[np.eye(3), np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])
_H = np.hstack([np.eye(3), np.zeros((3, 3))])


def kalman_init(pose: Pose, config: KalmanConfig = KalmanConfig()) -> KalmanState:
    q = pose.quat
    return KalmanState(
        x=np.concatenate([pose.t, np.zeros(3)]),
        P=np.diag([config.p0_pos] * 3 + [config.p0_vel] * 3),
        quat=q,
        omega=np.zeros(3),
        anchor_quat=q,
        steps_since_update=0,
        config=config,
    )


def kalman_predict(state: KalmanState) -> tuple[Pose, KalmanState]:
    c = state.config
    Q = np.diag([c.q_pos] * 3 + [c.q_vel] * 3)
    x = _F @ state.x
    P = _F @ state.P @ _F.T + Q
    quat = quat_normalize(quat_mul(quat_exp(state.omega), state.quat))
    new = replace(state, x=x, P=0.5 * (P + P.T), quat=quat, steps_since_update=state.steps_since_update + 1)
    return new.pose, new


def kalman_update(state: KalmanState, measured: Pose) -> KalmanState:
    """Correct with a measured pose.

    The rotation is pulled toward the measurement by slerp with the mean
    diagonal of the position gain; the angular velocity is the rotation
    between the last two accepted orientations divided by the frames between
    them.
    """
    R = np.eye(3) * state.config.r
    S = _H @ state.P @ _H.T + R
    K = np.linalg.solve(S, _H @ state.P).T  # P H^T S^-1, S symmetric
    x = state.x + K @ (measured.t - _H @ state.x)
    IKH = np.eye(6) - K @ _H
    P = IKH @ state.P @ IKH.T + K @ R @ K.T  # Joseph form stays PSD
    gain = float(np.trace(K[:3, :3]) / 3)
    quat = slerp(state.quat, measured.quat, gain)
    steps = max(state.steps_since_update, 1)
    omega = quat_log(quat_mul(quat, quat_conj(state.anchor_quat))) / steps
    return replace(
        state, x=x, P=0.5 * (P + P.T), quat=quat, omega=omega, anchor_quat=quat, steps_since_update=0
    )


# ---------------------------------------------------------------------------
# loss detection


class LossReason(str, enum.Enum):
    NONE = "none"
    MASK_TOO_SMALL = "mask-too-small"
    MASK_INVALID = "mask-invalid"
    TRANSLATION_JUMP = "translation-jump"
    CENTROID_DRIFT = "centroid-drift"
    AREA_MISMATCH = "area-mismatch"
    PREDICTED_OFFSCREEN = "predicted-offscreen"


@dataclass(frozen=True)
class LossThresholds:
    min_mask_pixels: int = 100
    theta: float = 0.05  # m, 3D jump between depth estimate and prediction
    theta1: float = 40.0  # px, centroid drift
    theta2_fraction: float = 0.5  # area mismatch as a fraction of the observed area
    theta2: float | None = None  # px^2; overrides the fraction when set

    def __post_init__(self):
        values = [self.min_mask_pixels, self.theta, self.theta1, self.theta2_fraction]
        if self.theta2 is not None:
            values.append(self.theta2)
        if min(values) <= 0:
            raise ValueError("all loss thresholds must be positive")

    def area_threshold(self, observed_area: int) -> float:
        return self.theta2 if self.theta2 is not None else self.theta2_fraction * observed_area


def _coarse_translation(depth, mask, camera) -> np.ndarray:
    z = median_masked_depth(depth, mask)
    return backproject(camera, mask_centroid(mask), z)


def detect_loss_depth(
    observation: Observation,
    predicted: Pose,
    thresholds: LossThresholds,
    mesh: TriangleMesh | None = None,
) -> tuple[bool, LossReason]:
    """Mask-size test plus the 3D jump test against the median-depth translation.

    The median-depth estimate lands on the visible surface, not on the object
    origin. When ``mesh`` is given, the same estimate is taken from a
    rendering of ``predicted`` so both sides carry that offset.
    """
    if mask_area(observation.mask) < thresholds.min_mask_pixels:
        return True, LossReason.MASK_TOO_SMALL
    try:
        coarse = _coarse_translation(observation.depth, observation.mask, observation.camera)
    except (EmptyMask, NoValidDepth):
        return True, LossReason.MASK_INVALID
    reference = predicted.t
    if mesh is not None:
        try:
            window = render_window(mesh, predicted, observation.camera)
            mask, depth = window.full(observation.camera.shape)
            reference = _coarse_translation(depth, mask, observation.camera)
        except EmptyRender:
            return True, LossReason.PREDICTED_OFFSCREEN
    if np.linalg.norm(coarse - reference) > thresholds.theta:
        return True, LossReason.TRANSLATION_JUMP
    return False, LossReason.NONE


def detect_loss_rgb(
    observation: Observation,
    predicted: Pose,
    mesh: TriangleMesh,
    camera: CameraModel | None = None,
    thresholds: LossThresholds = LossThresholds(),
) -> tuple[bool, LossReason]:
    """Mask-size, centroid-drift and area-mismatch tests; no depth used."""
    camera = camera or observation.camera
    area = mask_area(observation.mask)
    if area < thresholds.min_mask_pixels:
        return True, LossReason.MASK_TOO_SMALL
    if predicted.t[2] <= 0:
        return True, LossReason.PREDICTED_OFFSCREEN
    u, v = mask_centroid(observation.mask)
    u_p, v_p = project(camera, predicted.t)
    if math.hypot(u - u_p, v - v_p) > thresholds.theta1:
        return True, LossReason.CENTROID_DRIFT
    try:
        rendered = render_window(mesh, predicted, camera).area()
    except EmptyRender:
        return True, LossReason.PREDICTED_OFFSCREEN
    if abs(area - rendered) > thresholds.area_threshold(area):
        return True, LossReason.AREA_MISMATCH
    return False, LossReason.NONE


def detect_loss(observation: Observation, predicted: Pose, mesh: TriangleMesh, thresholds: LossThresholds):
    """Depth test when the frame has usable depth, silhouette tests otherwise."""
    if observation.has_depth():
        return detect_loss_depth(observation, predicted, thresholds, mesh)
    return detect_loss_rgb(observation, predicted, mesh, observation.camera, thresholds)


# ---------------------------------------------------------------------------
# state machine


class TrackerMode(str, enum.Enum):
    TRACKING = "TRACKING"
    LOST = "LOST"
    RECOVERING = "RECOVERING"


@dataclass(frozen=True)
class RecoveryConfig:
    n_hypotheses: int = 20
    max_angle: float = math.radians(30.0)
    seed: int = 0
    refine_iterations: int = 2


@dataclass(frozen=True)
class StepConfig:
    track: TrackConfig = field(default_factory=TrackConfig)
    thresholds: LossThresholds = field(default_factory=LossThresholds)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)


@dataclass(frozen=True, eq=False)
class TrackerState:
    mode: TrackerMode
    kalman: KalmanState
    last_confident_pose: Pose
    last_pose: Pose
    frames_lost: int = 0
    recoveries_attempted: int = 0
    # what the last step did, for the transition log
    reason: LossReason = LossReason.NONE
    n_hypotheses: int = 0
    score: float = math.nan


def init_tracker(pose: Pose, kalman: KalmanConfig = KalmanConfig()) -> TrackerState:
    return TrackerState(TrackerMode.TRACKING, kalman_init(pose, kalman), pose, pose)


def step(
    state: TrackerState,
    observation: Observation,
    mesh: TriangleMesh,
    camera: CameraModel,
    config: StepConfig,
    refiner: Refiner,
    scorer: Scorer,
) -> tuple[Pose, TrackerState]:
    """Advance the tracker by one frame; always returns a pose."""
    predicted, kalman = kalman_predict(state.kalman)
    lost, reason = detect_loss(observation, predicted, mesh, config.thresholds)
    if not lost:
        try:
            pose = track_frame(state.last_pose, observation, mesh, config.track, refiner)
        except EmptyRender:
            lost, reason = True, LossReason.PREDICTED_OFFSCREEN
        else:
            return pose, replace(
                state,
                mode=TrackerMode.TRACKING,
                kalman=kalman_update(kalman, pose),
                last_confident_pose=pose,
                last_pose=pose,
                frames_lost=0,
                reason=LossReason.NONE,
                n_hypotheses=1,
                score=math.nan,
            )

    held = replace(state, kalman=kalman, last_pose=predicted, frames_lost=state.frames_lost + 1, reason=reason)
    if mask_area(observation.mask) < config.thresholds.min_mask_pixels:
        return predicted, replace(held, mode=TrackerMode.LOST, n_hypotheses=0, score=math.nan)

    rc = config.recovery
    if observation.has_depth():
        center = init_translation_from_depth(observation)
    else:
        center = backproject(camera, mask_centroid(observation.mask), predicted.t[2])
    rotations = sample_rotations_near(kalman.quat, rc.n_hypotheses, rc.max_angle, rc.seed + state.frames_lost)
    hypotheses = make_hypotheses(rotations, center)
    for _ in range(rc.refine_iterations):
        hypotheses = refiner.refine(hypotheses, observation, mesh)
    best = scorer.select(hypotheses, observation, mesh)
    held = replace(held, recoveries_attempted=state.recoveries_attempted + 1, n_hypotheses=len(hypotheses), score=best.score)
    still_lost, _ = detect_loss(observation, best.pose, mesh, config.thresholds)
    if still_lost:
        return predicted, replace(held, mode=TrackerMode.RECOVERING)
    return best.pose, replace(
        held,
        mode=TrackerMode.TRACKING,
        kalman=kalman_update(kalman, best.pose),
        last_confident_pose=best.pose,
        last_pose=best.pose,
        frames_lost=0,
    )

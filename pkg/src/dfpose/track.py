"""Frame-to-frame tracking with a selectable depth channel.

``ZERO_DEPTH`` feeds an all-zero depth image so the refiner has to rely on the
silhouette alone. ``LAST_DEPTH`` feeds the depth rendered at the previous
estimate, a variant that anchors depth to its own past output and drifts.
``TRUE_DEPTH`` passes the measured depth through.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .geom import Pose, TriangleMesh
from .hypo import Hypothesis, Observation, Refiner
from .render import render_window


class TrackMode(str, enum.Enum):
    ZERO_DEPTH = "zero-depth"
    LAST_DEPTH = "last-depth"
    TRUE_DEPTH = "true-depth"


@dataclass(frozen=True)
class TrackConfig:
    mode: TrackMode = TrackMode.ZERO_DEPTH
    iterations: int = 2

    def __post_init__(self):
        object.__setattr__(self, "mode", TrackMode(self.mode))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def depth_channel(previous: Pose, observation: Observation, mesh: TriangleMesh, mode: TrackMode, window=None) -> np.ndarray:
    shape = observation.camera.shape
    if mode is TrackMode.ZERO_DEPTH:
        return np.zeros(shape)
    if mode is TrackMode.LAST_DEPTH:
        window = window or render_window(mesh, previous, observation.camera)
        return window.full(shape)[1]
    if observation.depth is None:
        raise ValueError("true-depth tracking needs an observation with depth")
    return observation.depth


def track_frame(
    previous: Pose,
    observation: Observation,
    mesh: TriangleMesh,
    config: TrackConfig,
    refiner: Refiner,
) -> Pose:
    """Refine the previous pose against the current frame.

    Raises :class:`~dfpose.errors.EmptyRender` when ``previous`` is not
    visible in this camera; the recovery loop treats that as a loss signal.
    """
    window = render_window(mesh, previous, observation.camera)
    depth = depth_channel(previous, observation, mesh, config.mode, window)
    observation = replace(observation, depth=depth)
    hypotheses = [Hypothesis(previous)]
    for _ in range(config.iterations):
        hypotheses = refiner.refine(hypotheses, observation, mesh)
    return hypotheses[0].pose

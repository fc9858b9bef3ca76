"""Named example scenarios, shared by the CLI, the scripts and the tests."""

from __future__ import annotations

import numpy as np

from ..geom import matrix_to_quat, axis_angle_matrix, quat_exp
from .scenario import Scenario

# frame 0 ground truth drives registration in these presets; tracking and
# recovery use the silhouette refiner and scorer
ORACLE_REGISTRATION = {
    "registration_refiner": {"kind": "oracle"},
    "registration_scorer": {"kind": "oracle"},
}


def _q(rotvec) -> list[float]:
    return [float(x) for x in quat_exp(np.asarray(rotvec, dtype=np.float64))]


def static(seed: int = 0, frames: int = 10) -> Scenario:
    return Scenario(
        name="static",
        trajectory={"start": _q([0.6, 0.2, 0.1]) + [0.0, 0.0, 0.7], "frames": frames},
        seed=seed,
        pipeline=dict(ORACLE_REGISTRATION),
    )


APPROACH_START = (-0.9, 0.3, 4.6)
APPROACH_END = (0.0, 0.0, 0.7)


def approach(seed: int = 0, frames: int = 200, speed: float = 0.02) -> Scenario:
    """Object flying toward the camera at constant ``speed`` m/frame."""
    start = np.array(APPROACH_START)
    direction = np.array(APPROACH_END) - start
    velocity = direction / np.linalg.norm(direction) * speed
    q0 = [float(x) for x in matrix_to_quat(axis_angle_matrix([1.0, 0.3, 0.2], 0.7))]
    return Scenario(
        name="approach",
        trajectory={"start": q0 + start.tolist(), "velocity": velocity.tolist(), "frames": frames},
        depth="all",
        seed=seed,
        pipeline={**ORACLE_REGISTRATION, "recovery_enabled": False},
    )


def occlusion(seed: int = 0, speed_after: float | None = None) -> Scenario:
    """Lateral motion, frames 20-49 hidden behind a full-frame occluder.

    With ``speed_after`` the object changes speed while hidden, so the
    predicted pose misses it on reappearance and recovery has to search.
    """
    q0 = _q([0.6, 0.2, 0.1])
    speed = 0.005
    if speed_after is None:
        trajectory = {"start": q0 + [-0.15, 0.0, 0.7], "velocity": [speed, 0.0, 0.0], "frames": 60}
    else:
        x, poses = -0.15, []
        for k in range(60):
            poses.append(q0 + [x, 0.0, 0.7])
            x += speed if k < 20 else speed_after
        trajectory = {"poses": poses}
    return Scenario(
        name="occlusion" if speed_after is None else "occlusion-speedup",
        trajectory=trajectory,
        occlusions=[{"frames": [20, 50], "rect": [0, 0, 640, 480], "depth": 0.3}],
        seed=seed,
        pipeline=dict(ORACLE_REGISTRATION),
    )


def scale(seed: int = 0, cad_scale: float = 3.0, occluded_first_frame: bool = False, frames: int = 12) -> Scenario:
    """Bottle with a CAD model ``cad_scale`` times too large; depth in frame 0 only."""
    occlusions = []
    if occluded_first_frame:
        # a box in front of the lower half of the bottle, first frame only
        occlusions = [{"frames": [0, 1], "rect": [0, 240, 640, 480], "depth": 0.5}]
    return Scenario(
        name="scale" if not occluded_first_frame else "scale-occluded",
        mesh={"kind": "bottle"},
        cad_scale=cad_scale,
        scale_known=False,
        depth="first-frame",
        trajectory={
            "start": _q([1.2, 0.3, 0.2]) + [-0.05, 0.0, 0.9],
            "velocity": [0.002, 0.0, 0.002],
            "angular_velocity": [0.0, 0.01, 0.0],
            "frames": frames,
        },
        occlusions=occlusions,
        seed=seed,
        pipeline={
            "registration_refiner": {"kind": "oracle"},
            "registration_scorer": {"kind": "silhouette"},
        },
    )


def noisy(seed: int = 0, frames: int = 60) -> Scenario:
    """Slow rotation and drift with mask dropout and erosion, no depth."""
    return Scenario(
        name="noisy",
        mesh={"kind": "bottle"},
        trajectory={
            "start": _q([1.2, 0.3, 0.2]) + [0.0, 0.0, 0.8],
            "velocity": [0.003, -0.001, 0.002],
            "angular_velocity": [0.0, 0.01, 0.005],
            "frames": frames,
        },
        dropout=0.05,
        erosion=1,
        seed=seed,
        pipeline=dict(ORACLE_REGISTRATION),
    )


PRESETS = {
    "static": static,
    "approach": approach,
    "occlusion": occlusion,
    "occlusion-speedup": lambda seed=0: occlusion(seed, speed_after=0.008),
    "scale": scale,
    "scale-occluded": lambda seed=0: scale(seed, occluded_first_frame=True),
    "noisy": noisy,
}

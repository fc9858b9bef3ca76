"""Synthetic scenarios: ground-truth trajectories rendered into observations.

A scenario is a JSON document; every module's configuration can be overridden
under its ``"pipeline"`` key (see :class:`dfpose.bench.pipeline.PipelineConfig`).
The mask "tracker" is a stand-in for a learned 2D tracker: it returns the true
visible mask, optionally eroded and with random pixel dropout.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import EmptyRender
from ..geom import CameraModel, Pose, TriangleMesh, quat_exp, quat_mul, quat_normalize, quat_to_matrix
from ..hypo import Observation
from ..render import render
from .meshes import make_mesh


class DepthPolicy(str, enum.Enum):
    NONE = "none"
    FIRST_FRAME = "first-frame"
    ALL = "all"


def pose_from_list(values) -> Pose:
    """``[qw, qx, qy, qz, tx, ty, tz]`` to a pose."""
    values = np.asarray(values, dtype=np.float64)
    return Pose(quat_to_matrix(values[:4]), values[4:7])


def pose_to_list(pose: Pose) -> list[float]:
    return [float(x) for x in (*pose.quat, *pose.t)]


@dataclass
class Occlusion:
    """Blocks the object over ``frames = [first, last)``.

    Either an image rectangle ``[x0, y0, x1, y1]`` held at ``depth`` meters, or
    an occluder mesh spec rendered at ``pose`` (``[qw, qx, qy, qz, tx, ty, tz]``).
    """

    frames: tuple[int, int]
    rect: tuple[int, int, int, int] | None = None
    depth: float = 0.3
    mesh: dict | None = None
    pose: list | None = None

    def active(self, frame: int) -> bool:
        return self.frames[0] <= frame < self.frames[1]


@dataclass
class Scenario:
    name: str = "scenario"
    mesh: dict = field(default_factory=lambda: {"kind": "notched"})
    # scale of the CAD model handed to the estimator relative to the true object
    cad_scale: float = 1.0
    scale_known: bool = True
    camera: dict = field(default_factory=lambda: asdict(CameraModel.default()))
    # {"start": [q..., t...], "velocity": [...], "angular_velocity": [...], "frames": n}
    # or {"poses": [[q..., t...], ...]}
    trajectory: dict = field(default_factory=lambda: {"start": [1, 0, 0, 0, 0, 0, 0.7], "frames": 10})
    occlusions: list[Occlusion] = field(default_factory=list)
    dropout: float = 0.0
    erosion: int = 0
    depth: DepthPolicy = DepthPolicy.NONE
    symmetries: list = field(default_factory=list)
    seed: int = 0
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        self.depth = DepthPolicy(self.depth)
        self.occlusions = [o if isinstance(o, Occlusion) else Occlusion(**o) for o in self.occlusions]
        for o in self.occlusions:
            o.frames = tuple(o.frames)
        n = self.n_frames
        if n < 1:
            raise ValueError("trajectory must have at least one frame")
        for o in self.occlusions:
            if not 0 <= o.frames[0] <= o.frames[1] <= n:
                raise ValueError(f"occlusion range {o.frames} outside the {n}-frame trajectory")
            if (o.rect is None) == (o.mesh is None):
                raise ValueError("an occlusion needs exactly one of rect or mesh")
        if not 0.0 <= self.dropout < 1.0 or self.erosion < 0:
            raise ValueError("dropout must be in [0, 1) and erosion >= 0")

    # -- construction -----------------------------------------------------

    @property
    def n_frames(self) -> int:
        if "poses" in self.trajectory:
            return len(self.trajectory["poses"])
        return int(self.trajectory["frames"])

    def camera_model(self) -> CameraModel:
        return CameraModel(**self.camera)

    def true_mesh(self) -> TriangleMesh:
        return make_mesh(self.mesh)

    def cad_mesh(self) -> TriangleMesh:
        return self.true_mesh().rescaled(self.cad_scale)

    def symmetry_poses(self) -> list[Pose]:
        return [pose_from_list(s) for s in self.symmetries]

    def poses(self) -> list[Pose]:
        traj = self.trajectory
        if "poses" in traj:
            return [pose_from_list(p) for p in traj["poses"]]
        start = np.asarray(traj["start"], dtype=np.float64)
        q0, t0 = quat_normalize(start[:4]), start[4:7]
        v = np.asarray(traj.get("velocity", [0, 0, 0]), dtype=np.float64)
        w = np.asarray(traj.get("angular_velocity", [0, 0, 0]), dtype=np.float64)
        return [Pose(quat_to_matrix(quat_mul(quat_exp(w * k), q0)), t0 + v * k) for k in range(self.n_frames)]

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth"] = self.depth.value
        for o in d["occlusions"]:
            o["frames"] = list(o["frames"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        return cls(**data)

    @classmethod
    def load(cls, path) -> Scenario:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    pose: Pose
    mask: np.ndarray  # noise-free visible mask
    scene_depth: np.ndarray  # object plus occluders, 0 = no surface


class ScenarioRenderer:
    """Caches meshes and poses so frames can be generated one at a time."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.camera = scenario.camera_model()
        self.mesh = scenario.true_mesh()
        self.poses = scenario.poses()
        self._occluders = {}

    def _occluder_depth(self, occ: Occlusion) -> np.ndarray:
        shape = self.camera.shape
        if occ.rect is not None:
            x0, y0, x1, y1 = occ.rect
            depth = np.zeros(shape)
            depth[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = occ.depth
            return depth
        key = id(occ)
        if key not in self._occluders:
            try:
                _, depth = render(make_mesh(occ.mesh), pose_from_list(occ.pose), self.camera)
            except EmptyRender:
                depth = np.zeros(shape)
            self._occluders[key] = depth
        return self._occluders[key]

    def ground_truth(self, frame: int) -> GroundTruth:
        if not 0 <= frame < len(self.poses):
            raise IndexError(f"frame {frame} outside the {len(self.poses)}-frame trajectory")
        pose = self.poses[frame]
        try:
            mask, depth = render(self.mesh, pose, self.camera)
        except EmptyRender:
            mask, depth = np.zeros(self.camera.shape, dtype=bool), np.zeros(self.camera.shape)
        scene = depth.copy()
        visible = mask.copy()
        for occ in self.scenario.occlusions:
            if not occ.active(frame):
                continue
            occ_depth = self._occluder_depth(occ)
            in_front = (occ_depth > 0) & ((scene == 0) | (occ_depth < scene))
            visible &= ~(in_front & mask)
            scene[in_front] = occ_depth[in_front]
        return GroundTruth(pose, visible, scene)

    def observe(self, frame: int) -> tuple[Observation, GroundTruth]:
        sc = self.scenario
        gt = self.ground_truth(frame)
        mask = gt.mask
        if sc.erosion:
            r = sc.erosion
            yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
            mask = ndimage.binary_erosion(mask, structure=(xx**2 + yy**2) <= r * r)
        if sc.dropout:
            rng = np.random.default_rng([sc.seed, frame])
            keep = rng.random(int(np.count_nonzero(mask))) >= sc.dropout
            mask = mask.copy()
            rows, cols = np.nonzero(mask)
            mask[rows[~keep], cols[~keep]] = False
        with_depth = sc.depth is DepthPolicy.ALL or (sc.depth is DepthPolicy.FIRST_FRAME and frame == 0)
        depth = gt.scene_depth if with_depth else np.zeros(self.camera.shape)
        return Observation(mask, self.camera, depth), gt


def generate_observation(scenario: Scenario, frame: int) -> tuple[Observation, GroundTruth]:
    return ScenarioRenderer(scenario).observe(frame)

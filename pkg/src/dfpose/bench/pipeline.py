"""End-to-end run: registration, per-frame tracking with recovery, metrics."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

from ..errors import EmptyRender, NoConvergence, PoseError
from ..geom import Pose, sample_rotation_grid
from ..hypo import OracleRefiner, OracleScorer, Refiner, Scorer, SilhouetteRefiner, SilhouetteScorer
from ..metrics import FrameErrors, MetricReport, average_recalls, evaluate_frame
from ..recover import KalmanConfig, LossReason, LossThresholds, RecoveryConfig, StepConfig, TrackerMode, init_tracker, step
from ..register import (
    DepthSearchConfig,
    ScaleSearchConfig,
    anchor_to_depth,
    recover_scale,
    register_depth_free,
    register_with_depth,
)
from ..render import median_masked_depth
from ..track import TrackConfig, track_frame
from .scenario import Scenario, ScenarioRenderer


@dataclass(frozen=True)
class RefinerConfig:
    kind: str = "silhouette"  # silhouette | oracle
    rounds: int = 10
    step_deg: float = 2.5
    max_depth_step: float = 0.2

    def build(self, truth: Pose | None = None) -> Refiner:
        if self.kind == "silhouette":
            return SilhouetteRefiner(self.rounds, self.step_deg, self.max_depth_step)
        if self.kind == "oracle":
            if truth is None:
                raise ValueError("the oracle refiner needs a ground-truth pose")
            return OracleRefiner(truth)
        raise ValueError(f"unknown refiner kind {self.kind!r}")


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "silhouette"  # silhouette | oracle
    chamfer_weight: float = 0.1

    def build(self, truth: Pose | None = None) -> Scorer:
        if self.kind == "silhouette":
            return SilhouetteScorer(self.chamfer_weight)
        if self.kind == "oracle":
            if truth is None:
                raise ValueError("the oracle scorer needs a ground-truth pose")
            return OracleScorer(truth)
        raise ValueError(f"unknown scorer kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    track: TrackConfig = field(default_factory=TrackConfig)
    thresholds: LossThresholds = field(default_factory=LossThresholds)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    depth_search: DepthSearchConfig = field(default_factory=DepthSearchConfig)
    scale_search: ScaleSearchConfig = field(default_factory=ScaleSearchConfig)
    # first-frame registration and scale search; "oracle" kinds read frame 0 ground truth
    registration_refiner: RefinerConfig = field(default_factory=lambda: RefinerConfig(rounds=3))
    registration_scorer: ScorerConfig = field(default_factory=ScorerConfig)
    # per-frame tracking and recovery
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    recovery_enabled: bool = True
    scale_recovery: bool = True

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineConfig:
        return _from_dict(cls, data or {})

    def to_dict(self) -> dict:
        return _to_dict(self)

    def with_overrides(self, data: dict) -> PipelineConfig:
        merged = self.to_dict()
        _deep_update(merged, data)
        return PipelineConfig.from_dict(merged)


def _from_dict(cls, data: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            value = _from_dict(type(default), {**_to_dict(default), **value})
        kwargs[name] = value
    return cls(**kwargs)


def _to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            value = _to_dict(value)
        elif hasattr(value, "value"):  # enums
            value = value.value
        out[f.name] = value
    return out


def _deep_update(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


@dataclass(frozen=True, eq=False)
class FrameRecord:
    frame: int
    pose: Pose
    mode: TrackerMode
    reason: LossReason
    n_hypotheses: int
    score: float
    errors: FrameErrors
    wall_ms: float = 0.0

    def __post_init__(self):
        if not self.wall_ms >= 0:
            raise ValueError("wall time must be non-negative")


@dataclass
class RunInfo:
    """What happened before tracking started."""

    scale: float = 1.0
    registration_converged: bool = True
    registration_ms: float = 0.0


class RegistrationError(PoseError):
    pass


def _register(scenario, obs0, gt0, cad, config: PipelineConfig, info: RunInfo):
    refiner = config.registration_refiner.build(gt0.pose)
    scorer = config.registration_scorer.build(gt0.pose)
    rotations = sample_rotation_grid()
    if not scenario.scale_known and config.scale_recovery:
        if not obs0.has_depth():
            raise RegistrationError("scale recovery needs depth in the first frame")
        info.scale = recover_scale(cad, obs0, config.scale_search, refiner, scorer, rotations)
        cad = cad.rescaled(info.scale)
    if obs0.has_depth():
        pose = register_with_depth(cad, obs0, refiner, scorer, rotations)
        # the median-depth translation sits on the visible surface; slide back to the center
        pose = anchor_to_depth(cad, pose, obs0.camera, median_masked_depth(obs0.depth, obs0.mask))
    else:
        try:
            pose = register_depth_free(cad, obs0, config.depth_search, refiner, scorer, rotations)
        except NoConvergence as exc:
            info.registration_converged = False
            pose = exc.best
    return pose, cad


def run_pipeline(scenario: Scenario, config: PipelineConfig | None = None) -> tuple[list[FrameRecord], MetricReport, RunInfo]:
    """Register frame 0, then track every frame; deterministic given the scenario seed."""
    config = config or PipelineConfig.from_dict(scenario.pipeline)
    renderer = ScenarioRenderer(scenario)
    camera = renderer.camera
    true_mesh = renderer.mesh
    symmetries = scenario.symmetry_poses()
    info = RunInfo()

    t0 = time.perf_counter()
    obs0, gt0 = renderer.observe(0)
    try:
        pose, cad = _register(scenario, obs0, gt0, scenario.cad_mesh(), config, info)
    except (PoseError, ValueError) as exc:
        raise RegistrationError(f"frame 0 of {scenario.name!r}: {exc}") from exc
    info.registration_ms = (time.perf_counter() - t0) * 1e3

    track_refiner = config.refiner.build(gt0.pose)
    track_scorer = config.scorer.build(gt0.pose)
    step_cfg = StepConfig(config.track, config.thresholds, config.recovery)
    state = init_tracker(pose, config.kalman)
    records = []

    def record(frame, pose, mode, reason, n_hyp, score, gt, started):
        errors = evaluate_frame(pose, gt.pose, true_mesh, camera, gt.scene_depth, symmetries, est_mesh=cad)
        wall = (time.perf_counter() - started) * 1e3
        records.append(FrameRecord(frame, pose, mode, reason, n_hyp, score, errors, wall))

    record(0, pose, TrackerMode.TRACKING, LossReason.NONE, 0, math.nan, gt0, t0)
    for frame in range(1, scenario.n_frames):
        started = time.perf_counter()
        obs, gt = renderer.observe(frame)
        if config.recovery_enabled:
            pose, state = step(state, obs, cad, camera, step_cfg, track_refiner, track_scorer)
            record(frame, pose, state.mode, state.reason, state.n_hypotheses, state.score, gt, started)
        else:
            try:
                pose = track_frame(pose, obs, cad, config.track, track_refiner)
            except EmptyRender:
                pass  # nothing to refine against; hold the last estimate
            record(frame, pose, TrackerMode.TRACKING, LossReason.NONE, 1, math.nan, gt, started)

    report = average_recalls([r.errors for r in records], true_mesh.diameter, camera)
    return records, report, info

"""CSV/JSON emission for pipeline runs.

Wall time goes only to ``timing.csv`` so every other file is bitwise
reproducible for a fixed scenario and seed.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..errors import EmptyInput
from ..geom import Pose
from ..metrics import N_STEPS, FrameErrors, MetricReport
from ..recover import LossReason, TrackerMode
from .pipeline import FrameRecord

FRAME_COLUMNS = ["frame", "mode", "reason", "n_hypotheses", "score"] + [f"vsd_{k}" for k in range(N_STEPS)] + [
    "mssd",
    "mspd",
    "t_err",
    "r_err",
]
POSE_COLUMNS = ["frame"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"]


def _fmt(x: float) -> str:
    return repr(float(x))


def pose_row(frame: int, pose: Pose) -> list[str]:
    return [str(frame)] + [_fmt(v) for v in pose.R.ravel()] + [_fmt(v) for v in pose.t]


def parse_pose_row(row: dict) -> tuple[int, Pose]:
    R = np.array([float(row[f"r{i}{j}"]) for i in range(3) for j in range(3)]).reshape(3, 3)
    t = np.array([float(row[k]) for k in ("tx", "ty", "tz")])
    return int(row["frame"]), Pose(R, t)


def write_poses(path, frames, poses) -> None:
    with _open(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POSE_COLUMNS)
        for frame, pose in zip(frames, poses):
            w.writerow(pose_row(frame, pose))


def read_poses(path) -> dict[int, Pose]:
    with open(path, newline="") as f:
        return dict(parse_pose_row(row) for row in csv.DictReader(f))


class _open:
    """``open(path, "w")`` whose errors name the path."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self):
        try:
            self.f = open(self.path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write {self.path}: {exc.strerror or exc}") from exc
        return self.f

    def __exit__(self, *exc):
        self.f.close()


def emit_reports(records: list[FrameRecord], report: MetricReport, out, extra: dict | None = None) -> dict[str, Path]:
    """Write frames.csv, poses.csv, transitions.csv, error_series.csv, timing.csv and summary.json."""
    if not records:
        raise EmptyInput("no frame records to report")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    paths = {name: out / name for name in ("frames.csv", "poses.csv", "transitions.csv", "error_series.csv", "timing.csv", "summary.json")}

    with _open(paths["frames.csv"]) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(FRAME_COLUMNS)
        for r in records:
            e = r.errors
            w.writerow(
                [r.frame, r.mode.value, r.reason.value, r.n_hypotheses, _fmt(r.score)]
                + [_fmt(v) for v in e.vsd]
                + [_fmt(e.mssd), _fmt(e.mspd), _fmt(e.t_err), _fmt(e.r_err)]
            )

    write_poses(paths["poses.csv"], [r.frame for r in records], [r.pose for r in records])

    with _open(paths["transitions.csv"]) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "from", "to", "reason"])
        previous = TrackerMode.TRACKING
        for r in records:
            if r.mode is not previous:
                w.writerow([r.frame, previous.value, r.mode.value, r.reason.value])
                previous = r.mode

    with _open(paths["error_series.csv"]) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "t_err", "r_err", "mssd", "mode"])
        for r in records:
            w.writerow([r.frame, _fmt(r.errors.t_err), _fmt(r.errors.r_err), _fmt(r.errors.mssd), r.mode.value])

    with _open(paths["timing.csv"]) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "wall_ms"])
        for r in records:
            w.writerow([r.frame, f"{r.wall_ms:.3f}"])

    summary = report.summary()
    summary["n_frames"] = len(records)
    summary["modes"] = {m.value: sum(r.mode is m for r in records) for m in TrackerMode}
    if extra:
        summary.update(extra)
    with _open(paths["summary.json"]) as f:
        f.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return paths


def read_records(out) -> list[FrameRecord]:
    """Inverse of the frames.csv / poses.csv / timing.csv part of :func:`emit_reports`."""
    out = Path(out)
    poses = read_poses(out / "poses.csv")
    timing = {}
    if (out / "timing.csv").exists():
        with open(out / "timing.csv", newline="") as f:
            timing = {int(row["frame"]): float(row["wall_ms"]) for row in csv.DictReader(f)}
    records = []
    with open(out / "frames.csv", newline="") as f:
        for row in csv.DictReader(f):
            frame = int(row["frame"])
            errors = FrameErrors(
                tuple(float(row[f"vsd_{k}"]) for k in range(N_STEPS)),
                float(row["mssd"]),
                float(row["mspd"]),
                float(row["t_err"]),
                float(row["r_err"]),
            )
            records.append(
                FrameRecord(
                    frame,
                    poses[frame],
                    TrackerMode(row["mode"]),
                    LossReason(row["reason"]),
                    int(row["n_hypotheses"]),
                    float(row["score"]),
                    errors,
                    timing.get(frame, 0.0),
                )
            )
    return records


def finite_or_none(x: float):
    return x if math.isfinite(x) else None

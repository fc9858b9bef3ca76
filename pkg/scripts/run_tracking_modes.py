"""Compare depth-handling modes on the approach sequence (object flying toward the camera).

    python scripts/run_tracking_modes.py --frames 200 --out results/modes.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from dfpose.bench import presets
from dfpose.bench.scenario import ScenarioRenderer
from dfpose.hypo import SilhouetteRefiner
from dfpose.track import TrackConfig, TrackMode, track_frame


def run(mode: TrackMode, frames: int, speed: float) -> np.ndarray:
    renderer = ScenarioRenderer(presets.approach(frames=frames, speed=speed))
    refiner = SilhouetteRefiner()
    pose, errors = renderer.poses[0], []
    for frame in range(1, frames):
        obs, gt = renderer.observe(frame)
        pose = track_frame(pose, obs, renderer.mesh, TrackConfig(mode), refiner)
        errors.append(np.linalg.norm(pose.t - gt.pose.t))
    return np.array(errors)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--speed", type=float, default=0.02, help="m/frame")
    ap.add_argument("--out", type=Path, default=None, help="per-frame translation errors as CSV")
    args = ap.parse_args()

    series = {mode.value: run(mode, args.frames, args.speed) for mode in TrackMode}
    for name, err in series.items():
        slope = np.polyfit(np.arange(len(err)), err, 1)[0]
        print(f"{name:>11}: final {err[-1] * 1e3:9.2f} mm  mean {err.mean() * 1e3:9.2f} mm  slope {slope:+.2e} m/frame")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["frame"] + list(series))
            for k, row in enumerate(zip(*series.values()), start=1):
                w.writerow([k] + [repr(float(v)) for v in row])


if __name__ == "__main__":
    main()

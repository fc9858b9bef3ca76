"""Occlusion sequences with and without tracking-loss recovery."""

import argparse
from pathlib import Path

import numpy as np

from dfpose.bench import presets
from dfpose.bench.pipeline import PipelineConfig, run_pipeline
from dfpose.bench.reports import emit_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--speed-after", type=float, default=None, help="object speed (m/frame) while hidden")
    ap.add_argument("--out", type=Path, default=None, help="write reports to OUT/{on,off}")
    args = ap.parse_args()

    sc = presets.occlusion(args.seed, speed_after=args.speed_after)
    base = PipelineConfig.from_dict(sc.pipeline)
    for label, enabled in (("on", True), ("off", False)):
        records, report, _ = run_pipeline(sc, base.with_overrides({"recovery_enabled": enabled}))
        hit = np.mean([r.errors.mssd < 0.1 * report.diameter for r in records])
        searches = [r.frame for r in records if r.n_hypotheses > 1]
        print(
            f"recovery {label:>3}: AR {report.ar:.3f}  MSSD@10% {hit:.3f}  "
            f"T.Err {report.mean_t_err * 1e3:.1f} mm  R.Err {report.mean_r_err:.1f} deg  search frames {searches}"
        )
        if args.out:
            emit_reports(records, report, args.out / label, {"scenario": sc.name, "recovery": enabled})


if __name__ == "__main__":
    main()

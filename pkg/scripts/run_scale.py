"""CAD scale recovery from one depth frame, over several wrong CAD scales."""

import argparse

from dfpose.bench import presets
from dfpose.bench.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0])
    ap.add_argument("--frames", type=int, default=12)
    ap.add_argument("--occluded", action="store_true", help="hide half the object in the first frame")
    args = ap.parse_args()

    for cad_scale in args.scales:
        sc = presets.scale(cad_scale=cad_scale, occluded_first_frame=args.occluded, frames=args.frames)
        base = PipelineConfig.from_dict(sc.pipeline)
        _, with_rec, info = run_pipeline(sc, base)
        _, without, _ = run_pipeline(sc, base.with_overrides({"scale_recovery": False}))
        print(
            f"cad x{cad_scale:<4g} recovered size {cad_scale * info.scale:.4f}  "
            f"AR with {with_rec.ar:.3f}  without {without.ar:.3f}"
        )


if __name__ == "__main__":
    main()

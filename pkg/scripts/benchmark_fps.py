"""Per-frame throughput of tracking, loss detection and metrics (registration excluded)."""

import argparse

import numpy as np

from dfpose.bench import presets
from dfpose.bench.pipeline import run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", nargs="+", default=["static", "occlusion", "noisy"])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    run_pipeline(presets.static(frames=2))  # jit warm-up
    for name in args.presets:
        sc = presets.PRESETS[name]()
        ms = []
        for _ in range(args.repeats):
            records, _, info = run_pipeline(sc)
            ms.extend(r.wall_ms for r in records[1:])
        ms = np.array(ms)
        faces = len(sc.true_mesh().faces)
        print(
            f"{name:>18} ({faces:5d} tris): {1e3 / ms.mean():6.1f} fps  "
            f"median {np.median(ms):6.2f} ms  p95 {np.percentile(ms, 95):6.2f} ms  "
            f"registration {info.registration_ms:7.1f} ms"
        )


if __name__ == "__main__":
    main()

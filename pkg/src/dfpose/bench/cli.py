"""Command-line entry point: ``dfpose {register,track,recover-scale,eval,gen-scenario}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..errors import NoConvergence
from ..geom import sample_rotation_grid
from ..metrics import average_recalls, evaluate_frame
from ..register import recover_scale, register_depth_free
from .pipeline import PipelineConfig, run_pipeline
from .presets import PRESETS
from .reports import _fmt, _open, emit_reports, read_poses, write_poses
from .scenario import Scenario, ScenarioRenderer


class CliError(Exception):
    pass


def _scenario(args) -> Scenario:
    if args.scenario is None:
        raise CliError("--scenario is required (write examples with gen-scenario)")
    data = json.loads(Path(args.scenario).read_text())
    if args.seed is not None:
        data["seed"] = args.seed
    return Scenario.from_dict(data)


def _config(args, scenario: Scenario) -> PipelineConfig:
    overrides = dict(scenario.pipeline)
    if getattr(args, "mode", None):
        overrides.setdefault("track", {})
        overrides["track"] = {**overrides["track"], "mode": args.mode}
    if getattr(args, "recovery", None):
        overrides["recovery_enabled"] = args.recovery == "on"
    config = PipelineConfig.from_dict(overrides)
    # the scenario seed also drives recovery sampling
    return config.with_overrides({"recovery": {"seed": config.recovery.seed + scenario.seed}})


def _write_json(path: Path, data: dict) -> None:
    with _open(path) as f:
        f.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_trace(path: Path, trace) -> None:
    with _open(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "low", "high", "probe", "depth", "rendered_area", "observed_area", "score"])
        for s in trace:
            w.writerow([s.iteration, _fmt(s.low), _fmt(s.high), _fmt(s.probe), _fmt(s.depth), s.rendered_area, s.observed_area, _fmt(s.score)])


def cmd_register(args) -> dict:
    scenario = _scenario(args)
    config = _config(args, scenario)
    obs, gt = ScenarioRenderer(scenario).observe(args.frame)
    cad = scenario.cad_mesh()
    trace = []
    converged = True
    try:
        pose = register_depth_free(
            cad,
            obs,
            config.depth_search,
            config.registration_refiner.build(gt.pose),
            config.registration_scorer.build(gt.pose),
            sample_rotation_grid(),
            trace,
        )
    except NoConvergence as exc:
        pose, converged = exc.best, False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_trace(out / "trace.csv", trace)
    write_poses(out / "poses.csv", [args.frame], [pose])
    t_true = gt.pose.t
    summary = {
        "frame": args.frame,
        "converged": converged,
        "iterations": len(trace),
        "depth": float(pose.t[2]),
        "true_depth": float(t_true[2]),
        "depth_error": float(abs(pose.t[2] - t_true[2])),
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_track(args) -> dict:
    scenario = _scenario(args)
    config = _config(args, scenario)
    records, report, info = run_pipeline(scenario, config)
    out = Path(args.out)
    extra = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "scale": info.scale,
        "registration_converged": info.registration_converged,
        "config": config.to_dict(),
    }
    emit_reports(records, report, out, extra)
    renderer = ScenarioRenderer(scenario)
    write_poses(out / "truth.csv", range(len(renderer.poses)), renderer.poses)
    return {"AR": report.ar, "frames": len(records), "scale": info.scale}


def cmd_recover_scale(args) -> dict:
    scenario = _scenario(args)
    config = _config(args, scenario)
    obs, gt = ScenarioRenderer(scenario).observe(0)
    cad = scenario.cad_mesh()
    trace = []
    converged = True
    try:
        s = recover_scale(
            cad,
            obs,
            config.scale_search,
            config.registration_refiner.build(gt.pose),
            config.registration_scorer.build(gt.pose),
            sample_rotation_grid(),
            trace,
        )
    except NoConvergence as exc:
        s, converged = exc.best, False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_trace(out / "trace.csv", trace)
    summary = {
        "converged": converged,
        "iterations": len(trace),
        "multiplier": s,
        "cad_scale": scenario.cad_scale,
        "recovered_relative_scale": scenario.cad_scale * s,
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_eval(args) -> dict:
    """Score an estimated pose CSV against the scenario (or a truth CSV)."""
    scenario = _scenario(args)
    renderer = ScenarioRenderer(scenario)
    estimated = read_poses(args.poses)
    truth = read_poses(args.truth) if args.truth else dict(enumerate(renderer.poses))
    cad = scenario.cad_mesh()
    if args.scale is not None:
        cad = cad.rescaled(args.scale)
    frames, errors = [], []
    for frame in sorted(truth):
        gt = renderer.ground_truth(frame)
        frames.append(frame)
        errors.append(
            evaluate_frame(
                estimated.get(frame), truth[frame], renderer.mesh, renderer.camera, gt.scene_depth, scenario.symmetry_poses(), cad
            )
        )
    report = average_recalls(errors, renderer.mesh.diameter, renderer.camera)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _open(out / "frames.csv") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "mssd", "mspd", "t_err", "r_err"] + [f"vsd_{k}" for k in range(len(errors[0].vsd))])
        for frame, e in zip(frames, errors):
            w.writerow([frame, _fmt(e.mssd), _fmt(e.mspd), _fmt(e.t_err), _fmt(e.r_err)] + [_fmt(v) for v in e.vsd])
    _write_json(out / "summary.json", report.summary())
    return {"AR": report.ar, "frames": len(frames)}


def cmd_gen_scenario(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [args.name] if args.name else sorted(PRESETS)
    written = []
    for name in names:
        if name not in PRESETS:
            raise CliError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        path = out / f"{name}.json"
        PRESETS[name](seed=args.seed or 0).save(path)
        written.append(str(path))
    return {"written": written}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfpose", description="Depth-free pose registration and tracking on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False, recovery=False):
        p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", required=True, help="output directory")
        if mode:
            p.add_argument("--mode", choices=["zero-depth", "last-depth", "true-depth"])
        if recovery:
            p.add_argument("--recovery", choices=["on", "off"])
        return p

    p = common(sub.add_parser("register", help="first-frame depth search with iteration trace"))
    p.add_argument("--frame", type=int, default=0)
    p.set_defaults(func=cmd_register)
    common(sub.add_parser("track", help="full pipeline with reports"), mode=True, recovery=True).set_defaults(func=cmd_track)
    common(sub.add_parser("recover-scale", help="CAD scale search on frame 0")).set_defaults(func=cmd_recover_scale)
    p = common(sub.add_parser("eval", help="metrics for a pose CSV"))
    p.add_argument("--poses", required=True, help="estimated poses.csv")
    p.add_argument("--truth", help="ground-truth poses.csv (default: the scenario trajectory)")
    p.add_argument("--scale", type=float, default=None, help="multiplier applied to the CAD model")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("gen-scenario", help="write example scenario files"))
    p.add_argument("--name", help="one preset (default: all)")
    p.set_defaults(func=cmd_gen_scenario)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:  # reported as JSON, never a traceback
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(result, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: single trials, grid sweeps, comparison and a perception self-test."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import CONTROLLERS, ScenarioConfig
from .errors import TrackingLost, TrialAborted, VsDockError
from .harness import compare, format_summary, run_sweep
from .perception import PerceptionPipeline, pixels_of, write_pgm
from .simulator import render_markers, true_state

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_USAGE = 2
EXIT_CHECK_FAILED = 3

CENTROID_TOL_PX = 0.1


def _load(path) -> ScenarioConfig:
    return ScenarioConfig() if path is None else ScenarioConfig.load(path)


def _controllers(text: str) -> list:
    names = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in names if c not in CONTROLLERS]
    if bad or not names:
        raise ValueError(f"controllers must be a comma list drawn from {', '.join(CONTROLLERS)}")
    return names


def _report(result) -> int:
    print(format_summary(result.summary))
    for o in result.aborted:
        print(f"ABORTED {o.trial_id}: {o.error}", file=sys.stderr)
    return EXIT_ABORTED if result.aborted else EXIT_OK


def cmd_trial(args) -> int:
    base = _load(args.config)
    changes = {}
    if args.controller is not None:
        changes["controller"] = args.controller
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = base.with_(**changes)
    trial_id = f"{cfg.controller}_trial"
    result = run_sweep(cfg, trials=[(trial_id, cfg)], out_dir=args.out, threads=1, strict=False)
    return _report(result)


def cmd_sweep(args) -> int:
    base = _load(args.config)
    if args.seed is not None:
        base = base.with_(seed=args.seed)
    controllers = _controllers(args.controllers)
    trials = None
    if not args.paper_grid:
        trials = [(f"{c}_start", base.with_(controller=c)) for c in controllers]
    result = run_sweep(base, controllers, trials, out_dir=args.out, threads=args.threads, strict=False)
    return _report(result)


def cmd_compare(args) -> int:
    print(format_summary(compare(args.in_dir)))
    return EXIT_OK


def render_check(cfg: ScenarioConfig, out=None) -> dict:
    """Render the configured start pose as an image and run the perception pipeline on it.

    Returns the worst centroid error (px) and the depth / orientation errors of
    the recovered pose against the simulator's ground truth.
    """
    K, model, mount = cfg.camera(), cfg.marker(), cfg.mount()
    pose = cfg.initial_pose()
    truth = true_state(pose, model, mount, cfg.camera_height)
    ideal, missing = render_markers(pose, model, K, "ideal", mount, cfg.camera_height)
    if missing:
        raise TrackingLost(f"markers {missing} fall outside the image at the start pose")
    img = render_markers(pose, model, K, "raster", mount, cfg.camera_height)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_pgm(Path(out) / "render_check.pgm", img)
    pipe = PerceptionPipeline(model, K, cfg.threshold, cfg.min_blob_area, cfg.gate_px, cfg.perception_rate)
    obs, Z, theta = pipe.process(img)
    err = np.linalg.norm(pixels_of(obs, K) - ideal.pixels[list(obs.ids)], axis=1)
    return {
        "centroid_err_px": float(err.max()),
        "depth_err_m": abs(Z - truth.Z),
        "theta_err_deg": float(np.degrees(abs(theta - truth.theta))),
    }


def cmd_render_check(args) -> int:
    res = render_check(_load(args.config), args.out)
    for k, v in res.items():
        print(f"{k:<16}{v:.6g}")
    ok = res["centroid_err_px"] <= CENTROID_TOL_PX
    print("render-check", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsdock", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("trial", help="run one closed-loop docking trial")
    t.add_argument("--config", type=Path)
    t.add_argument("--controller", choices=CONTROLLERS)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, required=True)
    t.set_defaults(func=cmd_trial)

    s = sub.add_parser("sweep", help="run every controller over a grid of starts")
    s.add_argument("--config", type=Path)
    s.add_argument("--paper-grid", action="store_true", help="25 starts: 5 positions x 5 headings")
    s.add_argument("--controllers", default=",".join(CONTROLLERS))
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help="worker processes (default: VSDOCK_THREADS or CPU count)")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="summarize the logs of a finished sweep")
    c.add_argument("--in", dest="in_dir", type=Path, required=True)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("render-check", help="raster perception self-test at the configured start pose")
    r.add_argument("--config", type=Path)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_render_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrialAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except TrackingLost as exc:
        print(f"render-check FAIL: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (VsDockError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

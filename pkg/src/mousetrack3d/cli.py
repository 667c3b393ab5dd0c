"""Command-line orchestration.

Subcommands: simulate, train-deform, solve, evaluate, plot, pipeline.
Exit codes: 0 success, 2 validation/schema error, 3 numerical failure,
4 acceptance-check failure (pipeline --check only).
All commands are deterministic under a fixed seed; emitted reports carry the
hash of the effective config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import adjustment, deform_predictor, evaluation, geometry, simulator
from .errors import (
    DivergedLoss,
    MouseTrackError,
    NonFiniteCost,
    NoSolvableEpoch,
    SchemaError,
)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4


def _config_hash(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")


def _scene_config(doc, seed=None):
    d = dict(doc)
    if seed is not None:
        d["seed"] = seed
    if "cameras" not in d:
        d["cameras"] = [geometry.camera_to_dict(c)
                        for c in simulator.default_cameras()]
    return simulator._config_from_dict(d)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    doc = _load_json(args.config) if args.config else {}
    doc.setdefault("n_epochs", 100)
    doc.setdefault("seed", 0)
    config = _scene_config(doc, seed=args.seed)
    dataset = simulator.simulate(config)
    simulator.export_dataset(dataset, args.out)
    print(f"simulate: wrote {dataset.n_epochs} epochs to {args.out}")
    return EXIT_OK


def cmd_train_deform(args):
    datasets = [simulator.import_dataset(p) for p in args.data]
    model, losses = deform_predictor.train(
        datasets, epochs=args.epochs, lr=args.lr,
        seed=args.seed if args.seed is not None else 0,
        hidden_size=args.hidden)
    deform_predictor.save_model(model, args.out)
    print(f"train-deform: final loss {losses[-1]:.6g} after {len(losses)} epochs, "
          f"model written to {args.out}")
    return EXIT_OK


def cmd_solve(args):
    dataset = simulator.import_dataset(args.data)
    cameras = geometry.load_cameras(args.cameras) if args.cameras else dataset.cameras
    deform_model = deform_predictor.load_model(args.deform) if args.deform else None
    stochastic = adjustment.StochasticConfig(
        smoothness_weight=args.ws if args.ws is not None
        else adjustment.StochasticConfig().smoothness_weight)
    mode = args.mode
    if mode == "deformed" and deform_model is None:
        raise SchemaError("--mode deformed requires --deform MODEL")
    track, report = adjustment.solve_dataset(
        dataset, cameras, mode=mode, deform_model=deform_model,
        stochastic=stochastic)
    adjustment.save_track(track, args.out)
    print(f"solve: {report.status} in {report.iterations} iterations, "
          f"cost {report.initial_cost:.6g} -> {report.final_cost:.6g}, "
          f"reprojection rms {report.reprojection_rms_px:.4f} px")
    return EXIT_OK


def cmd_evaluate(args):
    dataset = simulator.import_dataset(args.data)
    track = adjustment.load_track(args.track)
    report = evaluation.evaluate(track, dataset)
    extra = {"config_hash": _config_hash(simulator._config_to_dict(dataset.config))}
    evaluation.save_report(report, args.out, extra=extra)
    print(f"evaluate: position rmse {report.position_rmse_mm:.4f} mm, "
          f"completeness {report.completeness_input:.3f} -> "
          f"{report.completeness_output:.3f}")
    return EXIT_OK


def cmd_plot(args):
    dataset = simulator.import_dataset(args.data)
    track = adjustment.load_track(args.track)
    written = evaluation.plot(track, dataset, args.out_dir)
    print("plot: wrote " + ", ".join(written))
    return EXIT_OK


def cmd_pipeline(args):
    cfg = _load_json(args.config) if args.config else {}
    scene_doc = dict(cfg.get("scene", {}))
    scene_doc.setdefault("n_epochs", 100)
    scene_doc.setdefault("seed", 0)
    if args.seed is not None:
        scene_doc["seed"] = args.seed
    train_cfg = cfg.get("train", {})
    solve_cfg = cfg.get("solve", {})
    check_cfg = cfg.get("check", {})

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    effective = {"scene": scene_doc, "train": train_cfg, "solve": solve_cfg}
    cfg_hash = _config_hash(effective)

    config = _scene_config(scene_doc)
    dataset = simulator.simulate(config)
    data_path = os.path.join(out, "data.json")
    simulator.export_dataset(dataset, data_path)

    mode = solve_cfg.get("mode", "rigid")
    deform_model = None
    if mode == "deformed":
        train_seed = int(train_cfg.get("seed", config.seed))
        deform_model, _ = deform_predictor.train(
            [dataset],
            epochs=int(train_cfg.get("epochs", 150)),
            lr=float(train_cfg.get("lr", 1e-2)),
            seed=train_seed,
            hidden_size=int(train_cfg.get("hidden", 48)))
        deform_predictor.save_model(deform_model,
                                    os.path.join(out, "deform_model.json"))

    stochastic = adjustment.StochasticConfig(
        smoothness_weight=float(
            solve_cfg.get("ws", adjustment.StochasticConfig().smoothness_weight)))
    track, solve_report = adjustment.solve_dataset(
        dataset, config.cameras, mode=mode, deform_model=deform_model,
        stochastic=stochastic)
    adjustment.save_track(track, os.path.join(out, "track.json"))

    report = evaluation.evaluate(track, dataset)
    evaluation.save_report(report, os.path.join(out, "report.json"),
                           extra={"config_hash": cfg_hash,
                                  "solver_status": solve_report.status})
    evaluation.plot(track, dataset, out)
    print(f"pipeline: completeness {report.completeness_input:.3f} -> "
          f"{report.completeness_output:.3f}, position rmse "
          f"{report.position_rmse_mm:.4f} mm (config {cfg_hash})")

    if args.check:
        failures = []
        if report.completeness_output < 1.0:
            failures.append("completeness: output track does not cover every epoch")
        max_rmse = float(check_cfg.get("max_position_rmse_mm", 5.0))
        if report.position_rmse_mm > max_rmse:
            failures.append(f"position rmse {report.position_rmse_mm:.3f} mm "
                            f"> {max_rmse} mm")
        min_gain = float(check_cfg.get("min_completeness_gain", 0.0))
        if report.completeness_output - report.completeness_input < min_gain:
            failures.append("completeness criterion: gain "
                            f"{report.completeness_output - report.completeness_input:.3f}"
                            f" < {min_gain}")
        if failures:
            for msg in failures:
                print(f"check failed: {msg}", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mousetrack3d",
        description="Multi-view 3D body-part track reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="scene config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-deform", help="train the deformation predictor")
    p.add_argument("--data", action="append", required=True,
                   help="dataset JSON (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--hidden", type=int, default=48)
    p.set_defaults(func=cmd_train_deform)

    p = sub.add_parser("solve", help="run the bundle adjustment")
    p.add_argument("--data", required=True)
    p.add_argument("--cameras", help="camera JSON (default: dataset cameras)")
    p.add_argument("--deform", help="trained deformation model")
    p.add_argument("--ws", type=float, default=None, help="smoothness weight")
    p.add_argument("--mode", choices=["rigid", "deformed"], default="rigid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="compare a track against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="emit SVG/CSV track artifacts")
    p.add_argument("--data", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline",
                       help="simulate -> train -> solve -> evaluate -> plot")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--check", action="store_true",
                   help="nonzero exit on acceptance-threshold violation")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (NonFiniteCost, NoSolvableEpoch, DivergedLoss) as e:
        print(f"{args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MouseTrackError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

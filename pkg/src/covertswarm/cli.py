"""Command-line front end: simulate, dataset, train, predict, eval-covert.

All numeric settings live in JSON config files; flags only select paths,
seeds and simple switches.  Every command writes a run manifest next to
its primary output and removes partial outputs on failure.

Exit codes: 0 ok, 2 config/validation problem, 3 I/O failure, 4 numeric
failure during training or prediction.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import covert as cv
from . import gkae
from . import graphs
from . import swarm

DATASET_TRAIN_FRACTION = 0.8


class _Outputs:
    """Tracks files created by a command so failures can clean them up."""

    def __init__(self):
        self.paths = []

    def register(self, path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                if p.is_file():
                    p.unlink()
            except OSError:
                pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _require_file(path, what: str) -> None:
    if not Path(path).is_file():
        raise ValueError(f"{what} not found: {path}")


def _load_json(path) -> dict:
    _require_file(path, "config file")
    with open(path) as fh:
        return json.load(fh)


def _write_manifest(primary_out, command: str, args, outputs: _Outputs,
                    t_start: float, config_path=None, inputs=None) -> None:
    primary = Path(primary_out)
    if primary.is_dir():
        path = primary / "manifest.json"
    else:
        path = primary.with_name(primary.name + ".manifest.json")
    doc = {
        "tool": "covertswarm",
        "version": __version__,
        "command": command,
        "config": str(config_path) if config_path else None,
        "config_digest": _sha256(config_path) if config_path else None,
        "seed": getattr(args, "seed", None),
        "inputs": {k: _sha256(v) for k, v in (inputs or {}).items()},
        "outputs": [str(p) for p in outputs.paths],
        "duration_s": time.monotonic() - t_start,
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, path)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args, outputs: _Outputs) -> None:
    cfg_dict = _load_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = swarm.config_from_dict(cfg_dict)
    t0 = time.monotonic()
    traj = swarm.simulate(config)
    swarm.save_trajectory_csv(traj, outputs.register(args.out))
    _write_manifest(args.out, "simulate", args, outputs, t0, config_path=args.config)
    _say(args, f"simulated {traj.n_frames} frames x {config.L} UAVs -> {args.out}")


# --- dataset -----------------------------------------------------------------

def cmd_dataset(args, outputs: _Outputs) -> None:
    cfg = _load_json(args.config)
    swarm_cfg = swarm.config_from_dict(cfg["swarm"])
    n = args.n if args.n is not None else int(cfg["n_trajectories"])
    if n < 1:
        raise ValueError(f"n_trajectories must be >= 1, got {n}")
    base_seed = args.seed if args.seed is not None else swarm_cfg.seed
    d_tilde = float(cfg.get("d_tilde", graphs.DEFAULT_THRESHOLD_M))
    norm = graphs.NormalizationSpec(
        scale=float(cfg.get("scale", swarm_cfg.X_size)),
        offset=tuple(cfg.get("offset", (0.0, 0.0, 0.0))),
    )
    burn_in_s = float(cfg.get("burn_in_s", 0.0))
    skip = int(round(burn_in_s / swarm_cfg.dt))

    t0 = time.monotonic()
    out_dir = Path(args.out)
    train_dir = out_dir / "train"
    test_dir = out_dir / "test"
    train_dir.mkdir(parents=True, exist_ok=True)
    test_dir.mkdir(parents=True, exist_ok=True)
    n_train = int(n * DATASET_TRAIN_FRACTION)
    for k in range(n):
        traj = swarm.simulate(replace(swarm_cfg, seed=base_seed + k))
        positions = traj.positions[skip:]
        if positions.shape[0] < 2:
            raise ValueError("burn_in_s leaves fewer than 2 frames per trajectory")
        seq = graphs.sequence_from_positions(positions, d_tilde, swarm_cfg.dt, norm)
        seq = graphs.normalize(seq)
        split = train_dir if k < n_train else test_dir
        graphs.save_sequence_json(seq, outputs.register(split / f"seq_{k:04d}.json"))
    _write_manifest(out_dir, "dataset", args, outputs, t0, config_path=args.config)
    _say(args, f"wrote {n_train} train + {n - n_train} test sequences -> {out_dir}")


# --- train -------------------------------------------------------------------

def _train_config_from_dict(data: dict) -> gkae.TrainConfig:
    known = {"alpha1", "alpha2", "tau", "epochs_phase1", "epochs_phase2",
             "lr", "window", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    return gkae.TrainConfig(**data)


def cmd_train(args, outputs: _Outputs) -> None:
    cfg_dict = _load_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = _train_config_from_dict(cfg_dict)

    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise ValueError(f"dataset directory not found: {data_dir}")
    train_dir = data_dir / "train" if (data_dir / "train").is_dir() else data_dir
    files = sorted(train_dir.glob("*.json"))
    if not files:
        raise ValueError(f"no training sequences found under {train_dir}")
    dataset = [graphs.load_sequence_json(p) for p in files]
    first = dataset[0]
    d_out = first.snapshots[0].features.shape[1]

    if args.resume:
        _require_file(args.resume, "resume checkpoint")
        model = gkae.load_checkpoint(args.resume)
        if model.L != first.n_nodes or model.d_out != d_out:
            raise ValueError(
                f"resume checkpoint dims (L={model.L}, d={model.d_out}) do not match "
                f"dataset (L={first.n_nodes}, d={d_out})")
    else:
        model = gkae.build_model(first.n_nodes, d_out=d_out, norm=first.norm,
                                 seed=cfg.seed)
    t0 = time.monotonic()
    model, history = gkae.train(model, dataset, cfg)
    model.meta["d_tilde"] = first.threshold
    out = Path(args.out)
    gkae.save_checkpoint(model, outputs.register(out))
    loss_csv = Path(args.loss_csv) if args.loss_csv else \
        out.with_name(out.stem + "_loss.csv")
    gkae.save_loss_csv(history, outputs.register(loss_csv))
    _write_manifest(out, "train", args, outputs, t0, config_path=args.config)
    final = history[-1]["total"] if history else float("nan")
    _say(args, f"trained {len(dataset)} sequences, final loss {final:.6g} -> {out}")


# --- predict -----------------------------------------------------------------

def _finite_difference_velocities(origin: np.ndarray, pred: np.ndarray,
                                  dt: float) -> np.ndarray:
    stacked = np.concatenate([origin[None], pred])
    return (stacked[1:] - stacked[:-1]) / dt


def cmd_predict(args, outputs: _Outputs) -> None:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.trajectory, "trajectory file")
    model = gkae.load_checkpoint(args.checkpoint)
    if model.d_out != 3:
        raise ValueError("predict requires a 3D checkpoint")
    times, positions, _ = swarm.load_trajectory_csv(args.trajectory)
    if len(times) < 2:
        raise ValueError("trajectory needs at least 2 frames")
    dt = float(times[1] - times[0])
    if positions.shape[1] != model.L:
        raise ValueError(
            f"trajectory has {positions.shape[1]} UAVs, checkpoint expects {model.L}")
    steps = int(round(args.horizon_s / dt))
    if steps < 1:
        raise ValueError("horizon shorter than one step")
    if steps > positions.shape[0] - 1:
        raise ValueError(
            f"horizon of {steps} steps exceeds the {positions.shape[0] - 1} "
            "available truth steps")
    per_check = max(1, int(round(args.report_interval_s / dt)))
    checks = np.arange(per_check, steps + 1, per_check)

    t0 = time.monotonic()
    if args.replay:
        _require_file(args.replay, "replay file")
        _, pred, _ = swarm.load_trajectory_csv(args.replay)
        if pred.shape[0] < steps:
            raise ValueError("replay file shorter than the requested horizon")
        pred = pred[:steps]
    else:
        d_tilde = args.d_tilde if args.d_tilde is not None else \
            float(model.meta.get("d_tilde", graphs.DEFAULT_THRESHOLD_M))
        snap = graphs.build_snapshot(positions[0], d_tilde, t=0.0)
        snap = graphs.normalize_snapshot(snap, model.norm)
        pred = gkae.rollout_predict(model, snap, steps)

    pred_traj = swarm.Trajectory(
        positions=pred,
        velocities=_finite_difference_velocities(positions[0], pred, dt),
        dt=dt,
        config=None,
    )
    out = Path(args.out)
    _save_prediction_csv(pred_traj, out, dt, outputs)

    scale2 = model.norm.scale ** 2
    rows = []
    for s in checks:
        eps = cv.prediction_error(positions[s], pred[s - 1])
        row = {"delta_t_s": s * dt, "eps_pred": eps, "eps_pred_norm": eps / scale2}
        rows.append(row)
    if args.baseline:
        cv_pred = cv.baseline_constant_velocity(positions[0:2], steps)
        for row, s in zip(rows, checks):
            eps = cv.prediction_error(positions[s], cv_pred[s - 1])
            row["eps_cv"] = eps
            row["eps_cv_norm"] = eps / scale2
    errors_csv = Path(args.errors_out) if args.errors_out else \
        out.with_name(out.stem + "_errors.csv")
    _save_errors_csv(rows, errors_csv, outputs)
    _write_manifest(out, "predict", args, outputs, t0,
                    inputs={"checkpoint": args.checkpoint,
                            "trajectory": args.trajectory})
    eps_mean = float(np.mean([r["eps_pred"] for r in rows]))
    _say(args, f"predicted {steps} steps, eps_mean={eps_mean:.6g} m^2 -> {out}")


def _save_prediction_csv(pred_traj, path, dt, outputs: _Outputs) -> None:
    # Prediction frames start one step after the observed frame.
    import csv as _csv
    with open(outputs.register(path), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(swarm.CSV_HEADER)
        for k in range(pred_traj.positions.shape[0]):
            t = (k + 1) * dt
            for i in range(pred_traj.positions.shape[1]):
                row = [f"{t:.17g}", str(i)]
                row += [f"{v:.17g}" for v in pred_traj.positions[k, i]]
                row += [f"{v:.17g}" for v in pred_traj.velocities[k, i]]
                writer.writerow(row)


def _save_errors_csv(rows, path, outputs: _Outputs) -> None:
    cols = list(rows[0].keys())
    with open(outputs.register(path), "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[c]:.17g}" for c in cols) + "\n")
        means = {c: float(np.mean([r[c] for r in rows])) for c in cols[1:]}
        fh.write("mean," + ",".join(f"{means[c]:.17g}" for c in cols[1:]) + "\n")


# --- eval-covert -------------------------------------------------------------

def cmd_eval_covert(args, outputs: _Outputs) -> None:
    _require_file(args.checkpoint, "checkpoint")
    model = gkae.load_checkpoint(args.checkpoint)
    cfg = _load_json(args.config)
    swarm_cfg = swarm.config_from_dict(cfg["swarm"])
    covert_dict = dict(cfg.get("covert", {}))
    if "lambda" in covert_dict:
        covert_dict["lambda_"] = covert_dict.pop("lambda")
    if args.seed is not None:
        covert_dict["seed"] = args.seed
    covert_cfg = cv.CovertConfig(**covert_dict)
    ground = dict(cfg.get("ground", {}))
    area = float(ground.pop("area", swarm_cfg.X_size))
    lambda_grid = list(cfg.get("lambda_grid", [covert_cfg.lambda_]))
    n_grid = [int(v) for v in cfg.get("n_grid", [25])]
    l_grid = [int(v) for v in cfg.get("l_grid", [model.L])]
    use_nominal = bool(cfg.get("use_nominal_power", False))
    burn_in_s = float(cfg.get("burn_in_s", 0.0))
    for lam in lambda_grid:
        if not 0 < lam < 1:
            raise ValueError(f"lambda grid value {lam} not in (0, 1)")
    for L in l_grid:
        if L != model.L:
            raise ValueError(f"UAV count {L} does not match checkpoint L={model.L}")

    dt = swarm_cfg.dt
    per_check = int(round(covert_cfg.report_interval_s / dt))
    n_checks = covert_cfg.n_checks
    h_steps = per_check * n_checks
    skip = int(round(burn_in_s / dt))
    duration = burn_in_s + covert_cfg.horizon_s
    n_max = max(n_grid)
    d_tilde = float(model.meta.get("d_tilde", graphs.DEFAULT_THRESHOLD_M))

    t0 = time.monotonic()
    cells = []
    audit_report = None
    for L in l_grid:
        p_true = np.empty((covert_cfg.runs, n_checks, n_max))
        p_pred = np.empty((covert_cfg.runs, n_checks, n_max))
        eps = np.empty((covert_cfg.runs, n_checks))
        for r in range(covert_cfg.runs):
            run_seed = covert_cfg.seed + r
            cfg_r = replace(swarm_cfg, L=L, seed=run_seed, duration=duration)
            traj = swarm.simulate(cfg_r)
            snap = graphs.build_snapshot(traj.positions[skip], d_tilde)
            snap = graphs.normalize_snapshot(snap, model.norm)
            pred = gkae.rollout_predict(model, snap, h_steps)
            check_steps = per_check * np.arange(1, n_checks + 1)
            true_checks = traj.positions[skip + check_steps]
            pred_checks = pred[check_steps - 1]
            rng_nodes = np.random.default_rng([covert_cfg.seed, r, 1])
            net = cv.GroundNetwork.uniform_random(n_max, area, rng_nodes, **ground)
            nominal = np.array([cv.nominal_power(net, i) for i in range(n_max)]) \
                if use_nominal else np.full(n_max, net.P_max)
            _, pt, pp = cv.detection_events(net, true_checks, pred_checks,
                                            covert_cfg, nominal)
            p_true[r], p_pred[r] = pt, pp
            for c in range(n_checks):
                eps[r, c] = cv.prediction_error(true_checks[c], pred_checks[c])
        eps_mean = float(eps.mean())
        for n_nodes in n_grid:
            for lam in lambda_grid:
                flags = p_true[:, :, :n_nodes] < lam * p_pred[:, :, :n_nodes]
                p_det = float(flags.any(axis=(1, 2)).mean())
                cells.append({"lambda": lam, "N": n_nodes, "L": L,
                              "H": covert_cfg.horizon_s, "P_det": p_det,
                              "eps_mean": eps_mean})
                if audit_report is None and args.audit:
                    audit_report = cv.DetectionReport(
                        flags, p_true[:, :, :n_nodes], p_pred[:, :, :n_nodes],
                        eps, lam, covert_cfg.report_interval_s)

    out = Path(args.out)
    with open(outputs.register(out), "w", newline="") as fh:
        fh.write("lambda,N,L,H,P_det,eps_mean\n")
        for c in cells:
            fh.write(f"{c['lambda']:.17g},{c['N']},{c['L']},{c['H']:.17g},"
                     f"{c['P_det']:.17g},{c['eps_mean']:.17g}\n")
    report_path = out.with_name(out.stem + "_report.json")
    with open(outputs.register(report_path), "w") as fh:
        json.dump({"runs": covert_cfg.runs, "horizon_s": covert_cfg.horizon_s,
                   "report_interval_s": covert_cfg.report_interval_s,
                   "cells": cells}, fh, indent=1)
    if audit_report is not None:
        audit_report.save_summary_csv(
            outputs.register(out.with_name(out.stem + "_audit.csv")))
    _write_manifest(out, "eval-covert", args, outputs, t0, config_path=args.config,
                    inputs={"checkpoint": args.checkpoint})
    _say(args, f"evaluated {len(cells)} cells over {covert_cfg.runs} runs -> {out}")


# --- parser / entry ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covertswarm",
        description="UAV swarm simulation, graph Koopman forecasting and covert "
                    "transmit-power evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="generate one swarm trajectory CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="generate normalized graph-sequence files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=None, help="number of trajectories")
    common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--resume", default=None, help="continue from a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="roll out predictions from a trajectory's first frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trajectory", required=True, help="truth trajectory CSV")
    p.add_argument("--horizon-s", type=float, default=10.0)
    p.add_argument("--report-interval-s", type=float, default=1.0)
    p.add_argument("--out", required=True, help="prediction CSV path")
    p.add_argument("--errors-out", default=None)
    p.add_argument("--baseline", action="store_true",
                   help="add constant-velocity comparison columns")
    p.add_argument("--replay", default=None,
                   help="evaluate an existing prediction CSV instead of the model")
    p.add_argument("--d-tilde", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval-covert", help="Monte-Carlo detection probability evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="aggregate CSV path")
    p.add_argument("--audit", action="store_true",
                   help="also dump a per-(run,time,node) audit CSV for the first cell")
    common(p)
    p.set_defaults(func=cmd_eval_covert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    outputs = _Outputs()
    try:
        args.func(args, outputs)
        return 0
    except (gkae.TrainingDivergence, gkae.ModelStateError) as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

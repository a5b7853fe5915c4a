"""Experiment commands.

Each subcommand writes one run directory: a manifest.json (command, full
resolved config, config hash, output list) plus CSV/JSON files holding the
data behind one figure family. Commands are reproducible from (config,
seed); no network access is needed anywhere (MNIST IDX paths are inputs).

Exit codes: 0 success, 2 when the only failures were recorded divergences,
1 on errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .analysis import (
    DirectionReport,
    classify_critical_point,
    cosine_similarity,
    equilibrated_gradient_1mlp,
    hessians_1mlp,
    landscape_grid,
    loss_gradient_1mlp,
    optimal_direction_1mlp,
    perturbation_robustness,
)
from .data import RegressionTask, load_mnist, sample_regression
from .energy import InferenceSchedule, Precisions, run_inference
from .network import NetworkSpec, WeightSet, init_weights
from .trainers import (
    TrainConfig,
    bp_step,
    pc_step,
    record_csv_rows,
    train,
    train_epochs,
    trn_step_1mlp,
    write_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2

_COSINE_INIT_STREAM = 0xC05

ONE_MLP = NetworkSpec((1, 1, 1), ("linear", "linear"))

TOY_DEFAULTS = {
    "seed": 0,
    "learning_rate": 0.2,
    "batch_size": 64,
    "max_batches": 5000,
    "stop_test_loss": 1e-3,
    "inference": {"step_size": 0.1, "max_iters": 20, "halving_count": 0,
                  "convergence_tolerance": 1e-8},
    "task": {"slope": -1.0, "input_mean": 1.0, "input_variance": 0.1, "seed": 0},
    "landscape": {"w_min": -2.0, "w_max": 2.0, "resolution": 41, "n_eval": 1024},
    "inference_snapshots": [0, 1, 20],
    "flow": {"radius": 0.35, "resolution": 13},
}

LANDSCAPE_DEFAULTS = {
    "task": {"slope": -1.0, "input_mean": 1.0, "input_variance": 0.1, "seed": 0},
    "landscape": {"w_min": -2.0, "w_max": 2.0, "resolution": 41, "n_eval": 1024},
}

COSINE_DEFAULTS = {
    "n_seeds": 10,
    "n_batches": 5,
    "learning_rate": 0.2,
    "batch_size": 64,
    "trn_damping": 2.0,
    "inference": {"step_size": 0.1, "max_iters": 20, "halving_count": 0,
                  "convergence_tolerance": 1e-10},
    "task": {"slope": -1.0, "input_mean": 1.0, "input_variance": 0.1, "seed": 0},
}

CHAINS_DEFAULTS = {
    "depths": [1, 5, 10],
    "activations": ["linear", "tanh", "relu"],
    "algorithms": ["bp", "pc"],
    "lr_grid": [1e-4, 1e-3, 1e-2, 1e-1, 1e0],
    "seeds": [0, 1, 2],
    "batch_size": 64,
    "max_batches": 2000,
    "stop_train_loss": 0.01,
    "plateau_window": 500,
    "inference": {"step_size": 0.1, "max_iters": 500, "halving_count": 2,
                  "convergence_tolerance": 1e-8},
    "task": {"slope": -1.0, "input_mean": 1.0, "input_variance": 0.1, "seed": 0},
    "workers": 1,
}

MNIST_DEFAULTS = {
    "data_dir": "data/mnist",
    "width": 64,
    "depths": [5, 10],
    "lr_grid": [0.1],
    "seeds": [0, 1, 2],
    "batch_size": 64,
    "epochs_max": 5,
    "inference": {"step_size": 0.1, "max_iters": 1000, "halving_count": 2,
                  "convergence_tolerance": 1e-5},
}

PERTURB_DEFAULTS = {
    "sigma": 0.5,
    "n_seeds": 10,
    "train_seed": 0,
    "n_eval": 1000,
    "learning_rate": 0.2,
    "batch_size": 64,
    "max_batches": 5000,
    "stop_test_loss": 1e-3,
    "inference": {"step_size": 0.1, "max_iters": 200, "halving_count": 0,
                  "convergence_tolerance": 1e-8},
    "task": {"slope": -1.0, "input_mean": 1.0, "input_variance": 0.1, "seed": 0},
}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def merge_config(defaults: dict, override: dict | None) -> dict:
    out = json.loads(json.dumps(defaults))
    for key, val in (override or {}).items():
        if key not in out:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            for k2, v2 in val.items():
                if k2 not in out[key]:
                    raise ValueError(f"unknown config key {key}.{k2}")
                out[key][k2] = v2
        else:
            out[key] = val
    return out


def load_config_file(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f)
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "outputs": sorted(outputs),
        "package": "pctrust",
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _task_from(cfg: dict) -> RegressionTask:
    t = cfg["task"]
    return RegressionTask(t["slope"], t["input_mean"], t["input_variance"], t["seed"])


def _schedule_from(cfg: dict) -> InferenceSchedule:
    s = cfg["inference"]
    return InferenceSchedule(
        step_size=s["step_size"],
        max_iters=s["max_iters"],
        halving_count=s["halving_count"],
        convergence_tolerance=s["convergence_tolerance"],
    )


# ---------------------------------------------------------------------------
# toy / landscape
# ---------------------------------------------------------------------------


def _landscape_rows(grid) -> list[dict]:
    rows = []
    for i, w1 in enumerate(grid.w1):
        for j, w2 in enumerate(grid.w2):
            rows.append(
                {
                    "w1": f"{w1:.10g}",
                    "w2": f"{w2:.10g}",
                    "value": f"{grid.values[i, j]:.12g}",
                    "u": f"{grid.neg_grad_w1[i, j]:.12g}",
                    "v": f"{grid.neg_grad_w2[i, j]:.12g}",
                }
            )
    return rows


def _write_landscapes(out_dir: Path, cfg: dict, task: RegressionTask) -> list[str]:
    ls = cfg["landscape"]
    rng_ = (ls["w_min"], ls["w_max"])
    outputs = []
    for obj, name in (("loss", "landscape_loss.csv"), ("equilibrated_energy", "landscape_energy.csv")):
        grid = landscape_grid(obj, rng_, rng_, ls["resolution"], task, ls["n_eval"])
        write_csv(out_dir / name, _landscape_rows(grid), ("w1", "w2", "value", "u", "v"))
        outputs.append(name)
    return outputs


def _inference_energy_snapshots(task, w1s, w2s, steps, eta, n_eval):
    """Grid of the toy-model energy after t inference iterations, for each
    t in `steps`, averaged over an evaluation batch (vectorized over grid
    points and samples)."""
    batch = sample_regression(task, n_eval, draw=0)
    x = batch.inputs.ravel()[None, None, :]
    y = batch.targets.ravel()[None, None, :]
    W1 = w1s[:, None, None]
    W2 = w2s[None, :, None]
    z = W1 * x  # feedforward init, broadcast to (R, R, B)
    snapshots = {}
    t = 0
    for target in sorted(set(int(s) for s in steps)):
        while t < target:
            z = z - eta * ((z - W1 * x) - W2 * (y - W2 * z))
            t += 1
        F = 0.5 * np.mean((z - W1 * x) ** 2 + (y - W2 * z) ** 2, axis=2)
        snapshots[target] = F
    return snapshots


def _flow_rows(center, radius, resolution, batch) -> list[dict]:
    w1s = np.linspace(center[0] - radius, center[0] + radius, resolution)
    w2s = np.linspace(center[1] - radius, center[1] + radius, resolution)
    rows = []
    for w1 in w1s:
        for w2 in w2s:
            gl = loss_gradient_1mlp((w1, w2), batch)
            ge = equilibrated_gradient_1mlp((w1, w2), batch)
            for obj, g in (("loss", gl), ("equilibrated_energy", ge)):
                rows.append(
                    {
                        "w1": f"{w1:.10g}",
                        "w2": f"{w2:.10g}",
                        "objective": obj,
                        "u": f"{-g[0]:.12g}",
                        "v": f"{-g[1]:.12g}",
                    }
                )
    return rows


def cmd_toy(out_dir: Path, cfg: dict) -> int:
    task = _task_from(cfg)
    schedule = _schedule_from(cfg)
    outputs = []
    records = {}
    for alg in ("bp", "pc"):
        config = TrainConfig(
            algorithm=alg,
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            max_batches=cfg["max_batches"],
            inference=schedule if alg == "pc" else None,
            stop_train_loss=None,
            stop_test_loss=cfg["stop_test_loss"],
            plateau_window=None,
            record_weights=True,
            seed=cfg["seed"],
        )
        records[alg] = train(ONE_MLP, config, task)

    loss_rows = []
    traj_rows = []
    for alg, rec in records.items():
        loss_rows += record_csv_rows(rec, depth=2, activation="linear")
        for t, (w1, w2) in enumerate(rec.weight_trajectory, start=1):
            traj_rows.append(
                {"algorithm": alg, "step": t, "w1": f"{w1:.12g}", "w2": f"{w2:.12g}"}
            )
    write_csv(out_dir / "losses.csv", loss_rows)
    outputs.append("losses.csv")
    write_csv(out_dir / "trajectory.csv", traj_rows, ("algorithm", "step", "w1", "w2"))
    outputs.append("trajectory.csv")

    outputs += _write_landscapes(out_dir, cfg, task)

    # Energy trace of a single inference run at the shared initial weights.
    init_rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0x5EED)))
    w0 = init_weights(ONE_MLP, init_rng, "uniform")
    probe = sample_regression(task, cfg["batch_size"], draw=(cfg["seed"], 1))
    res = run_inference(ONE_MLP, w0, Precisions.ones(ONE_MLP), probe.inputs, probe.targets, schedule)
    write_csv(
        out_dir / "inference_trace.csv",
        [{"iteration": i, "energy": f"{e:.12g}"} for i, e in enumerate(res.energies)],
        ("iteration", "energy"),
    )
    outputs.append("inference_trace.csv")

    # Landscape snapshots along inference (initialisation, first step,
    # equilibrium).
    ls = cfg["landscape"]
    w1s = np.linspace(ls["w_min"], ls["w_max"], ls["resolution"])
    snaps = _inference_energy_snapshots(
        task, w1s, w1s, cfg["inference_snapshots"], schedule.step_size, ls["n_eval"]
    )
    snap_rows = []
    for t, F in snaps.items():
        for i, w1 in enumerate(w1s):
            for j, w2 in enumerate(w1s):
                snap_rows.append(
                    {"t": t, "w1": f"{w1:.10g}", "w2": f"{w2:.10g}", "value": f"{F[i, j]:.12g}"}
                )
    write_csv(out_dir / "inference_landscape.csv", snap_rows, ("t", "w1", "w2", "value"))
    outputs.append("inference_landscape.csv")

    # Flow fields near the saddle and near the inference run's endpoint
    # minimum, plus critical-point reports.
    eval_batch = sample_regression(task, ls["n_eval"], draw=0)
    flow = cfg["flow"]
    write_csv(
        out_dir / "flow_saddle.csv",
        _flow_rows((0.0, 0.0), flow["radius"], flow["resolution"], eval_batch),
        ("w1", "w2", "objective", "u", "v"),
    )
    outputs.append("flow_saddle.csv")

    pc_end = records["pc"].final_weights
    od = optimal_direction_1mlp(pc_end[0][0, 0], pc_end[1][0, 0], slope=task.slope)
    write_csv(
        out_dir / "flow_minimum.csv",
        _flow_rows(od.manifold_point, flow["radius"], flow["resolution"], eval_batch),
        ("w1", "w2", "objective", "u", "v"),
    )
    outputs.append("flow_minimum.csv")

    reports = []
    H_L0, H_F0 = hessians_1mlp((0.0, 0.0), eval_batch)
    reports.append(classify_critical_point((0.0, 0.0), "loss", np.linalg.eigvalsh(H_L0)))
    reports.append(
        classify_critical_point((0.0, 0.0), "equilibrated_energy", np.linalg.eigvalsh(H_F0))
    )
    H_Lm, H_Fm = hessians_1mlp(od.manifold_point, eval_batch)
    reports.append(classify_critical_point(od.manifold_point, "loss", np.linalg.eigvalsh(H_Lm)))
    reports.append(
        classify_critical_point(
            od.manifold_point, "equilibrated_energy", np.linalg.eigvalsh(H_Fm)
        )
    )
    with open(out_dir / "critical_points.json", "w") as f:
        json.dump([r.to_json_dict() for r in reports], f, indent=2)
    outputs.append("critical_points.json")

    summary = {alg: rec.summary() for alg, rec in records.items()}
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    outputs.append("summary.json")

    write_manifest(out_dir, "toy", cfg, outputs)
    if any(rec.stop_reason == "diverged" for rec in records.values()):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_landscape(out_dir: Path, cfg: dict) -> int:
    task = _task_from(cfg)
    outputs = _write_landscapes(out_dir, cfg, task)
    write_manifest(out_dir, "landscape", cfg, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# cosine (optimal-direction comparison)
# ---------------------------------------------------------------------------


def cmd_cosine(out_dir: Path, cfg: dict) -> int:
    task = _task_from(cfg)
    schedule = _schedule_from(cfg)
    alpha = cfg["learning_rate"]
    prec = Precisions.ones(ONE_MLP)
    algorithms = ("pc", "bp", "trn")
    rows = []
    for seed in range(cfg["n_seeds"]):
        rng = np.random.default_rng(np.random.SeedSequence((seed, _COSINE_INIT_STREAM)))
        w0 = rng.uniform(-1.0, 1.0, size=2)
        weights = {alg: w0.copy() for alg in algorithms}
        for t in range(1, cfg["n_batches"] + 1):
            batch = sample_regression(task, cfg["batch_size"], draw=(seed, t))
            updates = {}
            cosines = {}
            opt = {}
            for alg in algorithms:
                w = weights[alg]
                od = optimal_direction_1mlp(w[0], w[1], slope=task.slope)
                opt[alg] = od.delta
                if alg == "bp":
                    ws = WeightSet([np.array([[w[0]]]), np.array([[w[1]]])])
                    new = bp_step(ONE_MLP, ws, batch, alpha).flat()
                elif alg == "pc":
                    ws = WeightSet([np.array([[w[0]]]), np.array([[w[1]]])])
                    new = pc_step(ONE_MLP, ws, prec, batch, alpha, schedule).flat()
                else:
                    new = trn_step_1mlp(w, batch, cfg["trn_damping"], alpha)
                updates[alg] = new - w
                try:
                    cosines[alg] = cosine_similarity(od.delta, updates[alg])
                except ValueError:
                    cosines[alg] = float("nan")
                weights[alg] = new
            # The optimal step is taken at each algorithm's own iterate;
            # the report keeps every per-algorithm pair.
            report = DirectionReport(t, opt["pc"], updates, cosines)
            for alg in algorithms:
                rows.append(
                    {
                        "seed": seed,
                        "batch": report.batch,
                        "algorithm": alg,
                        "cosine": f"{report.cosines[alg]:.12g}",
                        "dw_opt_1": f"{opt[alg][0]:.12g}",
                        "dw_opt_2": f"{opt[alg][1]:.12g}",
                        "dw_1": f"{report.updates[alg][0]:.12g}",
                        "dw_2": f"{report.updates[alg][1]:.12g}",
                    }
                )
    write_csv(
        out_dir / "cosine.csv",
        rows,
        ("seed", "batch", "algorithm", "cosine", "dw_opt_1", "dw_opt_2", "dw_1", "dw_2"),
    )

    stats_rows = []
    for t in range(1, cfg["n_batches"] + 1):
        for alg in algorithms:
            vals = np.array(
                [float(r["cosine"]) for r in rows if r["batch"] == t and r["algorithm"] == alg]
            )
            vals = vals[np.isfinite(vals)]
            sem = vals.std(ddof=1) / np.sqrt(vals.size) if vals.size > 1 else 0.0
            stats_rows.append(
                {
                    "batch": t,
                    "algorithm": alg,
                    "mean_cosine": f"{vals.mean():.12g}",
                    "sem_cosine": f"{sem:.12g}",
                    "n": vals.size,
                }
            )
    write_csv(out_dir / "cosine_stats.csv", stats_rows,
              ("batch", "algorithm", "mean_cosine", "sem_cosine", "n"))
    write_manifest(out_dir, "cosine", cfg, ["cosine.csv", "cosine_stats.csv"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# chains (depth x activation sweep)
# ---------------------------------------------------------------------------


def _chain_point(args):
    activation, depth, alg, lr, seed, cfg = args
    spec = NetworkSpec.chain(depth, activation)
    config = TrainConfig(
        algorithm=alg,
        learning_rate=lr,
        batch_size=cfg["batch_size"],
        max_batches=cfg["max_batches"],
        inference=_schedule_from(cfg) if alg == "pc" else None,
        stop_train_loss=cfg["stop_train_loss"],
        stop_test_loss=None,
        plateau_window=cfg["plateau_window"],
        seed=seed,
    )
    record = train(spec, config, _task_from(cfg))
    return (activation, depth, alg, lr, seed), record


def pick_best_lr(records_by_lr: dict) -> float:
    """Lowest mean final train loss wins; ties break to fewer batches."""

    def score(lr):
        recs = records_by_lr[lr]
        finals = [
            float(r.train_losses[-1]) if r.batches and np.isfinite(r.train_losses[-1]) else np.inf
            for r in recs
        ]
        return (float(np.mean(finals)), float(np.mean([r.batches for r in recs])))

    return min(records_by_lr, key=score)


def cmd_chains(out_dir: Path, cfg: dict) -> int:
    points = [
        (act, depth, alg, lr, seed)
        for act in cfg["activations"]
        for depth in cfg["depths"]
        for alg in cfg["algorithms"]
        for lr in cfg["lr_grid"]
        for seed in cfg["seeds"]
    ]
    jobs = [p + (cfg,) for p in points]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = dict(pool.map(_chain_point, jobs))
    else:
        results = dict(map(_chain_point, jobs))

    summary_rows = []
    curve_rows = []
    stats_rows = []
    summary = {}
    for act in cfg["activations"]:
        for depth in cfg["depths"]:
            for alg in cfg["algorithms"]:
                by_lr = {
                    lr: [results[(act, depth, alg, lr, seed)] for seed in cfg["seeds"]]
                    for lr in cfg["lr_grid"]
                }
                best_lr = pick_best_lr(by_lr)
                best = by_lr[best_lr]
                penalty = cfg["max_batches"] + 1
                to_tol = [
                    r.batches_to_train_tol if r.batches_to_train_tol is not None else penalty
                    for r in best
                ]
                summary[f"{act}/d{depth}/{alg}"] = {
                    "best_lr": best_lr,
                    "batches_to_train_tol": to_tol,
                    "mean_batches_to_train_tol": float(np.mean(to_tol)),
                    "stop_reasons": [r.stop_reason for r in best],
                }
                for lr in cfg["lr_grid"]:
                    for rec in by_lr[lr]:
                        summary_rows.append(
                            {
                                "activation": act,
                                "depth": depth,
                                "algorithm": alg,
                                "lr": lr,
                                "seed": rec.seed,
                                "stop_reason": rec.stop_reason,
                                "batches": rec.batches,
                                "final_train_loss": f"{rec.train_losses[-1]:.12g}",
                                "final_test_loss": f"{rec.test_losses[-1]:.12g}",
                                "batches_to_train_tol": rec.batches_to_train_tol
                                if rec.batches_to_train_tol is not None
                                else "",
                                "winner": lr == best_lr,
                            }
                        )
                for rec in best:
                    curve_rows += record_csv_rows(rec, depth=depth, activation=act)
                # Per-step stats over seeds, truncated to the shortest run.
                n = min(r.batches for r in best)
                if n:
                    tr = np.stack([r.train_losses[:n] for r in best])
                    te = np.stack([r.test_losses[:n] for r in best])
                    denom = np.sqrt(len(best)) if len(best) > 1 else 1.0
                    for step in range(n):
                        stats_rows.append(
                            {
                                "activation": act,
                                "depth": depth,
                                "algorithm": alg,
                                "step": step + 1,
                                "mean_train_loss": f"{tr[:, step].mean():.12g}",
                                "sem_train_loss": f"{tr[:, step].std(ddof=1) / denom if len(best) > 1 else 0.0:.12g}",
                                "mean_test_loss": f"{te[:, step].mean():.12g}",
                                "sem_test_loss": f"{te[:, step].std(ddof=1) / denom if len(best) > 1 else 0.0:.12g}",
                            }
                        )

    write_csv(
        out_dir / "sweep_summary.csv",
        summary_rows,
        ("activation", "depth", "algorithm", "lr", "seed", "stop_reason", "batches",
         "final_train_loss", "final_test_loss", "batches_to_train_tol", "winner"),
    )
    write_csv(out_dir / "curves.csv", curve_rows)
    write_csv(
        out_dir / "curve_stats.csv",
        stats_rows,
        ("activation", "depth", "algorithm", "step", "mean_train_loss", "sem_train_loss",
         "mean_test_loss", "sem_test_loss"),
    )
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    write_manifest(
        out_dir, "chains", cfg,
        ["sweep_summary.csv", "curves.csv", "curve_stats.csv", "summary.json"],
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# mnist (epoch-based linear DNNs)
# ---------------------------------------------------------------------------


def cmd_mnist(out_dir: Path, cfg: dict) -> int:
    data_dir = Path(cfg["data_dir"])
    ds = load_mnist(
        data_dir / "train-images-idx3-ubyte",
        data_dir / "train-labels-idx1-ubyte",
        data_dir / "t10k-images-idx3-ubyte",
        data_dir / "t10k-labels-idx1-ubyte",
    )
    width = cfg["width"]
    schedule = _schedule_from(cfg)
    epoch_rows = []
    summary = {"comparisons": [], "dataset": ds.normalization | {"n_train": int(ds.train_inputs.shape[0])}}
    n_diverged = 0
    n_runs = 0

    for depth in cfg["depths"]:
        widths = (ds.train_inputs.shape[1],) + (width,) * (depth - 1) + (10,)
        spec = NetworkSpec(widths, ("linear",) * depth)
        for seed in cfg["seeds"]:
            runs = {}
            for alg in ("bp", "pc"):
                by_lr = {}
                for lr in cfg["lr_grid"]:
                    config = TrainConfig(
                        algorithm=alg,
                        learning_rate=lr,
                        batch_size=cfg["batch_size"],
                        inference=schedule if alg == "pc" else None,
                        stop_train_loss=None,
                        plateau_window=None,
                        init_scheme="fan_in",
                        seed=seed,
                    )
                    rec = train_epochs(spec, config, ds, cfg["epochs_max"])
                    n_runs += 1
                    if rec.stop_reason == "diverged":
                        n_diverged += 1
                    by_lr[lr] = rec
                    for ep in range(rec.epochs):
                        te = rec.test_losses[ep] if ep < len(rec.test_losses) else ""
                        epoch_rows.append(
                            {
                                "depth": depth,
                                "algorithm": alg,
                                "lr": lr,
                                "seed": seed,
                                "epoch": ep + 1,
                                "train_loss": f"{rec.train_losses[ep]:.12g}",
                                "test_loss": f"{te:.12g}" if te != "" else "",
                            }
                        )
                best_lr = min(
                    by_lr,
                    key=lambda lr: float(by_lr[lr].train_losses[-1])
                    if by_lr[lr].epochs and np.isfinite(by_lr[lr].train_losses[-1])
                    else np.inf,
                )
                runs[alg] = (best_lr, by_lr[best_lr])

            bp_lr, bp_rec = runs["bp"]
            pc_lr, pc_rec = runs["pc"]
            target = float(bp_rec.train_losses[-1]) if bp_rec.epochs else float("inf")
            reached = np.nonzero(pc_rec.train_losses < target)[0]
            pc_epochs = int(reached[0]) + 1 if reached.size else None
            summary["comparisons"].append(
                {
                    "depth": depth,
                    "seed": seed,
                    "bp_lr": bp_lr,
                    "bp_epochs": bp_rec.epochs,
                    "bp_final_train_loss": target,
                    "pc_lr": pc_lr,
                    "pc_epochs_to_reach_bp": pc_epochs,
                    "pc_beats_bp": pc_epochs is not None and pc_epochs < bp_rec.epochs,
                }
            )

    write_csv(
        out_dir / "mnist_epochs.csv",
        epoch_rows,
        ("depth", "algorithm", "lr", "seed", "epoch", "train_loss", "test_loss"),
    )
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    write_manifest(out_dir, "mnist", cfg, ["mnist_epochs.csv", "summary.json"])
    if n_diverged == n_runs:
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# perturb (near-minimum robustness)
# ---------------------------------------------------------------------------


def cmd_perturb(out_dir: Path, cfg: dict) -> int:
    task = _task_from(cfg)
    schedule = _schedule_from(cfg)
    trained = {}
    diverged = False
    for alg in ("bp", "pc"):
        config = TrainConfig(
            algorithm=alg,
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            max_batches=cfg["max_batches"],
            inference=schedule if alg == "pc" else None,
            stop_train_loss=None,
            stop_test_loss=cfg["stop_test_loss"],
            plateau_window=None,
            seed=cfg["train_seed"],
        )
        rec = train(ONE_MLP, config, task)
        diverged = diverged or rec.stop_reason == "diverged"
        trained[alg] = (rec.final_weights[0][0, 0], rec.final_weights[1][0, 0])

    stats = perturbation_robustness(trained, task, cfg["sigma"], cfg["n_seeds"], cfg["n_eval"])
    rows = []
    for alg, st in stats.items():
        for s, mse in enumerate(st.mses):
            rows.append({"algorithm": alg, "noise_seed": s, "mse": f"{mse:.12g}"})
    write_csv(out_dir / "perturb.csv", rows, ("algorithm", "noise_seed", "mse"))
    stats_rows = [
        {
            "algorithm": alg,
            "mean_mse": f"{st.mean:.12g}",
            "sem_mse": f"{st.sem:.12g}",
            "trained_w1": f"{trained[alg][0]:.12g}",
            "trained_w2": f"{trained[alg][1]:.12g}",
        }
        for alg, st in stats.items()
    ]
    write_csv(out_dir / "perturb_stats.csv", stats_rows,
              ("algorithm", "mean_mse", "sem_mse", "trained_w1", "trained_w2"))
    write_manifest(out_dir, "perturb", cfg, ["perturb.csv", "perturb_stats.csv"])
    return EXIT_DIVERGED if diverged else EXIT_OK


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

_COMMANDS = {
    "toy": (cmd_toy, TOY_DEFAULTS),
    "landscape": (cmd_landscape, LANDSCAPE_DEFAULTS),
    "cosine": (cmd_cosine, COSINE_DEFAULTS),
    "chains": (cmd_chains, CHAINS_DEFAULTS),
    "mnist": (cmd_mnist, MNIST_DEFAULTS),
    "perturb": (cmd_perturb, PERTURB_DEFAULTS),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pctrust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config overriding the defaults")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker pool size (chains)")
    args = parser.parse_args(argv)

    func, defaults = _COMMANDS[args.command]
    try:
        override = load_config_file(args.config) if args.config else {}
        if args.seed is not None:
            if "seed" in defaults:
                override["seed"] = args.seed
            elif "seeds" in defaults:
                override["seeds"] = [args.seed]
            elif "train_seed" in defaults:
                override["train_seed"] = args.seed
        if args.workers is not None and "workers" in defaults:
            override["workers"] = args.workers
        cfg = merge_config(defaults, override)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return func(out_dir, cfg)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

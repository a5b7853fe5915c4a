"""Render paper-style figures from a pctrust run directory.

Reads only the CSV/JSON bundle written by the experiment CLI (no
computation beyond plotting transforms) and emits PNG files. Rendering is
deterministic: re-running on the same inputs produces byte-identical
images.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

_SAVE_KW = {"dpi": 110, "metadata": {"Software": "pctrust-plots"}}
_ALG_COLORS = {"bp": "tab:blue", "pc": "tab:red", "trn": "tab:green"}

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "svg.hashsalt": "pctrust",
    }
)


class PlotDataError(RuntimeError):
    """Missing or malformed run-directory inputs."""


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise PlotDataError(f"missing {name} in {run_dir}")
    return path


def load_manifest(run_dir: Path) -> dict:
    path = _require(run_dir, "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    if "command" not in manifest:
        raise PlotDataError(f"manifest in {run_dir} lacks a command field")
    return manifest


def _grid_from(df: pd.DataFrame):
    w1 = np.sort(df["w1"].unique())
    w2 = np.sort(df["w2"].unique())
    piv = df.pivot(index="w1", columns="w2", values="value").loc[w1, w2]
    return w1, w2, piv.to_numpy()


def _field_from(df: pd.DataFrame, w1, w2):
    u = df.pivot(index="w1", columns="w2", values="u").loc[w1, w2].to_numpy()
    v = df.pivot(index="w1", columns="w2", values="v").loc[w1, w2].to_numpy()
    return u, v


def _standardize(u, v):
    # Unit-length arrows for display; magnitudes stay in the CSVs.
    norm = np.hypot(u, v)
    norm[norm == 0] = 1.0
    return u / norm, v / norm


def _quiver_thin(n, keep=16):
    step = max(1, n // keep)
    return slice(0, n, step)


def render_landscape(run_dir: Path, out_dir: Path) -> list[str]:
    loss_df = pd.read_csv(_require(run_dir, "landscape_loss.csv"))
    energy_df = pd.read_csv(_require(run_dir, "landscape_energy.csv"))
    w1, w2, L = _grid_from(loss_df)
    _, _, F = _grid_from(energy_df)
    vmax = max(L.max(), F.max())

    traj = None
    traj_path = run_dir / "trajectory.csv"
    if traj_path.exists():
        traj = pd.read_csv(traj_path)

    fig = plt.figure(figsize=(9.0, 7.5))
    W1, W2 = np.meshgrid(w1, w2, indexing="ij")
    for col, (name, Z, df) in enumerate(
        (("loss", L, loss_df), ("equilibrated energy", F, energy_df))
    ):
        ax = fig.add_subplot(2, 2, col + 1, projection="3d")
        ax.plot_surface(W1, W2, Z, cmap="viridis", vmin=0.0, vmax=vmax,
                        rstride=1, cstride=1, linewidth=0)
        ax.set_zlim(0.0, vmax)
        ax.set_xlabel("w1")
        ax.set_ylabel("w2")
        ax.set_title(name)

        ax2 = fig.add_subplot(2, 2, col + 3)
        cs = ax2.contourf(W1, W2, Z, levels=25, cmap="viridis", vmin=0.0, vmax=vmax)
        fig.colorbar(cs, ax=ax2, shrink=0.85)
        u, v = _field_from(df, w1, w2)
        u, v = _standardize(u, v)
        s = _quiver_thin(len(w1))
        ax2.quiver(W1[s, s], W2[s, s], u[s, s], v[s, s], color="white",
                   scale=30, width=0.003)
        if traj is not None:
            for alg, sub in traj.groupby("algorithm"):
                sub = sub.sort_values("step")
                ax2.plot(sub["w1"], sub["w2"], color=_ALG_COLORS.get(alg, "k"),
                         lw=1.5, label=alg)
                ax2.plot(sub["w1"].iloc[0], sub["w2"].iloc[0], "o", ms=4,
                         color=_ALG_COLORS.get(alg, "k"))
            ax2.legend(loc="upper right", fontsize=8)
        ax2.set_xlabel("w1")
        ax2.set_ylabel("w2")
    fig.tight_layout()
    fig.savefig(out_dir / "landscape_4panel.png", **_SAVE_KW)
    plt.close(fig)
    return ["landscape_4panel.png"]


def render_toy(run_dir: Path, out_dir: Path) -> list[str]:
    written = render_landscape(run_dir, out_dir)

    losses = pd.read_csv(_require(run_dir, "losses.csv"))
    fig, ax = plt.subplots()
    for alg, sub in losses.groupby("algorithm"):
        sub = sub.sort_values("step")
        ax.plot(sub["step"], sub["test_loss"], label=f"{alg} test",
                color=_ALG_COLORS.get(alg, "k"))
        ax.plot(sub["step"], sub["train_loss"], ls="--", alpha=0.6,
                label=f"{alg} train", color=_ALG_COLORS.get(alg, "k"))
    ax.set_yscale("log")
    ax.set_xlabel("training batch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "toy_losses.png", **_SAVE_KW)
    plt.close(fig)
    written.append("toy_losses.png")

    trace = pd.read_csv(_require(run_dir, "inference_trace.csv"))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(trace["iteration"], trace["energy"], color="tab:red")
    ax.set_xlabel("inference iteration")
    ax.set_ylabel("energy")
    fig.tight_layout()
    fig.savefig(out_dir / "inference_trace.png", **_SAVE_KW)
    plt.close(fig)
    written.append("inference_trace.png")

    snaps = pd.read_csv(_require(run_dir, "inference_landscape.csv"))
    ts = sorted(snaps["t"].unique())
    fig, axes = plt.subplots(1, len(ts), figsize=(3.2 * len(ts), 3.0), squeeze=False)
    for ax, t in zip(axes[0], ts):
        sub = snaps[snaps["t"] == t]
        w1, w2, Z = _grid_from(sub)
        W1, W2 = np.meshgrid(w1, w2, indexing="ij")
        ax.contourf(W1, W2, Z, levels=25, cmap="viridis")
        ax.set_title(f"t = {t}")
        ax.set_xlabel("w1")
        ax.set_ylabel("w2")
    fig.tight_layout()
    fig.savefig(out_dir / "inference_landscape.png", **_SAVE_KW)
    plt.close(fig)
    written.append("inference_landscape.png")

    fig, axes = plt.subplots(2, 2, figsize=(8.0, 7.0))
    for row, name in enumerate(("flow_saddle.csv", "flow_minimum.csv")):
        flow = pd.read_csv(_require(run_dir, name))
        for col, obj in enumerate(("loss", "equilibrated_energy")):
            sub = flow[flow["objective"] == obj]
            w1 = np.sort(sub["w1"].unique())
            w2 = np.sort(sub["w2"].unique())
            u = sub.pivot(index="w1", columns="w2", values="u").loc[w1, w2].to_numpy()
            v = sub.pivot(index="w1", columns="w2", values="v").loc[w1, w2].to_numpy()
            u, v = _standardize(u, v)
            W1, W2 = np.meshgrid(w1, w2, indexing="ij")
            ax = axes[row, col]
            ax.quiver(W1, W2, u, v, scale=25, width=0.004)
            where = "saddle" if "saddle" in name else "minimum"
            ax.set_title(f"{obj} near {where}")
            ax.set_xlabel("w1")
            ax.set_ylabel("w2")
    fig.tight_layout()
    fig.savefig(out_dir / "flow_fields.png", **_SAVE_KW)
    plt.close(fig)
    written.append("flow_fields.png")
    return written


def render_cosine(run_dir: Path, out_dir: Path) -> list[str]:
    stats = pd.read_csv(_require(run_dir, "cosine_stats.csv"))
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for alg, sub in stats.groupby("algorithm"):
        sub = sub.sort_values("batch")
        mean = sub["mean_cosine"].to_numpy()
        sem = sub["sem_cosine"].to_numpy()
        ax.plot(sub["batch"], mean, marker="o", ms=3, label=alg,
                color=_ALG_COLORS.get(alg, "k"))
        ax.fill_between(sub["batch"], mean - sem, mean + sem, alpha=0.25,
                        color=_ALG_COLORS.get(alg, "k"))
    ax.set_xlabel("training batch")
    ax.set_ylabel("cosine to optimal direction")
    ax.set_ylim(-1.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "cosine.png", **_SAVE_KW)
    plt.close(fig)
    return ["cosine.png"]


def _curve_grid(stats: pd.DataFrame, out_path: Path, value: str, sem: str, ylabel: str):
    acts = sorted(stats["activation"].unique())
    depths = sorted(stats["depth"].unique())
    fig, axes = plt.subplots(
        len(acts), len(depths), figsize=(3.1 * len(depths), 2.6 * len(acts)),
        squeeze=False,
    )
    for i, act in enumerate(acts):
        for j, depth in enumerate(depths):
            ax = axes[i, j]
            sub = stats[(stats["activation"] == act) & (stats["depth"] == depth)]
            for alg, runs in sub.groupby("algorithm"):
                runs = runs.sort_values("step")
                m = runs[value].to_numpy()
                s = runs[sem].to_numpy()
                ax.plot(runs["step"], m, label=alg, color=_ALG_COLORS.get(alg, "k"))
                ax.fill_between(runs["step"], m - s, m + s, alpha=0.25,
                                color=_ALG_COLORS.get(alg, "k"))
            ax.set_yscale("log")
            ax.set_title(f"{act}, L = {depth}", fontsize=8)
            if i == len(acts) - 1:
                ax.set_xlabel("batch")
            if j == 0:
                ax.set_ylabel(ylabel)
            if i == 0 and j == 0:
                ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def render_chains(run_dir: Path, out_dir: Path) -> list[str]:
    stats = pd.read_csv(_require(run_dir, "curve_stats.csv"))
    _curve_grid(stats, out_dir / "chains_test_grid.png", "mean_test_loss",
                "sem_test_loss", "test loss")
    _curve_grid(stats, out_dir / "chains_train_grid.png", "mean_train_loss",
                "sem_train_loss", "train loss")
    return ["chains_test_grid.png", "chains_train_grid.png"]


def render_mnist(run_dir: Path, out_dir: Path) -> list[str]:
    df = pd.read_csv(_require(run_dir, "mnist_epochs.csv"))
    depths = sorted(df["depth"].unique())
    fig, axes = plt.subplots(1, len(depths), figsize=(4.0 * len(depths), 3.2),
                             squeeze=False)
    for ax, depth in zip(axes[0], depths):
        sub = df[df["depth"] == depth]
        for alg, runs in sub.groupby("algorithm"):
            # Mean loss per epoch over seeds at each algorithm's plotted lr.
            agg = runs.groupby("epoch")["train_loss"].agg(["mean", "std", "count"])
            sem = agg["std"].fillna(0.0) / np.sqrt(agg["count"])
            ax.plot(agg.index, agg["mean"], marker="o", ms=3, label=alg,
                    color=_ALG_COLORS.get(alg, "k"))
            ax.fill_between(agg.index, agg["mean"] - sem, agg["mean"] + sem,
                            alpha=0.25, color=_ALG_COLORS.get(alg, "k"))
        ax.set_title(f"depth {depth}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "mnist_curves.png", **_SAVE_KW)
    plt.close(fig)
    return ["mnist_curves.png"]


def render_perturb(run_dir: Path, out_dir: Path) -> list[str]:
    stats = pd.read_csv(_require(run_dir, "perturb_stats.csv"))
    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    algs = list(stats["algorithm"])
    means = stats["mean_mse"].to_numpy()
    sems = stats["sem_mse"].to_numpy()
    colors = [_ALG_COLORS.get(a, "k") for a in algs]
    ax.bar(algs, means, yerr=sems, capsize=4, color=colors, alpha=0.8)
    ax.set_ylabel("MSE of perturbed prediction")
    fig.tight_layout()
    fig.savefig(out_dir / "perturb_bars.png", **_SAVE_KW)
    plt.close(fig)
    return ["perturb_bars.png"]


_RENDERERS = {
    "toy": render_toy,
    "landscape": render_landscape,
    "cosine": render_cosine,
    "chains": render_chains,
    "mnist": render_mnist,
    "perturb": render_perturb,
}


def render(run_dir, out_dir=None) -> list[str]:
    """Render every figure for a run directory; returns written filenames."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    command = manifest["command"]
    if command not in _RENDERERS:
        raise PlotDataError(f"no renderer for command {command!r}")
    out = Path(out_dir) if out_dir is not None else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    return _RENDERERS[command](run_dir, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pctrust-plots", description=__doc__)
    parser.add_argument("run_dir", help="run directory containing manifest.json")
    parser.add_argument("--out", help="figure output directory (default <run_dir>/figures)")
    args = parser.parse_args(argv)
    try:
        written = render(args.run_dir, args.out)
    except PlotDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in written:
        print(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())

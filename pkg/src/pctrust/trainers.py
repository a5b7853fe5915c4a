"""Training loops: plain gradient descent on the loss (bp), inference-then-
learn on the energy (pc), and a damped-Newton baseline for the two-weight
toy model (trn1mlp), plus stopping rules and learning-rate grid search.

Stop reasons follow the experiment protocol: train_tol (current-batch loss
below threshold), test_tol (held-out loss below threshold), plateau (the
windowed mean train loss stopped decreasing), diverged, max_batches.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .analysis import hessians_1mlp, loss_gradient_1mlp
from .data import RegressionTask, sample_regression
from .energy import (
    InferenceDivergenceError,
    InferenceSchedule,
    Precisions,
    energy_weight_grads,
    run_inference,
)
from .network import Batch, NetworkSpec, WeightSet, bp_grad, init_weights, loss

ALGORITHMS = ("bp", "pc", "trn1mlp")

STOP_TRAIN_TOL = "train_tol"
STOP_TEST_TOL = "test_tol"
STOP_PLATEAU = "plateau"
STOP_DIVERGED = "diverged"
STOP_MAX_BATCHES = "max_batches"

_INIT_STREAM = 0x5EED


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run; only the fields relevant to
    the chosen algorithm may be set (inference schedule for pc, damping for
    trn1mlp)."""

    algorithm: str
    learning_rate: float
    batch_size: int = 64
    max_batches: int = 10_000
    inference: InferenceSchedule | None = None
    trn_damping: float | None = None
    stop_train_loss: float | None = 0.01
    stop_test_loss: float | None = None
    plateau_window: int | None = 500
    test_size: int = 1000
    init_scheme: str = "uniform"
    record_weights: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.algorithm == "pc" and self.inference is None:
            raise ValueError("pc requires an inference schedule")
        if self.algorithm != "pc" and self.inference is not None:
            raise ValueError(f"{self.algorithm} does not take an inference schedule")
        if self.algorithm == "trn1mlp" and self.trn_damping is None:
            raise ValueError("trn1mlp requires trn_damping")
        if self.algorithm != "trn1mlp" and self.trn_damping is not None:
            raise ValueError(f"{self.algorithm} does not take trn_damping")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        if self.inference is not None:
            d["inference"] = dataclasses.asdict(self.inference)
        return d


@dataclass
class TrainRecord:
    """Per-batch traces and the outcome of one training run."""

    algorithm: str
    learning_rate: float
    seed: int
    train_losses: np.ndarray
    test_losses: np.ndarray
    energies: np.ndarray | None
    final_weights: WeightSet
    stop_reason: str
    batches: int
    batches_to_train_tol: int | None
    batches_to_test_tol: int | None
    config: dict = field(default_factory=dict)
    weight_trajectory: np.ndarray | None = None

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "stop_reason": self.stop_reason,
            "batches": self.batches,
            "batches_to_train_tol": self.batches_to_train_tol,
            "batches_to_test_tol": self.batches_to_test_tol,
            "final_train_loss": float(self.train_losses[-1]) if self.batches else None,
            "final_test_loss": float(self.test_losses[-1]) if self.batches else None,
        }


def bp_step(spec: NetworkSpec, w: WeightSet, batch: Batch, alpha: float) -> WeightSet:
    """One gradient-descent step on the loss: w <- w - alpha * grad."""
    grads = bp_grad(spec, w, batch)
    new = [wl - alpha * g for wl, g in zip(w, grads)]
    for l, wl in enumerate(new):
        if not np.all(np.isfinite(wl)):
            raise FloatingPointError(f"non-finite weight update in layer {l}")
    return WeightSet(new)


def _pc_update(
    spec: NetworkSpec,
    w: WeightSet,
    prec: Precisions,
    batch: Batch,
    alpha: float,
    schedule: InferenceSchedule,
) -> tuple[WeightSet, float]:
    """Inference to equilibrium, then one weight step on the energy.

    Returns the updated weights and the equilibrium energy (batch mean)."""
    res = run_inference(spec, w, prec, batch.inputs, batch.targets, schedule)
    grads = energy_weight_grads(spec, w, prec, res.state)
    new = [wl - alpha * g for wl, g in zip(w, grads)]
    for l, wl in enumerate(new):
        if not np.all(np.isfinite(wl)):
            raise InferenceDivergenceError(f"non-finite weight update in layer {l}")
    return WeightSet(new), float(res.energies[-1])


def pc_step(
    spec: NetworkSpec,
    w: WeightSet,
    prec: Precisions,
    batch: Batch,
    alpha: float,
    schedule: InferenceSchedule,
) -> WeightSet:
    """Inference-then-learn update; see _pc_update for the energy trace."""
    return _pc_update(spec, w, prec, batch, alpha, schedule)[0]


def trn_step_1mlp(w, batch: Batch, damping: float, alpha: float) -> np.ndarray:
    """Damped-Newton step on the two-weight toy loss:
    w <- w - alpha (H + damping I)^{-1} grad."""
    w = np.asarray(w, dtype=float).ravel()
    H, _ = hessians_1mlp(w, batch)
    g = loss_gradient_1mlp(w, batch)
    step = np.linalg.solve(H + damping * np.eye(2), g)
    return w - alpha * step


_ONE_MLP = NetworkSpec((1, 1, 1), ("linear", "linear"))


def _is_1mlp(spec: NetworkSpec) -> bool:
    return spec.layer_widths == (1, 1, 1) and spec.activations == ("linear", "linear")


def train(
    spec: NetworkSpec,
    config: TrainConfig,
    task: RegressionTask,
    initial_weights: WeightSet | None = None,
) -> TrainRecord:
    """Sample -> measure -> stop-check -> step, deterministically per seed.

    Losses are measured before the update, so a run stopped by a threshold
    reports the weights that met it. Divergence is a recorded outcome, not
    an exception. `initial_weights` overrides the seeded init (used by the
    saddle-adjacent experiments).
    """
    if config.algorithm == "trn1mlp" and not _is_1mlp(spec):
        raise ValueError("trn1mlp only supports the linear 1-1-1 network")

    if initial_weights is not None:
        initial_weights.validate(spec)
        w = initial_weights.copy()
    else:
        init_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _INIT_STREAM)))
        w = init_weights(spec, init_rng, config.init_scheme)
    prec = Precisions.ones(spec)
    test_batch = sample_regression(task, config.test_size, draw=(config.seed, 0))

    train_losses: list[float] = []
    test_losses: list[float] = []
    energies: list[float] = []
    trajectory: list[np.ndarray] = []
    stop = None
    batches_to_train_tol = None
    batches_to_test_tol = None
    window = config.plateau_window

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.max_batches + 1):
            batch = sample_regression(task, config.batch_size, draw=(config.seed, t))
            ltr = loss(spec, w, batch)
            lte = loss(spec, w, test_batch)
            train_losses.append(ltr)
            test_losses.append(lte)
            if config.record_weights:
                trajectory.append(w.flat())

            if not (np.isfinite(ltr) and np.isfinite(lte)):
                stop = STOP_DIVERGED
                break
            if config.stop_test_loss is not None and lte < config.stop_test_loss:
                batches_to_test_tol = t
                stop = STOP_TEST_TOL
                break
            if config.stop_train_loss is not None and ltr < config.stop_train_loss:
                batches_to_train_tol = t
                stop = STOP_TRAIN_TOL
                break
            if window is not None and t % window == 0 and t >= 2 * window:
                recent = np.mean(train_losses[t - window : t])
                previous = np.mean(train_losses[t - 2 * window : t - window])
                if recent >= previous:
                    stop = STOP_PLATEAU
                    break

            try:
                if config.algorithm == "bp":
                    w = bp_step(spec, w, batch, config.learning_rate)
                elif config.algorithm == "pc":
                    w, eq_energy = _pc_update(
                        spec, w, prec, batch, config.learning_rate, config.inference
                    )
                    energies.append(eq_energy)
                else:
                    pair = trn_step_1mlp(
                        np.array([w[0][0, 0], w[1][0, 0]]), batch,
                        config.trn_damping, config.learning_rate,
                    )
                    if not np.all(np.isfinite(pair)):
                        raise FloatingPointError("non-finite damped-Newton update")
                    w = WeightSet([np.array([[pair[0]]]), np.array([[pair[1]]])])
            except (InferenceDivergenceError, FloatingPointError):
                stop = STOP_DIVERGED
                break
        else:
            stop = STOP_MAX_BATCHES

    return TrainRecord(
        algorithm=config.algorithm,
        learning_rate=config.learning_rate,
        seed=config.seed,
        train_losses=np.asarray(train_losses),
        test_losses=np.asarray(test_losses),
        energies=np.asarray(energies) if config.algorithm == "pc" else None,
        final_weights=w,
        stop_reason=stop,
        batches=len(train_losses),
        batches_to_train_tol=batches_to_train_tol,
        batches_to_test_tol=batches_to_test_tol,
        config=config.echo(),
        weight_trajectory=np.asarray(trajectory) if config.record_weights else None,
    )


_EPOCH_STREAM = 0xE90C


@dataclass
class EpochRecord:
    """Per-epoch traces for dataset (epoch-based) training."""

    algorithm: str
    learning_rate: float
    seed: int
    train_losses: np.ndarray  # per-epoch mean of batch losses
    test_losses: np.ndarray
    stop_reason: str  # plateau | diverged | max_epochs
    epochs: int
    final_weights: WeightSet | None


def train_epochs(
    spec: NetworkSpec,
    config: TrainConfig,
    dataset,
    max_epochs: int,
    stop_below: float | None = None,
) -> EpochRecord:
    """Epoch-based training on a fixed dataset.

    Batches are full slices of a fresh per-epoch shuffle; training stops
    when the epoch-mean train loss fails to decrease, on divergence, at
    `max_epochs`, or once the epoch mean drops below `stop_below`.
    """
    init_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _INIT_STREAM)))
    w = init_weights(spec, init_rng, config.init_scheme)
    prec = Precisions.ones(spec)
    X, Y = dataset.train_inputs, dataset.train_targets
    has_test = dataset.test_inputs.shape[0] > 0
    n_batches = X.shape[0] // config.batch_size
    if n_batches < 1:
        raise ValueError("dataset smaller than one batch")

    epoch_train: list[float] = []
    epoch_test: list[float] = []
    stop = None

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(max_epochs):
            perm = np.random.default_rng(
                np.random.SeedSequence((config.seed, epoch, _EPOCH_STREAM))
            ).permutation(X.shape[0])
            batch_losses = []
            for k in range(n_batches):
                idx = perm[k * config.batch_size : (k + 1) * config.batch_size]
                batch = Batch(X[idx], Y[idx])
                ltr = loss(spec, w, batch)
                if not np.isfinite(ltr):
                    stop = STOP_DIVERGED
                    break
                batch_losses.append(ltr)
                try:
                    if config.algorithm == "bp":
                        w = bp_step(spec, w, batch, config.learning_rate)
                    else:
                        w, _ = _pc_update(
                            spec, w, prec, batch, config.learning_rate, config.inference
                        )
                except (InferenceDivergenceError, FloatingPointError):
                    stop = STOP_DIVERGED
                    break
            if stop == STOP_DIVERGED:
                if batch_losses:
                    epoch_train.append(float(np.mean(batch_losses)))
                break
            epoch_train.append(float(np.mean(batch_losses)))
            if has_test:
                epoch_test.append(
                    loss(spec, w, Batch(dataset.test_inputs, dataset.test_targets))
                )
            if stop_below is not None and epoch_train[-1] < stop_below:
                stop = STOP_TRAIN_TOL
                break
            if epoch > 0 and epoch_train[-1] >= epoch_train[-2]:
                stop = STOP_PLATEAU
                break
        else:
            stop = STOP_MAX_BATCHES

    return EpochRecord(
        algorithm=config.algorithm,
        learning_rate=config.learning_rate,
        seed=config.seed,
        train_losses=np.asarray(epoch_train),
        test_losses=np.asarray(epoch_test),
        stop_reason="max_epochs" if stop == STOP_MAX_BATCHES else stop,
        epochs=len(epoch_train),
        final_weights=w,
    )


@dataclass
class GridSearchResult:
    best_lr: float
    best_records: list[TrainRecord]  # winning lr, one record per seed
    sweep: list[TrainRecord]  # every (lr, seed) run

    def table(self) -> list[dict]:
        return [r.summary() | {"winner": r.learning_rate == self.best_lr} for r in self.sweep]


def _final_loss(record: TrainRecord) -> float:
    v = float(record.train_losses[-1]) if record.batches else np.inf
    return v if np.isfinite(v) else np.inf


def grid_search(
    spec: NetworkSpec,
    base_config: TrainConfig,
    lr_grid,
    task: RegressionTask,
    seeds,
) -> GridSearchResult:
    """Train at every (learning rate, seed); the winning rate has the
    lowest mean final training loss, ties broken by fewer mean batches."""
    lr_grid = list(lr_grid)
    seeds = list(seeds)
    if not lr_grid:
        raise ValueError("lr_grid must be nonempty")
    sweep = []
    by_lr: dict[float, list[TrainRecord]] = {lr: [] for lr in lr_grid}
    for lr in lr_grid:
        for seed in seeds:
            cfg = dataclasses.replace(base_config, learning_rate=lr, seed=seed)
            rec = train(spec, cfg, task)
            sweep.append(rec)
            by_lr[lr].append(rec)

    def score(lr):
        recs = by_lr[lr]
        mean_loss = float(np.mean([_final_loss(r) for r in recs]))
        mean_batches = float(np.mean([r.batches for r in recs]))
        return (mean_loss, mean_batches)

    best_lr = min(lr_grid, key=score)
    return GridSearchResult(best_lr, by_lr[best_lr], sweep)


# ---------------------------------------------------------------------------
# CSV / JSON export
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "step",
    "train_loss",
    "test_loss",
    "energy",
    "algorithm",
    "lr",
    "depth",
    "activation",
    "seed",
)


def record_csv_rows(record: TrainRecord, depth: int, activation: str) -> list[dict]:
    rows = []
    for t in range(record.batches):
        if record.energies is not None and t < len(record.energies):
            e = f"{record.energies[t]:.12g}"
        else:
            e = ""
        rows.append(
            {
                "step": t + 1,
                "train_loss": f"{record.train_losses[t]:.12g}",
                "test_loss": f"{record.test_losses[t]:.12g}",
                "energy": e,
                "algorithm": record.algorithm,
                "lr": record.learning_rate,
                "depth": depth,
                "activation": activation,
                "seed": record.seed,
            }
        )
    return rows


def write_csv(path, rows, columns=CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)

"""Feedforward chain/MLP definition, evaluation, squared-error loss, and
exact backprop gradients.

Networks are bias-free: layer l computes z_l = f_l(W_l z_{l-1}). Activities
are always held as (batch, width) arrays; single vectors are promoted to a
batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Activation registry: tag -> (f, f'). ReLU derivative is 0 at 0.
_ACTIVATIONS = {
    "linear": (lambda a: a, lambda a: np.ones_like(a)),
    "tanh": (np.tanh, lambda a: 1.0 / np.cosh(a) ** 2),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0.0).astype(float)),
}

ACTIVATION_TAGS = tuple(_ACTIVATIONS)


def activation_fns(tag: str):
    """Return (f, f') for an activation tag (case-insensitive)."""
    try:
        return _ACTIVATIONS[tag.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {tag!r}; expected one of {ACTIVATION_TAGS}")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths n_0..n_L and one activation tag per weight layer."""

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        widths = tuple(int(n) for n in self.layer_widths)
        acts = tuple(a.lower() for a in self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(n < 1 for n in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        if len(acts) != self.depth:
            raise ValueError(
                f"expected {self.depth} activations (one per weight layer), got {len(acts)}"
            )
        for a in acts:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; expected one of {ACTIVATION_TAGS}")

    @property
    def depth(self) -> int:
        """Number of weight layers L."""
        return len(self.layer_widths) - 1

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @staticmethod
    def chain(depth: int, hidden_activation: str = "linear") -> "NetworkSpec":
        """Width-1 chain of `depth` weight layers: hidden activations as
        given, linear output layer (the last weight is applied outside the
        nonlinearity)."""
        acts = tuple([hidden_activation] * (depth - 1) + ["linear"])
        return NetworkSpec(tuple([1] * (depth + 1)), acts)


@dataclass
class WeightSet:
    """Per-layer weight matrices W_l with shape (n_l, n_{l-1})."""

    weights: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        for i, w in enumerate(self.weights):
            if w.ndim != 2:
                raise ValueError(f"weight {i} must be a matrix, got shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"weight {i} contains non-finite entries")

    def validate(self, spec: NetworkSpec) -> None:
        if len(self.weights) != spec.depth:
            raise ValueError(f"expected {spec.depth} weight layers, got {len(self.weights)}")
        for i, w in enumerate(self.weights):
            want = (spec.layer_widths[i + 1], spec.layer_widths[i])
            if w.shape != want:
                raise ValueError(f"weight {i} has shape {w.shape}, expected {want}")

    def copy(self) -> "WeightSet":
        return WeightSet([w.copy() for w in self.weights])

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def __iter__(self):
        return iter(self.weights)

    def __getitem__(self, i):
        return self.weights[i]

    def __len__(self):
        return len(self.weights)


@dataclass
class Batch:
    """Paired inputs (B, n_0) and targets (B, n_L)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"inputs have {self.inputs.shape[0]} rows, targets {self.targets.shape[0]}"
            )
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("batch contains non-finite values")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ActivityState:
    """Activities z_0..z_L as (B, n_l) arrays plus per-layer clamp flags.

    z_0 is always clamped; z_L is clamped to the target during training and
    free at test time. Inference never modifies clamped layers.
    """

    activities: list[np.ndarray]
    clamped: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.activities = [np.atleast_2d(np.asarray(z, dtype=float)) for z in self.activities]
        if not self.clamped:
            self.clamped = [True] + [False] * (len(self.activities) - 1)
        if len(self.clamped) != len(self.activities):
            raise ValueError("one clamp flag per layer required")
        if not self.clamped[0]:
            raise ValueError("the input layer z_0 must be clamped")

    @property
    def batch_size(self) -> int:
        return self.activities[0].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.activities)

    def free_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.clamped) if not c]

    def copy(self) -> "ActivityState":
        return ActivityState([z.copy() for z in self.activities], list(self.clamped))


def _as_batch_2d(x, width: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != width:
        raise ValueError(f"{name} has width {x.shape[1]}, expected {width}")
    return x


def init_weights(spec: NetworkSpec, rng: np.random.Generator, scheme: str = "uniform") -> WeightSet:
    """Draw initial weights.

    "uniform": U(-1, 1) per entry (toy models and deep chains).
    "fan_in": U(-1/sqrt(n_in), 1/sqrt(n_in)) per entry (wide networks, keeps
    activations bounded at width ~500).
    """
    weights = []
    for l in range(spec.depth):
        shape = (spec.layer_widths[l + 1], spec.layer_widths[l])
        if scheme == "uniform":
            w = rng.uniform(-1.0, 1.0, size=shape)
        elif scheme == "fan_in":
            bound = 1.0 / np.sqrt(spec.layer_widths[l])
            w = rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(w)
    return WeightSet(weights)


def feedforward(spec: NetworkSpec, w: WeightSet, x) -> ActivityState:
    """Forward pass z_l = f_l(W_l z_{l-1}); only z_0 is marked clamped."""
    w.validate(spec)
    z = _as_batch_2d(x, spec.n_in, "input")
    activities = [z]
    for l in range(spec.depth):
        f, _ = activation_fns(spec.activations[l])
        z = f(activities[-1] @ w[l].T)
        activities.append(z)
    return ActivityState(activities)


def predict(spec: NetworkSpec, w: WeightSet, x) -> np.ndarray:
    """Feedforward output layer only."""
    return feedforward(spec, w, x).activities[-1]


def loss(spec: NetworkSpec, w: WeightSet, batch: Batch) -> float:
    """Mean over samples of (1/2)||y - yhat||^2."""
    yhat = predict(spec, w, batch.inputs)
    if batch.targets.shape[1] != spec.n_out:
        raise ValueError(
            f"targets have width {batch.targets.shape[1]}, expected {spec.n_out}"
        )
    resid = batch.targets - yhat
    return float(0.5 * np.mean(np.sum(resid**2, axis=1)))


def bp_grad(spec: NetworkSpec, w: WeightSet, batch: Batch) -> list[np.ndarray]:
    """Exact gradient of `loss` w.r.t. each weight layer (reverse mode),
    averaged over the batch."""
    w.validate(spec)
    x = _as_batch_2d(batch.inputs, spec.n_in, "inputs")
    y = _as_batch_2d(batch.targets, spec.n_out, "targets")
    B = x.shape[0]

    # Forward, caching pre-activations.
    z = [x]
    pre = []
    for l in range(spec.depth):
        f, _ = activation_fns(spec.activations[l])
        a = z[-1] @ w[l].T
        pre.append(a)
        z.append(f(a))

    # Backward: delta_l = dL/da_l, summed over the batch then divided by B.
    grads: list[np.ndarray] = [np.empty(0)] * spec.depth
    _, fprime_L = activation_fns(spec.activations[-1])
    delta = (z[-1] - y) * fprime_L(pre[-1])
    for l in range(spec.depth - 1, -1, -1):
        grads[l] = delta.T @ z[l] / B
        if l > 0:
            _, fprime = activation_fns(spec.activations[l - 1])
            delta = (delta @ w[l]) * fprime(pre[l - 1])
    return grads

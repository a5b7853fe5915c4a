"""Predictive-coding free energy, its gradients, and the inference phase.

The free energy is a precision-weighted sum of squared layer-local
prediction errors eps_l = z_l - f_l(W_l z_{l-1}). Inference relaxes the
unclamped activities by Euler-integrated gradient descent until the
activity gradients vanish; learning then descends the weight gradient at
that equilibrium. Closed forms for the two-weight toy model (1-1-1 linear
net) live at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import (
    ActivityState,
    NetworkSpec,
    WeightSet,
    _as_batch_2d,
    activation_fns,
    feedforward,
)

try:  # numba accelerates the width-1 chain kernel; pure numpy otherwise
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None


class InferenceDivergenceError(RuntimeError):
    """Raised when the inference dynamics produce a non-finite energy."""


@dataclass
class Precisions:
    """Per-layer diagonal precision vectors for layers 1..L (values[l-1]
    belongs to layer l). All entries must be positive."""

    values: list[np.ndarray]

    def __post_init__(self):
        self.values = [np.asarray(v, dtype=float).ravel() for v in self.values]
        for i, v in enumerate(self.values):
            if np.any(v <= 0.0):
                raise ValueError(f"precision for layer {i + 1} has non-positive entries")

    @staticmethod
    def ones(spec: NetworkSpec) -> "Precisions":
        return Precisions([np.ones(spec.layer_widths[l + 1]) for l in range(spec.depth)])

    def validate(self, spec: NetworkSpec) -> None:
        if len(self.values) != spec.depth:
            raise ValueError(f"expected {spec.depth} precision vectors, got {len(self.values)}")
        for l, v in enumerate(self.values):
            if v.size != spec.layer_widths[l + 1]:
                raise ValueError(f"precision for layer {l + 1} has size {v.size}")


@dataclass(frozen=True)
class InferenceSchedule:
    """Euler integration schedule for the inference phase.

    The step size is halved (at most `halving_count` times) whenever the
    energy fails to decrease by more than `halving_trigger_tolerance`
    between consecutive iterations. Iteration stops once the max-norm of
    the activity gradients drops below `convergence_tolerance` or
    `max_iters` is reached.
    """

    step_size: float = 0.1
    max_iters: int = 500
    halving_count: int = 2
    halving_trigger_tolerance: float = 1e-10
    convergence_tolerance: float = 1e-8

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 <= self.halving_count <= 2:
            raise ValueError("halving_count must be in 0..2")
        if self.convergence_tolerance < 0.0:
            raise ValueError("convergence_tolerance must be nonnegative")


@dataclass
class InferenceResult:
    state: ActivityState
    energies: np.ndarray  # energy before any step, then after each step
    iterations: int
    converged: bool
    halvings: int = 0
    halving_iterations: list[int] = field(default_factory=list)


def _layer_errors(spec, w, state):
    """Pre-activations a_l and errors eps_l = z_l - f_l(a_l) for l=1..L."""
    pre, eps = [], []
    for l in range(spec.depth):
        f, _ = activation_fns(spec.activations[l])
        a = state.activities[l] @ w[l].T
        pre.append(a)
        eps.append(state.activities[l + 1] - f(a))
    return pre, eps


def energy(spec: NetworkSpec, w: WeightSet, prec: Precisions, state: ActivityState) -> float:
    """F = sum_l (1/2) eps_l' Pi_l eps_l, averaged over the batch."""
    w.validate(spec)
    prec.validate(spec)
    _, eps = _layer_errors(spec, w, state)
    total = 0.0
    for l, e in enumerate(eps):
        total += 0.5 * np.mean(np.sum(prec.values[l] * e**2, axis=1))
    return float(total)


def energy_activity_grads(
    spec: NetworkSpec, w: WeightSet, prec: Precisions, state: ActivityState
) -> list[np.ndarray | None]:
    """Per-sample energy gradients w.r.t. the activities of free layers.

    Entry l holds dF_i/dz_l for each sample i (None for clamped layers):
    Pi_l eps_l minus the error of the layer above propagated back through
    its weights and activation slope (the second term is absent at l = L).
    """
    w.validate(spec)
    prec.validate(spec)
    pre, eps = _layer_errors(spec, w, state)
    pe = [prec.values[l] * eps[l] for l in range(spec.depth)]
    grads: list[np.ndarray | None] = [None] * state.n_layers
    for l in state.free_indices():
        if l == 0:
            continue
        g = pe[l - 1].copy()
        if l < spec.depth:
            _, fprime = activation_fns(spec.activations[l])
            g -= (pe[l] * fprime(pre[l])) @ w[l]
        grads[l] = g
    return grads


def energy_weight_grads(
    spec: NetworkSpec, w: WeightSet, prec: Precisions, state: ActivityState
) -> list[np.ndarray]:
    """Energy gradients w.r.t. each weight layer, averaged over the batch:
    dF/dW_l = -(Pi_l eps_l * f'_l(a_l)) z_{l-1}'."""
    w.validate(spec)
    prec.validate(spec)
    pre, eps = _layer_errors(spec, w, state)
    B = state.batch_size
    grads = []
    for l in range(spec.depth):
        _, fprime = activation_fns(spec.activations[l])
        d = prec.values[l] * eps[l] * fprime(pre[l])
        grads.append(-(d.T @ state.activities[l]) / B)
    return grads


def clamp_target(state: ActivityState, y: np.ndarray) -> ActivityState:
    """Return a copy of the state with the output layer set to y and clamped."""
    out = state.copy()
    target = _as_batch_2d(y, out.activities[-1].shape[1], "target")
    if target.shape[0] != out.batch_size:
        raise ValueError(f"target has {target.shape[0]} rows, state has {out.batch_size}")
    out.activities[-1] = target
    out.clamped[-1] = True
    return out


def run_inference(
    spec: NetworkSpec,
    w: WeightSet,
    prec: Precisions,
    x,
    y,
    schedule: InferenceSchedule,
) -> InferenceResult:
    """Relax the free activities to the energy equilibrium.

    Activities start at their feedforward values with z_0 = x and z_L = y
    clamped; each iteration takes an Euler step z_l <- z_l - eta dF/dz_l on
    every free layer simultaneously. Raises InferenceDivergenceError when
    the energy becomes non-finite.
    """
    if all(n == 1 for n in spec.layer_widths) and spec.depth >= 2:
        return _run_inference_chain(spec, w, prec, x, y, schedule)
    return _run_inference_general(spec, w, prec, x, y, schedule)


def _run_inference_general(spec, w, prec, x, y, schedule: InferenceSchedule) -> InferenceResult:
    state = clamp_target(feedforward(spec, w, x), y)
    free = [l for l in state.free_indices() if l > 0]
    fs = [activation_fns(a)[0] for a in spec.activations]
    fprimes = [activation_fns(a)[1] for a in spec.activations]

    # z_0 is clamped, so the first pre-activation never changes.
    pre0 = state.activities[0] @ w[0].T

    def forward_errors():
        pre = [pre0]
        for l in range(1, spec.depth):
            pre.append(state.activities[l] @ w[l].T)
        eps = [state.activities[l + 1] - fs[l](pre[l]) for l in range(spec.depth)]
        return pre, eps

    def hidden_grads(pre, eps):
        pe = [prec.values[l] * eps[l] for l in range(spec.depth)]
        grads = {}
        for l in free:
            g = pe[l - 1]
            if l < spec.depth:
                g = g - (pe[l] * fprimes[l](pre[l])) @ w[l]
            grads[l] = g
        return grads

    def batch_energy(eps):
        total = 0.0
        for l, e in enumerate(eps):
            total += 0.5 * np.mean(np.sum(prec.values[l] * e**2, axis=1))
        return float(total)

    pre, eps = forward_errors()
    energies = [batch_energy(eps)]
    eta = schedule.step_size
    halvings: list[int] = []
    converged = False
    iterations = 0

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(schedule.max_iters):
            grads = hidden_grads(pre, eps)
            gmax = max((np.max(np.abs(g)) for g in grads.values()), default=0.0)
            if gmax < schedule.convergence_tolerance:
                converged = True
                break
            for l in free:
                state.activities[l] -= eta * grads[l]
            iterations += 1
            pre, eps = forward_errors()
            F = batch_energy(eps)
            if not np.isfinite(F):
                raise InferenceDivergenceError(
                    f"energy became non-finite at iteration {iterations}"
                )
            if (
                energies[-1] - F < schedule.halving_trigger_tolerance
                and len(halvings) < schedule.halving_count
            ):
                eta *= 0.5
                halvings.append(iterations)
            energies.append(F)
        else:
            grads = hidden_grads(pre, eps)
            gmax = max((np.max(np.abs(g)) for g in grads.values()), default=0.0)
            converged = gmax < schedule.convergence_tolerance

    return InferenceResult(
        state, np.asarray(energies), iterations, converged, len(halvings), halvings
    )


_ACT_CODES = {"linear": 0, "tanh": 1, "relu": 2}


def _chain_kernel_py(z, wvec, pvec, act, eta, max_iters, halving_count, halving_tol, conv_tol):
    """Euler inference on a width-1 chain, activities packed as (B, L+1).

    Mirrors the general path's iteration semantics exactly. Compiled with
    numba when available. Returns (energies, n_energies, iterations,
    converged, diverged, n_halvings, halving_iters).
    """
    B, Lp1 = z.shape
    L = Lp1 - 1
    energies = np.empty(max_iters + 1)
    halving_iters = np.full(halving_count if halving_count > 0 else 1, -1, dtype=np.int64)
    a = np.empty((B, L))
    eps = np.empty((B, L))
    grad = np.empty((B, L - 1))

    E = 0.0
    for b in range(B):
        for l in range(L):
            al = z[b, l] * wvec[l]
            a[b, l] = al
            code = act[l]
            if code == 0:
                h = al
            elif code == 1:
                h = np.tanh(al)
            else:
                h = al if al > 0.0 else 0.0
            e = z[b, l + 1] - h
            eps[b, l] = e
            E += pvec[l] * e * e
    E = 0.5 * E / B
    energies[0] = E

    iterations = 0
    converged = False
    diverged = False
    nh = 0
    for _ in range(max_iters):
        gmax = 0.0
        for b in range(B):
            for l in range(1, L):
                al = a[b, l]
                code = act[l]
                if code == 0:
                    fp = 1.0
                elif code == 1:
                    c = np.cosh(al)
                    fp = 1.0 / (c * c)
                else:
                    fp = 1.0 if al > 0.0 else 0.0
                g = pvec[l - 1] * eps[b, l - 1] - wvec[l] * fp * pvec[l] * eps[b, l]
                grad[b, l - 1] = g
                ag = abs(g)
                if ag > gmax:
                    gmax = ag
        if gmax < conv_tol:
            converged = True
            break
        for b in range(B):
            for l in range(1, L):
                z[b, l] -= eta * grad[b, l - 1]
        iterations += 1
        E = 0.0
        for b in range(B):
            for l in range(L):
                al = z[b, l] * wvec[l]
                a[b, l] = al
                code = act[l]
                if code == 0:
                    h = al
                elif code == 1:
                    h = np.tanh(al)
                else:
                    h = al if al > 0.0 else 0.0
                e = z[b, l + 1] - h
                eps[b, l] = e
                E += pvec[l] * e * e
        E = 0.5 * E / B
        if not np.isfinite(E):
            diverged = True
            break
        if energies[iterations - 1] - E < halving_tol and nh < halving_count:
            eta *= 0.5
            halving_iters[nh] = iterations
            nh += 1
        energies[iterations] = E

    if not converged and not diverged and iterations == max_iters:
        gmax = 0.0
        for b in range(B):
            for l in range(1, L):
                al = a[b, l]
                code = act[l]
                if code == 0:
                    fp = 1.0
                elif code == 1:
                    c = np.cosh(al)
                    fp = 1.0 / (c * c)
                else:
                    fp = 1.0 if al > 0.0 else 0.0
                g = pvec[l - 1] * eps[b, l - 1] - wvec[l] * fp * pvec[l] * eps[b, l]
                ag = abs(g)
                if ag > gmax:
                    gmax = ag
        converged = gmax < conv_tol

    return energies, iterations + 1, iterations, converged, diverged, nh, halving_iters


if _njit is not None:
    _chain_kernel = _njit(cache=True)(_chain_kernel_py)
else:  # pragma: no cover
    _chain_kernel = _chain_kernel_py


def _run_inference_chain(spec, w, prec, x, y, schedule: InferenceSchedule) -> InferenceResult:
    """Width-1 fast path: packs the chain into flat arrays and runs the
    (numba-compiled) Euler kernel. Verified against the general path."""
    w.validate(spec)
    prec.validate(spec)
    L = spec.depth
    x = _as_batch_2d(x, 1, "input")
    y = _as_batch_2d(y, 1, "target")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"inputs have {x.shape[0]} rows, targets {y.shape[0]}")
    B = x.shape[0]
    wvec = np.array([w[l][0, 0] for l in range(L)])
    pvec = np.array([prec.values[l][0] for l in range(L)])
    act = np.array([_ACT_CODES[a] for a in spec.activations], dtype=np.int64)

    # Feedforward init, then clamp the output to the target.
    z = np.empty((B, L + 1))
    z[:, 0] = x[:, 0]
    for l in range(L):
        f, _ = activation_fns(spec.activations[l])
        z[:, l + 1] = f(wvec[l] * z[:, l])
    z[:, L] = y[:, 0]

    with np.errstate(over="ignore", invalid="ignore"):
        energies, n_e, iterations, converged, diverged, nh, halving_iters = _chain_kernel(
            z,
            wvec,
            pvec,
            act,
            float(schedule.step_size),
            int(schedule.max_iters),
            int(schedule.halving_count),
            float(schedule.halving_trigger_tolerance),
            float(schedule.convergence_tolerance),
        )
    if diverged:
        raise InferenceDivergenceError(f"energy became non-finite at iteration {iterations}")

    activities = [z[:, [l]].copy() for l in range(L + 1)]
    state = ActivityState(activities, [True] + [False] * (L - 1) + [True])
    return InferenceResult(
        state,
        np.asarray(energies[:n_e]).copy(),
        int(iterations),
        bool(converged),
        int(nh),
        [int(i) for i in halving_iters[:nh]],
    )


def analytic_equilibrium_1mlp(w1, w2, x, y):
    """Equilibrium hidden activity of the linear 1-1-1 net with unit
    precisions: z* = (w1 x + w2 y) / (1 + w2^2)."""
    w1, w2, x, y = np.broadcast_arrays(w1, w2, x, y)
    out = (w1 * x + w2 * y) / (1.0 + w2**2)
    return float(out) if out.ndim == 0 else out


def equilibrated_energy_1mlp(w1, w2, x, y):
    """Energy of the linear 1-1-1 net at the inference equilibrium, as a
    function of the weights: F* = loss / (1 + w2^2)."""
    w1, w2, x, y = np.broadcast_arrays(w1, w2, x, y)
    out = 0.5 * (y - w2 * w1 * x) ** 2 / (1.0 + w2**2)
    return float(out) if out.ndim == 0 else out

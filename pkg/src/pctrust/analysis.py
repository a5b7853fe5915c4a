"""Trust-region analysis toolkit.

Connects the inference phase to a second-order trust-region step on the
loss: the curvature of the energy at the feedforward activities (a Fisher
information matrix) defines the trust region, one damped Newton solve
predicts the inference equilibrium, and closed forms for the two-weight
toy model expose the saddle/minimum curvature gap that drives the
escape-speed and flatness results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RegressionTask, sample_regression
from .energy import (
    Precisions,
    analytic_equilibrium_1mlp,
    clamp_target,
    energy,
    energy_activity_grads,
    energy_weight_grads,
)
from .network import (
    ActivityState,
    NetworkSpec,
    WeightSet,
    _as_batch_2d,
    activation_fns,
    feedforward,
)

RIDGE_DAMPING = 1e-8
REAL_ROOT_IMAG_TOL = 1e-9


@dataclass
class FisherMatrix:
    """Curvature of the energy over the stacked free (hidden) activities,
    with block-tridiagonal structure metadata."""

    matrix: np.ndarray
    layer_slices: list[slice] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return self.matrix.size == 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def fisher_information(spec: NetworkSpec, w: WeightSet, prec: Precisions, x) -> FisherMatrix:
    """Exact energy Hessian w.r.t. the hidden activities at the feedforward
    state, where every prediction error vanishes and the activation-
    curvature terms drop out.

    Diagonal block l:  Pi_l + W_{l+1}' D_{l+1} Pi_{l+1} D_{l+1} W_{l+1}
    Off-diagonal:      -W_{l+1}' D_{l+1} Pi_{l+1}
    with D_l = diag(f'_l(W_l z_{l-1})) evaluated along the forward pass.
    """
    w.validate(spec)
    prec.validate(spec)
    L = spec.depth
    hidden = list(range(1, L))
    if not hidden:
        return FisherMatrix(np.zeros((0, 0)))

    state = feedforward(spec, w, x)
    if state.batch_size != 1:
        raise ValueError("fisher_information expects a single input sample")

    # Activation slopes D_l at the feedforward pre-activations.
    D = [None]
    for l in range(L):
        _, fprime = activation_fns(spec.activations[l])
        D.append(fprime(state.activities[l] @ w[l].T).ravel())

    sizes = [spec.layer_widths[l] for l in hidden]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    slices = [slice(int(offs[i]), int(offs[i + 1])) for i in range(len(hidden))]
    n = int(offs[-1])
    H = np.zeros((n, n))

    for i, l in enumerate(hidden):
        pi_next = prec.values[l]  # layer l+1 precision
        Wn = w[l]  # W_{l+1}
        Dn = D[l + 1]
        block = np.diag(prec.values[l - 1]) + Wn.T @ np.diag(Dn * pi_next * Dn) @ Wn
        H[slices[i], slices[i]] = block
        if l + 1 <= L - 1:
            off = -Wn.T @ np.diag(Dn * pi_next)
            H[slices[i], slices[i + 1]] = off
            H[slices[i + 1], slices[i]] = off.T

    return FisherMatrix(H, slices)


def _stack_hidden_grads(spec, grads) -> np.ndarray:
    parts = [grads[l].ravel() for l in range(1, spec.depth)]
    return np.concatenate(parts) if parts else np.empty(0)


def tr_solution(spec: NetworkSpec, w: WeightSet, prec: Precisions, x, y) -> ActivityState:
    """One damped Newton step on the quadratic energy model: solves
    I(z_t) dz = -g with g the activity gradient at the target-clamped
    feedforward state, and returns z_t + dz (exact for linear networks).

    Applies ridge damping when the Fisher solve is singular.
    """
    state = clamp_target(feedforward(spec, w, x), y)
    if state.batch_size != 1:
        raise ValueError("tr_solution expects a single sample")
    if spec.depth < 2:
        return state

    fisher = fisher_information(spec, w, prec, x)
    g = _stack_hidden_grads(spec, energy_activity_grads(spec, w, prec, state))
    try:
        dz = np.linalg.solve(fisher.matrix, -g)
    except np.linalg.LinAlgError:
        damped = fisher.matrix + RIDGE_DAMPING * np.eye(fisher.dim)
        dz = np.linalg.solve(damped, -g)

    out = state.copy()
    for sl, l in zip(fisher.layer_slices, range(1, spec.depth)):
        out.activities[l] = out.activities[l] + dz[sl].reshape(1, -1)
    return out


def interpolated_weight_grad(
    spec: NetworkSpec, w: WeightSet, prec: Precisions, x, y
) -> list[np.ndarray]:
    """Energy weight gradient evaluated at the trust-region inference
    solution, averaged over the batch.

    This is the second-order prediction of the inference-then-learn weight
    update: it blends the plain loss gradient with the trust-region
    direction mapped back into weight space, and it reproduces the exact
    equilibrated gradient for linear networks.
    """
    x = _as_batch_2d(x, spec.n_in, "inputs")
    y = _as_batch_2d(y, spec.n_out, "targets")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree on batch size")
    total = [np.zeros_like(wl) for wl in w]
    for i in range(x.shape[0]):
        state = tr_solution(spec, w, prec, x[i], y[i])
        grads = energy_weight_grads(spec, w, prec, state)
        for t, g in zip(total, grads):
            t += g
    return [t / x.shape[0] for t in total]


def taylor_residual(spec: NetworkSpec, w: WeightSet, prec: Precisions, x, y, dz) -> float:
    """Gap between the energy at displaced hidden activities and its
    quadratic model around the feedforward pass:
    F(z_t + dz) - [L(z_t) + g' dz + (1/2) dz' I dz].
    """
    state = clamp_target(feedforward(spec, w, x), y)
    if state.batch_size != 1:
        raise ValueError("taylor_residual expects a single sample")
    fisher = fisher_information(spec, w, prec, x)
    dz = np.asarray(dz, dtype=float).ravel()
    if dz.size != fisher.dim:
        raise ValueError(f"dz has size {dz.size}, expected {fisher.dim}")

    L0 = energy(spec, w, prec, state)
    g = _stack_hidden_grads(spec, energy_activity_grads(spec, w, prec, state))
    moved = state.copy()
    for sl, l in zip(fisher.layer_slices, range(1, spec.depth)):
        moved.activities[l] = moved.activities[l] + dz[sl].reshape(1, -1)
    F = energy(spec, w, prec, moved)
    model = L0 + g @ dz + 0.5 * dz @ fisher.matrix @ dz
    return float(F - model)


# ---------------------------------------------------------------------------
# Two-weight toy model closed forms
# ---------------------------------------------------------------------------


@dataclass
class SaddleEigs:
    """Hessian eigenvalues of loss and equilibrated energy at the origin."""

    loss_eigs: tuple[float, float]  # ascending
    energy_eigs: tuple[float, float]
    loss_hessian: np.ndarray
    energy_hessian: np.ndarray

    @property
    def max_ordering_holds(self) -> bool:
        return self.energy_eigs[1] < self.loss_eigs[1]

    @property
    def min_ordering_holds(self) -> bool:
        return self.energy_eigs[0] < self.loss_eigs[0]


def saddle_eigs_1mlp(x: float, y: float) -> SaddleEigs:
    """Closed-form eigenvalue pairs at the origin saddle for a single
    input/output pair: +-|xy| for the loss and
    (1/2)(-y^2 +- |y| sqrt(4x^2 + y^2)) for the equilibrated energy."""
    if x == 0.0 or y == 0.0:
        raise ValueError("degenerate problem: x and y must be nonzero")
    a = abs(x * y)
    H_L = np.array([[0.0, -x * y], [-x * y, 0.0]])
    H_F = np.array([[0.0, -x * y], [-x * y, -y * y]])
    root = abs(y) * np.sqrt(4.0 * x * x + y * y)
    e_lo = 0.5 * (-y * y - root)
    e_hi = 0.5 * (-y * y + root)
    return SaddleEigs((-a, a), (e_lo, e_hi), H_L, H_F)


@dataclass
class MinimumEigs:
    """Hessian eigenvalues on the solution manifold point (y/(w2 x), w2)."""

    manifold_point: tuple[float, float]
    loss_eigs: tuple[float, float]  # (0, lambda_max)
    energy_eigs: tuple[float, float]

    @property
    def energy_is_flatter(self) -> bool:
        return self.energy_eigs[1] < self.loss_eigs[1]


def minimum_eigs_1mlp(w2: float, x: float, y: float) -> MinimumEigs:
    if w2 == 0.0 or x == 0.0 or y == 0.0:
        raise ValueError("degenerate manifold point: w2, x, y must be nonzero")
    lam_loss = (w2**4 * x * x + y * y) / (w2 * w2)
    lam_energy = lam_loss / (1.0 + w2 * w2)
    return MinimumEigs((y / (w2 * x), w2), (0.0, lam_loss), (0.0, lam_energy))


@dataclass
class OptimalDirection:
    manifold_point: tuple[float, float]
    delta: np.ndarray
    distance: float


def _manifold_distance(t, w1, w2, slope):
    return np.sqrt((slope / t - w2) ** 2 + (t - w1) ** 2)


def optimal_direction_1mlp(w1: float, w2: float, slope: float = -1.0) -> OptimalDirection:
    """Closest point (w1*, slope/w1*) on the solution manifold and the step
    towards it.

    For the y = -x task the stationarity condition is the quartic
    t^4 - w1 t^3 - w2 t - 1 = 0, solved via companion-matrix eigenvalues
    (numpy roots); other slopes fall back to a dense search.
    """
    if slope == -1.0:
        roots = np.roots([1.0, -w1, 0.0, -w2, -1.0])
        real = roots[np.abs(roots.imag) < REAL_ROOT_IMAG_TOL].real
        real = real[real != 0.0]
        assert real.size > 0, "quartic for the y=-x manifold lost all real roots"
        dists = _manifold_distance(real, w1, w2, slope)
        best = dists.min()
        # Exact ties resolved towards the larger root.
        t = real[np.abs(dists - best) < 1e-12].max()
    else:
        grid = np.linspace(-5.0, 5.0, 1_000_001)
        grid = grid[grid != 0.0]
        dists = _manifold_distance(grid, w1, w2, slope)
        t = grid[int(np.argmin(dists))]

    point = (float(t), float(slope / t))
    delta = np.array([point[0] - w1, point[1] - w2])
    return OptimalDirection(point, delta, float(_manifold_distance(t, w1, w2, slope)))


def cosine_similarity(a, b) -> float:
    """Normalized dot product, clipped into [-1, 1]."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Near-critical-point dynamics
# ---------------------------------------------------------------------------


def near_saddle_iterate(H, w0, alpha: float, t: int) -> np.ndarray:
    """t steps of gradient descent on the quadratic (1/2) w'Hw via the
    eigendecomposition: sum_i (1 - alpha lambda_i)^t <e_i, w0> e_i."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    H = np.asarray(H, dtype=float)
    w0 = np.asarray(w0, dtype=float).ravel()
    lam, Q = np.linalg.eigh(H)
    coeffs = (1.0 - alpha * lam) ** t * (Q.T @ w0)
    return Q @ coeffs


def gradient_flow(H, w0, t: float) -> np.ndarray:
    """Solution of the continuous descent flow dw/dt = -H w at time t:
    w(t) = Q exp(-Lambda t) Q' w0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    H = np.asarray(H, dtype=float)
    w0 = np.asarray(w0, dtype=float).ravel()
    lam, Q = np.linalg.eigh(H)
    return Q @ (np.exp(-lam * t) * (Q.T @ w0))


# ---------------------------------------------------------------------------
# Landscapes, Hessians, critical-point reports
# ---------------------------------------------------------------------------


def moments_1mlp(batch) -> tuple[float, float, float]:
    """(E[x^2], E[xy], E[y^2]) over a width-1 batch."""
    x = batch.inputs.ravel()
    y = batch.targets.ravel()
    return float(np.mean(x * x)), float(np.mean(x * y)), float(np.mean(y * y))


def loss_gradient_1mlp(w, batch) -> np.ndarray:
    sxx, sxy, _ = moments_1mlp(batch)
    w1, w2 = float(w[0]), float(w[1])
    return np.array(
        [w2 * (w2 * w1 * sxx - sxy), w1 * (w1 * w2 * sxx - sxy)]
    )


def equilibrated_gradient_1mlp(w, batch) -> np.ndarray:
    """Closed-form gradient of F* = L / (1 + w2^2) over a width-1 batch."""
    sxx, sxy, syy = moments_1mlp(batch)
    w1, w2 = float(w[0]), float(w[1])
    L = 0.5 * (syy - 2.0 * w1 * w2 * sxy + (w1 * w2) ** 2 * sxx)
    L1 = w2 * (w2 * w1 * sxx - sxy)
    L2 = w1 * (w1 * w2 * sxx - sxy)
    u = 1.0 / (1.0 + w2 * w2)
    return np.array([L1 * u, L2 * u - 2.0 * w2 * u * u * L])


def hessians_1mlp(w, batch) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form 2x2 Hessians of the batch loss and of the equilibrated
    energy F* = L / (1 + w2^2) at an arbitrary weight pair."""
    sxx, sxy, syy = moments_1mlp(batch)
    w1, w2 = float(w[0]), float(w[1])
    L = 0.5 * (syy - 2.0 * w1 * w2 * sxy + (w1 * w2) ** 2 * sxx)
    L1 = w2 * (w2 * w1 * sxx - sxy)
    L2 = w1 * (w1 * w2 * sxx - sxy)
    L11 = w2 * w2 * sxx
    L22 = w1 * w1 * sxx
    L12 = 2.0 * w1 * w2 * sxx - sxy
    H_L = np.array([[L11, L12], [L12, L22]])

    u = 1.0 / (1.0 + w2 * w2)
    up = -2.0 * w2 * u * u
    upp = -2.0 * u * u + 8.0 * w2 * w2 * u**3
    F11 = L11 * u
    F12 = L12 * u + L1 * up
    F22 = L22 * u + 2.0 * L2 * up + L * upp
    H_F = np.array([[F11, F12], [F12, F22]])
    return H_L, H_F


@dataclass
class CriticalPointReport:
    location: tuple[float, float]
    objective: str  # "loss" or "equilibrated_energy"
    eigenvalues: list[float]  # ascending
    classification: str  # strict_saddle | minimum | degenerate

    def to_json_dict(self) -> dict:
        return {
            "location": list(self.location),
            "objective": self.objective,
            "eigenvalues": self.eigenvalues,
            "classification": self.classification,
        }


def classify_critical_point(location, objective: str, eigenvalues, tol: float = 1e-9) -> CriticalPointReport:
    """Strict saddle needs at least one positive and one negative
    eigenvalue; minima allow flat (zero) directions."""
    eigs = sorted(float(e) for e in np.asarray(eigenvalues).ravel())
    has_neg = eigs[0] < -tol
    has_pos = eigs[-1] > tol
    if has_neg and has_pos:
        tag = "strict_saddle"
    elif has_pos and not has_neg:
        tag = "minimum"
    else:
        tag = "degenerate"
    return CriticalPointReport(tuple(float(v) for v in location), objective, eigs, tag)


@dataclass
class LandscapeGrid:
    objective: str
    w1: np.ndarray
    w2: np.ndarray
    values: np.ndarray  # values[i, j] = objective(w1[i], w2[j])
    neg_grad_w1: np.ndarray
    neg_grad_w2: np.ndarray
    n_eval: int


_OBJECTIVE_ALIASES = {
    "loss": "loss",
    "equilibrated_energy": "equilibrated_energy",
    "equilibrated_energy_1mlp": "equilibrated_energy",
}


def landscape_grid(
    objective: str,
    w1_range: tuple[float, float],
    w2_range: tuple[float, float],
    resolution: int,
    task: RegressionTask,
    n_eval: int = 1024,
) -> LandscapeGrid:
    """Evaluate the loss or the equilibrated energy of the two-weight model
    on a Cartesian grid, along with the negative-gradient vector field.

    Both objectives reduce to batch moments, so the whole grid is computed
    in closed form over a fixed evaluation batch (draw 0 of the task)."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    try:
        kind = _OBJECTIVE_ALIASES[objective]
    except KeyError:
        raise ValueError(f"unknown objective {objective!r}")

    batch = sample_regression(task, n_eval, draw=0)
    sxx, sxy, syy = moments_1mlp(batch)
    w1 = np.linspace(w1_range[0], w1_range[1], resolution)
    w2 = np.linspace(w2_range[0], w2_range[1], resolution)
    W1, W2 = np.meshgrid(w1, w2, indexing="ij")
    P = W1 * W2
    L = 0.5 * (syy - 2.0 * P * sxy + P * P * sxx)
    dL1 = W2 * (P * sxx - sxy)
    dL2 = W1 * (P * sxx - sxy)
    if kind == "loss":
        V, g1, g2 = L, dL1, dL2
    else:
        u = 1.0 / (1.0 + W2 * W2)
        V = L * u
        g1 = dL1 * u
        g2 = dL2 * u + L * (-2.0 * W2 * u * u)
    return LandscapeGrid(kind, w1, w2, V, -g1, -g2, n_eval)


@dataclass
class DirectionReport:
    """Per-batch optimal step and each algorithm's candidate update."""

    batch: int
    optimal_delta: np.ndarray
    updates: dict  # algorithm -> delta (2,)
    cosines: dict  # algorithm -> cosine in [-1, 1]

    def __post_init__(self):
        for alg, c in self.cosines.items():
            if not -1.0 <= c <= 1.0 and not np.isnan(c):
                raise ValueError(f"cosine for {alg} outside [-1, 1]: {c}")


@dataclass
class PerturbationStats:
    mean: float
    sem: float
    mses: np.ndarray


def perturbation_robustness(
    trained: dict,
    task: RegressionTask,
    sigma: float,
    n_seeds: int,
    n_eval: int = 1000,
    base_seed: int = 1000,
) -> dict:
    """Mean squared prediction error of weight-perturbed two-weight models.

    `trained` maps algorithm name to its trained (w1, w2). Noise is i.i.d.
    Gaussian with variance sigma (std sqrt(sigma)); the same n_seeds draws
    perturb every algorithm's weights. The plain-descent prediction is the
    feedforward output; the inference-based prediction is w2 z* with z* the
    target-clamped equilibrium, matching how each algorithm behaves with
    the target still clamped.
    """
    batch = sample_regression(task, n_eval, draw=0)
    x = batch.inputs.ravel()
    y = batch.targets.ravel()
    out = {}
    noises = [
        np.random.default_rng(np.random.SeedSequence((base_seed, s))).normal(
            0.0, np.sqrt(sigma), size=2
        )
        for s in range(n_seeds)
    ]
    for alg, wpair in trained.items():
        if alg not in ("bp", "pc"):
            raise ValueError(f"unknown algorithm {alg!r}; expected 'bp' or 'pc'")
        w1, w2 = float(wpair[0]), float(wpair[1])
        mses = np.empty(n_seeds)
        for s, noise in enumerate(noises):
            p1, p2 = w1 + noise[0], w2 + noise[1]
            if alg == "bp":
                yhat = p2 * p1 * x
            else:
                z = analytic_equilibrium_1mlp(p1, p2, x, y)
                yhat = p2 * z
            mses[s] = np.mean((y - yhat) ** 2)
        sem = float(mses.std(ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0
        out[alg] = PerturbationStats(float(mses.mean()), sem, mses)
    return out

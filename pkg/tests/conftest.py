"""Shared helpers: random nets and finite-difference oracles."""

from __future__ import annotations

import numpy as np

from pctrust.network import NetworkSpec, WeightSet


def random_spec(rng: np.random.Generator, max_depth=5, max_width=8, activations=None) -> NetworkSpec:
    depth = int(rng.integers(1, max_depth + 1))
    widths = tuple(int(rng.integers(1, max_width + 1)) for _ in range(depth + 1))
    if activations is None:
        activations = ("linear", "tanh", "relu")
    acts = tuple(str(rng.choice(activations)) for _ in range(depth))
    return NetworkSpec(widths, acts)


def random_weights(spec: NetworkSpec, rng: np.random.Generator, scale=1.0) -> WeightSet:
    return WeightSet(
        [
            scale * rng.uniform(-1.0, 1.0, size=(spec.layer_widths[l + 1], spec.layer_widths[l]))
            for l in range(spec.depth)
        ]
    )


def fd_gradient(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=float)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hessian(f, x0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central second differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            xpp = x0.copy(); xpm = x0.copy(); xmp = x0.copy(); xmm = x0.copy()
            xpp[i] += h; xpp[j] += h
            xpm[i] += h; xpm[j] -= h
            xmp[i] -= h; xmp[j] += h
            xmm[i] -= h; xmm[j] -= h
            H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h * h)
    return H


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    approx = np.asarray(approx, dtype=float).ravel()
    exact = np.asarray(exact, dtype=float).ravel()
    denom = max(np.linalg.norm(exact), 1e-12)
    return float(np.linalg.norm(approx - exact) / denom)

"""Shared oracles and small utilities for the test suite."""

import numpy as np

from gibbsquant import LossSpec, loss


def fd_gradient(spec: LossSpec, x, theta, h=1e-6):
    """Central finite differences of the pointwise loss in theta."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (loss(spec, x, theta + e) - loss(spec, x, theta - e)) / (2 * h)
    return g


def fd_hessian_from_gradient(grad_fn, theta, h=1e-6):
    """Central finite differences of a gradient function; returns (d, d)."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[:, j] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * h)
    return out


def grid_minimize_1d(spec: LossSpec, data, lo, hi, stages=6, pts=801):
    """Brute-force 1-d minimizer of the empirical risk by grid refinement."""
    data = np.asarray(data, dtype=float).reshape(-1, 1)
    for _ in range(stages):
        grid = np.linspace(lo, hi, pts)
        risks = np.abs(data - grid[None, :]).mean(axis=0) + spec.u[0] * (data - grid[None, :]).mean(axis=0)
        k = int(np.argmin(risks))
        span = (hi - lo) / (pts - 1)
        lo, hi = grid[k] - 2 * span, grid[k] + 2 * span
    return grid[k], risks[k]


def grid_minimize_2d(spec: LossSpec, atoms, w, lo, hi, stages=7, pts=81):
    """Brute-force 2-d weighted-risk minimizer by grid refinement."""
    atoms = np.asarray(atoms, dtype=float)
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    best = None
    for _ in range(stages):
        xs = np.linspace(lo[0], hi[0], pts)
        ys = np.linspace(lo[1], hi[1], pts)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts2 = np.column_stack([gx.ravel(), gy.ravel()])
        diff = atoms[None, :, :] - pts2[:, None, :]
        norms = np.sum(np.abs(diff) ** spec.r, axis=2) ** (1.0 / spec.r)
        risks = (norms + diff @ spec.u) @ w
        k = int(np.argmin(risks))
        best = pts2[k], float(risks[k])
        span = (hi - lo) / (pts - 1)
        lo = pts2[k] - 2 * span
        hi = pts2[k] + 2 * span
    return best


def batch_means_se(samples, n_batches=25):
    """Monte Carlo standard error of an autocorrelated chain mean."""
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[0] // n_batches
    means = samples[: m * n_batches].reshape(n_batches, m, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def random_loss_spec(rng, d=2, r_choices=(1.5, 2.0, 3.0)):
    r = rng.choice(r_choices)
    q = r / (r - 1.0)
    u = rng.uniform(-1, 1, size=d)
    norm = np.sum(np.abs(u) ** q) ** (1.0 / q)
    u *= rng.uniform(0.0, 0.85) / max(norm, 1e-12)
    return LossSpec(r=float(r), u=u)

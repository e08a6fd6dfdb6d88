"""Sample geometric-quantile estimation by convex risk minimization.

The empirical risk is convex, so any descent method finds the global
minimizer.  For ``r = 2`` a fixed-point sweep of Weiszfeld type (derived from
a quadratic majorizer of the norm, so monotone) does most of the work; for
other exponents damped gradient descent with an Armijo backtracking line
search is used.  The minimizer may sit exactly on a data point, where the
gradient does not exist; those candidates are accepted through a subgradient
certificate instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .losses import (
    TIE_TOL,
    LossSpec,
    as_dataset,
    empirical_risk,
    uniform_weights,
    validate_weights,
    _hessian_at,
    _lp_norm,
    _row_gradients,
    _row_norms,
)

InitSpec = Union[str, np.ndarray]

# Distance (relative to data scale) below which an iterate is snapped onto a
# data point and tested with the subgradient certificate.
SNAP_FRAC = 1e-9


@dataclass
class SolverConfig:
    grad_tol: float = 1e-8
    max_iters: int = 10_000
    step_shrink: float = 0.5
    init: InitSpec = "coordinate-median"
    keep_history: bool = False

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")


@dataclass
class QuantileEstimate:
    """Result of a quantile fit.

    ``converged`` means either the risk gradient norm fell below ``grad_tol``
    or ``theta_hat`` is a data point satisfying the subgradient optimality
    certificate (then ``at_data_point`` holds its row index and ``grad_norm``
    the certificate slack, clipped at zero).
    """

    theta_hat: np.ndarray
    risk_value: float
    grad_norm: float
    iterations: int
    converged: bool
    at_data_point: Optional[int] = None
    risk_history: Optional[np.ndarray] = None


def _coordinate_median(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted per-coordinate median (smallest value with cumweight >= 1/2)."""
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        cum = np.cumsum(w[order])
        out[j] = x[order[np.searchsorted(cum, 0.5)], j]
    return out


def _initial_point(x: np.ndarray, w: np.ndarray, init: InitSpec) -> np.ndarray:
    if isinstance(init, str):
        if init == "coordinate-median":
            return _coordinate_median(x, w)
        if init == "mean":
            return w @ x
        raise ValueError(f"unknown init {init!r}")
    theta0 = np.asarray(init, dtype=float).copy()
    if theta0.shape != (x.shape[1],):
        raise ValueError("user-supplied init has the wrong dimension")
    return theta0


def _data_scale(x: np.ndarray) -> float:
    spread = float(np.max(np.abs(x - x.mean(axis=0)))) if x.shape[0] > 1 else 0.0
    return max(spread, float(np.max(np.abs(x))), 1.0)


def _certificate(spec: LossSpec, x: np.ndarray, w: np.ndarray, k: int):
    """Subgradient optimality test at data point ``k``.

    The point is optimal iff the weighted gradient over the other rows,
    dual-norm measured, does not exceed the (aggregated) weight of the tied
    rows.  Returns (ok, slack) with slack = ||g||_q - tied weight.
    """
    theta = x[k]
    tied = np.max(np.abs(x - theta), axis=1) < TIE_TOL
    w_tied = float(w[tied].sum())
    others = ~tied
    if not others.any():
        return True, -w_tied
    grads, _ = _row_gradients(spec, x[others], theta)
    # row gradients carry a -u each; top up to a single full -u
    g = w[others] @ grads - (1.0 - w[others].sum()) * spec.u
    slack = _lp_norm(g, spec.q) - w_tied
    return slack <= 1e-9 * w_tied + 1e-13, slack


def _gradient_at(spec, x, w, theta):
    grads, _ = _row_gradients(spec, x, theta)
    return w @ grads


def _newton_polish(spec, x, w, theta, grad, grad_tol):
    """Drive the gradient norm down once risk comparisons hit the float
    plateau.  Uses the analytic risk curvature; steps are accepted only if
    they shrink the gradient norm and stay clear of data-point kinks.
    """
    gnorm = float(np.linalg.norm(grad))
    for _ in range(12):
        if gnorm <= grad_tol:
            break
        rows_ok = np.max(np.abs(x - theta), axis=1) >= TIE_TOL
        if spec.r < 2.0:
            rows_ok &= np.min(np.abs(x - theta), axis=1) >= TIE_TOL
        if not rows_ok.all():
            break
        curv = np.zeros((spec.d, spec.d))
        for xi, wi in zip(x, w):
            curv += wi * _hessian_at(spec, xi - theta)
        try:
            step = np.linalg.solve(curv, grad)
        except np.linalg.LinAlgError:
            break
        cand = theta - step
        if np.min(np.max(np.abs(x - cand), axis=1)) < TIE_TOL:
            break
        cand_grad = _gradient_at(spec, x, w, cand)
        cand_norm = float(np.linalg.norm(cand_grad))
        if not np.isfinite(cand_norm) or cand_norm >= gnorm:
            break
        theta, grad, gnorm = cand, cand_grad, cand_norm
    return theta, grad, gnorm


def _descent_from_data_point(spec, x, w, k, risk_now):
    """Escape a non-optimal data point along the violated subgradient direction."""
    theta = x[k]
    tied = np.max(np.abs(x - theta), axis=1) < TIE_TOL
    others = ~tied
    grads, _ = _row_gradients(spec, x[others], theta)
    g = w[others] @ grads - (1.0 - w[others].sum()) * spec.u
    direction = -g / np.linalg.norm(g)
    step = _data_scale(x) * 1e-3
    for _ in range(200):
        cand = theta + step * direction
        if empirical_risk(spec, x, cand, w) < risk_now:
            return cand
        step *= 0.5
    return theta + direction * _data_scale(x) * 1e-12


def fit_quantile(spec: LossSpec, data, cfg: Optional[SolverConfig] = None, w=None) -> QuantileEstimate:
    """Minimize the (weighted) empirical risk.

    Non-convergence within ``max_iters`` is reported through the
    ``converged`` flag, not an exception.  All-identical data short-circuits
    to that point.
    """
    cfg = cfg or SolverConfig()
    x = as_dataset(data)
    n, d = x.shape
    if d != spec.d:
        raise ValueError(f"dataset has {d} columns, spec expects {spec.d}")
    w = uniform_weights(n) if w is None else validate_weights(w, n)

    if np.max(np.abs(x - x[0])) < TIE_TOL:
        theta = x[0].copy()
        return QuantileEstimate(theta, empirical_risk(spec, x, theta, w), 0.0, 0, True, 0)

    theta = _initial_point(x, w, cfg.init)
    scale = _data_scale(x)
    snap_radius = max(SNAP_FRAC * scale, 10.0 * cfg.grad_tol * scale)
    risk = empirical_risk(spec, x, theta, w)
    history = [risk]
    step = scale
    rng = np.random.default_rng(0)  # deterministic tie-escape perturbations

    grad_norm = np.inf
    converged = False
    at_point: Optional[int] = None
    polish_below = 1e-5  # gradient level where curvature steps take over
    it = 0
    for it in range(1, cfg.max_iters + 1):
        dists = np.max(np.abs(x - theta), axis=1)
        k = int(np.argmin(dists))
        if dists[k] < TIE_TOL:
            ok, slack = _certificate(spec, x, w, k)
            if ok:
                theta = x[k].copy()
                risk = empirical_risk(spec, x, theta, w)
                grad_norm = max(slack, 0.0)
                converged, at_point = True, k
                history.append(risk)
                break
            theta = _descent_from_data_point(spec, x, w, k, risk)
            risk = empirical_risk(spec, x, theta, w)
            history.append(risk)
            continue

        grads, _ = _row_gradients(spec, x, theta)
        g = w @ grads
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= cfg.grad_tol:
            converged = True
            break

        if dists[k] >= snap_radius and grad_norm <= polish_below:
            theta2, g2, gn2 = _newton_polish(spec, x, w, theta, g, cfg.grad_tol)
            if gn2 < grad_norm:
                theta, g, grad_norm = theta2, g2, gn2
                risk = empirical_risk(spec, x, theta, w)
                if grad_norm <= cfg.grad_tol:
                    converged = True
                    history.append(risk)
                    break
            polish_below = grad_norm / 4.0  # retry only after real progress

        # near-kink iterates: try certifying the closest data point
        if dists[k] < snap_radius:
            ok, slack = _certificate(spec, x, w, k)
            if ok:
                theta = x[k].copy()
                risk = empirical_risk(spec, x, theta, w)
                grad_norm = max(slack, 0.0)
                converged, at_point = True, k
                history.append(risk)
                break

        moved = False
        # risk differences saturate at the float plateau near the optimum;
        # allow that much slack so contraction steps are not rejected there
        plateau = 1e-12 * (1.0 + abs(risk))
        if spec.r == 2.0:
            eucl = _row_norms(spec, x - theta)
            wts = w / np.maximum(eucl, TIE_TOL)
            cand = (wts @ x + spec.u) / wts.sum()
            cand_risk = empirical_risk(spec, x, cand, w)
            if cand_risk <= risk + plateau:
                theta, risk, moved = cand, min(cand_risk, risk), True
        if not moved:
            t = step
            for _ in range(60):
                cand = theta - t * g
                cand_risk = empirical_risk(spec, x, cand, w)
                if cand_risk <= risk - 1e-4 * t * grad_norm**2:
                    theta, risk, moved = cand, cand_risk, True
                    step = t * 2.0
                    break
                t *= cfg.step_shrink
            if not moved:
                # no risk decrease resolvable: certify the nearest data
                # point; away from kinks the float plateau is reached, where
                # curvature steps on the gradient can still make progress
                ok, slack = _certificate(spec, x, w, k)
                if ok:
                    theta = x[k].copy()
                    risk = empirical_risk(spec, x, theta, w)
                    grad_norm = max(slack, 0.0)
                    converged, at_point = True, k
                    history.append(risk)
                    break
                if dists[k] >= snap_radius:
                    theta, g, grad_norm = _newton_polish(spec, x, w, theta, g, cfg.grad_tol)
                    risk = empirical_risk(spec, x, theta, w)
                    converged = grad_norm <= cfg.grad_tol
                    history.append(risk)
                    break
                theta = theta + rng.standard_normal(d) * max(dists[k], TIE_TOL)
                risk = empirical_risk(spec, x, theta, w)
        history.append(risk)

    return QuantileEstimate(
        theta_hat=np.asarray(theta, dtype=float),
        risk_value=empirical_risk(spec, x, theta, w),
        grad_norm=float(grad_norm),
        iterations=it,
        converged=converged,
        at_data_point=at_point,
        risk_history=np.asarray(history) if cfg.keep_history else None,
    )


def fit_weighted_atoms(spec: LossSpec, atoms, w, cfg: Optional[SolverConfig] = None) -> QuantileEstimate:
    """Quantile of a weighted atomic measure (explicit weights required)."""
    atoms = as_dataset(atoms)
    w = validate_weights(w, atoms.shape[0])
    return fit_quantile(spec, atoms, cfg=cfg, w=w)


def batch_weiszfeld(spec: LossSpec, stacks: np.ndarray, iters: int = 120, tol: float = 1e-9) -> np.ndarray:
    """Rough r=2 quantile for each dataset in a (B, n, d) stack.

    Used to seed MCMC chains on bootstrap resamples; accuracy beyond chain
    burn-in needs is wasted, so there is no certificate logic here.
    """
    if spec.r != 2.0:
        raise ValueError("batch_weiszfeld only supports r = 2")
    stacks = np.asarray(stacks, dtype=float)
    B, n, d = stacks.shape
    theta = np.median(stacks, axis=1)
    for _ in range(iters):
        diff = stacks - theta[:, None, :]
        dist = np.sqrt(np.einsum("bnd,bnd->bn", diff, diff))
        np.maximum(dist, 1e-12, out=dist)
        wts = 1.0 / dist
        denom = wts.sum(axis=1)
        new = (np.einsum("bn,bnd->bd", wts, stacks) + n * spec.u) / denom[:, None]
        shift = np.max(np.abs(new - theta))
        theta = new
        if shift < tol:
            break
    return theta

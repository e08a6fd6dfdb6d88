"""Quantile loss family: pointwise loss, empirical risk, derivatives, plug-in matrices.

The loss is the tilted norm ``asym_norm(t) = ||t||_r + <u, t>`` applied to
residuals ``x - theta``.  For ``r > 1`` and ``||u||_q < 1`` (``q`` the Holder
conjugate of ``r``) the loss is nonnegative and convex in ``theta``, and its
average over a sample defines the empirical risk whose minimizer is the sample
geometric ``u``-quantile.  With ``u = 0`` that minimizer is the l1-median.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SingularityError, SingularMatrixError

log = logging.getLogger(__name__)

# Points closer than this to a data row (max-norm) sit on the loss kink.
TIE_TOL = 1e-12

# Condition-number ceiling for matrix inversions feeding confidence sets.
COND_LIMIT = 1e12

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class LossSpec:
    """Parameters of the tilted-norm loss: norm exponent ``r`` and tilt ``u``.

    ``r`` must exceed 1 (at ``r = 1`` the gradient is undefined at coordinate
    kinks) and ``u`` must lie strictly inside the unit ball of the dual
    ``l_q`` norm, ``q = r / (r - 1)``.  Dimension is ``len(u)``.
    """

    r: float
    u: np.ndarray

    def __post_init__(self):
        r = float(self.r)
        if not np.isfinite(r) or r <= 1.0:
            raise ValueError(f"norm exponent r must be a finite real > 1, got {self.r!r}")
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
        if u.ndim != 1 or u.size < 1:
            raise ValueError("u must be a non-empty vector")
        if not np.all(np.isfinite(u)):
            raise ValueError("u must have finite entries")
        q = r / (r - 1.0)
        if _lp_norm(u, q) >= 1.0:
            raise ValueError(
                f"u must satisfy ||u||_q < 1 with q = r/(r-1) = {q:.6g}; "
                f"got ||u||_q = {_lp_norm(u, q):.6g}"
            )
        u.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "u", u)

    @property
    def d(self) -> int:
        return self.u.size

    @property
    def q(self) -> float:
        """Holder conjugate of ``r``."""
        return self.r / (self.r - 1.0)


def _lp_norm(v: np.ndarray, p: float) -> float:
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


def as_dataset(rows) -> np.ndarray:
    """Validate and return observations as an (n, d) float array."""
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"dataset must be a non-empty 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"dataset contains a non-finite entry at row {bad[0]}, column {bad[1]}")
    return x


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def validate_weights(w, n: int) -> np.ndarray:
    """Check a weight vector: length ``n``, nonnegative, sums to 1."""
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1 within {WEIGHT_SUM_TOL}, got {w.sum()!r}")
    return w


def _check_vector(spec: LossSpec, v, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (spec.d,):
        raise ValueError(f"{name} must have shape ({spec.d},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must have finite entries")
    return v


def asym_norm(spec: LossSpec, t) -> float:
    """Tilted norm ``||t||_r + <u, t>``; nonnegative for ``||u||_q < 1``."""
    t = _check_vector(spec, t, "t")
    return _lp_norm(t, spec.r) + float(t @ spec.u)


def loss(spec: LossSpec, x, theta) -> float:
    """Pointwise loss ``asym_norm(x - theta)``."""
    x = _check_vector(spec, x, "x")
    theta = _check_vector(spec, theta, "theta")
    return asym_norm(spec, x - theta)


def _row_norms(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    if spec.r == 2.0:
        return np.sqrt(np.einsum("ij,ij->i", z, z))
    return np.sum(np.abs(z) ** spec.r, axis=1) ** (1.0 / spec.r)


def empirical_risk(spec: LossSpec, data, theta, w=None) -> float:
    """Weighted average loss over the sample; uniform weights by default."""
    x = as_dataset(data)
    theta = _check_vector(spec, theta, "theta")
    if x.shape[1] != spec.d:
        raise ValueError(f"dataset has {x.shape[1]} columns, spec expects {spec.d}")
    z = x - theta
    values = _row_norms(spec, z) + z @ spec.u
    if w is None:
        return float(values.mean())
    w = validate_weights(w, x.shape[0])
    return float(values @ w)


def empirical_risk_many(spec: LossSpec, data, thetas) -> np.ndarray:
    """Empirical risk at each row of ``thetas``; returns an (m,) array."""
    x = as_dataset(data)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[None, :]
    if thetas.shape[1] != spec.d or x.shape[1] != spec.d:
        raise ValueError("dimension mismatch between thetas, data, and spec")
    z = x[None, :, :] - thetas[:, None, :]  # (m, n, d)
    if spec.r == 2.0:
        norms = np.sqrt(np.einsum("mnd,mnd->mn", z, z))
    else:
        norms = np.sum(np.abs(z) ** spec.r, axis=2) ** (1.0 / spec.r)
    return (norms + z @ spec.u).mean(axis=1)


def _tie_rows(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rows within TIE_TOL of theta in the max norm."""
    return np.max(np.abs(x - theta), axis=1) < TIE_TOL


def loss_gradient(spec: LossSpec, x, theta) -> np.ndarray:
    """Gradient of the loss in ``theta``.

    Component ``j`` equals ``|x_j - theta_j|**(r-1) / ||x - theta||_r**(r-1)
    * sign(theta_j - x_j) - u_j``.  Undefined on the kink ``x == theta``.
    """
    x = _check_vector(spec, x, "x")
    theta = _check_vector(spec, theta, "theta")
    z = x - theta
    if np.max(np.abs(z)) < TIE_TOL:
        raise SingularityError("gradient undefined: x coincides with theta")
    norm = _lp_norm(z, spec.r)
    y = np.abs(z) ** (spec.r - 1.0) * np.sign(z)
    return -y / norm ** (spec.r - 1.0) - spec.u


def _row_gradients(spec: LossSpec, x: np.ndarray, theta: np.ndarray):
    """Per-row loss gradients and the mask of kink rows (gradients there are junk)."""
    z = x - theta
    ties = _tie_rows(x, theta)
    norms = _row_norms(spec, z)
    safe = np.where(norms > 0, norms, 1.0)
    y = np.abs(z) ** (spec.r - 1.0) * np.sign(z)
    grads = -y / safe[:, None] ** (spec.r - 1.0) - spec.u
    return grads, ties


def risk_gradient(spec: LossSpec, data, theta, w=None) -> np.ndarray:
    """Gradient of the empirical risk; raises on data-point ties."""
    x = as_dataset(data)
    theta = _check_vector(spec, theta, "theta")
    grads, ties = _row_gradients(spec, x, theta)
    if ties.any():
        raise SingularityError(
            f"risk gradient undefined: theta ties {int(ties.sum())} data row(s)"
        )
    if w is None:
        return grads.mean(axis=0)
    w = validate_weights(w, x.shape[0])
    return w @ grads


def loss_hessian(spec: LossSpec, x, theta) -> np.ndarray:
    """Second-derivative matrix of the loss at a single point.

    Equals ``(r-1)/||z||_r * [diag(|z_j|**(r-2) / ||z||_r**(r-2))
    - y y^T / ||z||_r**(2(r-1))]`` with ``z = x - theta`` and
    ``y_j = |z_j|**(r-1) sign(z_j)``.  Symmetric positive semidefinite.
    For ``r < 2`` a single coordinate tie already makes the diagonal blow up,
    so those inputs are rejected too.
    """
    x = _check_vector(spec, x, "x")
    theta = _check_vector(spec, theta, "theta")
    z = x - theta
    if np.max(np.abs(z)) < TIE_TOL:
        raise SingularityError("hessian undefined: x coincides with theta")
    if spec.r < 2.0 and np.min(np.abs(z)) < TIE_TOL:
        raise SingularityError("hessian diverges at a coordinate tie for r < 2")
    return _hessian_at(spec, z)


def _hessian_at(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    r = spec.r
    norm = _lp_norm(z, r)
    absz = np.abs(z)
    if r == 2.0:
        diag = np.ones_like(z)
    else:
        diag = absz ** (r - 2.0) / norm ** (r - 2.0)
    y = absz ** (r - 1.0) * np.sign(z)
    outer = np.outer(y, y) / norm ** (2.0 * (r - 1.0))
    return (r - 1.0) / norm * (np.diag(diag) - outer)


def count_skipped_rows(spec: LossSpec, data, theta) -> int:
    """Rows the plug-in estimators drop at ``theta`` (kinks, and coordinate
    ties when r < 2)."""
    x = as_dataset(data)
    theta = _check_vector(spec, theta, "theta")
    skip = _tie_rows(x, theta)
    if spec.r < 2.0:
        skip = skip | (np.min(np.abs(x - theta), axis=1) < TIE_TOL)
    return int(skip.sum())


def _plugin_mask(spec: LossSpec, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    keep = ~_tie_rows(x, theta)
    if spec.r < 2.0:
        keep &= np.min(np.abs(x - theta), axis=1) >= TIE_TOL
    if not keep.any():
        raise SingularityError("all rows tie theta; plug-in matrices undefined")
    dropped = int((~keep).sum())
    if dropped:
        log.warning("plug-in estimate skipped %d row(s) tied with theta", dropped)
    return keep


def risk_curvature(spec: LossSpec, data, theta) -> np.ndarray:
    """Average loss Hessian over the sample (plug-in curvature matrix)."""
    x = as_dataset(data)
    theta = _check_vector(spec, theta, "theta")
    keep = _plugin_mask(spec, x, theta)
    rows = x[keep]
    acc = np.zeros((spec.d, spec.d))
    for xi in rows:
        acc += _hessian_at(spec, xi - theta)
    return acc / rows.shape[0]


def score_covariance(spec: LossSpec, data, theta) -> np.ndarray:
    """Average outer product of loss gradients over the sample."""
    x = as_dataset(data)
    theta = _check_vector(spec, theta, "theta")
    keep = ~_tie_rows(x, theta)
    if not keep.any():
        raise SingularityError("all rows tie theta; score covariance undefined")
    grads, _ = _row_gradients(spec, x[keep], theta)
    return grads.T @ grads / grads.shape[0]


def spd_inverse(mat: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix with a condition-number guard."""
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[-1] <= 0 or eigvals[0] <= 0 or eigvals[-1] / eigvals[0] > COND_LIMIT:
        raise SingularMatrixError(
            f"matrix is numerically singular (eigenvalues in [{eigvals[0]:.3e}, {eigvals[-1]:.3e}])"
        )
    return (eigvecs / eigvals) @ eigvecs.T


def sandwich_cov(spec: LossSpec, data, theta) -> np.ndarray:
    """Sandwich covariance ``curvature^-1 @ score_cov @ curvature^-1``.

    Scaled by 1/n this estimates the sampling covariance of the
    risk-minimizing estimator.
    """
    curv_inv = spd_inverse(risk_curvature(spec, data, theta))
    j = score_covariance(spec, data, theta)
    out = curv_inv @ j @ curv_inv
    return 0.5 * (out + out.T)

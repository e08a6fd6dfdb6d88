"""Elliptical credible and confidence sets.

A set is ``{v : (v - center)^T shape^{-1} (v - center) <= radius}``.  From
posterior draws the center/shape are the draw mean and covariance and the
radius is the empirical upper quantile of the draws' own Mahalanobis
statistics (nearest-rank).  From the estimator's asymptotic normality the
center is the sample quantile, the shape the sandwich covariance over n, and
the radius a chi-square quantile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import DegenerateDrawsError
from .losses import LossSpec, as_dataset, sandwich_cov, spd_inverse
from .sampling import PosteriorDraws
from .solver import fit_quantile

# covariances with smaller relative spectral floor are treated as degenerate
_DEGENERATE_REL_EIG = 1e-13


@dataclass
class CredibleEllipse:
    center: np.ndarray
    shape: np.ndarray
    radius: float
    level: float

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.shape = np.asarray(self.shape, dtype=float)
        d = self.center.size
        if self.shape.shape != (d, d):
            raise ValueError("shape matrix does not match center dimension")
        if not np.allclose(self.shape, self.shape.T, atol=1e-10):
            raise ValueError("shape matrix must be symmetric")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        self._shape_inv = spd_inverse(self.shape)

    @property
    def d(self) -> int:
        return self.center.size


def _draws_array(draws) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return np.asarray(draws.draws, dtype=float)
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2:
        raise ValueError("draws must be a 2-d array or PosteriorDraws")
    return arr


def nearest_rank_quantile(values: np.ndarray, prob: float) -> float:
    """Smallest value with at least ceil(prob * m) observations at or below it."""
    values = np.asarray(values, dtype=float)
    m = values.size
    k = max(1, math.ceil(prob * m))
    return float(np.partition(values, k - 1)[k - 1])


def ellipse_from_draws(draws, level: float) -> CredibleEllipse:
    """Credible ellipse holding a ``1 - level`` fraction of the draws."""
    arr = _draws_array(draws)
    m, d = arr.shape
    if m < d + 2:
        raise ValueError(f"need at least d + 2 = {d + 2} draws, got {m}")
    center = arr.mean(axis=0)
    shape = np.cov(arr, rowvar=False, ddof=1).reshape(d, d)
    eigvals = np.linalg.eigvalsh(shape)
    if eigvals[0] <= _DEGENERATE_REL_EIG * max(eigvals[-1], 1e-300):
        raise DegenerateDrawsError("draw covariance is numerically singular")
    inv = spd_inverse(shape)
    dev = arr - center
    maha = np.einsum("md,de,me->m", dev, inv, dev)
    radius = nearest_rank_quantile(maha, 1.0 - level)
    if radius <= 0:
        raise DegenerateDrawsError("Mahalanobis quantile of the draws is not positive")
    return CredibleEllipse(center, shape, radius, level)


def ellipse_from_sandwich(spec: LossSpec, data, level: float, theta_hat=None) -> CredibleEllipse:
    """Confidence ellipse from the estimator's asymptotic normal law."""
    x = as_dataset(data)
    if theta_hat is None:
        theta_hat = fit_quantile(spec, x).theta_hat
    gamma = sandwich_cov(spec, x, theta_hat)
    radius = float(chi2.ppf(1.0 - level, df=spec.d))
    return CredibleEllipse(np.asarray(theta_hat, dtype=float), gamma / x.shape[0], radius, level)


def ellipse_size(e: CredibleEllipse) -> float:
    """Size measure ``sqrt(det(shape)) * radius**d``.

    This is the convention the coverage reports aggregate; it scales like
    the ellipse volume times ``radius**(d/2)``.
    """
    return float(np.sqrt(np.linalg.det(e.shape)) * e.radius ** e.d)


def mahalanobis_sq(e: CredibleEllipse, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != e.d:
        raise ValueError(f"points must have dimension {e.d}")
    dev = pts - e.center
    return np.einsum("md,de,me->m", dev, e._shape_inv, dev)


def contains(e: CredibleEllipse, point) -> bool:
    """Quadratic-form membership test; the boundary counts as inside."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (e.d,):
        raise ValueError(f"point must have shape ({e.d},)")
    stat = float(mahalanobis_sq(e, point[None, :])[0])
    return stat <= e.radius * (1.0 + 1e-12) + 1e-15


def ellipse_to_dict(e: CredibleEllipse) -> dict:
    return {
        "center": e.center.tolist(),
        "shape": e.shape.tolist(),
        "radius": e.radius,
        "level": e.level,
    }


def ellipse_from_dict(payload: dict) -> CredibleEllipse:
    return CredibleEllipse(
        np.asarray(payload["center"], dtype=float),
        np.asarray(payload["shape"], dtype=float),
        float(payload["radius"]),
        float(payload["level"]),
    )


def save_ellipse(e: CredibleEllipse, path) -> None:
    with open(path, "w") as fh:
        json.dump(ellipse_to_dict(e), fh, indent=2)


def load_ellipse(path) -> CredibleEllipse:
    with open(path) as fh:
        return ellipse_from_dict(json.load(fh))


def batch_draw_ellipses(draw_stack: np.ndarray, level: float):
    """Vectorized ellipse statistics for a (B, M, d) stack of draw sets.

    Returns (centers, cov_inverses, radii, ok) where ``ok`` flags chains
    whose covariance is well-conditioned; degenerate chains must be handled
    by the caller.  Matches ``ellipse_from_draws`` chain by chain.
    """
    stack = np.asarray(draw_stack, dtype=float)
    B, m, d = stack.shape
    centers = stack.mean(axis=1)
    dev = stack - centers[:, None, :]
    covs = np.einsum("bmd,bme->bde", dev, dev) / (m - 1)
    eig = np.linalg.eigvalsh(covs)
    ok = eig[:, 0] > _DEGENERATE_REL_EIG * np.maximum(eig[:, -1], 1e-300)
    inv = np.full_like(covs, np.nan)
    if ok.any():
        inv[ok] = np.linalg.inv(covs[ok])
    maha = np.einsum("bmd,bde,bme->bm", dev, np.where(np.isnan(inv), 0.0, inv), dev)
    k = max(1, math.ceil((1.0 - level) * m))
    radii = np.partition(maha, k - 1, axis=1)[:, k - 1]
    ok &= radii > 0
    return centers, inv, radii, ok

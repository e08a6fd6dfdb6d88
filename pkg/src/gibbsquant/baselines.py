"""Comparator posteriors: conjugate normal Bayes, Dirichlet-process quantile
marginals, and a normal--inverse-Wishart model for the train/test analysis.

All samplers return the same ``PosteriorDraws`` container as the Gibbs
engine so the downstream ellipse and coverage machinery is shared.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import invwishart

from .errors import InsufficientDataError
from .losses import LossSpec, as_dataset
from .sampling import McmcConfig, PosteriorDraws, dataset_hash
from .solver import SolverConfig, fit_weighted_atoms

log = logging.getLogger(__name__)


@dataclass
class NormalModelConfig:
    """Conjugate location model: iid normal with isotropic noise, normal
    prior on the location, gamma prior on the noise precision."""

    seed: int
    prior_mean: Optional[np.ndarray] = None  # zeros by default
    prior_cov: Optional[np.ndarray] = None  # 10 * I by default
    gamma_shape: float = 1.0
    gamma_rate: float = 1.0
    n_draws: int = 5000
    burn_in: int = 2000
    sigma2_fixed: Optional[float] = None

    def __post_init__(self):
        if self.gamma_shape <= 0 or self.gamma_rate <= 0:
            raise ValueError("gamma prior parameters must be positive")
        if self.n_draws < 1 or self.burn_in < 0:
            raise ValueError("need n_draws >= 1, burn_in >= 0")


def conjugate_normal_sample(data, cfg: NormalModelConfig) -> PosteriorDraws:
    """Alternate the exact conditionals of the conjugate location model.

    Location given noise: normal with precision ``prior_cov^-1 +
    (n / sigma2) I``.  Precision given location: gamma with shape
    ``gamma_shape + n d / 2`` and rate ``gamma_rate + sum ||x - theta||^2 / 2``.
    """
    x = as_dataset(data)
    n, d = x.shape
    if n < 2:
        raise InsufficientDataError("conjugate normal model needs n >= 2")
    prior_mean = np.zeros(d) if cfg.prior_mean is None else np.asarray(cfg.prior_mean, dtype=float)
    prior_cov = 10.0 * np.eye(d) if cfg.prior_cov is None else np.asarray(cfg.prior_cov, dtype=float)
    prior_prec = np.linalg.inv(prior_cov)
    prior_prec_mean = prior_prec @ prior_mean

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    xbar = x.mean(axis=0)
    theta = xbar.copy()
    sigma2 = cfg.sigma2_fixed if cfg.sigma2_fixed is not None else float(x.var(axis=0).mean()) or 1.0

    draws = np.empty((cfg.n_draws, d))
    for step in range(cfg.burn_in + cfg.n_draws):
        prec = prior_prec + (n / sigma2) * np.eye(d)
        cov = np.linalg.inv(prec)
        mean = cov @ (prior_prec_mean + (n / sigma2) * xbar)
        theta = mean + np.linalg.cholesky(cov) @ rng.standard_normal(d)
        if cfg.sigma2_fixed is None:
            rate = cfg.gamma_rate + 0.5 * float(np.sum((x - theta) ** 2))
            sigma2 = 1.0 / rng.gamma(shape=cfg.gamma_shape + 0.5 * n * d, scale=1.0 / rate)
        if step >= cfg.burn_in:
            draws[step - cfg.burn_in] = theta

    mcfg = McmcConfig(omega=1.0, seed=cfg.seed, n_draws=cfg.n_draws, burn_in=cfg.burn_in)
    provenance = {
        "model": "conjugate-normal",
        "data_sha256": dataset_hash(x),
        "n": n,
        "d": d,
        "seed": int(cfg.seed),
        "sigma2_fixed": cfg.sigma2_fixed,
    }
    return PosteriorDraws(draws, 1.0, mcfg, provenance)


@dataclass
class DPConfig:
    """Dirichlet-process posterior settings.

    The base measure (total mass ``base_mass``) is approximated by
    ``prior_atoms`` fresh draws from the base normal, each carrying
    concentration ``base_mass / prior_atoms``; the observed points carry
    concentration 1 apiece.  A posterior draw is a Dirichlet weighting of
    those atoms, and the induced quantile is the weighted-atom fit.
    """

    seed: int
    base_mass: float = 2.0
    base_mean: Optional[np.ndarray] = None
    base_cov: Optional[np.ndarray] = None
    prior_atoms: int = 50
    n_posterior_draws: int = 5000

    def __post_init__(self):
        if self.base_mass <= 0:
            raise ValueError("base_mass must be positive")
        if self.prior_atoms < 1:
            raise ValueError("prior_atoms must be at least 1")
        if self.n_posterior_draws < 1:
            raise ValueError("n_posterior_draws must be at least 1")


def dp_quantile_draw(
    spec: LossSpec,
    data,
    cfg: DPConfig,
    rng: Optional[np.random.Generator] = None,
    solver_cfg: Optional[SolverConfig] = None,
) -> np.ndarray:
    """One draw of the quantile under the Dirichlet-process posterior."""
    theta, _ = _dp_draw(spec, as_dataset(data), cfg,
                        rng or np.random.default_rng(np.random.SeedSequence(cfg.seed)),
                        solver_cfg or SolverConfig(grad_tol=1e-7, max_iters=2000))
    return theta


def _dp_draw(spec, x, cfg, rng, solver_cfg):
    n, d = x.shape
    base_mean = np.zeros(d) if cfg.base_mean is None else np.asarray(cfg.base_mean, dtype=float)
    base_cov = np.eye(d) if cfg.base_cov is None else np.asarray(cfg.base_cov, dtype=float)
    fresh = base_mean + rng.standard_normal((cfg.prior_atoms, d)) @ np.linalg.cholesky(base_cov).T
    atoms = np.vstack([fresh, x])
    conc = np.concatenate([np.full(cfg.prior_atoms, cfg.base_mass / cfg.prior_atoms), np.ones(n)])
    w = rng.dirichlet(conc)
    est = fit_weighted_atoms(spec, atoms, w, cfg=solver_cfg)
    return est.theta_hat, est.converged


def dp_quantile_sample(spec: LossSpec, data, cfg: DPConfig) -> PosteriorDraws:
    """Independent DP-posterior quantile draws, packaged like chain output."""
    x = as_dataset(data)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    solver_cfg = SolverConfig(grad_tol=1e-7, max_iters=2000)
    draws = np.empty((cfg.n_posterior_draws, x.shape[1]))
    failures = 0
    for i in range(cfg.n_posterior_draws):
        draws[i], ok = _dp_draw(spec, x, cfg, rng, solver_cfg)
        failures += not ok
    if failures:
        log.warning("DP posterior: %d of %d quantile fits did not fully converge", failures, cfg.n_posterior_draws)
    mcfg = McmcConfig(omega=1.0, seed=cfg.seed, n_draws=cfg.n_posterior_draws, burn_in=0)
    provenance = {
        "model": "dp-quantile",
        "data_sha256": dataset_hash(x),
        "n": int(x.shape[0]),
        "d": int(x.shape[1]),
        "seed": int(cfg.seed),
        "base_mass": cfg.base_mass,
        "prior_atoms": cfg.prior_atoms,
        "solver_failures": failures,
    }
    return PosteriorDraws(draws, 1.0, mcfg, provenance)


@dataclass
class NIWConfig:
    """Normal--inverse-Wishart prior for a full-covariance normal model."""

    seed: int
    prior_mean: Optional[np.ndarray] = None  # zeros by default
    kappa0: float = 0.01
    nu0: Optional[float] = None  # d + 2 by default
    psi0: Optional[np.ndarray] = None  # identity by default
    n_draws: int = 5000

    def __post_init__(self):
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.n_draws < 1:
            raise ValueError("n_draws must be at least 1")


def niw_posterior_sample(data, cfg: NIWConfig) -> PosteriorDraws:
    """Exact draws from the conjugate normal--inverse-Wishart posterior.

    Returns the location draws only.  Requires ``n > d`` so the posterior
    scale matrix is proper.
    """
    x = as_dataset(data)
    n, d = x.shape
    if n <= d:
        raise InsufficientDataError(f"normal-inverse-Wishart model needs n > d (n={n}, d={d})")
    mean0 = np.zeros(d) if cfg.prior_mean is None else np.asarray(cfg.prior_mean, dtype=float)
    nu0 = float(d + 2) if cfg.nu0 is None else float(cfg.nu0)
    psi0 = np.eye(d) if cfg.psi0 is None else np.asarray(cfg.psi0, dtype=float)
    if nu0 <= d - 1:
        raise ValueError("nu0 must exceed d - 1")

    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    kappa_n = cfg.kappa0 + n
    mean_n = (cfg.kappa0 * mean0 + n * xbar) / kappa_n
    nu_n = nu0 + n
    dev = (xbar - mean0)[:, None]
    psi_n = psi0 + scatter + (cfg.kappa0 * n / kappa_n) * (dev @ dev.T)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    sigmas = invwishart.rvs(df=nu_n, scale=psi_n, size=cfg.n_draws, random_state=rng)
    sigmas = np.asarray(sigmas).reshape(cfg.n_draws, d, d)
    chols = np.linalg.cholesky(sigmas / kappa_n)
    z = rng.standard_normal((cfg.n_draws, d))
    draws = mean_n + np.einsum("mde,me->md", chols, z)

    mcfg = McmcConfig(omega=1.0, seed=cfg.seed, n_draws=cfg.n_draws, burn_in=0)
    provenance = {
        "model": "normal-inverse-wishart",
        "data_sha256": dataset_hash(x),
        "n": n,
        "d": d,
        "seed": int(cfg.seed),
        "kappa0": cfg.kappa0,
        "nu0": nu_n - n,
    }
    return PosteriorDraws(draws, 1.0, mcfg, provenance)

"""Random-walk Metropolis sampling of the Gibbs posterior.

The target density is proportional to ``exp(-omega * n * R_n(theta)) *
prior(theta)`` with ``R_n`` the empirical quantile risk, ``omega > 0`` the
learning rate, and a Gaussian prior.  The proposal is an isotropic Gaussian
step; the kernel runs a whole batch of chains in lock-step so that the
bootstrap calibration loop can drive hundreds of chains through vectorized
numpy operations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .losses import LossSpec, as_dataset, empirical_risk
from .solver import SolverConfig, fit_quantile

ACCEPT_RATE_BAND = (0.1, 0.6)


@dataclass(frozen=True)
class GaussianPrior:
    """Multivariate normal prior with an SPD covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.covariance, dtype=float).copy()
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        mean.setflags(write=False)
        cov.setflags(write=False)
        prec = np.linalg.inv(cov)
        prec.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_precision", prec)

    @property
    def d(self) -> int:
        return self.mean.size

    def logpdf_many(self, thetas: np.ndarray) -> np.ndarray:
        """Log density up to an additive constant, for (B, d) points."""
        dev = np.atleast_2d(thetas) - self.mean
        return -0.5 * np.einsum("bd,de,be->b", dev, self._precision, dev)

    def logpdf(self, theta) -> float:
        return float(self.logpdf_many(np.asarray(theta, dtype=float)[None, :])[0])


def default_prior(d: int, scale: float = 10.0) -> GaussianPrior:
    """Zero-mean prior with covariance ``scale * I``."""
    return GaussianPrior(np.zeros(d), scale * np.eye(d))


@dataclass
class McmcConfig:
    """Random-walk chain settings.

    ``proposal_scale`` is the proposal covariance multiplier (covariance
    ``proposal_scale * I``).  With ``adapt_proposal`` the scale is tuned
    toward a 25-40% acceptance rate during burn-in only, then frozen so the
    stationary law is untouched.
    """

    omega: float
    seed: int
    n_draws: int = 5000
    burn_in: int = 2000
    thin: int = 1
    proposal_scale: float = 0.01
    adapt_proposal: bool = False

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.n_draws < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need n_draws >= 1, burn_in >= 0, thin >= 1")
        if self.proposal_scale <= 0:
            raise ValueError("proposal_scale must be positive")
        if self.seed is None:
            raise ValueError("seed is required")


@dataclass
class PosteriorDraws:
    """Retained draws (M, d) plus chain provenance."""

    draws: np.ndarray
    acceptance_rate: float
    config: McmcConfig
    provenance: dict = field(default_factory=dict)


def dataset_hash(data: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(data, dtype=float).tobytes()).hexdigest()


def log_unnormalized_posterior(spec: LossSpec, data, prior: GaussianPrior, omega: float, theta) -> float:
    """``-omega * n * R_n(theta) + log prior(theta)`` up to a constant.

    The prior normalizing constant is dropped; only differences in this
    value are meaningful.
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    x = as_dataset(data)
    return -omega * x.shape[0] * empirical_risk(spec, x, theta) + prior.logpdf(theta)


class _SharedRisk:
    """Empirical risk of one dataset, evaluated at a batch of thetas."""

    def __init__(self, spec: LossSpec, data: np.ndarray):
        self.spec = spec
        self.x = data
        self.u = spec.u
        self.n = data.shape[0]
        if spec.r == 2.0:
            self.xsq = np.einsum("nd,nd->n", data, data)
        self.u_dot_mean = float(data.mean(axis=0) @ spec.u)

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.r == 2.0:
            cross = thetas @ self.x.T  # (B, n)
            sq = self.xsq[None, :] - 2.0 * cross + np.einsum("bd,bd->b", thetas, thetas)[:, None]
            np.maximum(sq, 0.0, out=sq)
            norms = np.sqrt(sq)
        else:
            diff = self.x[None, :, :] - thetas[:, None, :]
            norms = np.sum(np.abs(diff) ** spec.r, axis=2) ** (1.0 / spec.r)
        return norms.mean(axis=1) + self.u_dot_mean - thetas @ self.u


class _StackedRisk:
    """Per-chain empirical risk for a (B, n, d) stack of datasets."""

    def __init__(self, spec: LossSpec, stacks: np.ndarray):
        self.spec = spec
        self.x = stacks
        self.u = spec.u
        self.n = stacks.shape[1]
        if spec.r == 2.0:
            self.xsq = np.einsum("bnd,bnd->bn", stacks, stacks)
        self.u_dot_mean = stacks.mean(axis=1) @ spec.u  # (B,)

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.r == 2.0:
            cross = np.einsum("bnd,bd->bn", self.x, thetas)
            sq = self.xsq - 2.0 * cross + np.einsum("bd,bd->b", thetas, thetas)[:, None]
            np.maximum(sq, 0.0, out=sq)
            norms = np.sqrt(sq)
        else:
            diff = self.x - thetas[:, None, :]
            norms = np.sum(np.abs(diff) ** spec.r, axis=2) ** (1.0 / spec.r)
        return norms.mean(axis=1) + self.u_dot_mean - thetas @ self.u


def run_chains(
    risk_fn,
    n_obs: int,
    prior: GaussianPrior,
    omega: float,
    theta0: np.ndarray,
    n_draws: int,
    burn_in: int,
    thin: int,
    proposal_scale: float,
    rng: np.random.Generator,
    adapt: bool = False,
):
    """Drive a batch of random-walk chains sharing omega and the prior.

    ``theta0`` is (B, d); ``risk_fn`` maps (B, d) states to (B,) risks.
    A proposal is accepted when ``log U <= logpost(prop) - logpost(cur)``,
    the Metropolis rule for a symmetric kernel.  Returns draws with shape
    (B, M, d), ``M = n_draws // thin``, and per-chain acceptance rates over
    the retained phase.  Deterministic given ``rng``'s state.
    """
    theta = np.array(theta0, dtype=float, copy=True)
    B, d = theta.shape
    logp = -omega * n_obs * risk_fn(theta) + prior.logpdf_many(theta)
    scale = np.full(B, np.sqrt(proposal_scale))
    m = n_draws // thin
    draws = np.empty((B, m, d))
    accepted = np.zeros(B)
    win_acc = np.zeros(B)
    win_len = 0
    k = 0
    for step in range(burn_in + n_draws):
        prop = theta + scale[:, None] * rng.standard_normal((B, d))
        prop_logp = -omega * n_obs * risk_fn(prop) + prior.logpdf_many(prop)
        accept = np.log(rng.random(B)) <= prop_logp - logp
        theta[accept] = prop[accept]
        logp[accept] = prop_logp[accept]
        if step >= burn_in:
            accepted += accept
            pos = step - burn_in + 1
            if pos % thin == 0:
                draws[:, k] = theta
                k += 1
        elif adapt:
            win_acc += accept
            win_len += 1
            if win_len == 200:
                rate = win_acc / win_len
                scale *= np.where(rate < 0.25, 0.7, np.where(rate > 0.40, 1.4, 1.0))
                win_acc[:] = 0.0
                win_len = 0
    return draws[:, :k], accepted / n_draws


def sample_posterior(
    spec: LossSpec,
    data,
    prior: GaussianPrior,
    cfg: McmcConfig,
    theta_start: Optional[np.ndarray] = None,
) -> PosteriorDraws:
    """Draw from the Gibbs posterior of one dataset.

    The chain starts at the sample quantile (risk minimizer) unless an
    explicit start is supplied.  Bit-identical output for identical inputs
    and seed.
    """
    x = as_dataset(data)
    if x.shape[1] != spec.d:
        raise ValueError(f"dataset has {x.shape[1]} columns, spec expects {spec.d}")
    if theta_start is None:
        theta_start = fit_quantile(spec, x, SolverConfig(grad_tol=1e-8)).theta_hat
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    risk_fn = _SharedRisk(spec, x)
    draws, acc = run_chains(
        risk_fn,
        x.shape[0],
        prior,
        cfg.omega,
        np.asarray(theta_start, dtype=float)[None, :],
        cfg.n_draws,
        cfg.burn_in,
        cfg.thin,
        cfg.proposal_scale,
        rng,
        adapt=cfg.adapt_proposal,
    )
    rate = float(acc[0])
    warnings = []
    if not ACCEPT_RATE_BAND[0] <= rate <= ACCEPT_RATE_BAND[1]:
        warnings.append(
            f"acceptance rate {rate:.3f} outside {ACCEPT_RATE_BAND}; "
            "consider tuning proposal_scale or enabling adapt_proposal"
        )
    provenance = {
        "data_sha256": dataset_hash(x),
        "n": int(x.shape[0]),
        "d": int(x.shape[1]),
        "r": spec.r,
        "u": spec.u.tolist(),
        "prior_mean": prior.mean.tolist(),
        "prior_cov": prior.covariance.tolist(),
        "omega": cfg.omega,
        "seed": int(cfg.seed),
        "start": np.asarray(theta_start, dtype=float).tolist(),
        "acceptance_rate": rate,
        "warnings": warnings,
    }
    return PosteriorDraws(draws[0], rate, cfg, provenance)


def save_draws(pd: PosteriorDraws, csv_path, meta_path=None) -> None:
    """Write draws as a headerless CSV plus a JSON sidecar with provenance."""
    np.savetxt(csv_path, pd.draws, delimiter=",", fmt="%.17g")
    if meta_path is None:
        meta_path = str(csv_path) + ".json" if not str(csv_path).endswith(".csv") else str(csv_path)[:-4] + ".json"
    meta = dict(pd.provenance)
    meta.update(
        {
            "n_draws": pd.config.n_draws,
            "burn_in": pd.config.burn_in,
            "thin": pd.config.thin,
            "proposal_scale": pd.config.proposal_scale,
            "retained": int(pd.draws.shape[0]),
        }
    )
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)


def load_draws(csv_path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(csv_path, delimiter=","))

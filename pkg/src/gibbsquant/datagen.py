"""Seeded generators for the simulation laws, plus ground-truth quantiles.

Three families are supported: a multivariate normal, an elliptical Laplace
(spherically symmetric standardized law with radial density proportional to
``rho**((d-1)/2) * exp(-2**1.5 * rho)``, i.e. a Gamma((d+1)/2, 2**1.5)
radius, pushed through an affine map), and a gamma law with given marginals
coupled by a Gaussian copula.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import gamma as gamma_dist

from .losses import LossSpec
from .solver import SolverConfig, fit_quantile

LAPLACE_RATE = 2.0 ** 1.5

# fixed entropy for large-sample truth oracles, recorded in TruthRecord
ORACLE_SEED = 202406


@dataclass(frozen=True)
class GeneratorSpec:
    """One simulation law.  ``law`` selects which parameter block applies:

    - "mvnormal": mean, cov
    - "mvlaplace": mean (location), cov (dispersion applied to the
      standardized draw via its Cholesky factor)
    - "gammacopula": shape, rate (shared by all margins), corr (copula
      correlation matrix)
    """

    law: str
    d: int
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    shape: Optional[float] = None
    rate: Optional[float] = None
    corr: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.law not in ("mvnormal", "mvlaplace", "gammacopula"):
            raise ValueError(f"unknown law {self.law!r}")
        d = int(self.d)
        if d < 1:
            raise ValueError("d must be positive")
        if self.law in ("mvnormal", "mvlaplace"):
            mean = np.zeros(d) if self.mean is None else np.asarray(self.mean, dtype=float).copy()
            cov = np.eye(d) if self.cov is None else np.asarray(self.cov, dtype=float).copy()
            if mean.shape != (d,) or cov.shape != (d, d):
                raise ValueError("mean/cov dimensions do not match d")
            np.linalg.cholesky(cov)  # SPD check
            mean.setflags(write=False)
            cov.setflags(write=False)
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", cov)
        else:
            if self.shape is None or self.rate is None:
                raise ValueError("gammacopula requires shape and rate")
            if self.shape <= 0 or self.rate <= 0:
                raise ValueError("shape and rate must be positive")
            corr = np.eye(d) if self.corr is None else np.asarray(self.corr, dtype=float).copy()
            if corr.shape != (d, d) or not np.allclose(np.diag(corr), 1.0):
                raise ValueError("corr must be a correlation matrix (unit diagonal)")
            np.linalg.cholesky(corr)
            corr.setflags(write=False)
            object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "d", d)


@dataclass(frozen=True)
class TruthRecord:
    """Population quantile, with how it was obtained."""

    theta_star: np.ndarray
    method: str  # "analytic" or "large-sample"
    n_oracle: int
    seed: Optional[int] = None


def _rng_for(spec: GeneratorSpec, seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(spec.seed if seed is None else seed))


def sample_mvnormal(spec: GeneratorSpec, n: int, seed: Optional[int] = None) -> np.ndarray:
    if spec.law != "mvnormal":
        raise ValueError("spec.law must be 'mvnormal'")
    rng = _rng_for(spec, seed)
    chol = np.linalg.cholesky(spec.cov)
    return spec.mean + rng.standard_normal((n, spec.d)) @ chol.T


def sample_mvlaplace(spec: GeneratorSpec, n: int, seed: Optional[int] = None) -> np.ndarray:
    """Uniform direction times a Gamma((d+1)/2, 2**1.5) radius, then affine.

    The radial law comes from multiplying the standardized density by the
    r**(d-1) spherical volume element.
    """
    if spec.law != "mvlaplace":
        raise ValueError("spec.law must be 'mvlaplace'")
    rng = _rng_for(spec, seed)
    z = rng.standard_normal((n, spec.d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radii = rng.gamma(shape=(spec.d + 1) / 2.0, scale=1.0 / LAPLACE_RATE, size=n)
    chol = np.linalg.cholesky(spec.cov)
    return spec.mean + (radii[:, None] * z) @ chol.T


def sample_gamma_copula(spec: GeneratorSpec, n: int, seed: Optional[int] = None) -> np.ndarray:
    """Gaussian-copula draw with Gamma(shape, rate) margins."""
    if spec.law != "gammacopula":
        raise ValueError("spec.law must be 'gammacopula'")
    rng = _rng_for(spec, seed)
    chol = np.linalg.cholesky(spec.corr)
    z = rng.standard_normal((n, spec.d)) @ chol.T
    grades = ndtr(z)
    return gamma_dist.ppf(grades, a=spec.shape, scale=1.0 / spec.rate)


_SAMPLERS = {
    "mvnormal": sample_mvnormal,
    "mvlaplace": sample_mvlaplace,
    "gammacopula": sample_gamma_copula,
}


def sample(spec: GeneratorSpec, n: int, seed: Optional[int] = None) -> np.ndarray:
    return _SAMPLERS[spec.law](spec, n, seed)


def provenance(spec: GeneratorSpec, n: int, seed: Optional[int] = None) -> dict:
    out = {"law": spec.law, "d": spec.d, "n": int(n), "seed": int(spec.seed if seed is None else seed)}
    if spec.law in ("mvnormal", "mvlaplace"):
        out["mean"] = spec.mean.tolist()
        out["cov"] = spec.cov.tolist()
    else:
        out.update({"shape": spec.shape, "rate": spec.rate, "corr": spec.corr.tolist()})
    return out


def example_generator(name: str, seed: int = 0) -> GeneratorSpec:
    """The three stock bivariate simulation laws used by the harness."""
    if name == "ex1":
        return GeneratorSpec(
            law="mvnormal",
            d=2,
            mean=np.array([1.0, 1.0]),
            cov=np.array([[1.0, 0.7], [0.7, 1.0]]),
            seed=seed,
        )
    if name == "ex2":
        return GeneratorSpec(law="mvlaplace", d=2, mean=np.array([1.0, 1.0]), cov=np.eye(2), seed=seed)
    if name == "ex3":
        return GeneratorSpec(
            law="gammacopula",
            d=2,
            shape=1.0,
            rate=1.0,
            corr=np.array([[1.0, 0.5], [0.5, 1.0]]),
            seed=seed,
        )
    raise ValueError(f"unknown example {name!r}; expected ex1, ex2, or ex3")


def true_quantile(spec: GeneratorSpec, loss: LossSpec, n_oracle: int = 1_000_000, seed: Optional[int] = None) -> TruthRecord:
    """Population quantile of the law.

    Point-symmetric laws with ``u = 0`` give the location vector exactly
    (the risk is convex and even around it).  Otherwise the quantile is fit
    on a large generated sample and recorded as such.
    """
    if loss.d != spec.d:
        raise ValueError("loss dimension does not match generator dimension")
    symmetric = spec.law in ("mvnormal", "mvlaplace")
    if symmetric and np.all(loss.u == 0.0):
        return TruthRecord(np.array(spec.mean, dtype=float), "analytic", 0, None)
    if n_oracle < 1_000_000:
        raise ValueError("large-sample oracle needs n_oracle >= 1e6")
    oracle_seed = ORACLE_SEED if seed is None else seed
    big = sample(spec, n_oracle, seed=oracle_seed)
    est = fit_quantile(loss, big, SolverConfig(grad_tol=1e-9, max_iters=4000))
    return TruthRecord(est.theta_hat, "large-sample", int(n_oracle), int(oracle_seed))


@lru_cache(maxsize=32)
def _cached_truth_key(name: str, r: float, u_key: tuple, n_oracle: int) -> TruthRecord:
    gen = example_generator(name)
    loss = LossSpec(r=r, u=np.asarray(u_key))
    return true_quantile(gen, loss, n_oracle=max(n_oracle, 1_000_000))


def example_truth(name: str, loss: LossSpec, n_oracle: int = 1_000_000) -> TruthRecord:
    """Cached truth for the stock examples (oracle seed is fixed)."""
    gen = example_generator(name)
    if gen.law in ("mvnormal", "mvlaplace") and np.all(loss.u == 0.0):
        return TruthRecord(np.array(gen.mean, dtype=float), "analytic", 0, None)
    return _cached_truth_key(name, loss.r, tuple(loss.u.tolist()), n_oracle)


def save_dataset_csv(data: np.ndarray, path) -> None:
    """Headerless CSV, one observation per row."""
    np.savetxt(path, np.atleast_2d(data), delimiter=",", fmt="%.17g")

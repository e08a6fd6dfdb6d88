"""Experiment driver: coverage replication studies, posterior exports, and
train/test risk comparisons.

Replications are deterministic functions of (config, master seed): every
replication derives its own generator/calibration/chain seed streams through
``SeedSequence(master, spawn_key=...)``, results are keyed by replication
index, and aggregation is an ordered reduction, so worker count never
changes a report.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import gaussian_kde

from .baselines import DPConfig, NIWConfig, NormalModelConfig, conjugate_normal_sample, dp_quantile_sample, niw_posterior_sample
from .calibration import CalibrationConfig, calibrate_learning_rate
from .dataio import child_seed, ingest_csv, write_json
from .datagen import example_generator, provenance, sample, save_dataset_csv, true_quantile
from .ellipses import contains, ellipse_from_draws, ellipse_from_sandwich, ellipse_size, ellipse_to_dict, save_ellipse
from .errors import ConfigError
from .losses import LossSpec, as_dataset, empirical_risk_many
from .sampling import GaussianPrior, McmcConfig, default_prior, sample_posterior, save_draws
from .solver import fit_quantile

log = logging.getLogger(__name__)

METHODS = ("gibbs-calibrated", "gibbs-fixed", "pbayes", "npbayes", "sandwich")
EXAMPLES = ("ex1", "ex2", "ex3")

# excluding more than this fraction of replications invalidates a report
FAILURE_BUDGET = 0.01


@dataclass
class ExperimentConfig:
    """Settings for one coverage experiment cell."""

    example: str
    method: str
    seed: int
    loss: LossSpec = field(default_factory=lambda: LossSpec(r=2.0, u=np.zeros(2)))
    n: int = 100
    replications: int = 200
    alpha: float = 0.05
    omega: Optional[float] = None  # gibbs-fixed only
    prior_scale: float = 10.0
    # reporting chain
    n_draws: int = 5000
    burn_in: int = 2000
    thin: int = 1
    proposal_scale: float = 0.01
    adapt_proposal: bool = False
    # calibration loop
    cal_B: int = 200
    cal_epsilon: float = 0.01
    cal_omega0: Optional[float] = None
    cal_max_steps: int = 50
    cal_inner_draws: int = 2000
    cal_inner_burn_in: int = 1000
    # comparators
    np_draws: int = 5000
    np_base_mass: float = 2.0
    np_prior_atoms: int = 50
    pb_draws: int = 5000
    pb_burn_in: int = 2000
    # execution
    workers: Optional[int] = None
    truth_oracle_n: int = 1_000_000

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ConfigError(f"coverage experiments need a generative example, got {self.example!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "gibbs-fixed" and (self.omega is None or self.omega <= 0):
            raise ConfigError("method gibbs-fixed requires a positive omega")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.seed is None:
            raise ConfigError("seed is required")


@dataclass
class CoverageReport:
    method: str
    example: str
    r: float
    u: list
    n: int
    alpha: float
    coverage: float
    mean_size: float
    mc_stderr: float
    replications: int
    completed: int
    failures: list
    wall_time: float
    valid: bool
    seed: int
    theta_star: list
    truth_method: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _prior_for(cfg: ExperimentConfig) -> GaussianPrior:
    return default_prior(cfg.loss.d, cfg.prior_scale)


def _replication_ellipse(cfg: ExperimentConfig, data, idx: int):
    """The method's level-alpha ellipse for one replication's dataset."""
    spec = cfg.loss
    if cfg.method == "sandwich":
        return ellipse_from_sandwich(spec, data, cfg.alpha)
    if cfg.method == "pbayes":
        pb = NormalModelConfig(
            seed=child_seed(cfg.seed, idx, 2), prior_cov=cfg.prior_scale * np.eye(spec.d),
            n_draws=cfg.pb_draws, burn_in=cfg.pb_burn_in,
        )
        return ellipse_from_draws(conjugate_normal_sample(data, pb), cfg.alpha)
    if cfg.method == "npbayes":
        dp = DPConfig(
            seed=child_seed(cfg.seed, idx, 2), base_mass=cfg.np_base_mass,
            prior_atoms=cfg.np_prior_atoms, n_posterior_draws=cfg.np_draws,
        )
        return ellipse_from_draws(dp_quantile_sample(spec, data, dp), cfg.alpha)

    prior = _prior_for(cfg)
    if cfg.method == "gibbs-calibrated":
        cal = CalibrationConfig(
            seed=child_seed(cfg.seed, idx, 2), alpha=cfg.alpha, B=cfg.cal_B,
            epsilon=cfg.cal_epsilon, omega0=cfg.cal_omega0, max_steps=cfg.cal_max_steps,
            mcmc_draws=cfg.cal_inner_draws, mcmc_burn_in=cfg.cal_inner_burn_in,
            proposal_scale=cfg.proposal_scale, adapt_proposal=cfg.adapt_proposal,
        )
        omega = calibrate_learning_rate(spec, data, prior, cal).final_omega
    else:  # gibbs-fixed
        omega = cfg.omega
    chain = McmcConfig(
        omega=omega, seed=child_seed(cfg.seed, idx, 3), n_draws=cfg.n_draws,
        burn_in=cfg.burn_in, thin=cfg.thin, proposal_scale=cfg.proposal_scale,
        adapt_proposal=cfg.adapt_proposal,
    )
    return ellipse_from_draws(sample_posterior(spec, data, prior, chain), cfg.alpha)


def _coverage_replication(args):
    cfg, theta_star, idx = args
    try:
        gen = example_generator(cfg.example)
        data = sample(gen, cfg.n, seed=child_seed(cfg.seed, idx, 1))
        e = _replication_ellipse(cfg, data, idx)
        return idx, bool(contains(e, theta_star)), float(ellipse_size(e)), None
    except Exception as exc:  # per-replication failures are excluded, counted
        return idx, None, None, f"{type(exc).__name__}: {exc}"


def run_coverage_experiment(cfg: ExperimentConfig) -> CoverageReport:
    """Estimate frequentist coverage and mean size of the method's ellipses.

    Per replication: generate data, build the method's level-alpha set,
    score containment of the true quantile and the set's size.  Failed
    replications are excluded and listed; a report with more than 1%
    failures is flagged invalid.
    """
    start = time.time()
    truth = true_quantile(example_generator(cfg.example), cfg.loss, n_oracle=max(cfg.truth_oracle_n, 1_000_000))
    payloads = [(cfg, truth.theta_star, i) for i in range(cfg.replications)]
    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_coverage_replication, payloads, chunksize=1))
    else:
        results = [_coverage_replication(p) for p in payloads]

    results.sort(key=lambda r: r[0])
    hits, sizes, failures = [], [], []
    for idx, covered, size, err in results:
        if err is None:
            hits.append(covered)
            sizes.append(size)
        else:
            failures.append([idx, err])
            log.warning("replication %d failed: %s", idx, err)
    completed = len(hits)
    coverage = float(np.mean(hits)) if completed else float("nan")
    mean_size = float(np.mean(sizes)) if completed else float("nan")
    stderr = float(np.sqrt(coverage * (1.0 - coverage) / completed)) if completed else float("nan")
    return CoverageReport(
        method=cfg.method,
        example=cfg.example,
        r=cfg.loss.r,
        u=cfg.loss.u.tolist(),
        n=cfg.n,
        alpha=cfg.alpha,
        coverage=coverage,
        mean_size=mean_size,
        mc_stderr=stderr,
        replications=cfg.replications,
        completed=completed,
        failures=failures,
        wall_time=time.time() - start,
        valid=len(failures) <= FAILURE_BUDGET * cfg.replications,
        seed=cfg.seed,
        theta_star=truth.theta_star.tolist(),
        truth_method=truth.method,
    )


def kde_grid(draws_2d: np.ndarray, gridsize: int = 60, pad: float = 0.15):
    """Gaussian KDE of a two-column draw set on a regular grid."""
    x, y = draws_2d[:, 0], draws_2d[:, 1]
    kde = gaussian_kde(np.vstack([x, y]))
    span_x, span_y = np.ptp(x), np.ptp(y)
    xs = np.linspace(x.min() - pad * span_x, x.max() + pad * span_x, gridsize)
    ys = np.linspace(y.min() - pad * span_y, y.max() + pad * span_y, gridsize)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    z = kde(np.vstack([gx.ravel(), gy.ravel()])).reshape(gridsize, gridsize)
    return xs, ys, z


def _write_kde_csv(path, xs, ys, z):
    with open(path, "w") as fh:
        fh.write("x,y,density\n")
        for i, xv in enumerate(xs):
            for j, yv in enumerate(ys):
                fh.write(f"{float(xv)!r},{float(yv)!r},{float(z[i, j])!r}\n")


def run_posterior_export(
    cfg: ExperimentConfig,
    output_dir,
    data: Optional[np.ndarray] = None,
    make_figures: bool = True,
) -> dict:
    """One-dataset posterior study: draws, both ellipses, KDE grids, figures.

    Writes the dataset, the retained draws with provenance, the credible
    ellipse from the draws, the asymptotic-normal confidence ellipse, and
    per-pair density grids; optionally renders plots next to the data files.
    Returns the path map plus the fitted objects.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.loss
    if data is None:
        gen = example_generator(cfg.example)
        data = sample(gen, cfg.n, seed=child_seed(cfg.seed, 0, 1))
        meta = provenance(gen, cfg.n, child_seed(cfg.seed, 0, 1))
    else:
        data = as_dataset(data)
        meta = {"law": "user-data", "n": int(data.shape[0]), "d": int(data.shape[1])}

    prior = _prior_for(cfg)
    est = fit_quantile(spec, data)
    cal_state = None
    if cfg.method == "gibbs-fixed":
        omega = cfg.omega
    else:
        cal = CalibrationConfig(
            seed=child_seed(cfg.seed, 0, 2), alpha=cfg.alpha, B=cfg.cal_B,
            epsilon=cfg.cal_epsilon, omega0=cfg.cal_omega0, max_steps=cfg.cal_max_steps,
            mcmc_draws=cfg.cal_inner_draws, mcmc_burn_in=cfg.cal_inner_burn_in,
            proposal_scale=cfg.proposal_scale, adapt_proposal=cfg.adapt_proposal,
        )
        cal_state = calibrate_learning_rate(spec, data, prior, cal)
        omega = cal_state.final_omega

    chain = McmcConfig(
        omega=omega, seed=child_seed(cfg.seed, 0, 3), n_draws=cfg.n_draws,
        burn_in=cfg.burn_in, thin=cfg.thin, proposal_scale=cfg.proposal_scale,
        adapt_proposal=cfg.adapt_proposal,
    )
    pdraws = sample_posterior(spec, data, prior, chain, theta_start=est.theta_hat)
    gibbs_e = ellipse_from_draws(pdraws, cfg.alpha)
    sandwich_e = ellipse_from_sandwich(spec, data, cfg.alpha, theta_hat=est.theta_hat)

    paths = {}
    save_dataset_csv(data, out / "dataset.csv")
    paths["dataset"] = out / "dataset.csv"
    save_draws(pdraws, out / "draws.csv", out / "draws.json")
    paths["draws"] = out / "draws.csv"
    save_ellipse(gibbs_e, out / "ellipse_gibbs.json")
    save_ellipse(sandwich_e, out / "ellipse_sandwich.json")
    paths["ellipse_gibbs"] = out / "ellipse_gibbs.json"
    paths["ellipse_sandwich"] = out / "ellipse_sandwich.json"
    if cal_state is not None:
        from .calibration import save_trajectory

        save_trajectory(cal_state, out / "calibration.csv")
        paths["calibration"] = out / "calibration.csv"

    for i in range(spec.d):
        for j in range(i + 1, spec.d):
            xs, ys, z = kde_grid(pdraws.draws[:, [i, j]])
            kde_path = out / f"kde_{i}_{j}.csv"
            _write_kde_csv(kde_path, xs, ys, z)
            paths[f"kde_{i}_{j}"] = kde_path

    summary = {
        "data": meta,
        "loss": {"r": spec.r, "u": spec.u.tolist()},
        "omega": omega,
        "calibrated": cal_state is not None,
        "calibration_converged": None if cal_state is None else cal_state.converged,
        "theta_hat": est.theta_hat.tolist(),
        "acceptance_rate": pdraws.acceptance_rate,
        "ellipse_gibbs": ellipse_to_dict(gibbs_e),
        "ellipse_sandwich": ellipse_to_dict(sandwich_e),
        "sizes": {"gibbs": ellipse_size(gibbs_e), "sandwich": ellipse_size(sandwich_e)},
    }
    write_json(summary, out / "export.json")
    paths["summary"] = out / "export.json"

    if make_figures:
        from . import figures

        paths["figure_scatter"] = figures.posterior_scatter(
            pdraws.draws, {"credible (draws)": gibbs_e, "confidence (sandwich)": sandwich_e},
            out / "posterior_scatter.png", center=est.theta_hat,
        )
        paths["figure_pairwise"] = figures.pairwise_density(pdraws.draws, out / "posterior_pairs.png")
        if cal_state is not None:
            paths["figure_calibration"] = figures.calibration_trace(cal_state, out / "calibration_trace.png")

    return {
        "paths": paths,
        "draws": pdraws,
        "estimate": est,
        "ellipse_gibbs": gibbs_e,
        "ellipse_sandwich": sandwich_e,
        "calibration": cal_state,
        "omega": omega,
    }


def log_risk_differences(spec: LossSpec, test_data, thetas, min_risk: float):
    """Per-draw ``log(R_test(theta) - min R_test)`` with floor clamping.

    Differences at or below the floor (numerically indistinguishable from
    the minimum) are clamped and counted.
    """
    risks = empirical_risk_many(spec, test_data, thetas)
    diffs = risks - min_risk
    floor = 1e-12 * max(1.0, abs(min_risk))
    clamped = int(np.sum(diffs < floor))
    return np.log(np.maximum(diffs, floor)), clamped


def run_traintest_risk(
    train,
    test,
    spec: LossSpec,
    seed: int,
    output_dir=None,
    prior_scale: float = 10.0,
    alpha: float = 0.05,
    cal_kwargs: Optional[dict] = None,
    chain_kwargs: Optional[dict] = None,
    niw_kwargs: Optional[dict] = None,
    make_figures: bool = True,
) -> dict:
    """Out-of-sample risk comparison of the calibrated Gibbs posterior and a
    normal--inverse-Wishart Bayes posterior fit on the same training data.

    Both posteriors are pushed through the held-out empirical risk, reported
    as log differences from the test risk minimum; lower is better.
    """
    train = as_dataset(train)
    test = as_dataset(test)
    if train.shape[1] != test.shape[1]:
        raise ValueError("train and test must share their dimension")
    if train.shape[1] != spec.d:
        raise ValueError(f"data has {train.shape[1]} columns, spec expects {spec.d}")

    min_est = fit_quantile(spec, test)
    prior = default_prior(spec.d, prior_scale)
    cal = CalibrationConfig(seed=child_seed(seed, 1), alpha=alpha, **(cal_kwargs or {}))
    cal_state = calibrate_learning_rate(spec, train, prior, cal)
    chain = McmcConfig(omega=cal_state.final_omega, seed=child_seed(seed, 2), **(chain_kwargs or {}))
    gibbs = sample_posterior(spec, train, prior, chain)
    gibbs_log, gibbs_clamped = log_risk_differences(spec, test, gibbs.draws, min_est.risk_value)

    niw = niw_posterior_sample(train, NIWConfig(seed=child_seed(seed, 3), **(niw_kwargs or {})))
    niw_log, niw_clamped = log_risk_differences(spec, test, niw.draws, min_est.risk_value)

    result = {
        "min_test_risk": min_est.risk_value,
        "min_test_theta": min_est.theta_hat.tolist(),
        "omega": cal_state.final_omega,
        "calibration_converged": cal_state.converged,
        "gibbs_log_risk": gibbs_log,
        "bayes_log_risk": niw_log,
        "gibbs_median": float(np.median(gibbs_log)),
        "bayes_median": float(np.median(niw_log)),
        "gibbs_clamped": gibbs_clamped,
        "bayes_clamped": niw_clamped,
    }

    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "risk_gibbs.csv", gibbs_log, delimiter=",", fmt="%.17g")
        np.savetxt(out / "risk_bayes.csv", niw_log, delimiter=",", fmt="%.17g")
        summary = {k: v for k, v in result.items() if not isinstance(v, np.ndarray)}
        write_json(summary, out / "traintest.json")
        result["paths"] = {
            "gibbs": out / "risk_gibbs.csv",
            "bayes": out / "risk_bayes.csv",
            "summary": out / "traintest.json",
        }
        if make_figures:
            from . import figures

            result["paths"]["figure"] = figures.risk_density(
                {"Gibbs": gibbs_log, "Bayes (NIW)": niw_log}, out / "risk_densities.png"
            )
    return result


__all__ = [
    "ExperimentConfig",
    "CoverageReport",
    "run_coverage_experiment",
    "run_posterior_export",
    "run_traintest_risk",
    "log_risk_differences",
    "kde_grid",
    "ingest_csv",
]

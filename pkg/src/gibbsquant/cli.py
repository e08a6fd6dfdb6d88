"""Command-line harness.

Subcommands: estimate | sample | calibrate | coverage | export | traintest.
Each reads an optional ``key = value`` config file (dotted keys) with
``--set key=value`` overrides; a master ``--seed`` is mandatory for every
command that consumes randomness.  Exit codes: 0 success, 1 usage/config
error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationConfig, calibrate_learning_rate, save_trajectory
from .dataio import apply_overrides, child_seed, ingest_csv, read_config, write_json
from .datagen import example_generator, sample as sample_law, save_dataset_csv
from .ellipses import ellipse_from_sandwich, ellipse_to_dict, save_ellipse
from .errors import (
    ConfigError,
    DataFileError,
    DegenerateDrawsError,
    InsufficientDataError,
    SingularMatrixError,
    SingularityError,
)
from .experiments import (
    EXAMPLES,
    ExperimentConfig,
    run_coverage_experiment,
    run_posterior_export,
    run_traintest_risk,
)
from .losses import LossSpec
from .sampling import McmcConfig, default_prior, sample_posterior, save_draws
from .solver import fit_quantile

log = logging.getLogger("gibbsquant")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

_NUMERICAL_ERRORS = (
    SingularityError,
    SingularMatrixError,
    DegenerateDrawsError,
    InsufficientDataError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gibbsquant", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gibbsquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, required=seed_required,
                       help="master seed" + (" (required)" if seed_required else ""))
        p.add_argument("--output-dir", help="directory for output files")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("estimate", help="fit the sample quantile of a CSV dataset")
    common(p, seed_required=False)
    p.add_argument("--data", required=True, help="input CSV (d numeric columns)")
    p.add_argument("--ellipse-out", help="also write the sandwich confidence ellipse JSON here")

    p = sub.add_parser("sample", help="draw from the posterior at a fixed learning rate")
    common(p, seed_required=True)
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--data", help="input CSV (overrides --example)")
    p.add_argument("--omega", type=float, help="learning rate (required unless set in config)")

    p = sub.add_parser("calibrate", help="choose the learning rate by bootstrap coverage matching")
    common(p, seed_required=True)
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--data", help="input CSV (overrides --example)")

    p = sub.add_parser("coverage", help="replication study of credible-set coverage and size")
    common(p, seed_required=True)
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--method", choices=("gibbs-calibrated", "gibbs-fixed", "pbayes", "npbayes", "sandwich"))
    p.add_argument("--omega", type=float, help="learning rate for gibbs-fixed")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("export", help="posterior draws, ellipses, density grids, and figures for one dataset")
    common(p, seed_required=True)
    p.add_argument("--example", choices=EXAMPLES)
    p.add_argument("--data", help="input CSV (overrides --example)")
    p.add_argument("--omega", type=float, help="skip calibration and use this learning rate")

    p = sub.add_parser("traintest", help="held-out risk comparison of Gibbs and normal-model Bayes")
    common(p, seed_required=True)
    p.add_argument("--train", help="training CSV")
    p.add_argument("--test", help="testing CSV")
    p.add_argument("--example", choices=EXAMPLES, help="generate a dataset instead of reading CSVs")
    p.add_argument("--split", default="100/50", help="train/test sizes for --example (default 100/50)")

    return parser


def _options(args) -> dict:
    opts = read_config(args.config) if args.config else {}
    return apply_overrides(opts, args.overrides)


def _loss_spec(opts: dict, d: int) -> LossSpec:
    r = float(opts.get("loss.r", 2.0))
    u = np.asarray(opts.get("loss.u", np.zeros(d)), dtype=float)
    try:
        return LossSpec(r=r, u=u)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_data(args, opts, generate_seed):
    """Dataset plus its dimension from --data CSV or a stock example."""
    if getattr(args, "data", None):
        data = ingest_csv(args.data)
        return data, data.shape[1], {"source": args.data}
    example = getattr(args, "example", None) or opts.get("example")
    if not example:
        raise ConfigError("either --data or --example is required")
    n = int(opts.get("n", 100))
    gen = example_generator(example)
    data = sample_law(gen, n, seed=generate_seed)
    return data, gen.d, {"source": example, "n": n, "data_seed": generate_seed}


def _out_dir(args, default_name) -> Path:
    out = Path(args.output_dir or default_name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment_config(args, opts, example, method, d=None) -> ExperimentConfig:
    loss = _loss_spec(opts, d if d is not None else example_generator(example).d)
    omega = getattr(args, "omega", None)
    if omega is None:
        omega = opts.get("mcmc.omega")
    kwargs = dict(
        example=example,
        method=method,
        seed=args.seed,
        loss=loss,
        n=int(opts.get("n", 100)),
        replications=int(getattr(args, "replications", None) or opts.get("replications", 200)),
        alpha=float(opts.get("alpha", 0.05)),
        omega=None if omega is None else float(omega),
        prior_scale=float(opts.get("prior.scale", 10.0)),
        n_draws=int(opts.get("mcmc.n_draws", 5000)),
        burn_in=int(opts.get("mcmc.burn_in", 2000)),
        thin=int(opts.get("mcmc.thin", 1)),
        proposal_scale=float(opts.get("mcmc.proposal_scale", 0.01)),
        adapt_proposal=bool(opts.get("mcmc.adapt", False)),
        cal_B=int(opts.get("cal.B", 200)),
        cal_epsilon=float(opts.get("cal.epsilon", 0.01)),
        cal_omega0=None if opts.get("cal.omega0") is None else float(opts.get("cal.omega0")),
        cal_max_steps=int(opts.get("cal.max_steps", 50)),
        cal_inner_draws=int(opts.get("cal.inner_draws", 2000)),
        cal_inner_burn_in=int(opts.get("cal.inner_burn_in", 1000)),
        np_draws=int(opts.get("np.draws", 5000)),
        np_base_mass=float(opts.get("np.base_mass", 2.0)),
        np_prior_atoms=int(opts.get("np.prior_atoms", 50)),
        pb_draws=int(opts.get("pb.draws", 5000)),
        pb_burn_in=int(opts.get("pb.burn_in", 2000)),
        workers=getattr(args, "workers", None) or opts.get("workers"),
        truth_oracle_n=int(opts.get("truth.n_oracle", 1_000_000)),
    )
    return ExperimentConfig(**kwargs)


def _cmd_estimate(args) -> int:
    opts = _options(args)
    data = ingest_csv(args.data)
    spec = _loss_spec(opts, data.shape[1])
    est = fit_quantile(spec, data)
    payload = {
        "theta_hat": est.theta_hat.tolist(),
        "risk_value": est.risk_value,
        "grad_norm": est.grad_norm,
        "iterations": est.iterations,
        "converged": est.converged,
        "at_data_point": est.at_data_point,
        "n": int(data.shape[0]),
        "d": int(data.shape[1]),
        "r": spec.r,
        "u": spec.u.tolist(),
    }
    if args.ellipse_out:
        e = ellipse_from_sandwich(spec, data, float(opts.get("alpha", 0.05)), theta_hat=est.theta_hat)
        save_ellipse(e, args.ellipse_out)
        payload["ellipse"] = ellipse_to_dict(e)
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def _cmd_sample(args) -> int:
    opts = _options(args)
    data, d, source = _load_data(args, opts, child_seed(args.seed, 0, 1))
    spec = _loss_spec(opts, d)
    omega = args.omega if args.omega is not None else opts.get("mcmc.omega")
    if omega is None or float(omega) <= 0:
        raise ConfigError("sample requires a positive learning rate (--omega or mcmc.omega)")
    prior = default_prior(d, float(opts.get("prior.scale", 10.0)))
    cfg = McmcConfig(
        omega=float(omega),
        seed=child_seed(args.seed, 0, 3),
        n_draws=int(opts.get("mcmc.n_draws", 5000)),
        burn_in=int(opts.get("mcmc.burn_in", 2000)),
        thin=int(opts.get("mcmc.thin", 1)),
        proposal_scale=float(opts.get("mcmc.proposal_scale", 0.01)),
        adapt_proposal=bool(opts.get("mcmc.adapt", False)),
    )
    pd = sample_posterior(spec, data, prior, cfg)
    out = _out_dir(args, "sample-output")
    save_dataset_csv(data, out / "dataset.csv")
    save_draws(pd, out / "draws.csv", out / "draws.json")
    print(json.dumps({"output_dir": str(out), "retained": int(pd.draws.shape[0]),
                      "acceptance_rate": pd.acceptance_rate, "source": source}, indent=2))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    opts = _options(args)
    data, d, source = _load_data(args, opts, child_seed(args.seed, 0, 1))
    spec = _loss_spec(opts, d)
    prior = default_prior(d, float(opts.get("prior.scale", 10.0)))
    cfg = CalibrationConfig(
        seed=child_seed(args.seed, 0, 2),
        alpha=float(opts.get("alpha", 0.05)),
        B=int(opts.get("cal.B", 200)),
        epsilon=float(opts.get("cal.epsilon", 0.01)),
        omega0=None if opts.get("cal.omega0") is None else float(opts.get("cal.omega0")),
        max_steps=int(opts.get("cal.max_steps", 50)),
        mcmc_draws=int(opts.get("cal.inner_draws", 2000)),
        mcmc_burn_in=int(opts.get("cal.inner_burn_in", 1000)),
        proposal_scale=float(opts.get("mcmc.proposal_scale", 0.01)),
        adapt_proposal=bool(opts.get("mcmc.adapt", False)),
    )
    state = calibrate_learning_rate(spec, data, prior, cfg)
    out = _out_dir(args, "calibrate-output")
    save_trajectory(state, out / "calibration.csv")
    payload = {
        "final_omega": state.final_omega,
        "converged": state.converged,
        "steps_used": state.steps_used,
        "omega_start": state.omega_start,
        "source": source,
        "output_dir": str(out),
    }
    write_json(payload, out / "calibration.json")
    if not args.no_figures:
        from . import figures

        figures.calibration_trace(state, out / "calibration_trace.png")
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def _cmd_coverage(args) -> int:
    opts = _options(args)
    example = args.example or opts.get("example")
    method = args.method or opts.get("method")
    if not example or not method:
        raise ConfigError("coverage requires --example and --method (or config keys)")
    cfg = _experiment_config(args, opts, example, method)
    report = run_coverage_experiment(cfg)
    out = _out_dir(args, "coverage-output")
    write_json(report.to_dict(), out / "coverage_report.json")
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_export(args) -> int:
    opts = _options(args)
    data = None
    if args.data:
        data = ingest_csv(args.data)
        d = data.shape[1]
        example = "ex1"  # placeholder; generation is bypassed when data given
    else:
        example = args.example or opts.get("example")
        if not example:
            raise ConfigError("export requires --data or --example")
        d = example_generator(example).d
    method = "gibbs-fixed" if args.omega is not None else "gibbs-calibrated"
    cfg = _experiment_config(args, opts, example, method, d=d)
    if args.omega is not None:
        cfg = dataclasses.replace(cfg, omega=float(args.omega))
    out = _out_dir(args, "export-output")
    result = run_posterior_export(cfg, out, data=data, make_figures=not args.no_figures)
    print(json.dumps({"output_dir": str(out), "omega": result["omega"],
                      "files": sorted(str(p.name) for p in result["paths"].values())}, indent=2))
    return EXIT_OK


def _cmd_traintest(args) -> int:
    opts = _options(args)
    if args.train and args.test:
        train = ingest_csv(args.train)
        test = ingest_csv(args.test)
    elif args.example:
        n_train, _, n_test = args.split.partition("/")
        try:
            n_train, n_test = int(n_train), int(n_test)
        except ValueError:
            raise ConfigError(f"--split must look like 100/50, got {args.split!r}")
        gen = example_generator(args.example)
        full = sample_law(gen, n_train + n_test, seed=child_seed(args.seed, 0, 1))
        train, test = full[:n_train], full[n_train:]
    else:
        raise ConfigError("traintest requires --train/--test CSVs or --example")
    spec = _loss_spec(opts, train.shape[1])
    out = _out_dir(args, "traintest-output")
    result = run_traintest_risk(
        train,
        test,
        spec,
        seed=args.seed,
        output_dir=out,
        prior_scale=float(opts.get("prior.scale", 10.0)),
        alpha=float(opts.get("alpha", 0.05)),
        cal_kwargs={
            "B": int(opts.get("cal.B", 200)),
            "epsilon": float(opts.get("cal.epsilon", 0.01)),
            "max_steps": int(opts.get("cal.max_steps", 50)),
            "mcmc_draws": int(opts.get("cal.inner_draws", 2000)),
            "mcmc_burn_in": int(opts.get("cal.inner_burn_in", 1000)),
        },
        chain_kwargs={
            "n_draws": int(opts.get("mcmc.n_draws", 5000)),
            "burn_in": int(opts.get("mcmc.burn_in", 2000)),
        },
        niw_kwargs={"n_draws": int(opts.get("niw.n_draws", 5000))},
        make_figures=not args.no_figures,
    )
    print(json.dumps({
        "output_dir": str(out),
        "gibbs_median": result["gibbs_median"],
        "bayes_median": result["bayes_median"],
        "omega": result["omega"],
    }, indent=2))
    return EXIT_OK


_COMMANDS = {
    "estimate": _cmd_estimate,
    "sample": _cmd_sample,
    "calibrate": _cmd_calibrate,
    "coverage": _cmd_coverage,
    "export": _cmd_export,
    "traintest": _cmd_traintest,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataFileError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

"""
Command line entry point: rcclt <command> [options].

Every command writes its documented files plus manifest.json into the
output directory and exits with 0 on success, 2 on configuration errors,
3 on convergence, capacity, numerical or range errors and 4 when a check
requested with --check fails.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .Base import Base
from .Corrector import (
    default_xi,
    sigma_mu_sq,
    solve_corrector,
    v_mu_field,
    w_mu_field,
)
from .Environment import (
    Distribution,
    Environment,
    EnvironmentSpec,
    drift_field,
    generate_environment,
)
from .Exceptions import ConfigurationError, RccltError
from .Experiments import (
    chi_tail_experiment,
    clt_experiment,
    decay_experiment,
    phi_moment_experiment,
    remainder_experiment,
    sigma_convergence_experiment,
    spatial_average_variance,
)
from .Pool import resolve_threads
from .SpectralExact import (
    build_generator,
    remainder_components_exact,
    spectral_gap,
    spectral_measure,
)
from .Statistics import rate_fit
from .WalkSimulator import McConfig, run_monte_carlo

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _float_list(value):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigurationError(f"expected a list of numbers, got {value!r}")


def _int_list(value):
    values = _float_list(value)
    if any(v != int(v) for v in values):
        raise ConfigurationError(f"expected a list of integers, got {value!r}")
    return [int(v) for v in values]


class Param:
    """A command parameter: converter, default and help text."""

    def __init__(self, convert, default=None, help=""):
        self.convert = convert
        self.default = default
        self.help = help

    def __call__(self, name, value):
        if value is None:
            return None
        try:
            return self.convert(value)
        except ConfigurationError as e:
            raise ConfigurationError(f"--{name}: {e}", field=name)
        except (TypeError, ValueError):
            raise ConfigurationError(f"--{name}: invalid value {value!r}", field=name)


ENV_PARAMS = {
    "d": Param(int, 1, "lattice dimension, 1 to 4"),
    "L": Param(int, 64, "torus side, even"),
    "dist": Param(str, "twopoint:4:0.5", "constant:c | twopoint:M:p | uniform:M"),
    "M": Param(float, None, "ellipticity ceiling, default the law's ceiling"),
    "xi": Param(_float_list, None, "direction, comma separated, default e_1"),
    "tol": Param(float, 1e-10, "corrector tolerance"),
}

COMMAND_PARAMS = {
    "gen-env": {k: ENV_PARAMS[k] for k in ("d", "L", "dist", "M")},
    "solve-corrector": dict(
        ENV_PARAMS,
        env=Param(str, None, "environment file, instead of d/L/dist"),
        mu=Param(float, 0.01, "regularization"),
        max_iter=Param(int, None, "iteration cap, default 20 L^d"),
    ),
    "simulate": dict(
        ENV_PARAMS,
        t=Param(_float_list, [16.0], "horizons"),
        mu=Param(float, None, "regularization, default 1/t"),
        n_env=Param(int, 4, "environments"),
        n_walks=Param(int, 1024, "walks per environment"),
        martingale=Param(str, "corrector", "corrector or chi (d = 1)"),
        start=Param(str, "origin", "origin or uniform"),
        block_size=Param(int, 1024, "walks per task"),
        dump_paths=Param(int, 0, "record the paths of this many walks"),
    ),
    "spectral": dict(
        ENV_PARAMS,
        env=Param(str, None, "environment file, instead of d/L/dist"),
        field=Param(str, "drift", "drift, phi, v_mu or w_mu"),
        mu=Param(float, None, "regularization (needed by phi, v_mu, w_mu)"),
        t=Param(_float_list, None, "horizons of the exact remainder moments"),
        method=Param(str, "lapack", "eigensolver, lapack or tql"),
    ),
    "clt": dict(
        ENV_PARAMS,
        t=Param(_float_list, [16.0, 64.0, 256.0, 1024.0], "horizons"),
        n_env=Param(int, 64, "environments per horizon"),
        n_walks=Param(int, 4096, "walks per environment"),
        martingale=Param(str, "corrector", "corrector or chi (d = 1)"),
        q=Param(float, 0.0, "log exponent of the d = 2 rate"),
        block_size=Param(int, 1024, "walks per task"),
    ),
    "sigma": dict(
        ENV_PARAMS,
        mu=Param(_float_list, [1.0, 0.25, 0.0625, 0.015625], "regularizations"),
        n_env=Param(int, 16, "environments"),
        final_tol=Param(float, 0.05, "largest accepted final gap (d = 1)"),
    ),
    "decay": dict(
        ENV_PARAMS,
        mu=Param(float, 1e-3, "regularization"),
        t=Param(_float_list, [0, 1, 2, 4, 8, 16, 32, 64], "times"),
        field=Param(str, "v_mu", "decayed field, v_mu or v_1d (d = 1)"),
        n_env=Param(int, 20, "environments"),
    ),
    "boxvar": dict(
        ENV_PARAMS,
        mu=Param(float, 0.01, "regularization"),
        n=Param(_int_list, [0, 1, 2, 4], "box radii"),
        n_env=Param(int, 20, "environments"),
    ),
    "moments": dict(
        ENV_PARAMS,
        mu=Param(_float_list, [1.0, 0.1, 0.01], "regularizations"),
        p=Param(int, 4, "even moment order"),
        n_env=Param(int, 8, "environments"),
    ),
    "chi-tail": {
        "dist": ENV_PARAMS["dist"],
        "n": Param(_int_list, [100, 400, 1600], "chi lengths"),
        "eps": Param(float, 0.25, "exponent excess, in (0, 1/2)"),
        "n_paths": Param(int, 10000, "independent chi paths"),
    },
    "rate-fit": {
        "in": Param(str, None, "CSV file"),
        "x": Param(str, "t", "abscissa column"),
        "y": Param(str, "ks", "ordinate column"),
    },
}


class RunConfig(Base):
    """
    A fully resolved invocation.

    Attributes
    ----------
    command : str
        One of the rcclt commands.
    params : dict
        Command parameters; unknown keys are rejected.
    master_seed : int
        Seed of every random draw of the run.
    out_dir : str
        Output directory.
    threads : int
        Worker pool size.
    check : bool
        Whether failed acceptance checks make the run fail.
    """

    required_keys = ["command", "params", "master_seed", "out_dir"]

    type_definitions = {
        "command": str,
        "params": dict,
        "master_seed": int,
        "out_dir": str,
        "threads": int,
        "check": bool,
    }

    def __init__(
        self, command, params, master_seed=0, out_dir=".", threads=1, check=False
    ):
        self.command = command
        self.params = params
        self.master_seed = master_seed
        self.out_dir = out_dir
        self.threads = threads
        self.check = check
        self.validate()

    def validate(self):
        super().validate()
        if self.command not in COMMAND_PARAMS:
            raise ConfigurationError(
                f"unknown command {self.command!r}, expected one of "
                f"{sorted(COMMAND_PARAMS)}",
                field="command",
            )
        unknown = set(self.params) - set(COMMAND_PARAMS[self.command])
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigurationError(
                f"{key} is not a parameter of {self.command}", field=key
            )
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError(
                f"seed must be a 64-bit unsigned integer, got {self.master_seed}",
                field="master_seed",
            )
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")

    def resolved_params(self):
        """Parameters with defaults filled in and values converted."""
        table = COMMAND_PARAMS[self.command]
        return {
            name: param(name, self.params.get(name, param.default))
            for name, param in table.items()
        }


class Manifest(Base):
    """Record of a run, written to manifest.json."""

    required_keys = ["command", "params", "master_seed", "wall_time", "versions"]

    type_definitions = {
        "command": str,
        "params": dict,
        "master_seed": int,
        "wall_time": float,
        "versions": dict,
        "outputs": list,
        "results": dict,
    }

    def __init__(
        self,
        command,
        params,
        master_seed,
        wall_time,
        versions,
        outputs=None,
        results=None,
    ):
        self.command = command
        self.params = params
        self.master_seed = master_seed
        self.wall_time = wall_time
        self.versions = versions
        self.outputs = outputs
        self.results = results
        self.validate()


def module_versions():
    return {
        "rcclt": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def _read_input(read, path, field):
    """read(path); an unreadable file becomes a ConfigurationError."""
    try:
        return read(path)
    except RccltError:
        raise
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"cannot read {path}: {e}", field=field) from e


def _spec(params, seed):
    return EnvironmentSpec(
        params["d"], params["L"], Distribution.parse(params["dist"]), seed, params["M"]
    )


def _xi(params, d):
    return default_xi(d) if params["xi"] is None else params["xi"]


def _environment(params, cfg):
    if params.get("env"):
        return _read_input(Environment.read, params["env"], "env")
    return generate_environment(_spec(params, cfg.master_seed))


def _out(cfg, name):
    return os.path.join(cfg.out_dir, name)


def run_gen_env(params, cfg):
    env = generate_environment(_spec(params, cfg.master_seed))
    env.write(_out(cfg, "env.rcc"))
    results = {
        "n_edges": int(env.conductances.size),
        "min": float(env.conductances.min()),
        "max": float(env.conductances.max()),
    }
    return ["env.rcc", "env.rcc.json"], results, []


def run_solve_corrector(params, cfg):
    env = _environment(params, cfg)
    xi = _xi(params, env.d)
    corr = solve_corrector(env, params["mu"], xi, params["tol"], params["max_iter"])
    corr.export(_out(cfg, "corrector.csv"), _out(cfg, "corrector.json"))
    results = dict(corr.metadata(), sigma_mu_sq=sigma_mu_sq(env, corr))
    return ["corrector.csv", "corrector.json"], results, []


def run_simulate(params, cfg):
    spec = _spec(params, cfg.master_seed)
    xi = _xi(params, spec.d)
    parts = []
    sigma_frames = []
    results = {}
    outputs = ["samples.csv", "sigma.csv"]
    for t in params["t"]:
        mc = McConfig(
            params["n_env"], params["n_walks"], t, cfg.master_seed, params["mu"]
        )
        result = run_monte_carlo(
            mc,
            spec,
            xi,
            martingale=params["martingale"],
            start=params["start"],
            threads=cfg.threads,
            block_size=params["block_size"],
            tol=params["tol"],
            record_paths=params["dump_paths"],
        )
        parts.append(result.samples.to_frame())
        sigma_frames.append(result.sigma_frame().assign(t=t))
        results[f"t={t:g}"] = {
            "total_jumps": result.total_jumps,
            "jump_violations": result.jump_violations,
        }
        if params["dump_paths"]:
            name = f"paths_t{t:g}.csv"
            result.paths_frame().to_csv(
                _out(cfg, name), index=False, float_format="%.17g"
            )
            outputs.append(name)
    samples = pd.concat(parts, ignore_index=True)
    samples.to_csv(_out(cfg, "samples.csv"), index=False, float_format="%.17g")
    pd.concat(sigma_frames, ignore_index=True).to_csv(
        _out(cfg, "sigma.csv"), index=False, float_format="%.17g"
    )
    reports = []
    if cfg.check:
        # the single-environment oracle, on the environment keyed by the seed
        report = remainder_experiment(
            spec,
            params["t"],
            params["n_walks"],
            xi,
            threads=cfg.threads,
            block_size=params["block_size"],
            tol=params["tol"],
        )
        report.to_csv(_out(cfg, "remainder.csv"))
        outputs.append("remainder.csv")
        reports.append(report)
    return outputs, results, reports


def run_spectral(params, cfg):
    env = _environment(params, cfg)
    xi = _xi(params, env.d)
    field_name = params["field"]
    mu = params["mu"]
    if field_name == "drift":
        field = drift_field(env, xi)
    elif field_name in ("phi", "v_mu", "w_mu"):
        if mu is None:
            raise ConfigurationError(
                f"--mu is required for field {field_name}", field="mu"
            )
        corr = solve_corrector(env, mu, xi, params["tol"])
        field = {
            "phi": lambda: corr.phi,
            "v_mu": lambda: v_mu_field(env, corr),
            "w_mu": lambda: w_mu_field(env, corr),
        }[field_name]()
    else:
        raise ConfigurationError(
            f"field must be drift, phi, v_mu or w_mu, got {field_name!r}", field="field"
        )
    Q = build_generator(env, method=params["method"])
    sm = spectral_measure(Q, field)
    sm.to_csv(_out(cfg, "spectral.csv"))
    outputs = ["spectral.csv"]
    results = {
        "field": field_name,
        "total_mass": sm.total_mass(),
        "gap": spectral_gap(sm),
    }
    if params["t"]:
        if field_name != "drift":
            raise ConfigurationError("--t needs the drift field", field="t")
        rows = []
        for t in params["t"]:
            t_mu = mu if mu is not None else 1.0 / t
            boundary, integral = remainder_components_exact(sm, t_mu, t)
            rows.append(
                {
                    "t": t,
                    "mu": t_mu,
                    "r2_exact": boundary + integral,
                    "boundary_exact": boundary,
                    "integral_exact": integral,
                }
            )
        pd.DataFrame(rows).to_csv(
            _out(cfg, "remainder_exact.csv"), index=False, float_format="%.17g"
        )
        outputs.append("remainder_exact.csv")
    return outputs, results, []


def _report_outputs(report, cfg, name):
    report.to_csv(_out(cfg, name))
    return [name], report.summary(), [report]


def run_clt(params, cfg):
    spec = _spec(params, cfg.master_seed)
    report = clt_experiment(
        spec,
        params["t"],
        params["n_env"],
        params["n_walks"],
        xi=_xi(params, spec.d),
        martingale=params["martingale"],
        q=params["q"],
        threads=cfg.threads,
        block_size=params["block_size"],
        tol=params["tol"],
    )
    return _report_outputs(report, cfg, "clt.csv")


def run_sigma(params, cfg):
    spec = _spec(params, cfg.master_seed)
    report = sigma_convergence_experiment(
        spec,
        params["mu"],
        params["n_env"],
        _xi(params, spec.d),
        threads=cfg.threads,
        tol=params["tol"],
        final_tol=params["final_tol"],
    )
    return _report_outputs(report, cfg, "sigma.csv")


def run_decay(params, cfg):
    spec = _spec(params, cfg.master_seed)
    report = decay_experiment(
        spec,
        params["n_env"],
        params["mu"],
        params["t"],
        _xi(params, spec.d),
        threads=cfg.threads,
        tol=params["tol"],
        field=params["field"],
    )
    return _report_outputs(report, cfg, "decay.csv")


def run_boxvar(params, cfg):
    spec = _spec(params, cfg.master_seed)
    report = spatial_average_variance(
        spec,
        params["n_env"],
        params["mu"],
        params["n"],
        _xi(params, spec.d),
        threads=cfg.threads,
        tol=params["tol"],
    )
    return _report_outputs(report, cfg, "boxvar.csv")


def run_moments(params, cfg):
    spec = _spec(params, cfg.master_seed)
    report = phi_moment_experiment(
        spec,
        params["mu"],
        params["p"],
        params["n_env"],
        _xi(params, spec.d),
        threads=cfg.threads,
        tol=params["tol"],
    )
    return _report_outputs(report, cfg, "moments.csv")


def run_chi_tail(params, cfg):
    report = chi_tail_experiment(
        Distribution.parse(params["dist"]),
        params["n"],
        params["eps"],
        params["n_paths"],
        cfg.master_seed,
    )
    return _report_outputs(report, cfg, "chi_tail.csv")


def run_rate_fit(params, cfg):
    if not params["in"]:
        raise ConfigurationError("--in is required", field="in")
    frame = _read_input(pd.read_csv, params["in"], "in")
    for column in (params["x"], params["y"]):
        if column not in frame.columns:
            raise ConfigurationError(
                f"column {column!r} not in {params['in']}", field=column
            )
    fit = rate_fit(frame[[params["x"], params["y"]]].to_numpy())
    fit.to_file(_out(cfg, "rate_fit.json"))
    print(fit.to_json())
    return ["rate_fit.json"], fit.to_dict(), []


HANDLERS = {
    "gen-env": run_gen_env,
    "solve-corrector": run_solve_corrector,
    "simulate": run_simulate,
    "spectral": run_spectral,
    "clt": run_clt,
    "sigma": run_sigma,
    "decay": run_decay,
    "boxvar": run_boxvar,
    "moments": run_moments,
    "chi-tail": run_chi_tail,
    "rate-fit": run_rate_fit,
}


def dispatch(cfg):
    """
    Run one command and write its files and manifest.json.

    Parameters
    ----------
    cfg : RunConfig

    Returns
    -------
    int
        0 on success.

    Raises
    ------
    RccltError
        On failure; AcceptanceError when cfg.check is set and a check fails.
    """
    started = time.perf_counter()
    params = cfg.resolved_params()
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(
            f"cannot create output directory {cfg.out_dir}: {e}", field="out_dir"
        ) from e
    logger.info(f"Running {cfg.command} into {cfg.out_dir}")
    outputs, results, reports = HANDLERS[cfg.command](params, cfg)
    manifest = Manifest(
        cfg.command,
        _jsonable(dict(params, check=cfg.check)),
        cfg.master_seed,
        time.perf_counter() - started,
        module_versions(),
        outputs=outputs,
        results=_jsonable(results),
    )
    manifest.to_file(_out(cfg, "manifest.json"))
    if cfg.check:
        for report in reports:
            report.assert_checks()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rcclt",
        description="Quantitative CLT lab for the random conductance model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)
    for name, table in COMMAND_PARAMS.items():
        sub = commands.add_parser(name)
        sub.add_argument("--seed", type=int, default=None, help="master seed")
        sub.add_argument("--out", default=None, help="output directory (RCCLT_OUT)")
        sub.add_argument("--threads", type=int, default=None, help="(RCCLT_THREADS)")
        sub.add_argument("--check", action="store_true", help="fail on checks")
        sub.add_argument("--verbose", action="store_true", help="log progress")
        sub.add_argument("--config", default=None, help="RunConfig JSON file")
        for param_name, param in table.items():
            flag = "--" + param_name.replace("_", "-")
            sub.add_argument(flag, dest=param_name, default=None, help=param.help)
    return parser


def config_from_args(args):
    """Merge a --config file with the command-line flags (flags win)."""
    if args.config:
        cfg = _read_input(RunConfig.from_file, args.config, "config")
        if cfg.command != args.command:
            raise ConfigurationError(
                f"{args.config} configures {cfg.command}, not {args.command}",
                field="command",
            )
        params = dict(cfg.params)
        seed, out_dir, threads = cfg.master_seed, cfg.out_dir, cfg.threads
    else:
        params = {}
        seed = 0
        out_dir = os.environ.get("RCCLT_OUT", ".")
        threads = None
    for name in COMMAND_PARAMS[args.command]:
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    if args.seed is not None:
        seed = args.seed
    if args.out is not None:
        out_dir = args.out
    if args.threads is not None:
        threads = args.threads
    return RunConfig(
        args.command,
        params,
        seed,
        out_dir,
        resolve_threads(threads),
        bool(args.check),
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format=LOG_FORMAT
    )
    try:
        return dispatch(config_from_args(args))
    except RccltError as e:
        message = " ".join(str(e).split())
        print(
            f"rcclt: error={type(e).__name__} code={e.exit_code} message={message}",
            file=sys.stderr,
        )
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

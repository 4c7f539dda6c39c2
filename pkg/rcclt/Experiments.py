# -*- coding: utf-8 -*-
import logging
import math
import os

import numpy as np
import pandas as pd
import scipy.ndimage

from . import CounterRNG
from .Corrector import (
    chi_1d,
    default_xi,
    homogenized_sigma_sq_1d,
    sigma_mu_sq,
    solve_corrector,
    w_mu_field,
)
from .Environment import check_xi, drift_field, generate_environment
from .Exceptions import AcceptanceError, ConfigurationError, UsageError
from .Pool import parallel_map
from .SpectralExact import (
    MAX_DENSE_SITES,
    build_generator,
    remainder_components_exact,
    spectral_measure,
    variance_decay_curve,
)
from .Statistics import (
    estimate_V_J,
    jackknife,
    jackknife_mean,
    ks_distance,
    rate_fit,
    sample_groups,
    theorem_rate,
)
from .WalkSimulator import (
    DEFAULT_BLOCK_SIZE,
    McConfig,
    corrector_observables,
    run_monte_carlo,
    sample_environment,
)

logger = logging.getLogger(__name__)

# slack on the Berry-Esseen upper-bound check
KS_BOUND_SLACK = 1.5

# number of standard errors accepted by statistical checks
N_STDERR = 3.0

# successive ratio allowed by the phi-moment boundedness check
MOMENT_RATIO_SLACK = 3.0

# largest accepted log-log slope of v_hat against t in d >= 3
V_HAT_SLOPE_MAX = -0.5

# the same for the d = 1 harmonic coordinate, whose v_hat decays like t^(-1/2)
CHI_V_HAT_SLOPE_MAX = -0.25

# accepted distance of the j_hat slope from -1 for the harmonic coordinate
J_HAT_SLOPE_TOL = 0.25

# slope bands of the variance decay fit, by decayed field
DECAY_SLOPE_BANDS = {"v_mu": (-1.0, -0.3), "v_1d": (-0.8, -0.3)}

DEFAULT_CHI_PATHS = 10000


class ExperimentReport:
    """
    Rows of an experiment, one per grid point, with a log-log fit and the
    acceptance checks evaluated on them.

    Attributes
    ----------
    name : str
        Experiment name, also the default CSV stem.
    frame : pandas.DataFrame
        The rows, sorted along the grid.
    fit : RateFit or None
        Fitted log-log rate.
    checks : list of dict
        Each with keys name, passed, detail.
    meta : dict
        Scalars reported alongside the rows (spectral knee, exact values).
    """

    def __init__(self, name, frame, fit=None, meta=None):
        self.name = name
        self.frame = frame
        self.fit = fit
        self.checks = []
        self.meta = meta or {}

    @property
    def rows(self):
        return self.frame.to_dict("records")

    def __len__(self):
        return len(self.frame)

    def add_check(self, name, passed, detail=""):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})
        if not passed:
            logger.warning(f"Check {name} failed: {detail}")

    def failed_checks(self):
        return [c for c in self.checks if not c["passed"]]

    def assert_checks(self):
        """Raise AcceptanceError on the first failed check."""
        failed = self.failed_checks()
        if failed:
            check = failed[0]
            raise AcceptanceError(
                f"{self.name}: check {check['name']} failed: {check['detail']}",
                check=check["name"],
            )

    def summary(self):
        """Fit, checks and meta, for the run manifest."""
        return {
            "experiment": self.name,
            "fit": self.fit.to_dict() if self.fit is not None else None,
            "checks": self.checks,
            "meta": self.meta,
        }

    def to_csv(self, path):
        out_dir = os.path.dirname(path)
        if out_dir and not os.path.exists(out_dir):
            os.makedirs(out_dir, exist_ok=True)
        self.frame.to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Saved {self.name} report to: {path}")


def check_t_grid(t_grid, min_points=4):
    """
    Validate a horizon grid: at least min_points strictly increasing
    positive values with a constant ratio.
    """
    t = np.asarray(sorted(float(v) for v in t_grid))
    if len(t) < min_points:
        raise ConfigurationError(
            f"the horizon grid needs at least {min_points} values, got {len(t)}",
            field="t",
        )
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ConfigurationError("horizons must be distinct and > 0", field="t")
    ratios = t[1:] / t[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ConfigurationError("the horizon grid must be geometric", field="t")
    return t


def _fit_rows(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if np.sum(keep) < 2 or len(np.unique(x[keep])) < 2:
        logger.warning("Fewer than two positive points, no rate fitted")
        return None
    return rate_fit(np.column_stack([x[keep], y[keep]]))


def _remainder_exact(env, mu, t, xi):
    """(r2, boundary, integral) from the spectral measure of the drift, or nans."""
    if env.n_sites > MAX_DENSE_SITES:
        return math.nan, math.nan, math.nan
    sm = spectral_measure(build_generator(env), drift_field(env, xi))
    boundary, integral = remainder_components_exact(sm, mu, t)
    return boundary + integral, boundary, integral


def _mean_columns(prefix, values, groups):
    mean, stderr = jackknife_mean(values, groups)
    return {prefix: mean, f"{prefix}_stderr": stderr}


def clt_row(spec, result, xi, q=0.0):
    """
    The report row of one horizon: KS distance of xi.X_t / (sigma sqrt t),
    Hall-Heyde estimates and the remainder diagnostics.
    """
    samples = result.samples
    t = samples.t
    cfg = result.config
    groups = sample_groups(samples)
    ks_groups = sample_groups(samples, contiguous=True)

    sigma_sq, sigma_sq_err = jackknife_mean(result.sigma_sq)
    sigma = math.sqrt(sigma_sq)
    scale = math.sqrt(sigma_sq * t)
    ks, ks_err = jackknife(ks_distance, samples.xdotxi / scale, ks_groups)
    ks_mart, ks_mart_err = jackknife(ks_distance, samples.m / scale, ks_groups)
    vj = estimate_V_J(samples, t, sigma_sq, groups)
    psi = theorem_rate(spec.d, t, q)
    per_sample_sigma = np.repeat(result.sigma_sq, cfg.n_walks)

    r2_exact = math.nan
    if result.martingale == "corrector" and cfg.n_env == 1:
        env = generate_environment(spec.with_seed(result.env_seeds[0]))
        r2_exact, _, _ = _remainder_exact(env, cfg.effective_mu, t, xi)

    row = {
        "t": t,
        "mu": samples.mu,
        "ks": ks,
        "ks_stderr": ks_err,
        "v_hat": vj.v_hat,
        "v_hat_stderr": vj.v_hat_stderr,
        "j_hat": vj.j_hat,
        "j_hat_stderr": vj.j_hat_stderr,
        "hh_raw": vj.hh_raw,
        "sigma_mu": sigma,
        "sigma_mu_stderr": sigma_sq_err / (2.0 * sigma),
        "n_samples": len(samples),
        "n_env": cfg.n_env,
        "ks_mart": ks_mart,
        "ks_mart_stderr": ks_mart_err,
    }
    row.update(_mean_columns("r2_mean", samples.r**2, groups))
    row["r2_exact"] = r2_exact
    row["psi"] = psi
    row.update(
        _mean_columns("tail_r", np.abs(samples.r) > psi * math.sqrt(t), groups)
    )
    row.update(_mean_columns("msd", samples.xdotxi**2 / t, groups))
    row.update(
        _mean_columns(
            "qv_fluctuation", (samples.qv / t - per_sample_sigma) ** 2, groups
        )
    )
    row.update(_mean_columns("m_mean", samples.m, groups))
    row.update(_mean_columns("ito_gap", samples.m**2 - samples.qv, groups))
    row["jump_violations"] = result.jump_violations
    row["total_jumps"] = result.total_jumps
    return row


def _check_martingale(report, frame):
    for _, row in frame.iterrows():
        t = row["t"]
        report.add_check(
            f"martingale_mean@t={t:g}",
            abs(row["m_mean"]) <= N_STDERR * row["m_mean_stderr"],
            f"mean(m)={row['m_mean']:.4g}, stderr={row['m_mean_stderr']:.4g}",
        )
        report.add_check(
            f"ito_isometry@t={t:g}",
            abs(row["ito_gap"]) <= N_STDERR * row["ito_gap_stderr"],
            f"mean(m^2 - qv)={row['ito_gap']:.4g}, "
            f"stderr={row['ito_gap_stderr']:.4g}",
        )
    violations = int(frame["jump_violations"].sum())
    report.add_check(
        "jump_domination",
        violations == 0,
        f"{violations} of {int(frame['total_jumps'].sum())} jumps exceed d_mu",
    )


def clt_experiment(
    spec,
    t_grid,
    n_env,
    n_walks,
    master_seed=None,
    xi=None,
    martingale="corrector",
    q=0.0,
    threads=1,
    block_size=DEFAULT_BLOCK_SIZE,
    tol=1e-10,
):
    """
    Kolmogorov distance of the normalized displacement against the
    Berry-Esseen rate, one row per horizon.

    For every horizon t the regularization is mu = 1/t, correctors are
    solved afresh, and the displacement is normalized by the environment
    average of sigma_mu^2. Walks start at a uniform torus site.

    Parameters
    ----------
    spec : EnvironmentSpec
        Environment family.
    t_grid : sequence of float
        At least four geometrically spaced horizons.
    n_env, n_walks : int
        Environments per horizon and walks per environment.
    master_seed : int
        Master seed, default spec.seed.
    xi : array of float
        Direction, default e_1.
    martingale : "corrector" or "chi"
        Decomposition used (chi in d = 1 only).
    q : float
        Logarithmic exponent of the d = 2 rate.
    threads : int
        Worker count.

    Returns
    -------
    ExperimentReport
    """
    t_grid = check_t_grid(t_grid)
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    master_seed = spec.seed if master_seed is None else master_seed
    start = "uniform" if martingale == "corrector" else "origin"
    rows = []
    for t in t_grid:
        cfg = McConfig(n_env, n_walks, float(t), master_seed)
        result = run_monte_carlo(
            cfg,
            spec,
            xi,
            martingale=martingale,
            start=start,
            threads=threads,
            block_size=block_size,
            tol=tol,
        )
        rows.append(clt_row(spec, result, xi, q))
        logger.info(f"clt t={t:g}: ks={rows[-1]['ks']:.4g}")
    frame = pd.DataFrame(rows)
    fit = _fit_rows(frame["t"], frame["ks"])
    rate_slope = rate_fit(np.column_stack([t_grid, theorem_rate(spec.d, t_grid, q)]))
    meta = {"rate_slope": rate_slope.slope}
    if fit is not None:
        meta["residual_slope"] = fit.slope - rate_slope.slope
    report = ExperimentReport("clt", frame, fit, meta)

    t0, ks0 = frame["t"].iloc[0], frame["ks"].iloc[0]
    psi0 = theorem_rate(spec.d, t0, q)
    for _, row in frame.iloc[1:].iterrows():
        limit = KS_BOUND_SLACK * ks0 * theorem_rate(spec.d, row["t"], q) / psi0
        report.add_check(
            f"ks_bound@t={row['t']:g}",
            row["ks"] <= limit,
            f"ks={row['ks']:.4g}, bound={limit:.4g}",
        )
    if spec.d == 1 and fit is not None:
        report.add_check(
            "ks_slope",
            fit.slope <= -0.1,
            f"fitted slope {fit.slope:.4g}, required <= -0.1",
        )
    _check_fluctuation_rates(report, spec, frame, martingale)
    _check_martingale(report, frame)
    return report


def _check_fluctuation_rates(report, spec, frame, martingale):
    """
    Fit v_hat and j_hat against t and check their decay where it is known:
    v_hat like log(t)/t for d >= 3; for the d = 1 harmonic coordinate v_hat
    like t^(-1/2) and j_hat like 1/t.
    """
    for column in ("v_hat", "j_hat"):
        fit = _fit_rows(frame["t"], frame[column])
        report.meta[f"{column}_fit"] = fit.to_dict() if fit is not None else None
        report.meta[f"{column}_slope"] = fit.slope if fit is not None else None
    v_slope = report.meta["v_hat_slope"]
    j_slope = report.meta["j_hat_slope"]
    if spec.d >= 3 and v_slope is not None:
        report.add_check(
            "v_hat_slope",
            v_slope <= V_HAT_SLOPE_MAX,
            f"fitted slope {v_slope:.4g}, required <= {V_HAT_SLOPE_MAX:g}",
        )
    if martingale == "chi":
        if v_slope is not None:
            report.add_check(
                "v_hat_slope",
                v_slope <= CHI_V_HAT_SLOPE_MAX,
                f"fitted slope {v_slope:.4g}, required <= {CHI_V_HAT_SLOPE_MAX:g}",
            )
        if j_slope is not None:
            report.add_check(
                "j_hat_slope",
                abs(j_slope + 1.0) <= J_HAT_SLOPE_TOL,
                f"fitted slope {j_slope:.4g}, expected -1 +/- {J_HAT_SLOPE_TOL:g}",
            )


def remainder_experiment(
    spec,
    t_grid,
    n_walks,
    xi=None,
    threads=1,
    block_size=DEFAULT_BLOCK_SIZE,
    tol=1e-10,
):
    """
    Monte Carlo mean of R_mu(t)^2 against its spectral value on the single
    environment of spec, with mu = 1/t and walks started uniformly on the
    torus. Both orthogonal pieces of the remainder are compared too.
    """
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    env = generate_environment(spec)
    if env.n_sites > MAX_DENSE_SITES:
        raise UsageError(
            f"the remainder oracle needs a torus of at most {MAX_DENSE_SITES} sites"
        )
    sm = spectral_measure(build_generator(env), drift_field(env, xi))
    rows = []
    for t in sorted(float(v) for v in t_grid):
        if not t > 0:
            raise ConfigurationError(f"horizons must be > 0, got {t}", field="t")
        mu = 1.0 / t
        corr = solve_corrector(env, mu, xi, tol=tol)
        samples = sample_environment(
            env,
            corrector_observables(env, corr),
            t,
            spec.seed,
            n_walks,
            start="uniform",
            threads=threads,
            block_size=block_size,
        )
        boundary_exact, integral_exact = remainder_components_exact(sm, mu, t)
        row = {"t": t, "mu": mu}
        row.update(_mean_columns("r2_mean", samples.r**2, None))
        row["r2_exact"] = boundary_exact + integral_exact
        row["z_score"] = (row["r2_mean"] - row["r2_exact"]) / row["r2_mean_stderr"]
        row.update(_mean_columns("boundary_sq", samples.boundary**2, None))
        row["boundary_exact"] = boundary_exact
        row.update(_mean_columns("integral_sq", samples.integral**2, None))
        row["integral_exact"] = integral_exact
        row.update(_mean_columns("m_mean", samples.m, None))
        row.update(_mean_columns("ito_gap", samples.m**2 - samples.qv, None))
        row["jump_violations"] = int(np.sum(samples.violations))
        row["total_jumps"] = int(np.sum(samples.jumps))
        row["n_samples"] = len(samples)
        rows.append(row)
        logger.info(
            f"remainder t={t:g}: mc={row['r2_mean']:.5g} "
            f"exact={row['r2_exact']:.5g} z={row['z_score']:.2f}"
        )
    frame = pd.DataFrame(rows)
    report = ExperimentReport("remainder", frame, meta={"env_seed": spec.seed})
    for _, row in frame.iterrows():
        report.add_check(
            f"remainder_oracle@t={row['t']:g}",
            abs(row["z_score"]) <= N_STDERR,
            f"mean r^2={row['r2_mean']:.5g}, exact={row['r2_exact']:.5g}, "
            f"z={row['z_score']:.2f}",
        )
    _check_martingale(report, frame)
    return report


def _env_seeds(spec, n_env):
    if n_env < 1:
        raise ConfigurationError(f"n_env must be >= 1, got {n_env}", field="n_env")
    return [CounterRNG.derive_seed(spec.seed, k) for k in range(n_env)]


def _check_mu_grid(mu_grid):
    mu = np.asarray(sorted((float(v) for v in mu_grid), reverse=True))
    if len(mu) == 0 or np.any(mu <= 0) or np.any(np.diff(mu) >= 0):
        raise ConfigurationError("mu grid must hold distinct values > 0", field="mu")
    return mu


def _exact_sigma_sq(spec, xi):
    dist = spec.distribution
    if dist.kind == "constant":
        return 2.0 * dist.c * float(np.sum(xi**2))
    if spec.d == 1:
        return homogenized_sigma_sq_1d(dist) * float(xi[0] ** 2)
    return math.nan


def sigma_convergence_experiment(
    spec, mu_grid, n_env=1, xi=None, threads=1, tol=1e-10, final_tol=0.05
):
    """
    sigma_mu^2 averaged over environments along a decreasing mu grid. The
    same environments are used for every mu. In d = 1 (and for constant
    conductances) the exact limit is reported with the gap to it.
    """
    mu_grid = _check_mu_grid(mu_grid)
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    seeds = _env_seeds(spec, n_env)

    def per_env(seed):
        env = generate_environment(spec.with_seed(seed))
        return [
            sigma_mu_sq(env, solve_corrector(env, mu, xi, tol=tol)) for mu in mu_grid
        ]

    values = np.array(parallel_map(per_env, seeds, threads))
    exact = _exact_sigma_sq(spec, xi)
    rows = []
    for j, mu in enumerate(mu_grid):
        mean, stderr = jackknife_mean(values[:, j])
        rows.append(
            {
                "mu": mu,
                "sigma_mu_sq": mean,
                "stderr": stderr,
                "n_env": n_env,
                "sigma_sq_exact": exact,
                "gap": abs(mean - exact),
            }
        )
    frame = pd.DataFrame(rows)
    report = ExperimentReport("sigma", frame, meta={"sigma_sq_exact": exact})
    gaps = frame["gap"].to_numpy()

    if spec.distribution.kind == "constant":
        report.add_check(
            "sigma_constant",
            np.all(gaps <= 1e-10 * exact),
            f"largest gap {gaps.max():.3g} to 2c|xi|^2 = {exact:g}",
        )
    elif spec.d == 1:
        report.add_check(
            "sigma_gap_decreasing",
            np.all(np.diff(gaps) < 0),
            f"gaps {np.array2string(gaps, precision=4)}",
        )
        report.add_check(
            "sigma_final_gap",
            gaps[-1] <= final_tol,
            f"final gap {gaps[-1]:.4g}, tolerance {final_tol:g}",
        )
    elif len(mu_grid) >= 3:
        # successive differences over the same environments
        diffs = np.diff(values, axis=1)
        for j in range(1, diffs.shape[1]):
            prev = abs(diffs[:, j - 1].mean())
            cur, cur_err = jackknife_mean(diffs[:, j])
            cur_err = 0.0 if math.isnan(cur_err) else cur_err
            report.add_check(
                f"sigma_increments_decreasing@mu={mu_grid[j + 1]:g}",
                abs(cur) <= prev + N_STDERR * cur_err,
                f"|increment| {abs(cur):.4g} after {prev:.4g}",
            )
    return report


def _slope_band(d):
    if d == 2:
        return (-1.6, -0.6)
    if d >= 3:
        return (0.4 - d, 1.6 - d)
    return None


def spatial_average_variance(
    spec, n_env, mu, n_grid, xi=None, threads=1, tol=1e-10
):
    """
    Ensemble mean square of the box averages of w_mu - E[w_mu] over the
    boxes {-n..n}^d, averaged over all box centers of each torus.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 0:
        raise ConfigurationError("box radii must be >= 0", field="n")
    if 2 * n_grid[-1] + 1 > spec.L:
        raise UsageError(
            f"box radius {n_grid[-1]} does not fit in a torus of side {spec.L}"
        )
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    seeds = _env_seeds(spec, n_env)
    shape = (spec.L,) * spec.d

    def per_env(seed):
        env = generate_environment(spec.with_seed(seed))
        corr = solve_corrector(env, mu, xi, tol=tol)
        return w_mu_field(env, corr).values.reshape(shape)

    fields = parallel_map(per_env, seeds, threads)
    ensemble_mean = float(np.mean([f.mean() for f in fields]))
    values = np.empty((n_env, len(n_grid)))
    for k, field in enumerate(fields):
        centered = field - ensemble_mean
        for j, n in enumerate(n_grid):
            box = scipy.ndimage.uniform_filter(centered, size=2 * n + 1, mode="wrap")
            values[k, j] = np.mean(box**2)
    rows = []
    for j, n in enumerate(n_grid):
        mean, stderr = jackknife_mean(values[:, j])
        rows.append(
            {
                "n": n,
                "box_variance": mean,
                "stderr": stderr,
                "box_sites": (2 * n + 1) ** spec.d,
                "n_env": n_env,
                "mu": float(mu),
            }
        )
    frame = pd.DataFrame(rows)
    fit = _fit_rows(frame["n"], frame["box_variance"])
    report = ExperimentReport(
        "boxvar", frame, fit, meta={"ensemble_mean_w": ensemble_mean}
    )
    band = _slope_band(spec.d)
    if band is not None and fit is not None:
        report.add_check(
            "boxvar_slope",
            band[0] <= fit.slope <= band[1],
            f"fitted slope {fit.slope:.4g}, band [{band[0]:g}, {band[1]:g}]",
        )
    return report


def phi_moment_experiment(
    spec, mu_grid, p=4, n_env=1, xi=None, threads=1, tol=1e-10
):
    """
    Ensemble-and-space average of phi_mu^p along a decreasing mu grid.
    """
    if isinstance(p, bool) or not isinstance(p, int) or p < 2 or p % 2:
        raise ConfigurationError(f"p must be an even integer >= 2, got {p}", field="p")
    mu_grid = _check_mu_grid(mu_grid)
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    seeds = _env_seeds(spec, n_env)

    def per_env(seed):
        env = generate_environment(spec.with_seed(seed))
        return [
            float(np.mean(solve_corrector(env, mu, xi, tol=tol).values ** p))
            for mu in mu_grid
        ]

    values = np.array(parallel_map(per_env, seeds, threads))
    rows = []
    for j, mu in enumerate(mu_grid):
        mean, stderr = jackknife_mean(values[:, j])
        rows.append(
            {"mu": mu, "moment": mean, "stderr": stderr, "n_env": n_env, "p": p}
        )
    frame = pd.DataFrame(rows)
    report = ExperimentReport("moments", frame)
    if spec.d >= 3:
        moments = frame["moment"].to_numpy()
        for j in range(1, len(moments)):
            if moments[j - 1] > 0:
                ratio = moments[j] / moments[j - 1]
                report.add_check(
                    f"moment_ratio@mu={mu_grid[j]:g}",
                    ratio <= MOMENT_RATIO_SLACK,
                    f"ratio {ratio:.4g}, limit {MOMENT_RATIO_SLACK:g}",
                )
    return report


def hoeffding_bound(dist, n, eps):
    """2 exp(-2 n^(2 eps) / c^2) with c the range of the chi increments."""
    if dist.kind == "constant":
        return 0.0
    # increments inv_mean / omega - 1 range over an interval of this width
    width = dist.inverse_mean() * (1.0 - 1.0 / dist.ceiling)
    if width == 0:
        return 0.0
    return float(min(1.0, 2.0 * math.exp(-2.0 * n ** (2.0 * eps) / width**2)))


def chi_tail_experiment(dist, n_grid, eps, n_paths=DEFAULT_CHI_PATHS, seed=0):
    """
    Empirical P[|chi(n)| >= n^(1/2 + eps)] over independent chi paths, each
    built by chi_1d from its own stream of i.i.d. conductances.
    """
    if not 0 < eps < 0.5:
        raise ConfigurationError(f"eps must lie in (0, 1/2), got {eps}", field="eps")
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 1:
        raise ConfigurationError("chi lengths must be >= 1", field="n")
    if n_paths < 1:
        raise ConfigurationError(
            f"n_paths must be >= 1, got {n_paths}", field="n_paths"
        )
    n_max = n_grid[-1]
    inv_mean = dist.inverse_mean()
    steps = np.arange(n_max)
    logger.info(f"chi tail: {n_paths} paths of length {n_max}")
    at_grid = np.empty((n_paths, len(n_grid)))
    for path in range(n_paths):
        u = CounterRNG.uniforms(seed, steps, path, CounterRNG.FAMILY_CHI)
        chi = chi_1d(dist.sample(u), inv_mean)
        at_grid[path] = chi.chi[n_grid]
    rows = []
    for j, n in enumerate(n_grid):
        threshold = n ** (0.5 + eps)
        hits = np.abs(at_grid[:, j]) >= threshold
        freq, stderr = jackknife_mean(hits)
        rows.append(
            {
                "n": n,
                "threshold": threshold,
                "frequency": freq,
                "stderr": 0.0 if math.isnan(stderr) else stderr,
                "hoeffding": hoeffding_bound(dist, n, eps),
                "n_paths": n_paths,
            }
        )
    frame = pd.DataFrame(rows)
    report = ExperimentReport("chi-tail", frame, meta={"eps": eps, "seed": seed})
    for _, row in frame.iterrows():
        report.add_check(
            f"chi_tail_hoeffding@n={row['n']:g}",
            row["frequency"] <= row["hoeffding"] + N_STDERR * row["stderr"],
            f"frequency {row['frequency']:.4g}, bound {row['hoeffding']:.4g}",
        )
    freq = frame["frequency"].to_numpy()
    err = frame["stderr"].to_numpy()
    for j in range(1, len(freq)):
        slack = N_STDERR * math.hypot(err[j - 1], err[j])
        report.add_check(
            f"chi_tail_monotone@n={n_grid[j]}",
            freq[j] <= freq[j - 1] + slack,
            f"frequency {freq[j - 1]:.4g} then {freq[j]:.4g}",
        )
    return report


def decay_experiment(
    spec, n_env, mu, t_grid, xi=None, threads=1, tol=1e-10, field="v_mu"
):
    """
    Variance decay of v_mu (or, with field="v_1d" in d = 1, of the quadratic
    variation density of the harmonic coordinate) along the heat semigroup,
    with the spectral-gap knee t* = 1 / (2 gap). The polynomial rate is
    fitted on t <= t* only, where a finite torus has not yet entered its
    exponential regime. The slope is checked in d = 2 and for v_1d.
    """
    curve = variance_decay_curve(
        spec, n_env, mu, t_grid, xi, tol=tol, threads=threads, field=field
    )
    frame = curve.frame
    knee = curve.knee
    window = frame[(frame["t"] > 0) & (frame["t"] <= knee)]
    if len(window) < 2:
        logger.warning(
            f"Only {len(window)} horizons before the knee t*={knee:.4g}; "
            f"fitting on all positive horizons"
        )
        window = frame[frame["t"] > 0]
    fit = _fit_rows(window["t"], window["var_hat"])
    meta = {
        "knee": knee,
        "gap_min": float(np.min(curve.gaps)),
        "fit_window": [float(window["t"].min()), float(window["t"].max())]
        if len(window)
        else [],
    }
    report = ExperimentReport("decay", frame, fit, meta)
    report.add_check(
        "decay_monotone",
        bool(np.all(curve.monotone)),
        f"{int(np.sum(~curve.monotone))} of {n_env} curves not monotone",
    )
    band = DECAY_SLOPE_BANDS[field]
    if (spec.d == 2 or field == "v_1d") and fit is not None:
        report.add_check(
            "decay_slope",
            band[0] <= fit.slope <= band[1],
            f"fitted slope {fit.slope:.4g}, band [{band[0]:g}, {band[1]:g}]",
        )
    return report

# -*- coding: utf-8 -*-
"""
Continuous-time random walk among conductances and the martingale
decomposition accumulated along its trajectories.

Walks of a block advance in lockstep: step k of walk w draws one Philox
block (counter k, stream w) keyed by the environment seed, its two uniforms
giving the holding time and the direction. A walk's path therefore depends
only on (environment seed, walk index), never on how walks are grouped into
blocks or scheduled on threads.
"""

import logging
import math

import numpy as np
import pandas as pd

from . import CounterRNG
from .Base import Base
from .Corrector import (
    chi_increment_bound,
    chi_on_segment,
    d_mu_field,
    default_xi,
    homogenized_sigma_sq_1d,
    jump_increments,
    sigma_mu_sq,
    solve_corrector,
    v_1d_field,
    v_mu_field,
)
from .Environment import (
    LineEnvironment,
    check_xi,
    directions,
    generate_environment,
    site_coords,
)
from .Exceptions import (
    ConfigurationError,
    ConvergenceError,
    SegmentRangeError,
    UsageError,
)
from .Pool import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1024

# relative slack of the jump domination check
JUMP_BOUND_SLACK = 1e-12

# chi segments are doubled at most this many times before giving up
MAX_SEGMENT_RETRIES = 6

START_MODES = ("origin", "uniform")

SAMPLE_COLUMNS = [
    "env_seed",
    "walk_index",
    "t",
    "mu",
    "xdotxi",
    "m",
    "r",
    "qv",
    "j4",
    "jumps",
]


class McConfig(Base):
    """
    Monte Carlo configuration.

    Attributes
    ----------
    n_env : int
        Number of environments.
    n_walks : int
        Walks per environment.
    t : float
        Horizon.
    master_seed : int
        Seed every environment seed is derived from.
    mu : float
        Regularization, default 1/t.
    """

    required_keys = ["n_env", "n_walks", "t", "master_seed"]

    type_definitions = {
        "n_env": int,
        "n_walks": int,
        "t": [float, int],
        "master_seed": int,
        "mu": [float, int],
    }

    def __init__(self, n_env, n_walks, t, master_seed=0, mu=None):
        self.n_env = n_env
        self.n_walks = n_walks
        self.t = t
        self.master_seed = master_seed
        self.mu = mu
        self.validate()

    def validate(self):
        super().validate()
        if self.n_env < 1 or self.n_walks < 1:
            raise ConfigurationError(
                f"n_env and n_walks must be positive, got {self.n_env}, "
                f"{self.n_walks}",
                field="n_env" if self.n_env < 1 else "n_walks",
            )
        if not math.isfinite(self.t) or self.t < 0:
            raise ConfigurationError(f"t must be >= 0, got {self.t}", field="t")
        if self.mu is not None and not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigurationError(f"mu must be > 0, got {self.mu}", field="mu")
        if self.mu is None and self.t == 0:
            raise ConfigurationError("mu must be given when t = 0", field="mu")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError(
                f"master_seed must be a 64-bit unsigned integer, "
                f"got {self.master_seed}",
                field="master_seed",
            )

    @property
    def effective_mu(self):
        """mu, or 1/t when mu is unset."""
        return float(self.mu) if self.mu is not None else 1.0 / self.t


class WalkStream:
    """
    The random stream of one walk: environment seed, walk index and the
    torus site the walk starts from (the origin by default).
    """

    def __init__(self, seed, walk_index=0, start=None):
        self.seed = int(seed)
        self.walk_index = int(walk_index)
        self.start = start


class Trajectory:
    """
    A walk path up to its horizon.

    Attributes
    ----------
    jump_times : numpy.ndarray
        Increasing jump instants, all <= horizon.
    sites : numpy.ndarray
        Unwrapped displacements Y_0 = 0, Y_1, ..., shape (jumps + 1, d).
    holds : numpy.ndarray
        Holding durations at each visited site, the last one running up
        to the horizon; they add up to the horizon.
    horizon : float
    start : numpy.ndarray
        Site the walk started from; the walk visits start + Y_n.
    """

    def __init__(self, jump_times, sites, holds, horizon, start=None):
        self.jump_times = np.asarray(jump_times, dtype=np.float64)
        self.sites = np.asarray(sites, dtype=np.int64)
        self.holds = np.asarray(holds, dtype=np.float64)
        self.horizon = float(horizon)
        d = self.sites.shape[1]
        self.start = (
            np.zeros(d, dtype=np.int64)
            if start is None
            else np.asarray(start, dtype=np.int64)
        )

    @property
    def jumps(self):
        return len(self.jump_times)

    def to_frame(self, walk_index=0):
        """One row per visited site: walk_index, jump_index, time, x1..xd."""
        frame = pd.DataFrame(
            {
                "walk_index": walk_index,
                "jump_index": np.arange(len(self.sites)),
                "time": np.concatenate([[0.0], self.jump_times]),
            }
        )
        for i in range(self.sites.shape[1]):
            frame[f"x{i + 1}"] = self.start[i] + self.sites[:, i]
        return frame


class WalkObservables:
    """
    Per-site tables read by the accumulation at every holding interval and
    every jump.

    Attributes
    ----------
    potential : numpy.ndarray
        phi_mu (or chi) per site; its increment is the boundary piece.
    integrand : numpy.ndarray
        Function integrated along the path and scaled by mu (phi_mu, or 0
        for the chi decomposition).
    qv_density : numpy.ndarray
        Quadratic variation density (v_mu or v).
    jump_table : numpy.ndarray
        Martingale increment per site and direction, shape (n_sites, 2d).
    bound : numpy.ndarray
        Jump-dominating function per site.
    mu : float
    xi : numpy.ndarray
    """

    def __init__(self, potential, integrand, qv_density, jump_table, bound, mu, xi):
        self.potential = potential
        self.integrand = integrand
        self.qv_density = qv_density
        self.jump_table = jump_table
        self.bound = bound
        self.mu = float(mu)
        self.xi = np.asarray(xi, dtype=np.float64)


def corrector_observables(env, corr):
    """Tables of the torus decomposition xi.X_t = M_mu(t) + R_mu(t)."""
    jump_table, _ = jump_increments(env, corr)
    return WalkObservables(
        potential=corr.values,
        integrand=corr.values,
        qv_density=v_mu_field(env, corr).values,
        jump_table=jump_table,
        bound=d_mu_field(env, corr).values,
        mu=corr.mu,
        xi=corr.xi,
    )


def chi_observables(line_env, chi):
    """Tables of the decomposition X_t = (X_t + chi(X_t)) - chi(X_t) on a segment."""
    n = line_env.n_sites
    if len(chi) != n:
        raise UsageError(f"chi has {len(chi)} sites, segment has {n}")
    values = chi.chi
    jump_table = np.full((n, 2), np.nan)
    jump_table[:-1, 0] = 1.0 + values[1:] - values[:-1]
    jump_table[1:, 1] = -1.0 + values[:-1] - values[1:]
    bound = np.full(n, 1.0 + chi_increment_bound(chi.inv_mean, line_env.M))
    return WalkObservables(
        potential=values,
        integrand=np.zeros(n),
        qv_density=v_1d_field(line_env, chi.inv_mean),
        jump_table=jump_table,
        bound=bound,
        mu=0.0,
        xi=np.ones(1),
    )


def _null_observables(env):
    n = env.n_sites
    return WalkObservables(
        potential=np.zeros(n),
        integrand=np.zeros(n),
        qv_density=np.zeros(n),
        jump_table=np.zeros((n, 2 * env.d)),
        bound=np.ones(n),
        mu=0.0,
        xi=default_xi(env.d),
    )


class MartingaleSample:
    """
    Terminal statistics of one trajectory.

    Attributes
    ----------
    xdotxi : float
        xi . X_t on the unwrapped lattice.
    m : float
        M_mu(t).
    r : float
        R_mu(t) = xdotxi - m.
    qv : float
        <M_mu>_t.
    j4 : float
        Sum of the fourth powers of the martingale jumps.
    jumps : int
    boundary : float
        phi_mu(omega(t)) - phi_mu(omega(0)).
    integral : float
        mu * int_0^t phi_mu(omega(s)) ds, so that r = integral - boundary.
    violations : int
        Jumps exceeding the jump-dominating function at their departure site.
    """

    FIELDS = [
        "xdotxi",
        "m",
        "r",
        "qv",
        "j4",
        "jumps",
        "boundary",
        "integral",
        "violations",
    ]

    COUNTS = ("jumps", "violations")

    def __init__(self, xdotxi, m, r, qv, j4, jumps, boundary, integral, violations=0):
        self.xdotxi = float(xdotxi)
        self.m = float(m)
        self.r = float(r)
        self.qv = float(qv)
        self.j4 = float(j4)
        self.jumps = int(jumps)
        self.boundary = float(boundary)
        self.integral = float(integral)
        self.violations = int(violations)

    def __eq__(self, other):
        return isinstance(other, MartingaleSample) and all(
            getattr(self, f) == getattr(other, f) for f in self.FIELDS
        )

    def __repr__(self):
        values = ", ".join(f"{f}={getattr(self, f)!r}" for f in self.FIELDS)
        return f"MartingaleSample({values})"


class MartingaleSamples:
    """
    Column store of many samples, in (environment, walk) order. Columns
    are reachable as attributes (samples.m, samples.qv ...).
    """

    def __init__(self, columns, env_seed, walk_index, t, mu):
        self.columns = {}
        for f in MartingaleSample.FIELDS:
            dtype = np.int64 if f in MartingaleSample.COUNTS else np.float64
            self.columns[f] = np.asarray(columns[f], dtype=dtype)
        self.env_seed = np.asarray(env_seed, dtype=np.uint64)
        self.walk_index = np.asarray(walk_index, dtype=np.int64)
        self.t = float(t)
        self.mu = float(mu)

    def __len__(self):
        return len(self.walk_index)

    def __getattr__(self, name):
        columns = self.__dict__.get("columns", {})
        if name in columns:
            return columns[name]
        raise AttributeError(name)

    def __getitem__(self, i):
        return MartingaleSample(
            **{f: self.columns[f][i] for f in MartingaleSample.FIELDS}
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def env_groups(self):
        """Sample positions of each environment, in environment order."""
        _, first, inverse = np.unique(
            self.env_seed, return_index=True, return_inverse=True
        )
        order = np.argsort(first)
        return [np.flatnonzero(inverse == g) for g in order]

    def to_frame(self, extended=False):
        frame = pd.DataFrame(
            {
                "env_seed": self.env_seed,
                "walk_index": self.walk_index,
                "t": self.t,
                "mu": self.mu,
            }
        )
        fields = MartingaleSample.FIELDS if extended else SAMPLE_COLUMNS[4:]
        for f in fields:
            frame[f] = self.columns[f]
        return frame

    def to_csv(self, path, extended=False):
        self.to_frame(extended).to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Saved {len(self)} samples to: {path}")

    @classmethod
    def concat(cls, parts, t, mu):
        columns = {
            f: np.concatenate([p.columns[f] for p in parts])
            for f in MartingaleSample.FIELDS
        }
        env_seed = np.concatenate([p.env_seed for p in parts])
        walk_index = np.concatenate([p.walk_index for p in parts])
        return cls(columns, env_seed, walk_index, t, mu)


def _finish(xdotxi, boundary, integral_raw, mu):
    integral = mu * integral_raw
    m = xdotxi + boundary - integral
    r = xdotxi - m
    return m, r, integral


def start_sites(env, seed, walk_indices, start="origin"):
    """
    Starting sites of a block of walks: all at the origin, or drawn
    uniformly on the torus from each walk's own start stream.
    """
    walk_indices = np.asarray(walk_indices, dtype=np.int64)
    if start not in START_MODES:
        raise ConfigurationError(
            f"start must be one of {START_MODES}, got {start!r}", field="start"
        )
    if start == "origin":
        return np.zeros((len(walk_indices), env.d), dtype=np.int64)
    u = CounterRNG.uniforms(seed, 0, walk_indices, CounterRNG.FAMILY_START)
    index = np.minimum((u * env.n_sites).astype(np.int64), env.n_sites - 1)
    return site_coords(index, env.d, env.L).reshape(len(walk_indices), env.d)


def simulate_block(env, obs, horizon, seed, walk_indices, origin=None, record=False):
    """
    Run a block of walks to the horizon and accumulate their statistics.

    Parameters
    ----------
    env : Environment or LineEnvironment
        Anything with site_index(coords), rate_table() and d.
    obs : WalkObservables
        The per-site tables to accumulate.
    horizon : float
        Final time, >= 0.
    seed : int
        Environment seed keying the walk streams.
    walk_indices : array of int
        Stream index of each walk.
    origin : numpy.ndarray
        Starting site of each walk, shape (n, d); the origin if None.
    record : bool
        Whether to keep full paths.

    Returns
    -------
    columns : dict of numpy.ndarray
        One entry per MartingaleSample field.
    paths : list of Trajectory or None
    """
    if horizon < 0:
        raise UsageError(f"horizon must be >= 0, got {horizon}")
    walk_indices = np.asarray(walk_indices, dtype=np.int64)
    n = len(walk_indices)
    d = env.d
    dirs = directions(d)
    table = env.rate_table()
    if origin is None:
        origin = np.zeros((n, d), dtype=np.int64)

    pos = np.zeros((n, d), dtype=np.int64)
    time = np.zeros(n)
    site = np.asarray(env.site_index(origin), dtype=np.int64).reshape(n)
    start = site.copy()
    integral_raw = np.zeros(n)
    qv = np.zeros(n)
    j4 = np.zeros(n)
    jumps = np.zeros(n, dtype=np.int64)
    violations = np.zeros(n, dtype=np.int64)
    if record:
        rec_times = [[] for _ in range(n)]
        rec_sites = [[pos[w].copy()] for w in range(n)]
        rec_holds = [[] for _ in range(n)]

    active = np.arange(n)
    step = 0
    while len(active):
        s = site[active]
        cum = np.cumsum(table[s], axis=1)
        total = cum[:, -1]
        u, v = CounterRNG.uniform_pair(
            seed, step, walk_indices[active], CounterRNG.FAMILY_WALK
        )
        hold = -np.log1p(-u) / total
        arrive = time[active] + hold
        moves = arrive <= horizon

        # the last interval runs up to the horizon
        stay = active[~moves]
        rest = horizon - time[stay]
        integral_raw[stay] += rest * obs.integrand[site[stay]]
        qv[stay] += rest * obs.qv_density[site[stay]]
        if record:
            for w, h in zip(stay, rest):
                rec_holds[w].append(h)

        active = active[moves]
        s = s[moves]
        hold = hold[moves]
        integral_raw[active] += hold * obs.integrand[s]
        qv[active] += hold * obs.qv_density[s]
        time[active] = arrive[moves]

        target = v[moves] * total[moves]
        k = np.minimum(np.sum(cum[moves] <= target[:, None], axis=1), 2 * d - 1)
        jump = obs.jump_table[s, k]
        j4[active] += jump**4
        violations[active] += np.abs(jump) > obs.bound[s] * (1.0 + JUMP_BOUND_SLACK)
        jumps[active] += 1
        pos[active] += dirs[k]
        site[active] = env.site_index(origin[active] + pos[active])
        if record:
            for w, h in zip(active, hold):
                rec_holds[w].append(h)
                rec_times[w].append(time[w])
                rec_sites[w].append(pos[w].copy())
        step += 1

    xdotxi = pos @ obs.xi
    boundary = obs.potential[site] - obs.potential[start]
    m, r, integral = _finish(xdotxi, boundary, integral_raw, obs.mu)
    columns = {
        "xdotxi": xdotxi,
        "m": m,
        "r": r,
        "qv": qv,
        "j4": j4,
        "jumps": jumps,
        "boundary": boundary,
        "integral": integral,
        "violations": violations,
    }
    paths = None
    if record:
        paths = [
            Trajectory(
                rec_times[w], np.array(rec_sites[w]), rec_holds[w], horizon, origin[w]
            )
            for w in range(n)
        ]
    return columns, paths


def simulate_trajectory(env, horizon, rng_stream):
    """
    Simulate the continuous-time walk.

    At unwrapped site Y the walk waits an Exponential(sum_z omega_{Y,Y+z})
    time and then jumps to Y + z with probability proportional to
    omega_{Y,Y+z}; conductances are read at Y mod L.

    Parameters
    ----------
    env : Environment or LineEnvironment
        The environment.
    horizon : float
        Final time, >= 0.
    rng_stream : WalkStream
        Seed, walk index and starting site of the random stream.

    Returns
    -------
    Trajectory
    """
    origin = None
    if rng_stream.start is not None:
        origin = np.asarray(rng_stream.start, dtype=np.int64).reshape(1, env.d)
    _, paths = simulate_block(
        env,
        _null_observables(env),
        horizon,
        rng_stream.seed,
        [rng_stream.walk_index],
        origin=origin,
        record=True,
    )
    return paths[0]


def _running_sum(values):
    # left to right, the order the block engine accumulates in
    if len(values) == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def _accumulate_path(env, obs, traj):
    sites = traj.sites
    idx = np.asarray(env.site_index(traj.start + sites), dtype=np.int64)
    integral_raw = _running_sum(traj.holds * obs.integrand[idx])
    qv = _running_sum(traj.holds * obs.qv_density[idx])
    steps = np.diff(sites, axis=0)
    violations = 0
    jump = np.zeros(0)
    if len(steps):
        axis = np.argmax(steps != 0, axis=1)
        k = 2 * axis + (steps[np.arange(len(steps)), axis] < 0)
        jump = obs.jump_table[idx[:-1], k]
        bound = obs.bound[idx[:-1]] * (1.0 + JUMP_BOUND_SLACK)
        violations = int(np.sum(np.abs(jump) > bound))
    xdotxi = float(sites[-1] @ obs.xi)
    boundary = float(obs.potential[idx[-1]] - obs.potential[idx[0]])
    m, r, integral = _finish(xdotxi, boundary, integral_raw, obs.mu)
    return MartingaleSample(
        xdotxi,
        m,
        r,
        qv,
        _running_sum(jump**4),
        traj.jumps,
        boundary,
        integral,
        violations,
    )


def accumulate_martingale(env, corr, traj, mu, xi):
    """
    The decomposition xi.X_t = M_mu(t) + R_mu(t) along a trajectory, with

        M_mu(t) = xi.X_t + phi_mu(omega(t)) - phi_mu(omega(0))
                  - mu int_0^t phi_mu(omega(s)) ds,

    the quadratic variation int_0^t v_mu(omega(s)) ds and the sum of the
    fourth powers of the martingale jumps.

    Raises
    ------
    UsageError
        If corr was not solved for (env, mu, xi).
    """
    corr.check_matches(env, xi, mu)
    return _accumulate_path(env, corrector_observables(env, corr), traj)


def accumulate_martingale_1d(env_line, chi, traj):
    """
    X_t = (X_t + chi(X_t)) - chi(X_t) along a trajectory on a LineEnvironment.

    Raises
    ------
    SegmentRangeError
        If the trajectory leaves the chi segment.
    """
    return _accumulate_path(env_line, chi_observables(env_line, chi), traj)


def _block_samples(env, obs, horizon, seed, lo, hi, mu, start="origin"):
    walks = np.arange(lo, hi)
    origin = start_sites(env, seed, walks, start)
    columns, _ = simulate_block(env, obs, horizon, seed, walks, origin=origin)
    return MartingaleSamples(
        columns, np.full(hi - lo, seed, dtype=np.uint64), walks, horizon, mu
    )


def _blocks(n_walks, block_size):
    if block_size < 1:
        raise ConfigurationError(
            f"block_size must be >= 1, got {block_size}", field="block_size"
        )
    return [(lo, min(lo + block_size, n_walks)) for lo in range(0, n_walks, block_size)]


def sample_environment(
    env,
    obs,
    horizon,
    seed,
    n_walks,
    start="origin",
    threads=1,
    block_size=DEFAULT_BLOCK_SIZE,
):
    """
    n_walks walks on one fixed environment, split into blocks run on the
    worker pool.
    """
    blocks = _blocks(n_walks, block_size)
    parts = parallel_map(
        lambda b: _block_samples(env, obs, horizon, seed, b[0], b[1], obs.mu, start),
        blocks,
        threads,
    )
    return MartingaleSamples.concat(parts, horizon, obs.mu)


class MonteCarloResult:
    """
    Output of run_monte_carlo.

    Attributes
    ----------
    samples : MartingaleSamples
    env_seeds : list of int
    sigma_sq : numpy.ndarray
        sigma_mu^2 per environment (the exact 2 E[1/omega]^-1 in chi mode).
    config : McConfig
    martingale : str
    paths : list of Trajectory
        Recorded trajectories of the first walks of the first environment.
    """

    def __init__(self, samples, env_seeds, sigma_sq, config, martingale, paths=None):
        self.samples = samples
        self.env_seeds = env_seeds
        self.sigma_sq = np.asarray(sigma_sq, dtype=np.float64)
        self.config = config
        self.martingale = martingale
        self.paths = paths or []

    @property
    def total_jumps(self):
        return int(np.sum(self.samples.jumps))

    @property
    def jump_violations(self):
        return int(np.sum(self.samples.violations))

    def sigma_frame(self):
        return pd.DataFrame(
            {
                "env_seed": np.asarray(self.env_seeds, dtype=np.uint64),
                "sigma_mu_sq": self.sigma_sq,
            }
        )

    def paths_frame(self):
        frames = [p.to_frame(walk_index=i) for i, p in enumerate(self.paths)]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def segment_half_width(M, t):
    """Initial chi segment half-width ceil(8 sqrt(2 M t)), at least 1."""
    return max(1, int(math.ceil(8.0 * math.sqrt(2.0 * M * t))))


def run_monte_carlo(
    cfg,
    spec,
    xi=None,
    martingale="corrector",
    start="origin",
    threads=1,
    block_size=DEFAULT_BLOCK_SIZE,
    tol=1e-10,
    record_paths=0,
):
    """
    Sample the annealed law: n_env environments with seeds derived from
    cfg.master_seed, n_walks walks in each.

    Parameters
    ----------
    cfg : McConfig
        Counts, horizon, regularization and master seed.
    spec : EnvironmentSpec
        Environment family; its seed is replaced by the derived seeds.
    xi : array of float
        Direction, default e_1.
    martingale : "corrector" or "chi"
        "corrector" solves the regularized corrector on every torus;
        "chi" (d = 1 only) uses the exact corrector chi on fresh i.i.d.
        segments, doubling a segment when a walk reaches its end.
    start : "origin" or "uniform"
        Where walks start on the torus. Both sample the annealed law; a
        uniform start also samples the torus orbit of a single environment.
    threads : int
        Worker count. Results do not depend on it.
    block_size : int
        Walks per task.
    tol : float
        Corrector tolerance.
    record_paths : int
        Number of walks of the first environment whose full path is kept.

    Returns
    -------
    MonteCarloResult

    Raises
    ------
    ConvergenceError
        If a corrector solve fails; carries the environment seed.
    """
    if martingale not in ("corrector", "chi"):
        raise ConfigurationError(
            f"martingale must be 'corrector' or 'chi', got {martingale!r}",
            field="martingale",
        )
    if martingale == "chi" and spec.d != 1:
        raise UsageError("the chi decomposition exists in dimension one only")
    if martingale == "chi" and start != "origin":
        raise UsageError("chi segments are rooted at the origin")
    mu = cfg.effective_mu
    t = float(cfg.t)
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    seeds = [CounterRNG.derive_seed(cfg.master_seed, k) for k in range(cfg.n_env)]
    blocks = _blocks(cfg.n_walks, block_size)
    logger.info(
        f"Monte Carlo ({martingale}): {cfg.n_env} environments x {cfg.n_walks} "
        f"walks, t={t:g}, mu={mu:g}, {len(blocks)} blocks per environment"
    )
    if martingale == "chi":
        return _run_chi(cfg, spec, seeds, blocks, threads, record_paths)

    def prepare(seed):
        env = generate_environment(spec.with_seed(seed))
        try:
            corr = solve_corrector(env, mu, xi, tol=tol)
        except ConvergenceError as e:
            e.env_seed = seed
            raise
        return env, corrector_observables(env, corr), sigma_mu_sq(env, corr)

    prepared = parallel_map(prepare, seeds, threads)

    def run_block(task):
        k, lo, hi = task
        env, obs, _ = prepared[k]
        return _block_samples(env, obs, t, seeds[k], lo, hi, mu, start)

    tasks = [(k, lo, hi) for k in range(cfg.n_env) for lo, hi in blocks]
    samples = MartingaleSamples.concat(parallel_map(run_block, tasks, threads), t, mu)
    paths = []
    if record_paths:
        env, obs, _ = prepared[0]
        walks = np.arange(min(record_paths, cfg.n_walks))
        origin = start_sites(env, seeds[0], walks, start)
        _, paths = simulate_block(
            env, obs, t, seeds[0], walks, origin=origin, record=True
        )
    result = MonteCarloResult(
        samples, seeds, [p[2] for p in prepared], cfg, martingale, paths
    )
    if result.jump_violations:
        logger.warning(
            f"{result.jump_violations} of {result.total_jumps} jumps exceeded d_mu"
        )
    return result


def _run_chi(cfg, spec, seeds, blocks, threads, record_paths):
    dist = spec.distribution
    inv_mean = dist.inverse_mean()
    t = float(cfg.t)
    K0 = segment_half_width(spec.M, t)

    def run_block(task, record=False):
        k, lo, hi = task
        K = K0
        for _ in range(MAX_SEGMENT_RETRIES + 1):
            line = LineEnvironment(dist, seeds[k], K)
            obs = chi_observables(line, chi_on_segment(line, inv_mean))
            try:
                columns, paths = simulate_block(
                    line, obs, t, seeds[k], np.arange(lo, hi), record=record
                )
                break
            except SegmentRangeError:
                logger.warning(
                    f"A walk of environment {seeds[k]} reached the end of the chi "
                    f"segment (half-width {K}); retrying with {2 * K}"
                )
                K *= 2
        else:
            raise SegmentRangeError(
                f"walks still leave the chi segment at half-width {K // 2}",
                half_width=K // 2,
            )
        if record:
            return paths
        return MartingaleSamples(
            columns,
            np.full(hi - lo, seeds[k], dtype=np.uint64),
            np.arange(lo, hi),
            t,
            0.0,
        )

    tasks = [(k, lo, hi) for k in range(cfg.n_env) for lo, hi in blocks]
    samples = MartingaleSamples.concat(parallel_map(run_block, tasks, threads), t, 0.0)
    paths = []
    if record_paths:
        paths = run_block((0, 0, min(record_paths, cfg.n_walks)), record=True)
    sigma_sq = np.full(cfg.n_env, homogenized_sigma_sq_1d(dist))
    return MonteCarloResult(samples, seeds, sigma_sq, cfg, "chi", paths)

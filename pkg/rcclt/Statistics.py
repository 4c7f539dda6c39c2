# -*- coding: utf-8 -*-
"""
Estimators shared by the experiments: Kolmogorov distance to the standard
normal, jackknife standard errors, the Hall-Heyde quantities V and J,
log-log rate fits and the Berry-Esseen rates the experiments are held to.
"""

import logging
import math

import numpy as np
import scipy.special
import scipy.stats

from .Base import Base
from .Exceptions import UsageError

logger = logging.getLogger(__name__)

# groups used by the grouped jackknife when there is a single environment
DEFAULT_JACKKNIFE_GROUPS = 20


def normal_cdf(x):
    """The standard normal distribution function."""
    return scipy.special.ndtr(x)


def ks_distance(samples):
    """
    Kolmogorov distance between the empirical distribution of the samples
    and the standard normal,
    max_i max(i/n - Phi(x_(i)), Phi(x_(i)) - (i-1)/n).

    Parameters
    ----------
    samples : array of float
        Normalized values, n >= 1.

    Returns
    -------
    float
        A value in [0, 1].
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = len(x)
    if n == 0:
        raise UsageError("ks_distance needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise UsageError("ks_distance samples must be finite")
    cdf = normal_cdf(x)
    i = np.arange(1, n + 1)
    above = np.max(i / n - cdf)
    below = np.max(cdf - (i - 1) / n)
    return float(max(above, below))


def contiguous_groups(n, n_groups=DEFAULT_JACKKNIFE_GROUPS):
    """Split positions 0..n-1 into at most n_groups contiguous groups."""
    n_groups = max(1, min(n, n_groups))
    return [g for g in np.array_split(np.arange(n), n_groups) if len(g)]


def jackknife_mean(values, groups=None):
    """
    Mean and jackknife standard error.

    With groups (e.g. the samples of each environment) the delete-one-group
    jackknife is used; without them the delete-one-sample jackknife, which
    for a mean is the classical s / sqrt(n).

    Returns
    -------
    mean, stderr : float
        stderr is nan when it cannot be estimated (one sample or one group).
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    n = len(values)
    if n == 0:
        raise UsageError("cannot estimate the mean of no samples")
    mean = float(np.mean(values))
    if groups is None or len(groups) < 2:
        if n < 2:
            return mean, float("nan")
        return mean, float(np.std(values, ddof=1) / math.sqrt(n))
    sums = np.array([np.sum(values[g]) for g in groups])
    counts = np.array([len(g) for g in groups], dtype=np.float64)
    leave_out = (np.sum(sums) - sums) / (n - counts)
    G = len(groups)
    stderr = math.sqrt((G - 1) / G * np.sum((leave_out - leave_out.mean()) ** 2))
    return mean, float(stderr)


def jackknife(statistic, values, groups):
    """
    Delete-one-group jackknife of an arbitrary statistic.

    Parameters
    ----------
    statistic : callable
        Maps an array of values to a float.
    values : numpy.ndarray
        The data, indexed along the first axis.
    groups : list of index arrays
        At least two groups.

    Returns
    -------
    estimate, stderr : float
        The statistic on all values and its jackknife standard error.
    """
    values = np.asarray(values)
    estimate = float(statistic(values))
    G = len(groups)
    if G < 2:
        return estimate, float("nan")
    mask = np.ones(len(values), dtype=bool)
    leave_out = np.empty(G)
    for k, g in enumerate(groups):
        mask[g] = False
        leave_out[k] = statistic(values[mask])
        mask[g] = True
    stderr = math.sqrt((G - 1) / G * np.sum((leave_out - leave_out.mean()) ** 2))
    return estimate, float(stderr)


def sample_groups(samples, contiguous=False):
    """
    Jackknife groups of a sample set: one per environment when there are
    several. With a single environment, None (delete-one-sample) or, if
    contiguous is set, contiguous groups of walks for statistics that are
    not means.
    """
    groups = samples.env_groups()
    if len(groups) >= 2:
        return groups
    return contiguous_groups(len(samples)) if contiguous else None


class VJEstimate(Base):
    """Hall-Heyde fluctuation estimates with their standard errors."""

    required_keys = ["v_hat", "j_hat"]

    type_definitions = {
        "v_hat": float,
        "v_hat_stderr": float,
        "j_hat": float,
        "j_hat_stderr": float,
    }

    def __init__(self, v_hat, j_hat, v_hat_stderr=None, j_hat_stderr=None):
        self.v_hat = float(v_hat)
        self.j_hat = float(j_hat)
        self.v_hat_stderr = None if v_hat_stderr is None else float(v_hat_stderr)
        self.j_hat_stderr = None if j_hat_stderr is None else float(j_hat_stderr)
        self.validate()

    def __iter__(self):
        yield self.v_hat
        yield self.j_hat

    @property
    def hh_raw(self):
        """(V + J)^(1/5), the Hall-Heyde bound without its constant."""
        return (self.v_hat + self.j_hat) ** 0.2


def estimate_V_J(samples, t, sigma_mu_sq, groups=None):
    """
    V and J of the martingale rescaled to unit variance at horizon one,
    v_hat = mean[(qv / (sigma^2 t) - 1)^2] and
    j_hat = mean[j4] / (sigma^4 t^2).

    Parameters
    ----------
    samples : MartingaleSamples
        Samples at horizon t.
    t : float
        Horizon, > 0.
    sigma_mu_sq : float
        Normalizing variance, > 0.
    groups : list of index arrays
        Jackknife groups; sample_groups(samples) if None.

    Returns
    -------
    VJEstimate
        Unpacks as (v_hat, j_hat).
    """
    if not sigma_mu_sq > 0:
        raise UsageError(f"sigma_mu_sq must be > 0, got {sigma_mu_sq}")
    if not t > 0:
        raise UsageError(f"t must be > 0, got {t}")
    if groups is None:
        groups = sample_groups(samples)
    fluctuation = (samples.qv / (sigma_mu_sq * t) - 1.0) ** 2
    v_hat, v_err = jackknife_mean(fluctuation, groups)
    j_hat, j_err = jackknife_mean(samples.j4 / (sigma_mu_sq**2 * t**2), groups)
    return VJEstimate(v_hat, j_hat, v_err, j_err)


class RateFit(Base):
    """
    Ordinary least squares fit of log(y) = slope * log(t) + intercept.
    """

    required_keys = ["slope", "intercept", "r2"]

    type_definitions = {
        "slope": float,
        "intercept": float,
        "r2": float,
        "n_points": int,
        "slope_stderr": float,
    }

    def __init__(self, slope, intercept, r2, n_points=None, slope_stderr=None):
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.r2 = float(r2)
        self.n_points = n_points
        self.slope_stderr = None if slope_stderr is None else float(slope_stderr)
        self.validate()

    def predict(self, t):
        return np.exp(self.intercept) * np.asarray(t, dtype=np.float64) ** self.slope


def rate_fit(points):
    """
    Fit a power law to (t, y) points on log-log axes.

    Parameters
    ----------
    points : array of shape (n, 2)
        At least two points with t > 0 and y > 0, at two distinct t.

    Returns
    -------
    RateFit
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 2:
        raise UsageError("rate_fit needs at least two (t, y) points")
    t, y = points[:, 0], points[:, 1]
    if not np.all(np.isfinite(points)) or np.any(t <= 0) or np.any(y <= 0):
        raise UsageError("rate_fit needs finite, strictly positive t and y")
    if np.all(t == t[0]):
        raise UsageError("rate_fit needs at least two distinct t")
    fit = scipy.stats.linregress(np.log(t), np.log(y))
    slope_stderr = float(fit.stderr) if len(points) > 2 else 0.0
    return RateFit(
        fit.slope, fit.intercept, fit.rvalue**2, len(points), slope_stderr
    )


def log_plus(t):
    """max(1, log t), the logarithm used in the rates."""
    return np.maximum(1.0, np.log(np.asarray(t, dtype=np.float64)))


def theorem_rate(d, t, q=0.0):
    """
    The Berry-Esseen rate of the annealed CLT:
    t^(-1/10) in d = 1, log^q(t) t^(-1/10) in d = 2,
    log(t) t^(-1/5) in d = 3 and t^(-1/5) in d >= 4.
    """
    t = np.asarray(t, dtype=np.float64)
    if d == 1:
        rate = t**-0.1
    elif d == 2:
        rate = log_plus(t) ** q * t**-0.1
    elif d == 3:
        rate = log_plus(t) * t**-0.2
    else:
        rate = t**-0.2
    return float(rate) if rate.ndim == 0 else rate

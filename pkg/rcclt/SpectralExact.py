# -*- coding: utf-8 -*-
"""
Exact linear algebra on small tori: generator matrices, eigendecompositions,
spectral measures of -L projected on site fields, the remainder second
moment and the heat semigroup.
"""

import logging
import math

import numpy as np
import pandas as pd
import scipy.linalg

from . import CounterRNG
from .Corrector import default_xi, solve_corrector, v_1d, v_mu_field
from .Environment import FieldScalar, check_xi, drift_field, generate_environment
from .Exceptions import CapacityError, ConfigurationError, NumericalError, UsageError
from .Pool import parallel_map

logger = logging.getLogger(__name__)

MAX_DENSE_SITES = 4096

# below this value of lambda * t the remainder bracket is evaluated by series
SERIES_THRESHOLD = 1e-6

EIGEN_METHODS = ("lapack", "tql")


def tridiagonalize(A):
    """
    Householder reduction of a symmetric matrix to tridiagonal form.

    Parameters
    ----------
    A : numpy.ndarray
        Symmetric (n, n) matrix. Not modified.

    Returns
    -------
    diag, offdiag, Q : numpy.ndarray
        The diagonal (n), the subdiagonal (n - 1) and the orthogonal Q with
        A = Q T Q^T.
    """
    T = np.array(A, dtype=np.float64, copy=True)
    n = T.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        x = T[k + 1 :, k]
        norm = np.linalg.norm(x)
        if norm == 0.0 or np.linalg.norm(x[1:]) <= np.finfo(float).tiny:
            continue
        alpha = -math.copysign(norm, x[0])
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        # T <- H T H with H = I - 2 v v^T acting on rows/columns k+1..n-1
        block = T[k + 1 :, :]
        block -= 2.0 * np.outer(v, v @ block)
        block = T[:, k + 1 :]
        block -= 2.0 * np.outer(block @ v, v)
        block = Q[:, k + 1 :]
        block -= 2.0 * np.outer(block @ v, v)
    return np.diag(T).copy(), np.diag(T, -1).copy(), Q


def tql_eigh(diag, offdiag, Z=None, max_sweeps=60):
    """
    Eigenvalues and eigenvectors of a symmetric tridiagonal matrix by the
    QL algorithm with implicit Wilkinson shifts.

    Parameters
    ----------
    diag : numpy.ndarray
        Diagonal, length n.
    offdiag : numpy.ndarray
        Subdiagonal, length n - 1.
    Z : numpy.ndarray
        Orthogonal matrix the rotations are accumulated into (the Q of
        tridiagonalize); identity if None.
    max_sweeps : int
        Iteration cap per eigenvalue.

    Returns
    -------
    lambdas, vectors : numpy.ndarray
        Ascending eigenvalues and the matching eigenvectors as columns.
    """
    d = np.array(diag, dtype=np.float64, copy=True)
    n = len(d)
    e = np.zeros(n)
    e[: n - 1] = offdiag
    # rows of ZT are the eigenvector columns of Z, kept contiguous
    ZT = np.eye(n) if Z is None else np.array(Z, dtype=np.float64).T.copy()
    eps = np.finfo(float).eps
    tiny = np.finfo(float).tiny

    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd or abs(e[m]) <= tiny:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > max_sweeps:
                raise NumericalError(
                    f"QL iteration did not converge for eigenvalue {l}",
                    report={"index": l, "sweeps": sweeps, "offdiag": float(e[l])},
                )
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            deflated = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                upper = ZT[i + 1].copy()
                ZT[i + 1] = s * ZT[i] + c * upper
                ZT[i] = c * ZT[i] - s * upper
                i -= 1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0

    order = np.argsort(d, kind="stable")
    return d[order], ZT[order].T.copy()


def symmetric_eigh(A, method="lapack"):
    """
    Eigendecomposition of a dense symmetric matrix.

    Parameters
    ----------
    A : numpy.ndarray
        Symmetric matrix.
    method : "lapack" or "tql"
        "lapack" calls scipy.linalg.eigh; "tql" runs the in-repo Householder
        tridiagonalization followed by implicit-shift QL.

    Returns
    -------
    lambdas, vectors : numpy.ndarray
        Ascending eigenvalues and orthonormal eigenvectors as columns.
    """
    if method not in EIGEN_METHODS:
        raise ConfigurationError(
            f"eigensolver method must be one of {EIGEN_METHODS}, got {method!r}",
            field="method",
        )
    try:
        if method == "lapack":
            return scipy.linalg.eigh(A)
        diag, offdiag, Q = tridiagonalize(A)
        return tql_eigh(diag, offdiag, Q)
    except (np.linalg.LinAlgError, ValueError, NumericalError) as e:
        report = {"dim": int(A.shape[0]), "max_abs": float(np.max(np.abs(A)))}
        try:
            report["condition"] = float(np.linalg.cond(A))
        except np.linalg.LinAlgError:
            report["condition"] = float("inf")
        raise NumericalError(f"eigensolver failed: {e} ({report})", report=report)


class GeneratorMatrix:
    """
    Dense generator Q of the walk on the torus: Q[x][y] = sum of the
    conductances of the edges joining x and y, Q[x][x] = -sum_y Q[x][y].

    -Q is symmetric positive semidefinite. Its eigendecomposition is
    computed once, on first use.
    """

    def __init__(self, env_ref, matrix, method="lapack"):
        self.env_ref = env_ref
        self.matrix = matrix
        self.method = method
        self._eig = None

    @property
    def dim(self):
        return self.matrix.shape[0]

    def eig(self):
        """
        Eigenvalues of -Q (ascending, clipped at 0 within round-off) and
        Euclidean-orthonormal eigenvectors.
        """
        if self._eig is None:
            lambdas, vectors = symmetric_eigh(-self.matrix, self.method)
            scale = max(1.0, float(np.max(np.abs(np.diag(self.matrix)))))
            if lambdas[0] < -1e-10 * scale:
                raise NumericalError(
                    f"generator has positive eigenvalue {-lambdas[0]:.3e}",
                    report={"min_eigenvalue": float(lambdas[0])},
                )
            lambdas = np.clip(lambdas, 0.0, None)
            self._eig = (lambdas, vectors)
            logger.debug(f"Eigendecomposition of {self.dim}x{self.dim} generator done")
        return self._eig


def build_generator(env, max_sites=MAX_DENSE_SITES, method="lapack"):
    """
    Build the dense generator matrix of env.

    Raises
    ------
    CapacityError
        If L^d exceeds max_sites.
    """
    if env.n_sites > max_sites:
        raise CapacityError(
            f"torus has {env.n_sites} sites, over the dense limit of {max_sites}; "
            f"use the Monte Carlo path (clt/simulate) for this size"
        )
    n = env.n_sites
    table = env.rate_table()
    neighbors = env.neighbor_table()
    Q = np.zeros((n, n))
    rows = np.repeat(np.arange(n), table.shape[1])
    np.add.at(Q, (rows, neighbors.ravel()), table.ravel())
    Q[np.arange(n), np.arange(n)] -= table.sum(axis=1)
    return GeneratorMatrix(env.identity, Q, method)


class SpectralMeasure:
    """
    Spectral measure of -L projected on a site field f: atoms lambda_i with
    weights <f, u_i>^2 under the uniform probability on the torus.
    """

    def __init__(self, lambdas, weights, label=""):
        self.lambdas = np.asarray(lambdas, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.label = label

    def __len__(self):
        return len(self.lambdas)

    def total_mass(self):
        return float(np.sum(self.weights))

    def to_frame(self):
        return pd.DataFrame({"lambda": self.lambdas, "weight": self.weights})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def spectral_measure(Q, f):
    """
    The spectral measure e_f of -Q projected on f.

    Parameters
    ----------
    Q : GeneratorMatrix
        The generator.
    f : FieldScalar or numpy.ndarray
        A site field.
    """
    values = f.values if isinstance(f, FieldScalar) else np.asarray(f, dtype=float)
    if len(values) != Q.dim:
        raise UsageError(f"field has {len(values)} values, generator has dim {Q.dim}")
    lambdas, vectors = Q.eig()
    weights = (vectors.T @ values) ** 2 / Q.dim
    label = f.label if isinstance(f, FieldScalar) else ""
    return SpectralMeasure(lambdas, weights, label=label)


def _check_mu_t(mu, t):
    if not mu > 0:
        raise UsageError(f"mu must be > 0, got {mu}")
    if t < 0:
        raise UsageError(f"t must be >= 0, got {t}")


def _boundary_bracket(lambdas, t):
    """1 - exp(-lambda t), by series for small lambda t."""
    x = lambdas * t
    small = x < SERIES_THRESHOLD
    exact = -np.expm1(-x)
    series = x - 0.5 * x**2
    return np.where(small, series, exact)


def _integral_bracket(lambdas, t):
    """(exp(-lambda t) - 1 + lambda t) / lambda^2, by series for small lambda t."""
    x = lambdas * t
    small = x < SERIES_THRESHOLD
    safe = np.where(small, 1.0, lambdas)
    exact = (np.expm1(-x) + x) / safe**2
    series = 0.5 * t**2 - lambdas * t**3 / 6.0
    return np.where(small, series, exact)


def remainder_components_exact(sm, mu, t):
    """
    The two orthogonal pieces of E[R_mu(t)^2]:
    E[(phi(omega(t)) - phi(omega(0)))^2] = 2 int (1 - e^{-lt}) / (l + mu)^2 de
    and mu^2 E[(int_0^t phi(omega(s)) ds)^2]
    = 2 mu^2 int (e^{-lt} - 1 + lt) / (l^2 (l + mu)^2) de, with e = e_drift.
    """
    _check_mu_t(mu, t)
    resolvent = sm.weights / (sm.lambdas + mu) ** 2
    boundary = 2.0 * float(np.sum(resolvent * _boundary_bracket(sm.lambdas, t)))
    integral = np.sum(resolvent * _integral_bracket(sm.lambdas, t))
    integral = 2.0 * mu**2 * float(integral)
    return boundary, integral


def remainder_second_moment_exact(sm, mu, t):
    """
    E[R_mu(t)^2]
    = 2 int (l + mu)^-2 [1 - e^{-lt} + mu^2 (e^{-lt} - 1 + lt) / l^2] de_drift.
    """
    boundary, integral = remainder_components_exact(sm, mu, t)
    return boundary + integral


def phi_second_moment_exact(sm, mu):
    """E[phi_mu^2] = int (l + mu)^-2 de_drift."""
    if not mu > 0:
        raise UsageError(f"mu must be > 0, got {mu}")
    return float(np.sum(sm.weights / (sm.lambdas + mu) ** 2))


def spectral_gap(sm, rel_tol=1e-10):
    """Smallest eigenvalue above round-off, or nan if there is none."""
    lambdas = sm.lambdas if isinstance(sm, SpectralMeasure) else sm.eig()[0]
    threshold = rel_tol * max(1.0, float(np.max(lambdas)))
    positive = lambdas[lambdas > threshold]
    return float(positive[0]) if len(positive) else float("nan")


def semigroup_evolve(Q, f, t):
    """
    The heat semigroup e^{tQ} applied to a site field, through the
    eigendecomposition of -Q.
    """
    values = f.values if isinstance(f, FieldScalar) else np.asarray(f, dtype=float)
    label = f.label if isinstance(f, FieldScalar) else ""
    if t < 0:
        raise UsageError(f"t must be >= 0, got {t}")
    if t == 0:
        return FieldScalar(values.copy(), label=label)
    lambdas, vectors = Q.eig()
    evolved = vectors @ (np.exp(-lambdas * t) * (vectors.T @ values))
    return FieldScalar(evolved, label=f"{label}@t={t:g}")


def dense_corrector(env, mu, xi=None):
    """Direct dense solve of (mu - Q) phi = drift, the CG oracle."""
    xi = check_xi(default_xi(env.d) if xi is None else xi, env.d)
    Q = build_generator(env).matrix
    A = mu * np.eye(env.n_sites) - Q
    return scipy.linalg.solve(A, drift_field(env, xi).values, assume_a="pos")


class DecayCurve:
    """
    Result of variance_decay_curve.

    Attributes
    ----------
    frame : pandas.DataFrame
        Columns t, var_hat, stderr, n_env, mu.
    per_env : numpy.ndarray
        Spatial variance of the evolved field, shape (n_env, len(t_grid)).
    gaps : numpy.ndarray
        Spectral gap of each environment's generator.
    monotone : numpy.ndarray of bool
        Whether each per-environment curve is non-increasing on the grid.
    """

    def __init__(self, frame, per_env, gaps, monotone):
        self.frame = frame
        self.per_env = per_env
        self.gaps = gaps
        self.monotone = monotone

    @property
    def knee(self):
        """Relaxation time 1 / (2 gap) past which finite-torus decay is exponential."""
        return float(1.0 / (2.0 * np.min(self.gaps)))


DECAY_FIELDS = ("v_mu", "v_1d")


def _decay_one(args):
    spec, seed, mu, xi, t_grid, tol, field = args
    env = generate_environment(spec.with_seed(seed))
    if field == "v_1d":
        table = env.rate_table()
        inv_mean = spec.distribution.inverse_mean()
        v = FieldScalar(v_1d(table[:, 0], table[:, 1], inv_mean), label="v_1d")
    else:
        v = v_mu_field(env, solve_corrector(env, mu, xi, tol=tol))
    v_bar = v.centered()
    Q = build_generator(env)
    curve = np.array(
        [np.mean(semigroup_evolve(Q, v_bar, t).values ** 2) for t in t_grid]
    )
    gap = spectral_gap(Q)
    return curve, gap


def variance_decay_curve(
    spec, n_env, mu, t_grid, xi=None, tol=1e-10, threads=1, field="v_mu"
):
    """
    Ensemble estimate of Var[v_{mu,t}] along the heat semigroup.

    For every environment the spatially centered v_mu is evolved by
    e^{tQ}; its spatial mean square is averaged over the environments.
    Environment seeds are derived from spec.seed.

    Parameters
    ----------
    spec : EnvironmentSpec
        Environment family (its seed is the master seed).
    n_env : int
        Number of environments.
    mu : float
        Regularization.
    t_grid : sequence of float
        Nonnegative times.
    xi : array of float
        Direction, default e_1.
    threads : int
        Worker count; results do not depend on it.
    field : "v_mu" or "v_1d"
        The decayed field: v_mu, or in d = 1 the quadratic variation density
        E[1/omega]^-2 (1/omega_{0,1} + 1/omega_{0,-1}) of x + chi(x), which
        needs no corrector (mu is then only reported).

    Returns
    -------
    DecayCurve
    """
    if n_env < 1:
        raise ConfigurationError(f"n_env must be >= 1, got {n_env}", field="n_env")
    if field not in DECAY_FIELDS:
        raise ConfigurationError(
            f"field must be one of {DECAY_FIELDS}, got {field!r}", field="field"
        )
    if field == "v_1d" and spec.d != 1:
        raise UsageError(f"v_1d is defined in d = 1 only, got d={spec.d}")
    if spec.n_sites > MAX_DENSE_SITES:
        raise CapacityError(
            f"torus has {spec.n_sites} sites, over the dense limit of "
            f"{MAX_DENSE_SITES}"
        )
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    xi = check_xi(default_xi(spec.d) if xi is None else xi, spec.d)
    seeds = [CounterRNG.derive_seed(spec.seed, k) for k in range(n_env)]
    tasks = [(spec, seed, mu, xi, t_grid, tol, field) for seed in seeds]
    logger.info(f"Variance decay over {n_env} environments, {len(t_grid)} times")
    results = parallel_map(_decay_one, tasks, threads)
    per_env = np.array([curve for curve, _ in results])
    gaps = np.array([gap for _, gap in results])
    # non-increasing up to round-off
    slack = 1e-12 * np.maximum(per_env[:, :1], 1e-300)
    monotone = np.all(np.diff(per_env, axis=1) <= slack, axis=1)
    if not np.all(monotone):
        logger.warning(f"{np.sum(~monotone)} decay curves are not monotone")
    if n_env > 1:
        stderr = per_env.std(axis=0, ddof=1) / np.sqrt(n_env)
    else:
        stderr = np.full(len(t_grid), np.nan)
    frame = pd.DataFrame(
        {
            "t": t_grid,
            "var_hat": per_env.mean(axis=0),
            "stderr": stderr,
            "n_env": n_env,
            "mu": math.nan if mu is None else float(mu),
        }
    )
    return DecayCurve(frame, per_env, gaps, monotone)

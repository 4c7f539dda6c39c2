# -*- coding: utf-8 -*-
import json
import logging
import math
import os

import numpy as np
import pandas as pd

from .Environment import FieldScalar, check_xi, directions, drift_field
from .Exceptions import ConfigurationError, ConvergenceError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10

# recompute the residual from scratch every this many iterations
RESIDUAL_REFRESH = 50


def default_xi(d):
    """The default direction e_1."""
    xi = np.zeros(d)
    xi[0] = 1.0
    return xi


def _dot(a, b):
    # numpy's pairwise summation: a fixed reduction tree, thread independent
    return float(np.sum(a * b))


def apply_generator(env, f):
    """
    Matrix-free generator of the walk on the torus,
    (L^omega f)(x) = sum_{|z|=1} omega_{x,x+z} (f(x+z) - f(x)).

    Parameters
    ----------
    env : Environment
        The environment.
    f : numpy.ndarray
        Site values, length L^d, row-major.
    """
    table = env.rate_table()
    grid = np.asarray(f, dtype=np.float64).reshape(env.shape)
    out = np.zeros(env.n_sites)
    for i in range(env.d):
        forward = np.roll(grid, -1, axis=i).ravel()
        backward = np.roll(grid, 1, axis=i).ravel()
        out += table[:, 2 * i] * (forward - grid.ravel())
        out += table[:, 2 * i + 1] * (backward - grid.ravel())
    return out


def corrector_residual(env, phi, mu, xi):
    """Sup-norm of (mu - L^omega) phi - drift."""
    phi = np.asarray(phi, dtype=np.float64)
    drift = drift_field(env, xi).values
    return float(np.max(np.abs(mu * phi - apply_generator(env, phi) - drift)))


class CorrectorField:
    """
    The regularized corrector phi_mu(theta_x omega) on every torus site, for
    one environment, one mu and one direction xi, with solve metadata.

    Attributes
    ----------
    env_ref : str
        Identity of the environment the corrector was solved on.
    mu : float
        Regularization.
    xi : numpy.ndarray
        Direction.
    phi : FieldScalar
        Corrector values.
    residual_norm : float
        Sup-norm of (mu - L^omega) phi - drift at return.
    iterations : int
        Conjugate-gradient iterations performed.
    tol : float
        Relative tolerance the solve was run with.
    """

    def __init__(self, env_ref, mu, xi, phi, residual_norm, iterations, tol):
        self.env_ref = env_ref
        self.mu = float(mu)
        self.xi = np.asarray(xi, dtype=np.float64)
        self.phi = phi
        self.residual_norm = float(residual_norm)
        self.iterations = int(iterations)
        self.tol = float(tol)

    @property
    def values(self):
        return self.phi.values

    def check_matches(self, env, xi=None, mu=None):
        """Raise UsageError if this corrector was not solved for env (and xi, mu)."""
        if self.env_ref != env.identity or len(self.phi) != env.n_sites:
            raise UsageError(
                f"corrector solved on environment {self.env_ref} used with "
                f"environment {env.identity}"
            )
        if xi is not None and not np.array_equal(
            np.asarray(xi, dtype=np.float64), self.xi
        ):
            raise UsageError(
                f"corrector solved for xi={self.xi.tolist()} used with "
                f"xi={np.asarray(xi).tolist()}"
            )
        if mu is not None and float(mu) != self.mu:
            raise UsageError(f"corrector solved for mu={self.mu} used with mu={mu}")

    def residual(self, env):
        """Recompute the residual sup-norm on env."""
        self.check_matches(env)
        return corrector_residual(env, self.values, self.mu, self.xi)

    def metadata(self):
        return {
            "env_ref": self.env_ref,
            "mu": self.mu,
            "xi": self.xi.tolist(),
            "residual": self.residual_norm,
            "iterations": self.iterations,
            "tol": self.tol,
        }

    def export(self, csv_path, json_path=None):
        """
        Write the corrector as a CSV of (site_index, phi) and its metadata as
        JSON (default <csv_path without extension>.json).
        """
        out_dir = os.path.dirname(csv_path)
        if out_dir and not os.path.exists(out_dir):
            os.makedirs(out_dir, exist_ok=True)
        frame = pd.DataFrame(
            {"site_index": np.arange(len(self.phi)), "phi": self.values}
        )
        frame.to_csv(csv_path, index=False, float_format="%.17g")
        if json_path is None:
            json_path = os.path.splitext(csv_path)[0] + ".json"
        with open(json_path, "w") as f:
            json.dump(self.metadata(), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Saved corrector to: {csv_path}")


def solve_corrector(env, mu, xi=None, tol=DEFAULT_TOL, max_iter=None):
    """
    Solve (mu - L^omega) phi = drift on the torus by conjugate gradients
    with Jacobi preconditioning.

    The system is symmetric positive definite for mu > 0. Iteration stops
    once the sup-norm of the residual is at most tol * max(1, |drift|_inf);
    the stopping residual is recomputed from scratch before it is accepted.

    Parameters
    ----------
    env : Environment
        The environment.
    mu : float
        Regularization, > 0.
    xi : array of float
        Direction, default e_1.
    tol : float
        Relative tolerance, default 1e-10.
    max_iter : int
        Iteration cap, default 20 * L^d.

    Returns
    -------
    CorrectorField

    Raises
    ------
    ConvergenceError
        If max_iter is exceeded; carries the final relative residual.
    """
    if not (isinstance(mu, (int, float, np.floating)) and math.isfinite(mu) and mu > 0):
        raise ConfigurationError(f"mu must be a finite value > 0, got {mu}", field="mu")
    if tol <= 0:
        raise ConfigurationError(f"tol must be > 0, got {tol}", field="tol")
    xi = check_xi(default_xi(env.d) if xi is None else xi, env.d)
    if max_iter is None:
        max_iter = 20 * env.n_sites

    b = drift_field(env, xi).values
    scale = max(1.0, float(np.max(np.abs(b))))
    threshold = tol * scale
    x = np.zeros(env.n_sites)

    def operator(v):
        return mu * v - apply_generator(env, v)

    if not np.any(b != 0):
        logger.debug("Drift vanishes identically; corrector is zero")
        return CorrectorField(
            env.identity, mu, xi, FieldScalar(x, label="phi"), 0.0, 0, tol
        )

    diag = mu + env.total_rates()
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = _dot(r, z)
    iterations = 0
    residual = float(np.max(np.abs(r)))

    while iterations < max_iter:
        ap = operator(p)
        alpha = rz / _dot(p, ap)
        x += alpha * p
        iterations += 1
        if iterations % RESIDUAL_REFRESH == 0:
            r = b - operator(x)
        else:
            r -= alpha * ap
        residual = float(np.max(np.abs(r)))
        if residual <= threshold:
            r = b - operator(x)
            residual = float(np.max(np.abs(r)))
            if residual <= threshold:
                break
        z = r / diag
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        if iterations % 100 == 0:
            logger.debug(f"CG iteration {iterations}: residual {residual:.3e}")
    else:
        raise ConvergenceError(
            f"corrector solve did not converge in {max_iter} iterations "
            f"(relative residual {residual / scale:.3e}, tol {tol:.1e})",
            residual=residual / scale,
            iterations=iterations,
            env_seed=getattr(getattr(env, "spec", None), "seed", None),
        )

    logger.debug(
        f"Corrector mu={mu:g} solved in {iterations} iterations, "
        f"residual {residual:.3e}"
    )
    return CorrectorField(
        env.identity, mu, xi, FieldScalar(x, label="phi"), residual, iterations, tol
    )


def jump_increments(env, corr):
    """
    Per site and direction: xi . z + phi(x+z) - phi(x) and phi(x+z) - phi(x).
    """
    corr.check_matches(env)
    phi = corr.values
    neighbors = env.neighbor_table()
    dphi = phi[neighbors] - phi[:, None]
    steps = directions(env.d) @ corr.xi
    return steps[None, :] + dphi, dphi


def v_mu_field(env, corr):
    """
    v_mu(theta_x omega) = sum_{|z|=1} omega_{x,x+z}(xi.z + phi(x+z) - phi(x))^2,
    the density of the martingale's quadratic variation.
    """
    grad, _ = jump_increments(env, corr)
    values = np.sum(env.rate_table() * grad**2, axis=1)
    return FieldScalar(values, label="v_mu", n_sites=env.n_sites)


def sigma_mu_sq(env, corr):
    """sigma_mu^2, the torus-spatial mean of v_mu."""
    return v_mu_field(env, corr).mean()


def w_mu_field(env, corr):
    """w_mu = mu * phi^2 + v_mu, pointwise."""
    v = v_mu_field(env, corr).values
    return FieldScalar(corr.mu * corr.values**2 + v, label="w_mu", n_sites=env.n_sites)


def d_mu_field(env, corr):
    """
    d_mu(theta_x omega) = |xi| + sum_{|z|=1} |phi(x+z) - phi(x)|, which
    dominates every martingale jump |xi.z + phi(x+z) - phi(x)| out of x.
    """
    _, dphi = jump_increments(env, corr)
    values = float(np.linalg.norm(corr.xi)) + np.sum(np.abs(dphi), axis=1)
    return FieldScalar(values, label="d_mu", n_sites=env.n_sites)


class Chi1D:
    """
    The one-dimensional corrector chi on a segment of sites.

    Attributes
    ----------
    chi : numpy.ndarray
        chi at consecutive sites; chi[origin] = 0.
    increments : numpy.ndarray
        chi[k+1] - chi[k] as prescribed, inv_mean / omega_{k,k+1} - 1.
    conductances : numpy.ndarray
        omega_{k,k+1} for consecutive edges of the segment.
    inv_mean : float
        The constant E[1/omega]^-1.
    origin : int
        Array index of site 0.
    """

    def __init__(self, chi, increments, conductances, inv_mean, origin=0):
        self.chi = chi
        self.increments = increments
        self.conductances = conductances
        self.inv_mean = float(inv_mean)
        self.origin = int(origin)

    def __len__(self):
        return len(self.chi)

    def at(self, x):
        """chi at site(s) x, relative to the origin."""
        return self.chi[np.asarray(x, dtype=np.int64) + self.origin]

    def martingale_values(self):
        """x + chi(x) at every site of the segment."""
        sites = np.arange(len(self.chi)) - self.origin
        return sites + self.chi

    def harmonicity_residual(self):
        """L^omega(x + chi(x)) at the interior sites of the segment."""
        return harmonicity_residual(self.conductances, self.chi)


def chi_1d(conductance_sequence, inv_mean):
    """
    chi(0) = 0 and chi(x+1) - chi(x) = inv_mean / omega_{x,x+1} - 1 along the
    given conductances omega_{0,1}, omega_{1,2}, ...

    Parameters
    ----------
    conductance_sequence : array of float, length n >= 1
        Conductances in [1, M].
    inv_mean : float
        E[1/omega]^-1 of the generating distribution.

    Returns
    -------
    Chi1D
        chi at sites 0..n.
    """
    omega = np.asarray(conductance_sequence, dtype=np.float64).ravel()
    if len(omega) == 0:
        raise UsageError("chi_1d needs at least one conductance")
    increments = inv_mean / omega - 1.0
    chi = np.concatenate([[0.0], np.cumsum(increments)])
    return Chi1D(chi, increments, omega, inv_mean, origin=0)


def chi_on_segment(line_env, inv_mean):
    """
    chi on the sites -K..K of a LineEnvironment, with chi(0) = 0 and the
    chi_1d recursion applied outwards in both directions.
    """
    K = line_env.K
    omega = line_env.edges
    increments = inv_mean / omega - 1.0
    right = np.cumsum(increments[K:])
    # chi(x) = chi(x+1) - increment(x), walking left from 0
    left = -np.cumsum(increments[:K][::-1])
    chi = np.concatenate([left[::-1], [0.0], right])
    return Chi1D(chi, increments, omega, inv_mean, origin=K)


def harmonicity_residual(conductances, chi):
    """
    omega_{z,z+1}(1 + chi(z+1) - chi(z)) + omega_{z,z-1}(-1 + chi(z-1) - chi(z))
    at the interior sites z = 1..n-1 of a segment of n conductances.
    """
    omega = np.asarray(conductances, dtype=np.float64)
    chi = np.asarray(chi, dtype=np.float64)
    forward = omega[1:] * (1.0 + chi[2:] - chi[1:-1])
    backward = omega[:-1] * (-1.0 + chi[:-2] - chi[1:-1])
    return forward + backward


def chi_increment_bound(inv_mean, M):
    """Bound on |chi(x+1) - chi(x)| for conductances in [1, M]."""
    return max(inv_mean - 1.0, 1.0 - inv_mean / M)


def v_1d(omega_plus, omega_minus, inv_mean):
    """
    v(omega) = E[1/omega]^-2 (1/omega_{0,1} + 1/omega_{0,-1}), the quadratic
    variation density of x + chi(x). Vectorized over its arguments.
    """
    return inv_mean**2 * (
        1.0 / np.asarray(omega_plus, dtype=np.float64)
        + 1.0 / np.asarray(omega_minus, dtype=np.float64)
    )


def v_1d_field(line_env, inv_mean):
    """v at every site of a LineEnvironment (nan at the two ends)."""
    table = line_env.rate_table()
    return v_1d(table[:, 0], table[:, 1], inv_mean)


def homogenized_sigma_sq_1d(distribution):
    """sigma^2 = E[v] = 2 E[1/omega]^-1 in dimension one."""
    return 2.0 * distribution.inverse_mean()

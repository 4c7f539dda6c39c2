import numpy as np
import pytest

from rcclt import (
    ConfigurationError,
    ConvergenceError,
    Environment,
    EnvironmentSpec,
    UsageError,
    chi_1d,
    generate_environment,
    homogenized_sigma_sq_1d,
    sigma_mu_sq,
    solve_corrector,
    v_mu_field,
    w_mu_field,
)
from rcclt.Corrector import (
    apply_generator,
    chi_on_segment,
    d_mu_field,
    jump_increments,
)
from rcclt.Environment import Distribution, LineEnvironment
from rcclt.SpectralExact import dense_corrector


@pytest.fixture
def two_sites():
    # edges {0,1} and {1,0} (across the wrap) carry conductances 1 and 4
    return Environment(EnvironmentSpec(1, 2, "uniform:4"), [[1.0, 4.0]])


def test_two_site_corrector(two_sites):
    corr = solve_corrector(two_sites, 1.0)
    np.testing.assert_allclose(corr.values, [-3 / 11, 3 / 11], atol=1e-12)
    assert sigma_mu_sq(two_sites, corr) == pytest.approx(389 / 121, rel=1e-12)
    assert corr.residual(two_sites) <= 1e-10


def test_cg_agrees_with_a_dense_solve():
    env = generate_environment(EnvironmentSpec(2, 8, "uniform:4", seed=21))
    xi = [0.6, 0.8]
    corr = solve_corrector(env, 0.05, xi, tol=1e-12)
    np.testing.assert_allclose(
        corr.values, dense_corrector(env, 0.05, xi), rtol=0, atol=1e-8
    )
    # the torus sum of phi vanishes together with the drift's
    assert abs(np.sum(corr.values)) < 1e-7


def test_constant_environment_has_no_corrector():
    env = generate_environment(EnvironmentSpec(2, 6, "constant:2"))
    corr = solve_corrector(env, 0.1)
    assert corr.iterations == 0
    assert not np.any(corr.values)
    assert sigma_mu_sq(env, corr) == 4.0


def test_generator_annihilates_constants():
    env = generate_environment(EnvironmentSpec(3, 4, "twopoint:4:0.3", seed=2))
    assert np.max(np.abs(apply_generator(env, np.full(env.n_sites, 2.5)))) < 1e-12


def test_non_convergence_is_reported():
    env = generate_environment(EnvironmentSpec(2, 8, "uniform:4", seed=4))
    with pytest.raises(ConvergenceError) as e:
        solve_corrector(env, 0.01, max_iter=1)
    assert e.value.iterations == 1
    assert e.value.residual > 0
    assert e.value.env_seed == 4


@pytest.mark.parametrize("mu", [0.0, -1.0, float("nan")])
def test_mu_must_be_positive(two_sites, mu):
    with pytest.raises(ConfigurationError):
        solve_corrector(two_sites, mu)


def test_corrector_is_tied_to_its_environment(two_sites):
    corr = solve_corrector(two_sites, 1.0)
    with pytest.raises(UsageError):
        corr.check_matches(two_sites, xi=[-1.0])
    with pytest.raises(UsageError):
        corr.check_matches(two_sites, mu=0.5)
    other = generate_environment(EnvironmentSpec(1, 2, "uniform:4", seed=8))
    with pytest.raises(UsageError):
        corr.check_matches(other)


def test_fields():
    env = generate_environment(EnvironmentSpec(2, 6, "uniform:4", seed=13))
    corr = solve_corrector(env, 0.2)
    v = v_mu_field(env, corr)
    w = w_mu_field(env, corr)
    assert np.all(v.values > 0)
    np.testing.assert_allclose(w.values, v.values + 0.2 * corr.values**2)
    grad, _ = jump_increments(env, corr)
    d_mu = d_mu_field(env, corr)
    assert np.all(np.abs(grad) <= d_mu.values[:, None] + 1e-12)


def test_corrector_export(tmp_path, two_sites):
    corr = solve_corrector(two_sites, 1.0)
    corr.export(str(tmp_path / "corrector.csv"))
    text = (tmp_path / "corrector.csv").read_text().splitlines()
    assert text[0] == "site_index,phi"
    assert len(text) == 3
    assert (tmp_path / "corrector.json").exists()


def test_chi_jumps_on_alternating_conductances():
    inv_mean = Distribution.parse("twopoint:4:0.5").inverse_mean()
    chi = chi_1d([1.0, 4.0] * 10, inv_mean)
    assert chi.at(0) == 0.0
    np.testing.assert_allclose(
        np.unique(np.round(1.0 + chi.increments, 12)), [0.4, 1.6]
    )
    assert np.max(np.abs(chi.harmonicity_residual())) < 1e-12


def test_chi_is_harmonic_on_random_segments():
    dist = Distribution.parse("uniform:6")
    line = LineEnvironment(dist, 17, 50)
    chi = chi_on_segment(line, dist.inverse_mean())
    assert chi.at(0) == 0.0
    assert len(chi) == line.n_sites
    np.testing.assert_allclose(np.diff(chi.chi), chi.increments, atol=1e-12)
    assert np.max(np.abs(chi.harmonicity_residual())) < 1e-12


def test_chi_needs_conductances():
    with pytest.raises(UsageError):
        chi_1d([], 1.0)


def test_homogenized_variance_in_one_dimension():
    assert homogenized_sigma_sq_1d(Distribution.parse("twopoint:4:0.5")) == (
        pytest.approx(3.2)
    )
    assert homogenized_sigma_sq_1d(Distribution.parse("constant:3")) == 6.0

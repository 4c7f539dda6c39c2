import numpy as np
import pandas as pd
import pytest

from rcclt import (
    AcceptanceError,
    ConfigurationError,
    EnvironmentSpec,
    ExperimentReport,
    UsageError,
    chi_tail_experiment,
    clt_experiment,
    decay_experiment,
    generate_environment,
    phi_moment_experiment,
    remainder_experiment,
    sigma_convergence_experiment,
    solve_corrector,
    spatial_average_variance,
    w_mu_field,
)
from rcclt.CounterRNG import derive_seed
from rcclt.Environment import Distribution
from rcclt.Experiments import check_t_grid, hoeffding_bound

CLT_COLUMNS = [
    "t",
    "mu",
    "ks",
    "ks_stderr",
    "v_hat",
    "v_hat_stderr",
    "j_hat",
    "j_hat_stderr",
    "hh_raw",
    "sigma_mu",
    "sigma_mu_stderr",
    "n_samples",
    "n_env",
    "ks_mart",
    "ks_mart_stderr",
    "r2_mean",
    "r2_mean_stderr",
    "r2_exact",
    "psi",
    "tail_r",
    "tail_r_stderr",
    "msd",
    "msd_stderr",
    "qv_fluctuation",
    "qv_fluctuation_stderr",
    "m_mean",
    "m_mean_stderr",
    "ito_gap",
    "ito_gap_stderr",
    "jump_violations",
    "total_jumps",
]


def test_horizon_grids():
    np.testing.assert_array_equal(check_t_grid([64, 16, 4, 256]), [4, 16, 64, 256])
    with pytest.raises(ConfigurationError):
        check_t_grid([1, 2, 4])
    with pytest.raises(ConfigurationError):
        check_t_grid([1, 2, 4, 9])
    with pytest.raises(ConfigurationError):
        check_t_grid([0, 1, 2, 4])


def test_failed_checks_raise():
    report = ExperimentReport("demo", pd.DataFrame({"t": [1.0]}))
    report.add_check("fine", True)
    report.assert_checks()
    report.add_check("broken", False, "value 2 > 1")
    assert [c["name"] for c in report.failed_checks()] == ["broken"]
    with pytest.raises(AcceptanceError) as e:
        report.assert_checks()
    assert e.value.check == "broken"
    assert report.summary()["fit"] is None


def test_clt_report_layout():
    spec = EnvironmentSpec(1, 16, "twopoint:4:0.5", seed=4)
    report = clt_experiment(spec, [1, 2, 4, 8], n_env=2, n_walks=64)
    assert list(report.frame.columns) == CLT_COLUMNS
    np.testing.assert_array_equal(report.frame["t"], [1, 2, 4, 8])
    np.testing.assert_allclose(report.frame["mu"], [1, 0.5, 0.25, 0.125])
    assert np.all(report.frame["n_samples"] == 128)
    assert np.all((report.frame["ks"] > 0) & (report.frame["ks"] < 1))
    assert np.all(np.isnan(report.frame["r2_exact"]))
    assert report.fit is not None
    assert report.meta["rate_slope"] == pytest.approx(-0.1)
    names = [c["name"] for c in report.checks]
    assert "ks_bound@t=8" in names
    assert "jump_domination" in names
    assert "ks_slope" in names


def test_clt_reports_the_exact_remainder_for_one_environment():
    spec = EnvironmentSpec(1, 8, "uniform:4", seed=4)
    report = clt_experiment(spec, [1, 2, 4, 8], n_env=1, n_walks=32)
    assert np.all(report.frame["r2_exact"] > 0)


def test_sigma_of_constant_conductances():
    spec = EnvironmentSpec(2, 4, "constant:2")
    report = sigma_convergence_experiment(spec, [0.1, 1.0], n_env=2)
    np.testing.assert_array_equal(report.frame["mu"], [1.0, 0.1])
    np.testing.assert_allclose(report.frame["sigma_mu_sq"], 4.0)
    assert not report.failed_checks()


def test_sigma_grid_must_be_positive():
    spec = EnvironmentSpec(1, 8, "uniform:4")
    with pytest.raises(ConfigurationError):
        sigma_convergence_experiment(spec, [1.0, 0.0])


def test_box_variance_of_single_sites():
    spec = EnvironmentSpec(2, 8, "uniform:4", seed=2)
    report = spatial_average_variance(spec, 2, 0.1, [0, 1, 2])
    fields = []
    for k in range(2):
        env = generate_environment(spec.with_seed(derive_seed(spec.seed, k)))
        fields.append(w_mu_field(env, solve_corrector(env, 0.1)).values)
    mean = np.mean([f.mean() for f in fields])
    expected = np.mean([np.mean((f - mean) ** 2) for f in fields])
    assert report.frame["box_variance"].iloc[0] == pytest.approx(expected, rel=1e-10)
    np.testing.assert_array_equal(report.frame["box_sites"], [1, 9, 25])


def test_boxes_must_fit_in_the_torus():
    spec = EnvironmentSpec(2, 8, "uniform:4")
    with pytest.raises(UsageError):
        spatial_average_variance(spec, 1, 0.1, [0, 4])


def test_second_moment_of_phi():
    spec = EnvironmentSpec(1, 8, "uniform:4", seed=6)
    report = phi_moment_experiment(spec, [1.0, 0.1], p=2, n_env=1)
    env = generate_environment(spec.with_seed(derive_seed(spec.seed, 0)))
    expected = np.mean(solve_corrector(env, 0.1).values ** 2)
    assert report.frame["moment"].iloc[1] == pytest.approx(expected, rel=1e-8)
    with pytest.raises(ConfigurationError):
        phi_moment_experiment(spec, [1.0], p=3)


def test_chi_tail_layout():
    dist = Distribution.parse("twopoint:4:0.5")
    report = chi_tail_experiment(dist, [64, 16], 0.25, n_paths=200, seed=1)
    assert list(report.frame["n"]) == [16, 64]
    assert np.all((report.frame["frequency"] >= 0) & (report.frame["frequency"] <= 1))
    np.testing.assert_allclose(report.frame["threshold"], [8.0, 64**0.75])
    with pytest.raises(ConfigurationError):
        chi_tail_experiment(dist, [16], 0.5)


def test_hoeffding_bound():
    dist = Distribution.parse("twopoint:4:0.5")
    # chi increments range over an interval of width 1.6 * 3/4
    expected = 2.0 * np.exp(-2.0 * 4.0 / 1.2**2)
    assert hoeffding_bound(dist, 16, 0.25) == pytest.approx(expected)
    assert hoeffding_bound(Distribution.parse("constant:2"), 16, 0.25) == 0.0


def test_decay_report():
    spec = EnvironmentSpec(2, 6, "twopoint:4:0.5", seed=7)
    report = decay_experiment(spec, 2, 0.01, [0, 0.25, 0.5, 1, 2, 4])
    assert report.meta["knee"] > 0
    assert report.meta["gap_min"] > 0
    assert not [c for c in report.failed_checks() if c["name"] == "decay_monotone"]


def test_clt_fits_the_fluctuation_rates():
    spec = EnvironmentSpec(1, 16, "twopoint:4:0.5", seed=4)
    report = clt_experiment(spec, [1, 2, 4, 8], n_env=2, n_walks=64, martingale="chi")
    for column in ("v_hat", "j_hat"):
        fit = report.meta[f"{column}_fit"]
        assert report.meta[f"{column}_slope"] == fit["slope"]
    names = [c["name"] for c in report.checks]
    assert "v_hat_slope" in names
    assert "j_hat_slope" in names


def test_sigma_gap_detail_reads_the_same_either_way():
    spec = EnvironmentSpec(1, 8, "uniform:4")
    for final_tol, passed in [(10.0, True), (0.0, False)]:
        report = sigma_convergence_experiment(
            spec, [1.0, 0.5], n_env=2, final_tol=final_tol
        )
        (check,) = [c for c in report.checks if c["name"] == "sigma_final_gap"]
        assert check["passed"] is passed
        assert ">" not in check["detail"]
        assert "tolerance" in check["detail"]


def test_decay_of_the_harmonic_coordinate_density():
    spec = EnvironmentSpec(1, 64, "twopoint:4:0.5", seed=3)
    report = decay_experiment(spec, 2, None, [0, 1, 2, 4], field="v_1d")
    assert np.all(np.isnan(report.frame["mu"]))
    assert np.all(np.diff(report.frame["var_hat"]) <= 0)
    assert not [c for c in report.failed_checks() if c["name"] == "decay_monotone"]
    assert "decay_slope" in [c["name"] for c in report.checks]


def test_decay_fields_are_validated():
    with pytest.raises(UsageError):
        decay_experiment(
            EnvironmentSpec(2, 4, "uniform:4"), 1, 0.1, [0, 1], field="v_1d"
        )
    with pytest.raises(ConfigurationError):
        decay_experiment(EnvironmentSpec(1, 8, "uniform:4"), 1, 0.1, [0, 1], field="w")


def _failed(report, prefix):
    return [c for c in report.failed_checks() if c["name"].startswith(prefix)]


@pytest.mark.slow
def test_remainder_matches_its_spectral_value():
    spec = EnvironmentSpec(2, 8, "twopoint:4:0.5", seed=3)
    report = remainder_experiment(spec, [4, 16, 64], n_walks=100000, threads=4)
    np.testing.assert_allclose(report.frame["mu"], [0.25, 1 / 16, 1 / 64])
    assert np.all(np.abs(report.frame["z_score"]) <= 3)
    assert not _failed(report, "remainder_oracle")
    assert report.frame["jump_violations"].sum() == 0


@pytest.mark.slow
def test_sigma_converges_in_one_dimension():
    # sigma_mu^2 carries a torus bias that grows with L at fixed n_env;
    # L = 64 keeps the mu = 1/64 gap under 0.05
    spec = EnvironmentSpec(1, 64, "twopoint:4:0.5")
    report = sigma_convergence_experiment(spec, [1, 1 / 4, 1 / 16, 1 / 64], n_env=16)
    assert report.meta["sigma_sq_exact"] == pytest.approx(16 / 5)
    gaps = report.frame["gap"].to_numpy()
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] <= 0.05
    assert not report.failed_checks()


@pytest.mark.slow
def test_clt_rate_in_one_dimension():
    spec = EnvironmentSpec(1, 256, "twopoint:4:0.5", seed=2)
    report = clt_experiment(
        spec, [16, 64, 256, 1024], n_env=64, n_walks=4096, threads=4
    )
    np.testing.assert_allclose(report.frame["mu"], 1 / report.frame["t"])
    assert np.all(report.frame["n_samples"] >= 260000)
    ks = report.frame["ks"].to_numpy()
    t = report.frame["t"].to_numpy()
    assert np.all(ks[1:] <= ks[0] * (t[1:] / 16) ** -0.1 * 1.5)
    assert report.fit.slope <= -0.1
    assert not _failed(report, "ks_bound")
    assert not _failed(report, "ks_slope")


@pytest.mark.slow
def test_harmonic_coordinate_fluctuation_rates():
    spec = EnvironmentSpec(1, 256, "twopoint:4:0.5", seed=5)
    report = clt_experiment(
        spec, [16, 64, 256, 1024], n_env=8, n_walks=2048, martingale="chi", threads=4
    )
    assert report.meta["v_hat_slope"] <= -0.25
    assert abs(report.meta["j_hat_slope"] + 1) <= 0.25
    assert not _failed(report, "v_hat_slope")
    assert not _failed(report, "j_hat_slope")


@pytest.mark.slow
def test_quadratic_variation_fluctuation_in_three_dimensions():
    # one environment, so sigma_mu^2 is its own and v_hat has no bias floor
    spec = EnvironmentSpec(3, 8, "twopoint:4:0.5", seed=6)
    report = clt_experiment(
        spec, [8, 16, 32, 64, 128, 256, 512], n_env=1, n_walks=2000, threads=4
    )
    assert report.meta["v_hat_slope"] <= -0.5
    assert not _failed(report, "v_hat_slope")


@pytest.mark.slow
def test_variance_decay_in_two_dimensions():
    spec = EnvironmentSpec(2, 32, "twopoint:4:0.5", seed=1)
    t = [1, 2, 4, 8, 16, 32, 64]
    report = decay_experiment(spec, 100, 1e-3, t, threads=4)
    assert report.meta["knee"] > 0
    assert not _failed(report, "decay_monotone")
    assert -1.0 <= report.fit.slope <= -0.3
    assert not _failed(report, "decay_slope")


@pytest.mark.slow
def test_harmonic_coordinate_density_decays_like_a_square_root():
    spec = EnvironmentSpec(1, 256, "twopoint:4:0.5", seed=1)
    t = [4, 8, 16, 32, 64, 128, 256]
    report = decay_experiment(spec, 32, None, t, field="v_1d", threads=4)
    assert not _failed(report, "decay")
    assert -0.8 <= report.fit.slope <= -0.3


@pytest.mark.slow
def test_box_averages_in_three_dimensions():
    spec = EnvironmentSpec(3, 16, "twopoint:4:0.5", seed=1)
    report = spatial_average_variance(spec, 100, 0.01, [1, 2, 4], threads=4)
    assert -2.6 <= report.fit.slope <= -1.4
    assert not report.failed_checks()


@pytest.mark.slow
def test_fourth_moment_of_phi_stays_bounded_in_three_dimensions():
    spec = EnvironmentSpec(3, 8, "twopoint:4:0.5", seed=1)
    report = phi_moment_experiment(spec, [1, 0.1, 0.01], p=4, n_env=1)
    moments = report.frame["moment"].to_numpy()
    assert np.all(moments[1:] / moments[:-1] <= 3)
    assert not report.failed_checks()


@pytest.mark.slow
def test_chi_tail_frequencies():
    dist = Distribution.parse("twopoint:4:0.5")
    report = chi_tail_experiment(dist, [100, 400, 1600], 0.25, n_paths=10000, seed=0)
    freq = report.frame["frequency"].to_numpy()
    assert freq[0] <= 0.02
    assert freq[-1] <= 0.005
    assert not report.failed_checks()

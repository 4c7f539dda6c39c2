import json

import numpy as np
import pandas as pd
import pytest

from rcclt import Environment
from rcclt.cli import RunConfig, main
from rcclt.Exceptions import ConfigurationError
from rcclt.WalkSimulator import SAMPLE_COLUMNS


def _manifest(out):
    with open(out / "manifest.json") as f:
        return json.load(f)


def test_gen_env(tmp_path):
    args = ["gen-env", "--d", "1", "--L", "32", "--dist", "constant:1"]
    code = main(args + ["--out", str(tmp_path)])
    assert code == 0
    env = Environment.read(str(tmp_path / "env.rcc"))
    assert env.conductances.size == 32
    assert np.all(env.conductances == 1.0)
    manifest = _manifest(tmp_path)
    assert manifest["command"] == "gen-env"
    assert manifest["outputs"] == ["env.rcc", "env.rcc.json"]
    assert manifest["results"]["n_edges"] == 32
    assert "numpy" in manifest["versions"]


def test_output_directory_from_the_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RCCLT_OUT", str(tmp_path))
    assert main(["gen-env", "--d", "2", "--L", "4", "--dist", "uniform:4"]) == 0
    assert (tmp_path / "env.rcc").exists()


def test_configuration_errors_exit_with_2(tmp_path, capsys):
    code = main(["gen-env", "--dist", "gaussian:1", "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("rcclt: error=ConfigurationError code=2 message=")
    assert len(err.splitlines()) == 1


def test_bad_numbers_exit_with_2(tmp_path):
    assert main(["gen-env", "--L", "many", "--out", str(tmp_path)]) == 2
    assert main(["gen-env", "--L", "7", "--out", str(tmp_path)]) == 2


def test_convergence_errors_exit_with_3(tmp_path, capsys):
    args = ["solve-corrector", "--d", "2", "--L", "8", "--dist", "uniform:4"]
    code = main(args + ["--max-iter", "1", "--seed", "3", "--out", str(tmp_path)])
    assert code == 3
    assert "error=ConvergenceError code=3" in capsys.readouterr().err


def test_capacity_errors_exit_with_3(tmp_path, capsys):
    args = ["spectral", "--d", "2", "--L", "66", "--dist", "uniform:4"]
    assert main(args + ["--out", str(tmp_path)]) == 3
    assert "error=CapacityError" in capsys.readouterr().err


def test_failed_checks_exit_with_4(tmp_path, capsys):
    args = ["sigma", "--d", "1", "--L", "8", "--dist", "uniform:4", "--mu", "1,0.5"]
    args += ["--n-env", "2", "--final-tol", "0", "--check"]
    code = main(args + ["--out", str(tmp_path)])
    assert code == 4
    assert "error=AcceptanceError code=4" in capsys.readouterr().err
    # the manifest is written before the checks are enforced
    assert _manifest(tmp_path)["results"]["experiment"] == "sigma"


def test_failed_checks_without_check_flag_still_succeed(tmp_path):
    args = ["sigma", "--d", "1", "--L", "8", "--dist", "uniform:4", "--mu", "1,0.5"]
    args += ["--n-env", "2", "--final-tol", "0"]
    assert main(args + ["--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "sigma.csv")
    assert list(frame["mu"]) == [1.0, 0.5]


def test_solve_corrector_outputs(tmp_path):
    args = ["solve-corrector", "--d", "1", "--L", "16", "--dist", "twopoint:4:0.5"]
    assert main(args + ["--mu", "0.1", "--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "corrector.csv")
    assert list(frame.columns) == ["site_index", "phi"]
    assert len(frame) == 16
    assert abs(frame["phi"].sum()) < 1e-6
    assert _manifest(tmp_path)["results"]["sigma_mu_sq"] > 0


def test_simulate_outputs(tmp_path):
    args = ["simulate", "--d", "1", "--L", "8", "--t", "2,4", "--n-env", "2"]
    args += ["--n-walks", "8", "--dump-paths", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    samples = pd.read_csv(tmp_path / "samples.csv")
    assert list(samples.columns) == SAMPLE_COLUMNS
    assert len(samples) == 32
    sigma = pd.read_csv(tmp_path / "sigma.csv")
    assert len(sigma) == 4
    assert (tmp_path / "paths_t2.csv").exists()
    assert (tmp_path / "paths_t4.csv").exists()


def test_spectral_outputs(tmp_path):
    args = ["spectral", "--d", "1", "--L", "8", "--dist", "uniform:4"]
    assert main(args + ["--t", "1,4", "--out", str(tmp_path)]) == 0
    spectral = pd.read_csv(tmp_path / "spectral.csv")
    assert list(spectral.columns) == ["lambda", "weight"]
    assert len(spectral) == 8
    exact = pd.read_csv(tmp_path / "remainder_exact.csv")
    assert list(exact["t"]) == [1.0, 4.0]
    np.testing.assert_allclose(
        exact["r2_exact"], exact["boundary_exact"] + exact["integral_exact"]
    )


def test_phi_spectrum_needs_mu(tmp_path, capsys):
    args = ["spectral", "--d", "1", "--L", "8", "--field", "phi"]
    assert main(args + ["--out", str(tmp_path)]) == 2


def test_rate_fit(tmp_path, capsys):
    path = tmp_path / "points.csv"
    pd.DataFrame({"t": [1.0, 10.0], "ks": [1.0, 0.1]}).to_csv(path, index=False)
    assert main(["rate-fit", "--in", str(path), "--out", str(tmp_path)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["slope"] == pytest.approx(-1.0)
    with open(tmp_path / "rate_fit.json") as f:
        assert json.load(f)["slope"] == pytest.approx(-1.0)


def test_config_file(tmp_path):
    cfg = RunConfig("gen-env", {"d": 1, "L": 8, "dist": "uniform:2"}, 5, str(tmp_path))
    path = tmp_path / "run.json"
    cfg.to_file(str(path))
    assert main(["gen-env", "--config", str(path), "--L", "16"]) == 0
    env = Environment.read(str(tmp_path / "env.rcc"))
    assert env.L == 16
    assert env.spec.seed == 5


def test_config_rejects_unknown_parameters(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig("gen-env", {"walks": 3})
    with pytest.raises(ConfigurationError):
        RunConfig("teleport", {})
    path = tmp_path / "run.json"
    record = {
        "command": "gen-env",
        "params": {"bogus": 1},
        "master_seed": 0,
        "out_dir": str(tmp_path),
    }
    path.write_text(json.dumps(record))
    assert main(["gen-env", "--config", str(path)]) == 2


def test_results_do_not_depend_on_threads(tmp_path):
    args = ["simulate", "--d", "2", "--L", "8", "--t", "4", "--n-env", "2"]
    args += ["--n-walks", "40", "--block-size", "7", "--seed", "11"]
    assert main(args + ["--threads", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--threads", "4", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    b = (tmp_path / "b" / "samples.csv").read_bytes()
    assert a == b


def test_unreadable_inputs_exit_with_2(tmp_path, capsys):
    missing = str(tmp_path / "missing.csv")
    assert main(["rate-fit", "--in", missing, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("rcclt: error=ConfigurationError code=2 message=")
    assert len(err.splitlines()) == 1
    args = ["solve-corrector", "--env", str(tmp_path / "missing.rcc")]
    assert main(args + ["--out", str(tmp_path)]) == 2
    assert main(["gen-env", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["gen-env", "--config", str(tmp_path / "broken.json")]) == 2


def test_unusable_output_directory_exits_with_2(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["gen-env", "--out", str(blocker / "sub")]) == 2


def test_threads_do_not_change_any_output_file(tmp_path):
    args = ["simulate", "--d", "2", "--L", "8", "--t", "4", "--n-env", "2"]
    args += ["--n-walks", "16", "--block-size", "5", "--dump-paths", "2"]
    assert main(args + ["--threads", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--threads", "3", "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "manifest.json":
            a, b = json.loads(a), json.loads(b)
            a.pop("wall_time")
            b.pop("wall_time")
        assert a == b, name


def test_decay_of_the_one_dimensional_density(tmp_path, capsys):
    args = ["decay", "--d", "1", "--L", "32", "--dist", "twopoint:4:0.5"]
    args += ["--t", "0,1,2,4", "--n-env", "2", "--field", "v_1d"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    frame = pd.read_csv(tmp_path / "a" / "decay.csv")
    assert list(frame["t"]) == [0.0, 1.0, 2.0, 4.0]
    assert _manifest(tmp_path / "a")["params"]["field"] == "v_1d"
    args[2] = "2"
    assert main(args + ["--L", "4", "--out", str(tmp_path / "b")]) == 2

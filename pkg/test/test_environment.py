import os

import numpy as np
import pandas as pd
import pytest

from rcclt import (
    ConfigurationError,
    Environment,
    EnvironmentSpec,
    LineEnvironment,
    SegmentRangeError,
    drift_field,
    generate_environment,
)
from rcclt.Environment import Distribution, site_coords

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def env2d():
    return generate_environment(EnvironmentSpec(2, 8, "uniform:4", seed=3))


def test_generation_is_a_function_of_the_spec():
    spec = EnvironmentSpec(3, 4, "twopoint:4:0.5", seed=9)
    a = generate_environment(spec)
    b = generate_environment(spec.copy())
    np.testing.assert_array_equal(a.conductances, b.conductances)
    c = generate_environment(spec.with_seed(10))
    assert not np.array_equal(a.conductances, c.conductances)


def test_conductances_follow_the_law():
    env = generate_environment(EnvironmentSpec(2, 32, "twopoint:4:0.5", seed=1))
    assert env.conductances.shape == (2, 1024)
    assert set(np.unique(env.conductances)) == {1.0, 4.0}
    assert np.mean(env.conductances == 1.0) == pytest.approx(0.5, abs=0.05)
    uniform = generate_environment(EnvironmentSpec(1, 64, "uniform:3", seed=1))
    assert np.all((uniform.conductances >= 1) & (uniform.conductances <= 3))


def test_environments_are_frozen(env2d):
    with pytest.raises(ValueError):
        env2d.conductances[0, 0] = 2.0


def test_conductances_are_symmetric(env2d):
    for x in [(0, 0), (7, 3), (2, 7)]:
        for z in [(1, 0), (0, 1)]:
            y = np.add(x, z)
            back = tuple(-np.asarray(z))
            assert env2d.conductance(x, z) == env2d.conductance(y, back)


def test_rate_table_matches_pointwise_lookup(env2d):
    table = env2d.rate_table()
    dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    for index in [0, 13, 63]:
        x = site_coords(index, 2, 8)
        expected = [env2d.conductance(x, z) for z in dirs]
        np.testing.assert_array_equal(table[index], expected)


def test_neighbors_wrap_around_the_torus(env2d):
    neighbors = env2d.neighbor_table()
    # site (7, 0) has +e_1 neighbor (0, 0) and -e_2 neighbor (7, 7)
    x = env2d.site_index([7, 0])
    assert neighbors[x, 0] == env2d.site_index([0, 0])
    assert neighbors[x, 3] == env2d.site_index([7, 7])


def test_drift_sums_to_zero(env2d):
    drift = drift_field(env2d, [1.0, 0.5])
    assert abs(np.sum(drift.values)) < 1e-10
    assert len(drift) == 64


def test_drift_of_a_constant_environment_vanishes():
    env = generate_environment(EnvironmentSpec(2, 4, "constant:2"))
    assert not np.any(drift_field(env, [1.0, 0.0]).values)


def test_drift_rejects_bad_directions(env2d):
    with pytest.raises(ConfigurationError):
        drift_field(env2d, [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        drift_field(env2d, [1.0])


def test_translation(env2d):
    x = np.array([3, 5])
    shifted = env2d.translate(x)
    for y in [(0, 0), (1, 6), (7, 7)]:
        for z in [(1, 0), (0, -1)]:
            assert shifted.conductance(y, z) == env2d.conductance(x + y, z)
    assert shifted.identity != env2d.identity


def test_binary_file(tmp_path, env2d):
    path = str(tmp_path / "envs" / "env.rcc")
    env2d.write(path)
    assert os.path.exists(path + ".json")
    assert os.path.getsize(path) == 42 + 8 * env2d.conductances.size
    again = Environment.read(path)
    assert again.spec == env2d.spec
    np.testing.assert_array_equal(again.conductances, env2d.conductances)


def test_bad_magic_is_reported(tmp_path):
    path = tmp_path / "bogus.rcc"
    path.write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(ConfigurationError):
        Environment.read(str(path))


def test_line_segments_extend_each_other():
    dist = Distribution.parse("uniform:4")
    short = LineEnvironment(dist, 5, 4)
    long = LineEnvironment(dist, 5, 8)
    np.testing.assert_array_equal(short.edges, long.edges[4:12])
    assert short.n_sites == 9


def test_line_segments_end():
    line = LineEnvironment(Distribution.parse("uniform:4"), 5, 4)
    assert int(line.site_index(np.array([[3]]))[0]) == 7
    with pytest.raises(SegmentRangeError) as e:
        line.site_index(np.array([[-4]]))
    assert e.value.half_width == 4
    table = line.rate_table()
    assert np.isnan(table[0, 1]) and np.isnan(table[-1, 0])


def test_pinned_twopoint_environment(tmp_path):
    golden = pd.read_csv(os.path.join(DATA_DIR, "env_twopoint_d1_L8_seed7.csv"))
    env = generate_environment(EnvironmentSpec(1, 8, "twopoint:4:0.5", seed=7))
    np.testing.assert_array_equal(env.conductances.ravel(), golden["omega"])
    path = str(tmp_path / "env.rcc")
    env.write(path, sidecar=False)
    with open(path, "rb") as f:
        payload = f.read()[42:]
    assert payload == golden["omega"].to_numpy(dtype="<f8").tobytes()


def test_drift_field_follows_translation(env2d):
    xi = np.array([1.0, -0.5])
    drift = drift_field(env2d, xi).values
    for x in [(0, 0), (3, 5), (7, 1)]:
        shifted = drift_field(env2d.translate(x), xi).values
        assert shifted[0] == pytest.approx(drift[env2d.site_index(x)], rel=1e-14)

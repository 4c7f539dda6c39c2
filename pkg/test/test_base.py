import pytest

from rcclt import ConfigurationError, Distribution, EnvironmentSpec

# usage: from the repository root run `pytest test/test_base.py`


def test_spec_survives_a_json_file(tmp_path):
    spec = EnvironmentSpec(2, 16, "twopoint:4:0.25", seed=11)
    path = tmp_path / "spec.json"
    spec.to_file(str(path))
    assert EnvironmentSpec.from_file(str(path)) == spec


def test_copy_is_equal_but_distinct():
    spec = EnvironmentSpec(1, 8, "uniform:3", seed=5)
    other = spec.copy()
    assert other == spec
    assert other is not spec
    assert other.with_seed(6) != spec


def test_unknown_keys_are_rejected():
    data = {"d": 1, "L": 8, "distribution": {"kind": "uniform", "M": 3.0}, "seed": 0}
    with pytest.raises(ConfigurationError) as e:
        EnvironmentSpec.from_json(dict(data, extra=1))
    assert e.value.field == "extra"


def test_wrong_types_name_the_field():
    with pytest.raises(ConfigurationError) as e:
        EnvironmentSpec(1, 8.0, "uniform:3")
    assert e.value.field == "L"


@pytest.mark.parametrize("L", [0, 7])
def test_torus_side_must_be_even(L):
    with pytest.raises(ConfigurationError) as e:
        EnvironmentSpec(1, L, "uniform:3")
    assert e.value.field == "L"


def test_dimension_is_bounded():
    with pytest.raises(ConfigurationError):
        EnvironmentSpec(5, 4, "uniform:3")


def test_ceiling_must_bound_the_support():
    with pytest.raises(ConfigurationError) as e:
        EnvironmentSpec(1, 8, "uniform:4", M=2.0)
    assert e.value.field == "M"


def test_distribution_minilanguage():
    assert str(Distribution.parse("twopoint:4:0.5")) == "twopoint:4:0.5"
    assert str(Distribution.parse(" Uniform:2.5 ")) == "uniform:2.5"
    assert Distribution.parse("constant:2").ceiling == 2.0
    for text in ["gaussian:1", "twopoint:4", "uniform:x", "constant:0.5", "uniform:1"]:
        with pytest.raises(ConfigurationError):
            Distribution.parse(text)


def test_harmonic_means():
    assert Distribution.parse("twopoint:4:0.5").inverse_mean() == pytest.approx(1.6)
    assert Distribution.parse("constant:3").inverse_mean() == 3.0
    # (M - 1) / log M for uniform conductances on [1, M]
    assert Distribution.parse("uniform:4").inverse_mean() == pytest.approx(
        3.0 / 1.3862943611198906
    )

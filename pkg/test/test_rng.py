import numpy as np
import pytest

from rcclt import CounterRNG


def test_philox_known_answer():
    words = CounterRNG.philox4x32((0, 0, 0, 0), (0, 0))
    assert [int(w) for w in words] == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]


def test_philox_known_answer_all_ones():
    ones = 0xFFFFFFFF
    words = CounterRNG.philox4x32((ones, ones, ones, ones), (ones, ones))
    assert [int(w) for w in words] == [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]


def test_draws_do_not_depend_on_evaluation_order():
    counters = np.arange(100)
    together = CounterRNG.uniforms(42, counters, 3, CounterRNG.FAMILY_WALK)
    one_by_one = [
        CounterRNG.uniforms(42, int(c), 3, CounterRNG.FAMILY_WALK) for c in counters
    ]
    np.testing.assert_array_equal(together, np.array(one_by_one).ravel())
    reversed_draws = CounterRNG.uniforms(42, counters[::-1], 3, CounterRNG.FAMILY_WALK)
    np.testing.assert_array_equal(together, reversed_draws[::-1])


def test_families_and_streams_are_distinct():
    a = CounterRNG.uniforms(1, np.arange(16), 0, CounterRNG.FAMILY_EDGE)
    b = CounterRNG.uniforms(1, np.arange(16), 0, CounterRNG.FAMILY_WALK)
    c = CounterRNG.uniforms(1, np.arange(16), 1, CounterRNG.FAMILY_EDGE)
    assert not np.any(a == b)
    assert not np.any(a == c)


def test_uniforms_lie_in_the_unit_interval():
    u, v = CounterRNG.uniform_pair(7, np.arange(10000), 0, CounterRNG.FAMILY_CHI)
    assert np.all((u >= 0) & (u < 1))
    assert np.all((v >= 0) & (v < 1))
    assert u.mean() == pytest.approx(0.5, abs=0.02)


def test_derived_seeds():
    seeds = [CounterRNG.derive_seed(0, k) for k in range(50)]
    assert len(set(seeds)) == 50
    assert all(0 <= s < 2**64 for s in seeds)
    assert seeds == [CounterRNG.derive_seed(0, k) for k in range(50)]


def test_negative_inputs_are_refused():
    with pytest.raises(ValueError):
        CounterRNG.uniforms(-1, 0)


def test_zigzag():
    np.testing.assert_array_equal(
        CounterRNG.zigzag([0, -1, 1, -2, 2]), [0, 1, 2, 3, 4]
    )

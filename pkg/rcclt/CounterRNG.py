"""
Counter-based random numbers.

Every random number used by the lab is a pure function of
(seed, family, stream, counter), computed with the Philox4x32-10 block
function over numpy arrays. An edge, a walk step or a chi increment can
therefore be regenerated on its own, in any order and from any thread.
"""

import numpy as np

# Philox4x32 multipliers and Weyl key increments
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# stream families, stored in the last counter word
FAMILY_EDGE = 0
FAMILY_WALK = 1
FAMILY_CHI = 2
FAMILY_LINE = 3
FAMILY_SEED = 4
FAMILY_NORMAL = 5
FAMILY_START = 6

_TWO_POW_M53 = 1.0 / 9007199254740992.0


def _words(value):
    """Split a python int or an integer array into (low, high) 32-bit words."""
    if isinstance(value, (int, np.integer)):
        value = int(value)
        if value < 0:
            raise ValueError("counter-based RNG inputs must be nonnegative")
        return (
            np.uint64(value & 0xFFFFFFFF),
            np.uint64((value >> 32) & 0xFFFFFFFF),
        )
    value = np.asarray(value)
    if np.any(value < 0):
        raise ValueError("counter-based RNG inputs must be nonnegative")
    value = value.astype(np.uint64)
    return value & _MASK32, (value >> _SHIFT32) & _MASK32


def philox4x32(counter, key, rounds=10):
    """
    The Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of 4 uint64 arrays or scalars
        The four 32-bit counter words (values above 2**32 are masked).
        Arrays broadcast against each other.
    key : sequence of 2 uint64 scalars or arrays
        The two 32-bit key words.
    rounds : int
        Number of rounds, 10 for the standard generator.

    Returns
    -------
    tuple of 4 numpy.ndarray
        The four 32-bit output words, as uint64 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    for r in range(rounds):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def random_words(seed, counters, stream=0, family=FAMILY_EDGE):
    """
    Four 32-bit random words per counter.

    Parameters
    ----------
    seed : int
        64-bit key.
    counters : int or array of int
        Position inside the stream (e.g. edge index or step number).
    stream : int or array of int
        Stream index inside the family (e.g. walk index or path index).
        Broadcasts against counters.
    family : int
        One of the FAMILY_* constants.
    """
    k0, k1 = _words(seed)
    lo, hi = _words(counters)
    s = np.asarray(stream, dtype=np.uint64) & _MASK32
    f = np.uint64(family)
    lo, hi, s = np.broadcast_arrays(lo, hi, s)
    return philox4x32((lo, hi, s, np.full_like(lo, f)), (k0, k1))


def _to_unit(a, b):
    """Combine two 32-bit words into a double in [0, 1) with 53 random bits."""
    top = (a >> np.uint64(5)).astype(np.float64)
    bottom = (b >> np.uint64(6)).astype(np.float64)
    return (top * 67108864.0 + bottom) * _TWO_POW_M53


def uniform_pair(seed, counters, stream=0, family=FAMILY_EDGE):
    """
    Two independent uniforms in [0, 1) per counter.

    Returns
    -------
    u, v : numpy.ndarray
        Arrays with the broadcast shape of counters and stream.
    """
    w0, w1, w2, w3 = random_words(seed, counters, stream, family)
    return _to_unit(w0, w1), _to_unit(w2, w3)


def uniforms(seed, counters, stream=0, family=FAMILY_EDGE):
    """One uniform in [0, 1) per counter (the first of uniform_pair)."""
    return uniform_pair(seed, counters, stream, family)[0]


def standard_normals(seed, counters, stream=0, family=FAMILY_NORMAL):
    """Standard normal draws per counter (Box-Muller on uniform_pair)."""
    u, v = uniform_pair(seed, counters, stream, family)
    radius = np.sqrt(-2.0 * np.log1p(-u))
    return radius * np.cos(2.0 * np.pi * v)


def derive_seed(master_seed, index):
    """
    Derive the 64-bit seed of the index-th environment of a run.

    Parameters
    ----------
    master_seed : int
        The run's master seed.
    index : int
        Environment index inside the run.
    """
    w0, w1, _, _ = random_words(master_seed, index, 0, FAMILY_SEED)
    return (int(w1) << 32) | int(w0)


def zigzag(x):
    """Map signed site coordinates to nonnegative counters (0, -1, 1, -2 ...)."""
    x = np.asarray(x, dtype=np.int64)
    return np.where(x >= 0, 2 * x, -2 * x - 1)

# -*- coding: utf-8 -*-
import hashlib
import logging
import math
import os

import numpy as np
import pandas as pd

from . import CounterRNG
from .Base import Base
from .Exceptions import ConfigurationError, SegmentRangeError, UsageError

logger = logging.getLogger(__name__)

MAGIC = b"RCC1"

# Binary header of an environment file, little-endian and packed
HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("d", "u1"),
        ("L", "<u4"),
        ("M", "<f8"),
        ("tag", "u1"),
        ("params", "<f8", (2,)),
        ("seed", "<u8"),
    ]
)

MAX_DIMENSION = 4
MAX_SEED = 2**64 - 1


class Distribution(Base):
    """
    The law of a single conductance. Three families are supported, each
    with support inside [1, M]:

    constant:c
        every conductance equals c (c >= 1).
    twopoint:M:p
        a conductance equals 1 with probability p and M otherwise.
    uniform:M
        conductances are uniform on [1, M].
    """

    required_keys = ["kind"]

    type_definitions = {
        "kind": str,
        "c": [float, int],
        "M": [float, int],
        "p": [float, int],
    }

    TAGS = {"constant": 0, "twopoint": 1, "uniform": 2}

    def __init__(self, kind, c=None, M=None, p=None):
        self.kind = kind
        self.c = c
        self.M = M
        self.p = p
        self.validate()

    def validate(self):
        super().validate()
        if self.kind not in self.TAGS:
            raise ConfigurationError(
                f"distribution must be one of {sorted(self.TAGS)}, got {self.kind!r}",
                field="distribution",
            )
        if self.kind == "constant":
            if self.c is None or not math.isfinite(self.c) or self.c < 1:
                raise ConfigurationError(
                    f"constant conductance must be a finite value >= 1, got {self.c}",
                    field="c",
                )
        else:
            if self.M is None or not math.isfinite(self.M) or self.M <= 1:
                raise ConfigurationError(
                    f"ellipticity ceiling M must be finite and > 1, got {self.M}",
                    field="M",
                )
        if self.kind == "twopoint":
            if self.p is None or not 0 <= self.p <= 1:
                raise ConfigurationError(
                    f"twopoint probability p must lie in [0, 1], got {self.p}",
                    field="p",
                )

    @classmethod
    def parse(cls, text):
        """
        Parse the distribution minilanguage
        ``constant:c | twopoint:M:p | uniform:M``.
        """
        parts = str(text).strip().lower().split(":")
        kind = parts[0]
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise ConfigurationError(
                f"could not parse distribution {text!r}", field="distribution"
            )
        expected = {"constant": 1, "twopoint": 2, "uniform": 1}
        if kind not in expected or len(values) != expected[kind]:
            raise ConfigurationError(
                f"distribution must read constant:c, twopoint:M:p or uniform:M, "
                f"got {text!r}",
                field="distribution",
            )
        if kind == "constant":
            return cls(kind, c=values[0])
        if kind == "twopoint":
            return cls(kind, M=values[0], p=values[1])
        return cls(kind, M=values[0])

    def __str__(self):
        if self.kind == "constant":
            return f"constant:{self.c:g}"
        if self.kind == "twopoint":
            return f"twopoint:{self.M:g}:{self.p:g}"
        return f"uniform:{self.M:g}"

    @property
    def tag(self):
        return self.TAGS[self.kind]

    @property
    def ceiling(self):
        """The smallest M such that the support lies in [1, M]."""
        if self.kind == "constant":
            return float(self.c)
        return float(self.M)

    def params(self):
        """The two header parameters of the binary environment format."""
        if self.kind == "constant":
            return [float(self.c), 0.0]
        if self.kind == "twopoint":
            return [float(self.M), float(self.p)]
        return [1.0, float(self.M)]

    @classmethod
    def from_tag(cls, tag, params):
        if tag == 0:
            return cls("constant", c=float(params[0]))
        if tag == 1:
            return cls("twopoint", M=float(params[0]), p=float(params[1]))
        if tag == 2:
            return cls("uniform", M=float(params[1]))
        raise ConfigurationError(f"unknown distribution tag {tag}", field="tag")

    def sample(self, u):
        """
        Map uniforms in [0, 1) to conductances.

        Parameters
        ----------
        u : numpy.ndarray
            Uniform draws.
        """
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "constant":
            return np.full(u.shape, float(self.c))
        if self.kind == "twopoint":
            return np.where(u < self.p, 1.0, float(self.M))
        return 1.0 + (float(self.M) - 1.0) * u

    def mean(self):
        """The annealed mean of a conductance."""
        if self.kind == "constant":
            return float(self.c)
        if self.kind == "twopoint":
            return self.p + (1.0 - self.p) * self.M
        return 0.5 * (1.0 + self.M)

    def inverse_mean(self):
        """The analytic value of E[1/omega]^-1 (the harmonic mean)."""
        if self.kind == "constant":
            return float(self.c)
        if self.kind == "twopoint":
            return 1.0 / (self.p + (1.0 - self.p) / self.M)
        return (self.M - 1.0) / math.log(self.M)


class EnvironmentSpec(Base):
    """
    Everything needed to regenerate an environment bit for bit.

    Attributes
    ----------
    d : int
        Lattice dimension, 1 to 4.
    L : int
        Torus side, even and at least 2.
    distribution : Distribution
        Law of the i.i.d. conductances.
    seed : int
        64-bit unsigned key of the counter-based generator.
    M : float
        Ellipticity ceiling. Defaults to the distribution's ceiling.
    """

    required_keys = ["d", "L", "distribution", "seed", "M"]

    type_definitions = {
        "d": int,
        "L": int,
        "distribution": Distribution,
        "seed": int,
        "M": [float, int],
    }

    def __init__(self, d, L, distribution, seed=0, M=None):
        if isinstance(distribution, str):
            distribution = Distribution.parse(distribution)
        if isinstance(distribution, dict):
            distribution = Distribution(**distribution)
        self.d = d
        self.L = L
        self.distribution = distribution
        self.seed = seed
        self.M = M if M is not None else max(distribution.ceiling, 1.0)
        self.validate()

    def validate(self):
        super().validate()
        if isinstance(self.d, bool) or not 1 <= self.d <= MAX_DIMENSION:
            raise ConfigurationError(
                f"d must be an integer in 1..{MAX_DIMENSION}, got {self.d}", field="d"
            )
        if self.L < 2 or self.L % 2 != 0:
            raise ConfigurationError(
                f"L must be an even integer >= 2, got {self.L}", field="L"
            )
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigurationError(
                f"seed must be a 64-bit unsigned integer, got {self.seed}",
                field="seed",
            )
        # Constant(1) is the only law whose ceiling may equal 1
        if not math.isfinite(self.M) or self.M < self.distribution.ceiling:
            raise ConfigurationError(
                f"M={self.M} does not bound the support of {self.distribution}",
                field="M",
            )
        if self.M <= 1 and self.distribution.kind != "constant":
            raise ConfigurationError(f"M must be > 1, got {self.M}", field="M")

    @staticmethod
    def parse_json(data=None):
        if isinstance(data.get("distribution"), dict):
            data["distribution"] = Distribution(**data["distribution"])
        return data

    @property
    def n_sites(self):
        return self.L**self.d

    def with_seed(self, seed):
        """A copy of this spec with another seed."""
        return EnvironmentSpec(self.d, self.L, self.distribution.copy(), seed, self.M)

    def spec_hash(self):
        """Short identity of the spec, used to tie correctors to environments."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


class FieldScalar:
    """
    A real field over the torus sites, row-major, e.g. the values
    f(theta_x omega) of a stationary functional f.
    """

    def __init__(self, values, label="", n_sites=None):
        values = np.ascontiguousarray(values, dtype=np.float64).ravel()
        if n_sites is not None and len(values) != n_sites:
            raise UsageError(
                f"field {label!r} has {len(values)} values but the torus has "
                f"{n_sites} sites"
            )
        self.values = values
        self.label = label

    def __len__(self):
        return len(self.values)

    def mean(self):
        return float(np.mean(self.values))

    def centered(self):
        return FieldScalar(self.values - self.values.mean(), label=f"{self.label}-bar")

    def to_frame(self):
        return pd.DataFrame(
            {
                "site_index": np.arange(len(self.values)),
                self.label or "value": self.values,
            }
        )


def directions(d):
    """
    The 2d unit vectors in the order +e_1, -e_1, +e_2, -e_2, ...

    Returns
    -------
    numpy.ndarray
        Integer array of shape (2d, d).
    """
    dirs = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        dirs[2 * i, i] = 1
        dirs[2 * i + 1, i] = -1
    return dirs


def direction_index(z):
    """Position of the unit vector z in the order returned by directions()."""
    z = np.asarray(z, dtype=np.int64)
    nonzero = np.flatnonzero(z)
    if len(nonzero) != 1 or abs(z[nonzero[0]]) != 1:
        raise UsageError(f"direction must be a unit vector +-e_i, got {z.tolist()}")
    axis = int(nonzero[0])
    return 2 * axis + (0 if z[axis] > 0 else 1)


def site_index(coords, L):
    """
    Row-major index of (possibly unwrapped) site coordinates on the torus.

    Parameters
    ----------
    coords : array of int, shape (d,) or (n, d)
        Site coordinates in Z^d, reduced modulo L.
    L : int
        Torus side.
    """
    coords = np.asarray(coords, dtype=np.int64)
    d = coords.shape[-1]
    wrapped = np.mod(coords, L)
    return np.ravel_multi_index(tuple(np.moveaxis(wrapped, -1, 0)), (L,) * d)


def site_coords(index, d, L):
    """Coordinates in [0, L)^d of a row-major site index."""
    return np.stack(np.unravel_index(np.asarray(index), (L,) * d), axis=-1)


class Environment:
    """
    Conductances on the discrete torus of side L in dimension d.

    Slot (i, x) of `conductances` stores the conductance of the undirected
    edge {x, x + e_i mod L}, axis-major then row-major over sites, so every
    edge is stored once and omega_{x,y} = omega_{y,x} holds by construction.
    Environments are never modified after creation.
    """

    def __init__(self, spec, conductances, origin=None):
        conductances = np.array(conductances, dtype=np.float64, copy=True)
        if conductances.shape != (spec.d, spec.n_sites):
            conductances = conductances.reshape(spec.d, spec.n_sites)
        conductances.setflags(write=False)
        self.spec = spec
        self.conductances = conductances
        # sites by which this environment was translated from spec's one
        self.origin = tuple(origin) if origin is not None else (0,) * spec.d
        self._rate_table = None

    @classmethod
    def generate(cls, spec):
        """
        Draw the d * L^d conductances of `spec` with the counter-based
        generator keyed by (seed, edge index).
        """
        n_edges = spec.d * spec.n_sites
        logger.info(
            f"Generating {spec.distribution} environment d={spec.d} L={spec.L} "
            f"seed={spec.seed} ({n_edges} edges)"
        )
        u = CounterRNG.uniforms(
            spec.seed, np.arange(n_edges), 0, CounterRNG.FAMILY_EDGE
        )
        values = spec.distribution.sample(u)
        return cls(spec, values.reshape(spec.d, spec.n_sites))

    @property
    def d(self):
        return self.spec.d

    @property
    def L(self):
        return self.spec.L

    @property
    def M(self):
        return self.spec.M

    @property
    def n_sites(self):
        return self.spec.n_sites

    @property
    def shape(self):
        return (self.spec.L,) * self.spec.d

    @property
    def identity(self):
        """Spec hash plus translation, identifying the conductance array."""
        if any(self.origin):
            return f"{self.spec.spec_hash()}@{','.join(map(str, self.origin))}"
        return self.spec.spec_hash()

    def grid(self):
        """Conductances as an array of shape (d, L, ..., L)."""
        return self.conductances.reshape((self.d,) + self.shape)

    def site_index(self, coords):
        return site_index(coords, self.L)

    def conductance(self, x, z):
        """
        The conductance omega_{x, x+z} for a site x and a unit vector z.
        Direction -e_i at x reads slot (x - e_i mod L, i).
        """
        k = direction_index(z)
        axis = k // 2
        x = np.asarray(x, dtype=np.int64)
        if k % 2 == 1:
            x = x.copy()
            x[axis] -= 1
        return float(self.conductances[axis, site_index(x, self.L)])

    def rate_table(self):
        """
        Jump rates per site and direction, shape (L^d, 2d), in the order
        of directions(d).
        """
        if self._rate_table is None:
            grid = self.grid()
            columns = []
            for i in range(self.d):
                columns.append(grid[i].ravel())
                # omega(x - e_i, x) stored at x
                columns.append(np.roll(grid[i], 1, axis=i).ravel())
            table = np.stack(columns, axis=1)
            table.setflags(write=False)
            self._rate_table = table
        return self._rate_table

    def total_rates(self):
        """Total jump rate sum_{|z|=1} omega_{x,x+z} at every site."""
        return self.rate_table().sum(axis=1)

    def neighbor_table(self):
        """Site index of x + z per site and direction, shape (L^d, 2d)."""
        index = np.arange(self.n_sites).reshape(self.shape)
        columns = []
        for i in range(self.d):
            columns.append(np.roll(index, -1, axis=i).ravel())
            columns.append(np.roll(index, 1, axis=i).ravel())
        return np.stack(columns, axis=1)

    def translate(self, x):
        """
        The environment theta_x omega, re-rooted at site x:
        (theta_x omega)_{y,z} = omega_{x+y,x+z}.
        """
        x = np.asarray(x, dtype=np.int64).ravel()
        if len(x) != self.d:
            raise UsageError(f"translation must have {self.d} coordinates")
        grid = self.grid()
        for i in range(self.d):
            grid = np.roll(grid, -int(x[i]), axis=1 + i)
        origin = [(o + int(s)) % self.L for o, s in zip(self.origin, x)]
        return Environment(self.spec, grid.reshape(self.d, -1), origin=origin)

    def header(self):
        """The header record of the binary format, as a numpy structured array."""
        header = np.zeros(1, dtype=HEADER_DTYPE)
        header["magic"] = MAGIC
        header["d"] = self.d
        header["L"] = self.L
        header["M"] = self.M
        header["tag"] = self.spec.distribution.tag
        header["params"] = self.spec.distribution.params()
        header["seed"] = self.spec.seed
        return header

    def write(self, path, sidecar=True):
        """
        Write the environment in the binary "RCC1" format, with a JSON
        sidecar (<path>.json) mirroring the header.

        Parameters
        ----------
        path : str
            Destination of the binary file. Parent directories are created.
        sidecar : bool
            Whether to write the JSON sidecar. Default is True.
        """
        out_dir = os.path.dirname(path)
        if out_dir and not os.path.exists(out_dir):
            os.makedirs(out_dir, exist_ok=True)
        with open(path, "wb") as f:
            self.header().tofile(f)
            self.conductances.astype("<f8").tofile(f)
        logger.info(f"Saved environment to: {path}")
        if sidecar:
            self.spec.to_file(path + ".json")

    @classmethod
    def read(cls, path):
        """Read an environment written by write()."""
        with open(path, "rb") as f:
            header = np.fromfile(f, dtype=HEADER_DTYPE, count=1)
            if len(header) != 1 or header["magic"][0] != MAGIC:
                raise ConfigurationError(
                    f"{path} is not an environment file (bad magic)", field="magic"
                )
            values = np.fromfile(f, dtype="<f8")
        dist = Distribution.from_tag(int(header["tag"][0]), header["params"][0])
        spec = EnvironmentSpec(
            d=int(header["d"][0]),
            L=int(header["L"][0]),
            distribution=dist,
            seed=int(header["seed"][0]),
            M=float(header["M"][0]),
        )
        if len(values) != spec.d * spec.n_sites:
            raise ConfigurationError(
                f"{path} holds {len(values)} conductances, expected "
                f"{spec.d * spec.n_sites}",
                field="conductances",
            )
        return cls(spec, values.astype(np.float64).reshape(spec.d, spec.n_sites))


class LineEnvironment:
    """
    I.i.d. conductances on the segment [-K, K] of Z, without periodization.

    Edge {x, x+1} for x in [-K, K-1] is drawn from counter zigzag(x) of the
    line stream, so a segment with a larger K extends a smaller one.
    """

    d = 1

    def __init__(self, distribution, seed, half_width):
        if half_width < 1:
            raise UsageError(f"segment half-width must be >= 1, got {half_width}")
        self.distribution = distribution
        self.seed = seed
        self.K = int(half_width)
        xs = np.arange(-self.K, self.K)
        u = CounterRNG.uniforms(
            seed, CounterRNG.zigzag(xs), 0, CounterRNG.FAMILY_LINE
        )
        # edges[x + K] = omega_{x, x+1}
        self.edges = distribution.sample(u)
        self.edges.setflags(write=False)
        self._rate_table = None

    @property
    def M(self):
        return self.distribution.ceiling

    @property
    def n_sites(self):
        return 2 * self.K + 1

    @property
    def identity(self):
        return f"line:{self.distribution}:{self.seed}:{self.K}"

    def site_index(self, coords):
        """
        Index of site x in [-K, K] (x + K). Raises SegmentRangeError when a
        walk reaches the segment's end, where one of its edges is unknown.
        """
        x = np.asarray(coords, dtype=np.int64)[..., 0]
        if np.any(np.abs(x) >= self.K):
            raise SegmentRangeError(
                f"walk reached |x| >= {self.K}; rerun with a longer chi segment "
                f"(half-width {2 * self.K})",
                half_width=self.K,
            )
        return x + self.K

    def rate_table(self):
        """Rates (omega_{x,x+1}, omega_{x,x-1}) per site; nan at both ends."""
        if self._rate_table is None:
            table = np.full((self.n_sites, 2), np.nan)
            table[:-1, 0] = self.edges
            table[1:, 1] = self.edges
            table.setflags(write=False)
            self._rate_table = table
        return self._rate_table


def generate_environment(spec):
    """Generate the environment described by `spec` (a pure function of it)."""
    return Environment.generate(spec)


def conductance(env, x, z):
    """omega_{x, x+z} for a unit vector z."""
    return env.conductance(x, z)


def check_xi(xi, d):
    """Validate a direction vector xi and return it as a float array."""
    xi = np.asarray(xi, dtype=np.float64).ravel()
    if len(xi) != d:
        raise ConfigurationError(
            f"xi must have {d} components, got {len(xi)}", field="xi"
        )
    if not np.all(np.isfinite(xi)):
        raise ConfigurationError("xi must be finite", field="xi")
    if not np.any(xi != 0):
        raise ConfigurationError("xi must not be the zero vector", field="xi")
    return xi


def drift_field(env, xi):
    """
    The local drift in direction xi at every site,
    d(theta_x omega) = sum_{|z|=1} omega_{x,x+z} (xi . z).

    Parameters
    ----------
    env : Environment
        The environment.
    xi : array of float
        Direction, length d, not all zero.

    Returns
    -------
    FieldScalar
        The drift field. Its torus sum vanishes since every edge contributes
        once with each sign.
    """
    xi = check_xi(xi, env.d)
    table = env.rate_table()
    values = np.zeros(env.n_sites)
    for i in range(env.d):
        values += xi[i] * (table[:, 2 * i] - table[:, 2 * i + 1])
    return FieldScalar(values, label="drift", n_sites=env.n_sites)

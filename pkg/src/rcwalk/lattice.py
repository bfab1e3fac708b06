"""I.i.d. random-conductance environments on finite boxes and tori.

Vertices of the box ``{0, ..., L-1}^d`` are numbered in C order.  Each
undirected edge is stored once, in the slot ``(x, k)`` of its lower endpoint
``x`` and the positive direction ``k``; on a free box the slots of edges that
would leave the box hold 0 and are never iterated over.
"""
from __future__ import annotations

import functools
import io
import struct
from dataclasses import dataclass

import numpy as np

from . import rng

FREE = "free"
TORUS = "torus"


@dataclass(frozen=True)
class LatticeSpec:
    d: int
    L: int
    boundary: str = TORUS

    def __post_init__(self):
        if int(self.d) < 2:
            raise ValueError(f"dimension must be >= 2, got {self.d}")
        if int(self.L) < 2:
            raise ValueError(f"side must be >= 2, got {self.L}")
        if self.boundary not in (FREE, TORUS):
            raise ValueError(f"boundary must be 'free' or 'torus', got {self.boundary!r}")

    @property
    def shape(self):
        return (self.L,) * self.d

    @property
    def n_vertices(self):
        return self.L ** self.d

    @property
    def n_edges(self):
        if self.boundary == TORUS:
            return self.d * self.L ** self.d
        return self.d * self.L ** (self.d - 1) * (self.L - 1)

    @property
    def strides(self):
        return tuple(self.L ** (self.d - 1 - k) for k in range(self.d))

    def coords(self, x):
        """Coordinates of vertex index/indices ``x`` (last axis = dimension)."""
        return np.stack(np.unravel_index(np.asarray(x), self.shape), axis=-1)

    def index(self, coords):
        """Vertex index of coordinates (array with last axis of length d)."""
        c = np.asarray(coords)
        if self.boundary == TORUS:
            c = np.mod(c, self.L)
        elif np.any((c < 0) | (c >= self.L)):
            raise IndexError("coordinates outside the box")
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)

    def center(self):
        """Index of the vertex playing the role of the origin."""
        return int(self.index(np.full(self.d, self.L // 2)))

    def edge_exists(self):
        """Boolean array (V, d): which storage slots are real edges."""
        return _edge_exists(self.d, self.L, self.boundary)

    def neighbor_table(self):
        """Array (V, 2d) of neighbour indices; column k is +e_k, d+k is -e_k.

        On a free box, missing neighbours wrap around; their conductance slot
        is 0 so they are never used.
        """
        return _neighbor_table(self.d, self.L)

    def neighbor_exists(self):
        """Boolean (V, 2d) companion of :meth:`neighbor_table`."""
        return _neighbor_exists(self.d, self.L, self.boundary)

    def displacement(self, a, b):
        """Shortest lattice displacement b - a (wrap-aware on a torus)."""
        da = self.coords(b) - self.coords(a)
        if self.boundary == TORUS:
            da = (da + self.L // 2) % self.L - self.L // 2
        return da


@functools.lru_cache(maxsize=4)
def _neighbor_table(d, L):
    grid = np.arange(L ** d).reshape((L,) * d)
    out = np.empty((L ** d, 2 * d), dtype=np.int64)
    for k in range(d):
        out[:, k] = np.roll(grid, -1, axis=k).ravel()
        out[:, d + k] = np.roll(grid, 1, axis=k).ravel()
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=8)
def _edge_exists(d, L, boundary):
    ex = np.ones((L ** d, d), dtype=bool)
    if boundary == FREE:
        c = np.stack(np.unravel_index(np.arange(L ** d), (L,) * d), axis=-1)
        ex &= c < L - 1
    ex.setflags(write=False)
    return ex


@functools.lru_cache(maxsize=8)
def _neighbor_exists(d, L, boundary):
    ex = _edge_exists(d, L, boundary)
    nb = _neighbor_table(d, L)
    out = np.concatenate([ex, ex[nb[:, d:], np.arange(d)]], axis=1)
    out.setflags(write=False)
    return out


# ----------------------------------------------------------------------------
# conductance laws


@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def validate(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("constant conductance must lie in [0, 1]")

    def transform(self, u):
        return np.full(u.shape, float(self.c))

    def open_probability(self):
        return 1.0 if self.c > 0 else 0.0

    def prob_at_least(self, xi):
        return 1.0 if self.c >= xi and (xi > 0 or self.c > 0) else 0.0

    @property
    def tag(self):
        return f"constant:{self.c!r}"


@dataclass(frozen=True)
class Bernoulli:
    q: float

    def validate(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")

    def transform(self, u):
        return (u <= self.q).astype(np.float64)

    def open_probability(self):
        return float(self.q)

    def prob_at_least(self, xi):
        return float(self.q) if xi <= 1.0 else 0.0

    @property
    def tag(self):
        return f"bernoulli:{self.q!r}"


@dataclass(frozen=True)
class TwoPoint:
    q: float
    lo: float
    hi: float

    def validate(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        # lo == hi is allowed: it is the degenerate constant law
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError("need 0 <= lo <= hi <= 1")

    def transform(self, u):
        return np.where(u <= self.q, float(self.hi), float(self.lo))

    def open_probability(self):
        return (self.q if self.hi > 0 else 0.0) + ((1 - self.q) if self.lo > 0 else 0.0)

    def prob_at_least(self, xi):
        if xi == 0:
            return self.open_probability()
        return (self.q if self.hi >= xi else 0.0) + ((1 - self.q) if self.lo >= xi else 0.0)

    @property
    def tag(self):
        return f"twopoint:{self.q!r},{self.lo!r},{self.hi!r}"


@dataclass(frozen=True)
class ZeroUniformMixture:
    """0 with probability 1-q, otherwise uniform on (0, 1]."""

    q: float

    def validate(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")

    def transform(self, u):
        # u in (0, 1]; the top q-fraction is rescaled onto (0, 1]
        cut = 1.0 - self.q
        out = np.zeros(u.shape)
        open_ = u > cut
        if self.q > 0:
            out[open_] = np.minimum((u[open_] - cut) / self.q, 1.0)
        return out

    def open_probability(self):
        return float(self.q)

    def prob_at_least(self, xi):
        return float(self.q) * (1.0 - min(max(xi, 0.0), 1.0)) if xi > 0 else float(self.q)

    @property
    def tag(self):
        return f"mixture:{self.q!r}"


@dataclass(frozen=True)
class PolynomialTail:
    """Law with P(w <= a) = a**gamma on (0, 1]."""

    gamma: float

    def validate(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    def transform(self, u):
        return u ** (1.0 / self.gamma)

    def open_probability(self):
        return 1.0

    def prob_at_least(self, xi):
        return 1.0 - min(max(xi, 0.0), 1.0) ** self.gamma if xi > 0 else 1.0

    @property
    def tag(self):
        return f"polytail:{self.gamma!r}"


@dataclass(frozen=True)
class Thresholded:
    """xi * 1{w >= xi} with w drawn from ``base`` (same uniform, so coupled)."""

    base: object
    xi: float

    def validate(self):
        self.base.validate()
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must lie in (0, 1]")

    def transform(self, u):
        return np.where(self.base.transform(u) >= self.xi, float(self.xi), 0.0)

    def open_probability(self):
        return self.base.prob_at_least(self.xi)

    def prob_at_least(self, xi):
        return self.open_probability() if xi <= self.xi else 0.0

    @property
    def tag(self):
        return f"thresholded:{self.xi!r}@{self.base.tag}"


_LAWS = {
    "constant": (Constant, 1),
    "bernoulli": (Bernoulli, 1),
    "twopoint": (TwoPoint, 3),
    "mixture": (ZeroUniformMixture, 1),
    "polytail": (PolynomialTail, 1),
}


def parse_law(text):
    """Parse ``kind:p1,p2,...`` (e.g. ``mixture:0.75``) into a law object.

    ``thresholded:XI@BASE`` wraps another law, e.g.
    ``thresholded:0.05@mixture:0.75``.
    """
    kind, _, args = text.partition(":")
    if kind.strip().lower() == "thresholded":
        xi, sep, base = args.partition("@")
        if not sep:
            raise ValueError("thresholded law needs the form thresholded:XI@BASE")
        law = Thresholded(parse_law(base), float(xi))
        law.validate()
        return law
    kind = kind.strip().lower()
    if kind not in _LAWS:
        raise ValueError(f"unknown law {kind!r}; expected one of {sorted(_LAWS)}")
    cls, nargs = _LAWS[kind]
    vals = [float(a) for a in args.split(",") if a.strip()] if args else []
    if len(vals) != nargs:
        raise ValueError(f"law {kind!r} takes {nargs} parameter(s), got {len(vals)}")
    law = cls(*vals)
    law.validate()
    return law


# ----------------------------------------------------------------------------
# environments


@dataclass(frozen=True, eq=False)
class Environment:
    spec: LatticeSpec
    values: np.ndarray
    law_tag: str = ""
    seed: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.n_vertices, self.spec.d):
            raise ValueError(f"values must have shape {(self.spec.n_vertices, self.spec.d)}")
        if np.any(~(v >= 0.0) | (v > 1.0)):
            raise ValueError("conductances must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def conductance(self, x, y):
        """Total conductance joining x and y; 0 if they are not neighbours.

        Only a torus of side 2 has parallel edges; their values are summed,
        which is the weight the walk sees.
        """
        x, y = int(x), int(y)
        hit = (self.neighbors()[x] == y) & self.spec.neighbor_exists()[x]
        return float(self.incident()[x][hit].sum())

    def neighbors(self):
        return self.spec.neighbor_table()

    def incident(self):
        """Array (V, 2d) of conductances in the neighbour-table column order."""
        inc = self.__dict__.get("_inc")
        if inc is None:
            d = self.spec.d
            nb = self.neighbors()
            inc = np.empty((self.spec.n_vertices, 2 * d))
            inc[:, :d] = self.values
            for k in range(d):
                inc[:, d + k] = self.values[nb[:, d + k], k]
            inc.setflags(write=False)
            object.__setattr__(self, "_inc", inc)
        return inc

    def weights(self):
        """n(x) = sum of conductances at x, for every vertex."""
        return self.incident().sum(axis=1)

    def edge_list(self, mask=None):
        """(u, v, w) arrays over real edges (optionally only where ``mask``)."""
        ex = self.spec.edge_exists()
        if mask is not None:
            ex = ex & mask
        xs, ks = np.nonzero(ex)
        nb = self.neighbors()
        return xs, nb[xs, ks], self.values[xs, ks]


def sample_environment(spec, law, seed):
    """Draw one conductance per undirected edge; reproducible per (spec, law, seed).

    The value in slot ``(x, k)`` is a function of ``seed`` and the slot index
    ``x*d + k`` only.
    """
    law.validate()
    n = spec.n_vertices * spec.d
    u = rng.uniforms(seed, np.arange(n, dtype=np.uint64), purpose=rng.PURPOSE_ENV)[:, 0]
    vals = law.transform(u).reshape(spec.n_vertices, spec.d)
    vals = np.where(spec.edge_exists(), vals, 0.0)
    return Environment(spec, vals, law.tag, int(seed))


def constant_environment(spec, c=1.0):
    return sample_environment(spec, Constant(c), 0)


def from_edges(spec, edges, default=0.0):
    """Build an environment from ``{(x, y): w}`` over neighbour pairs."""
    vals = np.where(spec.edge_exists(), float(default), 0.0)
    nb = spec.neighbor_table()
    d = spec.d
    for (x, y), w in edges.items():
        hit = False
        for k in range(d):
            if nb[x, k] == y:
                vals[x, k] = w
                hit = True
                break
            if nb[y, k] == x:
                vals[y, k] = w
                hit = True
                break
        if not hit:
            raise ValueError(f"({x}, {y}) is not a lattice edge")
    return Environment(spec, np.where(spec.edge_exists(), vals, 0.0), "custom", 0)


def threshold_mask(env, xi):
    """Open-edge mask: w >= xi when xi > 0, w > 0 when xi == 0."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    m = env.values > 0 if xi == 0 else env.values >= xi
    return m & env.spec.edge_exists()


def weight_at(env, x):
    """n(x), the total conductance at vertex ``x``."""
    x = int(x)
    if not 0 <= x < env.spec.n_vertices:
        raise IndexError(f"vertex {x} out of range")
    return float(env.incident()[x].sum())


# ----------------------------------------------------------------------------
# binary file format

MAGIC = b"RCME"
FORMAT_VERSION = 1
_BOUNDARY_CODE = {FREE: 0, TORUS: 1}


def dumps(env):
    tag = env.law_tag.encode("utf-8")
    head = MAGIC + struct.pack(
        "<HHQBQI", FORMAT_VERSION, env.spec.d, env.spec.L,
        _BOUNDARY_CODE[env.spec.boundary], env.seed & 0xFFFFFFFFFFFFFFFF, len(tag),
    )
    return head + tag + env.values.astype("<f8").tobytes()


def loads(data):
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ValueError("not an environment file (bad magic)")
    fmt = "<HHQBQI"
    version, d, L, bcode, seed, ntag = struct.unpack(fmt, buf.read(struct.calcsize(fmt)))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    tag = buf.read(ntag).decode("utf-8")
    boundary = {v: k for k, v in _BOUNDARY_CODE.items()}[bcode]
    spec = LatticeSpec(d, L, boundary)
    raw = buf.read()
    vals = np.frombuffer(raw, dtype="<f8")
    if vals.size != spec.n_vertices * d:
        raise ValueError("truncated environment file")
    return Environment(spec, vals.reshape(spec.n_vertices, d).astype(np.float64), tag, seed)


def save(env, path):
    with open(path, "wb") as fh:
        fh.write(dumps(env))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())

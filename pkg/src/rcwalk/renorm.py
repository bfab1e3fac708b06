"""Block renormalization of an edge-mask pair (alpha, alpha').

Blocks B_i have 2N+1 vertices per side and are laid out from coordinate 0;
the enlarged box B'_i shares the centre and has 5N/2+1 vertices per side.
Coordinates are never wrapped, so on a torus the blocks near the seam are
simply treated like those at the edge of a free box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import optimize, stats
from scipy.sparse import csgraph

from .geometry import giant_members, label_clusters, find_holes
from .lattice import LatticeSpec, sample_environment, threshold_mask

BLACK, GREY, PURE_WHITE = 0, 1, 2
COLOR_NAMES = {BLACK: "black", GREY: "grey", PURE_WHITE: "pure_white"}
STRICT_MODES = ("crossing", "nonsingleton")


class ConsistencyError(ValueError):
    """alpha' is not contained in alpha."""


@dataclass(frozen=True)
class BoxGrid:
    spec: LatticeSpec
    N: int

    def __post_init__(self):
        if self.N < 4 or self.N % 4:
            raise ValueError("N must be a multiple of 4 and at least 4")
        if self.blocks_per_axis < 3:
            raise ValueError(f"side {self.spec.L} holds fewer than 3 blocks of side {self.side}")

    @property
    def side(self):
        return 2 * self.N + 1

    @property
    def half_enlarged(self):
        return 5 * self.N // 4

    @property
    def enlarged_side(self):
        return 2 * self.half_enlarged + 1

    @property
    def blocks_per_axis(self):
        return self.spec.L // self.side

    @property
    def shape(self):
        return (self.blocks_per_axis,) * self.spec.d

    def indices(self):
        return list(itertools.product(range(self.blocks_per_axis), repeat=self.spec.d))

    def center(self, i):
        return np.asarray(i) * self.side + self.N

    def block_of(self, x):
        """Block index of each vertex, -1 rows for the leftover strip."""
        c = np.atleast_2d(self.spec.coords(np.asarray(x)))
        b = c // self.side
        b[(b >= self.blocks_per_axis).any(axis=1)] = -1
        return b

    def _grid_vertices(self, lo, n):
        axes = [np.arange(lo[k], lo[k] + n) for k in range(self.spec.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return sum(m * s for m, s in zip(mesh, self.spec.strides))

    def block_vertices(self, i):
        return self._grid_vertices(np.asarray(i) * self.side, self.side)

    def enlarged_complete(self, i):
        c = self.center(i)
        h = self.half_enlarged
        return bool(((c - h) >= 0).all() and ((c + h) <= self.spec.L - 1).all())

    def enlarged_vertices(self, i):
        """d-dimensional array of the vertices of B'_i (must be complete)."""
        if not self.enlarged_complete(i):
            raise ValueError(f"B' of block {i} leaves the lattice")
        return self._grid_vertices(self.center(i) - self.half_enlarged, self.enlarged_side)

    def neighbors_within_one(self, i):
        out = []
        for off in itertools.product((-1, 0, 1), repeat=self.spec.d):
            j = tuple(a + b for a, b in zip(i, off))
            if all(0 <= a < self.blocks_per_axis for a in j):
                out.append(j)
        return out


@dataclass
class BoxClassification:
    grid: BoxGrid
    color: np.ndarray
    immaculate: np.ndarray
    crossing_cluster: dict = field(default_factory=dict)
    complete: np.ndarray = None

    def white(self):
        return self.color != BLACK

    def fractions(self):
        c = self.complete
        n = int(c.sum())
        return {
            "blocks": n,
            "white": float((self.white() & c).sum() / n) if n else 0.0,
            "grey": float((self.color[c] == GREY).sum() / n) if n else 0.0,
            "pure_white": float((self.color[c] == PURE_WHITE).sum() / n) if n else 0.0,
            "immaculate": float((self.immaculate & c).sum() / n) if n else 0.0,
        }

    def to_dict(self):
        blocks = [{"index": list(i), "color": COLOR_NAMES[int(self.color[i])],
                   "immaculate": bool(self.immaculate[i])} for i in self.grid.indices()]
        return {"N": self.grid.N, "shape": list(self.grid.shape), "blocks": blocks, "summary": self.fractions()}


def _local_clusters(alpha, verts):
    """Clusters of alpha restricted to edges with both ends in the box ``verts``."""
    d = verts.ndim
    S = verts.shape[0]
    flat = verts.ravel()
    m = flat.size
    loc = np.arange(m).reshape(verts.shape)
    rows, cols = [], []
    for k in range(d):
        inner = [slice(None)] * d
        inner[k] = slice(0, S - 1)
        inner = tuple(inner)
        nxt = [slice(None)] * d
        nxt[k] = slice(1, S)
        a = loc[inner].ravel()
        b = loc[tuple(nxt)].ravel()
        open_ = alpha[verts[inner].ravel(), k]
        rows.append(a[open_])
        cols.append(b[open_])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = sp.coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(m, m)).tocsr()
    _, lab = csgraph.connected_components(g, directed=False)
    deg = np.bincount(r, minlength=m) + np.bincount(c, minlength=m)
    return lab.reshape(verts.shape), deg.reshape(verts.shape)


def _cluster_extent(lab, nc):
    d = lab.ndim
    grids = np.indices(lab.shape)
    lo = np.full((nc, d), np.iinfo(np.int64).max)
    hi = np.full((nc, d), -1)
    flat = lab.ravel()
    for k in range(d):
        np.minimum.at(lo[:, k], flat, grids[k].ravel())
        np.maximum.at(hi[:, k], flat, grids[k].ravel())
    return lo, hi


def crossing_for_subboxes(K, s, stride=None, exhaustive=False):
    """True if the vertex set ``K`` (bool array on a cube) crosses every subbox.

    A set crosses a box when it meets both opposite faces in every axis.
    Subboxes are cubes of ``s`` vertices per side anchored every ``stride``
    sites (the last anchor is always included); with ``exhaustive`` every
    side from ``s`` up to the full cube and every anchor is checked.
    """
    d = K.ndim
    S = K.shape[0]
    sides = range(s, S + 1) if exhaustive else [s]
    for side in sides:
        if side > S:
            continue
        if exhaustive or stride is None:
            anchors = np.arange(0, S - side + 1)
        else:
            anchors = np.arange(0, S - side + 1, stride)
            if anchors[-1] != S - side:
                anchors = np.append(anchors, S - side)
        ok = np.ones((len(anchors),) * d, dtype=bool)
        for k in range(d):
            win = tuple(1 if j == k else side for j in range(d))
            M = np.lib.stride_tricks.sliding_window_view(K, win).any(axis=tuple(range(d, 2 * d)))
            sel_lo = tuple(anchors if j != k else anchors for j in range(d))
            lo = M[np.ix_(*sel_lo)]
            sel_hi = tuple(anchors if j != k else anchors + side - 1 for j in range(d))
            hi = M[np.ix_(*sel_hi)]
            ok &= lo & hi
        if not ok.all():
            return False
    return True


def classify_boxes(spec, alpha, alpha_p, N, strict="crossing", exhaustive=False):
    """Colour every block black, grey or pure white and mark immaculate ones.

    White requires an alpha-edge touching B_i and the event R_i on B'_i:
    (a) a unique crossing alpha-cluster K_i (``strict="nonsingleton"``
    demands instead that K_i be the only cluster with an edge), (b) every
    other cluster of B'_i has L-infinity diameter at most N/10, (c) K_i
    crosses the subboxes of side ceil(N/10)+1 anchored every ceil(N/20).
    Grey: white with an edge of the giant alpha-cluster touching B_i closed
    in alpha'.  Immaculate: pure white and all 3^d surrounding blocks exist
    and are pure white.
    """
    if strict not in STRICT_MODES:
        raise ValueError(f"strict must be one of {STRICT_MODES}")
    ex = spec.edge_exists()
    alpha = np.asarray(alpha, dtype=bool) & ex
    alpha_p = np.asarray(alpha_p, dtype=bool) & ex
    if (alpha_p & ~alpha).any():
        raise ConsistencyError("alpha' must be contained in alpha")
    grid = BoxGrid(spec, N)
    nb = spec.neighbor_table()
    d = spec.d
    V = spec.n_vertices

    def touching(edge_mask):
        t = edge_mask.any(axis=1).copy()
        xs, ks = np.nonzero(edge_mask)
        t[nb[xs, ks]] = True
        return t

    has_alpha = touching(alpha)
    giant = giant_members(spec, alpha) if alpha.any() else np.zeros(V, dtype=bool)
    bad = touching(alpha & ~alpha_p & giant[:, None])

    color = np.full(grid.shape, BLACK, dtype=np.int8)
    complete = np.zeros(grid.shape, dtype=bool)
    crossing = {}
    small = N / 10
    s_sub = math.ceil(N / 10) + 1
    stride = math.ceil(N / 20)
    for i in grid.indices():
        if not grid.enlarged_complete(i):
            continue
        complete[i] = True
        if not has_alpha[grid.block_vertices(i)].any():
            continue
        verts = grid.enlarged_vertices(i)
        lab, deg = _local_clusters(alpha, verts)
        nc = int(lab.max()) + 1
        lo, hi = _cluster_extent(lab, nc)
        S = verts.shape[0]
        is_cross = ((lo == 0) & (hi == S - 1)).all(axis=1)
        if strict == "crossing":
            if is_cross.sum() != 1:
                continue
            kid = int(np.flatnonzero(is_cross)[0])
        else:
            nonsingle = np.zeros(nc, dtype=bool)
            nonsingle[np.unique(lab[deg > 0])] = True
            if nonsingle.sum() != 1:
                continue
            kid = int(np.flatnonzero(nonsingle)[0])
            if not is_cross[kid]:
                continue
        diam = (hi - lo).max(axis=1)
        others = np.ones(nc, dtype=bool)
        others[kid] = False
        if (diam[others] > small).any():
            continue
        K = lab == kid
        if not crossing_for_subboxes(K, s_sub, stride, exhaustive):
            continue
        crossing[i] = np.sort(verts[K])
        color[i] = GREY if bad[grid.block_vertices(i)].any() else PURE_WHITE

    immaculate = np.zeros(grid.shape, dtype=bool)
    nblocks = 3 ** d
    for i in grid.indices():
        if color[i] != PURE_WHITE:
            continue
        ring = grid.neighbors_within_one(i)
        if len(ring) == nblocks and all(color[j] == PURE_WHITE for j in ring):
            immaculate[i] = True
    return BoxClassification(grid, color, immaculate, crossing, complete)


def classify_environment(env, xi, N, strict="crossing", exhaustive=False):
    """Classification for alpha = [w > 0] and alpha' = [w >= xi]."""
    return classify_boxes(env.spec, threshold_mask(env, 0.0), threshold_mask(env, xi), N, strict, exhaustive)


# ----------------------------------------------------------------------------
# proof-skeleton checks


def block_components(mask):
    """Nearest-neighbour connected components of a boolean block array."""
    d = mask.ndim
    shape = mask.shape
    idx = np.arange(mask.size).reshape(shape)
    rows, cols = [], []
    for k in range(d):
        a = [slice(None)] * d
        b = [slice(None)] * d
        a[k] = slice(0, shape[k] - 1)
        b[k] = slice(1, shape[k])
        both = mask[tuple(a)] & mask[tuple(b)]
        rows.append(idx[tuple(a)][both])
        cols.append(idx[tuple(b)][both])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(mask.size, mask.size))
    _, lab = csgraph.connected_components(g, directed=False)
    return lab.reshape(shape)


def giant_immaculate(cls):
    """Largest nearest-neighbour component of immaculate blocks (bool array)."""
    imm = cls.immaculate
    out = np.zeros_like(imm)
    if not imm.any():
        return out
    lab = block_components(imm)
    ids, counts = np.unique(lab[imm], return_counts=True)
    best = ids[np.argmax(counts)]
    out[lab == best] = True
    return out & imm


def hole_footprint(hole, grid):
    """Set of block indices i with B_i meeting the hole."""
    b = grid.block_of(hole)
    b = b[(b >= 0).all(axis=1)]
    return {tuple(int(v) for v in row) for row in np.unique(b, axis=0)}


def footprint_violations(env, xi, cls, holes=None):
    """Holes whose block footprint meets the giant immaculate component."""
    holes = find_holes(env, xi) if holes is None else holes
    gi = giant_immaculate(cls)
    bad = []
    for h_id, h in enumerate(holes.holes):
        for i in hole_footprint(h, cls.grid):
            if gi[i]:
                bad.append((h_id, i))
                break
    return bad


def _connected_within(spec, alpha, region, a, b):
    """Are vertex sets ``a`` and ``b`` joined by alpha-edges inside ``region``?"""
    inside = np.zeros(spec.n_vertices, dtype=bool)
    inside[np.ravel(region)] = True
    nb = spec.neighbor_table()
    nowrap = spec.coords(np.arange(spec.n_vertices)) < spec.L - 1
    m = alpha & nowrap & inside[:, None] & inside[nb[:, : spec.d]]
    lab = label_clusters(spec, m).label
    la = set(lab[np.asarray(a)].tolist())
    lb = set(lab[np.asarray(b)].tolist())
    return la, lb


def fact_i_holds(spec, alpha, cls, i, giant=None):
    """Giant-cluster vertices of a white B_i are alpha-connected inside B'_i."""
    if cls.color[i] == BLACK:
        raise ValueError("block is not white")
    giant = giant_members(spec, alpha) if giant is None else giant
    bv = cls.grid.block_vertices(i).ravel()
    pts = bv[giant[bv]]
    if len(pts) < 2:
        return True
    la, _ = _connected_within(spec, alpha, cls.grid.enlarged_vertices(i), pts, pts)
    return len(la) == 1


def fact_ii_holds(spec, alpha, cls, i, j):
    """Crossing clusters of adjacent white blocks meet inside B'_i u B'_j."""
    region = np.concatenate([cls.grid.enlarged_vertices(i).ravel(), cls.grid.enlarged_vertices(j).ravel()])
    la, lb = _connected_within(spec, alpha, region, cls.crossing_cluster[i], cls.crossing_cluster[j])
    return len(la) == 1 and la == lb


# ----------------------------------------------------------------------------
# renormalized parameters


def edges_per_block(N, d):
    """Edges with at least one endpoint in a block of side 2N+1."""
    s = 2 * N + 1
    return d * s ** (d - 1) * (s + 1)


def _xi_for(law, p):
    if p >= 1.0:
        return 0.0
    q = law.open_probability()
    if q <= 0:
        raise ValueError("law has no open edges")
    f = lambda xi: law.prob_at_least(xi) / q - p
    lo, hi = 1e-15, 1.0
    if f(lo) < 0 or f(hi) > 0:
        raise ValueError(f"no threshold gives conditional retention {p}")
    return float(optimize.brentq(f, lo, hi, xtol=1e-15))


def _binomial_ci(k, n, level=0.95):
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return (float(ci.low), float(ci.high))


def estimate_renormalized_params(law, p, N, replicas, seed, d=2, L=None, strict="crossing"):
    """Empirical white / pure-white / immaculate block fractions.

    ``p`` is the conditional probability that an open edge is kept in
    alpha'; the threshold xi solving Q(w >= xi) / Q(w > 0) = p is used.
    Fractions are over blocks with a complete B'_i (immaculate over blocks
    whose whole 3^d neighbourhood is complete) with exact binomial CIs.
    The domination bounds p' = p_hat p^e_N and p'' = p'^(3^d) are reported
    alongside, not asserted.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    xi = _xi_for(law, p)
    L = 6 * (2 * N + 1) if L is None else L
    spec = LatticeSpec(d, L, "free")
    counts = {"white": 0, "pure_white": 0, "immaculate": 0}
    n_blocks = 0
    n_imm = 0
    for r in range(replicas):
        env = sample_environment(spec, law, seed + r)
        cls = classify_environment(env, xi, N, strict)
        c = cls.complete
        n_blocks += int(c.sum())
        counts["white"] += int((cls.white() & c).sum())
        counts["pure_white"] += int((cls.color[c] == PURE_WHITE).sum())
        elig = np.zeros_like(c)
        for i in cls.grid.indices():
            ring = cls.grid.neighbors_within_one(i)
            elig[i] = len(ring) == 3 ** d and all(c[j] for j in ring)
        n_imm += int(elig.sum())
        counts["immaculate"] += int((cls.immaculate & elig).sum())
    out = {"xi": xi, "N": N, "replicas": replicas, "blocks": n_blocks, "immaculate_blocks": n_imm}
    for key, name, n in (("white", "p", n_blocks), ("pure_white", "p_prime", n_blocks), ("immaculate", "p_second", n_imm)):
        k = counts[key]
        out[name] = k / n if n else float("nan")
        out[name + "_ci"] = _binomial_ci(k, n)
    eN = edges_per_block(N, d)
    out["e_N"] = eN
    out["p_prime_bound"] = out["p"] * p ** eN
    out["p_second_bound"] = out["p_prime_bound"] ** (3 ** d)
    return out

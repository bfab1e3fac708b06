"""Clusters, holes, chemical distances and site-percolation helpers."""
from __future__ import annotations

import collections
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .lattice import threshold_mask

UNREACHABLE = None
SPARSE_GIANT_DENSITY = 1e-3


class DegenerateEnvironmentError(ValueError):
    """The environment has no usable giant cluster."""


@dataclass
class ClusterLabeling:
    """Connected components of an edge mask.

    Cluster ids are ordered by the smallest vertex they contain.
    """

    label: np.ndarray
    sizes: np.ndarray

    @property
    def n_clusters(self):
        return len(self.sizes)

    def members(self, cid):
        return np.flatnonzero(self.label == cid)


def mask_graph(spec, mask):
    """Sparse symmetric adjacency of the open edges of ``mask`` (V x d)."""
    mask = np.asarray(mask, dtype=bool) & spec.edge_exists()
    xs, ks = np.nonzero(mask)
    ys = spec.neighbor_table()[xs, ks]
    V = spec.n_vertices
    a = sp.coo_matrix((np.ones(len(xs), dtype=np.int8), (xs, ys)), shape=(V, V))
    return (a + a.T).tocsr()


def label_clusters(spec, mask):
    """Exact connected components of the subgraph of open edges."""
    _, lab = csgraph.connected_components(mask_graph(spec, mask), directed=False)
    # canonical ids: order of first (smallest) vertex
    _, first, inv = np.unique(lab, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    label = rank[inv].astype(np.int64)
    sizes = np.bincount(label, minlength=len(order))
    return ClusterLabeling(label, sizes)


def giant_cluster(labeling, warn=True):
    """(id, density) of the largest cluster; ties go to the smallest id."""
    if labeling.n_clusters == 0:
        raise DegenerateEnvironmentError("empty labeling")
    cid = int(np.argmax(labeling.sizes))
    density = labeling.sizes[cid] / len(labeling.label)
    if warn and density < SPARSE_GIANT_DENSITY:
        warnings.warn(f"giant cluster density {density:.3g} is below {SPARSE_GIANT_DENSITY}")
    return cid, float(density)


def giant_members(spec, mask):
    """Boolean vertex array of the giant cluster of ``mask``."""
    lab = label_clusters(spec, mask)
    cid, _ = giant_cluster(lab, warn=False)
    return lab.label == cid


@dataclass
class HoleSet:
    """Holes of an environment at threshold xi, with their C^xi boundaries."""

    holes: list
    adjacency: list
    in_c: np.ndarray = field(repr=False)
    in_cxi: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.holes)

    def hole_index(self):
        """Vertex array mapping each vertex to its hole number (-1 outside holes)."""
        idx = np.full(len(self.in_c), -1, dtype=np.int64)
        for i, h in enumerate(self.holes):
            idx[h] = i
        return idx


def find_holes(env, xi):
    """Components of (giant cluster of w > 0) minus (giant cluster of w >= xi).

    Holes are connected through edges with positive conductance.  The
    adjacency of a hole lists the C^xi vertices having a lattice neighbour in
    the hole.
    """
    spec = env.spec
    alpha = threshold_mask(env, 0.0)
    if not alpha.any():
        raise DegenerateEnvironmentError("no edge with positive conductance")
    in_c = giant_members(spec, alpha)
    alpha_p = threshold_mask(env, xi)
    if alpha_p.any():
        in_cxi = giant_members(spec, alpha_p)
    else:
        in_cxi = np.zeros(spec.n_vertices, dtype=bool)
    rest = in_c & ~in_cxi
    if not rest.any():
        return HoleSet([], [], in_c, in_cxi)
    # components of the rest through alpha-edges with both ends in the rest
    nb = spec.neighbor_table()
    d = spec.d
    m = alpha & rest[:, None] & rest[nb[:, :d]]
    lab = label_clusters(spec, m).label
    hv = np.flatnonzero(rest)
    hl = lab[hv]
    order = np.argsort(hl, kind="stable")
    hv, hl = hv[order], hl[order]
    splits = np.flatnonzero(np.diff(hl)) + 1
    holes = np.split(hv, splits)
    holes.sort(key=lambda h: h[0])
    nex = spec.neighbor_exists()
    adjacency = []
    for h in holes:
        cand = np.unique(nb[h][nex[h]])
        adjacency.append(cand[in_cxi[cand]])
    return HoleSet(holes, adjacency, in_c, in_cxi)


def interior_boundary(A, spec):
    """Vertices of ``A`` with a lattice neighbour outside ``A``."""
    A = np.unique(np.asarray(A, dtype=np.int64))
    inside = np.zeros(spec.n_vertices, dtype=bool)
    inside[A] = True
    nb = spec.neighbor_table()[A]
    outside = ~inside[nb] & spec.neighbor_exists()[A]
    return A[outside.any(axis=1)]


def l_connected_components(S, l, spec=None):
    """Partition of a vertex set under Euclidean-distance-<= l adjacency.

    ``S`` is either an (m, d) coordinate array or vertex indices together
    with ``spec``.  Returns a list of arrays (coordinates or indices, as given).
    """
    S = np.asarray(S)
    if spec is not None and S.ndim == 1:
        pts = spec.coords(S).astype(float)
    else:
        pts = S.astype(float)
    m = len(pts)
    if m == 0:
        return []
    pairs = cKDTree(pts).query_pairs(r=l * (1 + 1e-12), output_type="ndarray")
    g = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    n, lab = csgraph.connected_components(g, directed=False)
    return [S[lab == c] for c in range(n)]


# ----------------------------------------------------------------------------
# chemical distance


@dataclass
class ChemicalGraph:
    """Unit-step graph on C^xi: strong edges plus hole co-adjacency.

    Each hole becomes a hub node linked to its adjacent C^xi vertices with
    weight 1/2, so passing through a hub costs exactly one step.
    """

    spec: object
    xi: float
    holes: HoleSet
    graph: sp.csr_matrix

    @property
    def in_cxi(self):
        return self.holes.in_cxi


def chemical_graph(env, xi, holes=None):
    spec = env.spec
    holes = find_holes(env, xi) if holes is None else holes
    V = spec.n_vertices
    in_cxi = holes.in_cxi
    strong = threshold_mask(env, xi) & in_cxi[:, None]
    xs, ks = np.nonzero(strong)
    ys = spec.neighbor_table()[xs, ks]
    keep = in_cxi[ys]
    rows = [xs[keep]]
    cols = [ys[keep]]
    vals = [np.ones(keep.sum())]
    for i, adj in enumerate(holes.adjacency):
        rows.append(adj)
        cols.append(np.full(len(adj), V + i))
        vals.append(np.full(len(adj), 0.5))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    n = V + len(holes)
    g = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    g = g.maximum(g.T).tocsr()
    return ChemicalGraph(spec, xi, holes, g)


def chemical_distances_from(cg, x):
    """Chemical distances from ``x`` to every vertex (inf when unreachable or off C^xi)."""
    if not cg.in_cxi[x]:
        raise ValueError(f"vertex {x} is not in C^xi")
    dist = csgraph.dijkstra(cg.graph, directed=False, indices=int(x))
    dist = dist[: cg.spec.n_vertices]
    dist[~cg.in_cxi] = np.inf
    return dist


def chemical_distance(env, xi, x, y, cg=None):
    """Chemical distance on C^xi; ``UNREACHABLE`` (None) if no path exists."""
    cg = chemical_graph(env, xi) if cg is None else cg
    for v in (x, y):
        if not cg.in_cxi[v]:
            raise ValueError(f"vertex {v} is not in C^xi")
    d = chemical_distances_from(cg, x)[y]
    if not np.isfinite(d):
        return UNREACHABLE
    return int(round(d))


# ----------------------------------------------------------------------------
# site percolation


@dataclass
class SiteField:
    zeta: np.ndarray  # 0/1 array with the lattice shape
    r: float = float("nan")

    def __post_init__(self):
        z = np.asarray(self.zeta)
        if not np.isin(z, (0, 1)).all():
            raise ValueError("site field values must be 0 or 1")
        self.zeta = z.astype(np.int8)


def sample_site_field(shape, r, seed):
    from . import rng

    n = int(np.prod(shape))
    u = rng.uniforms(seed, np.arange(n, dtype=np.uint64), purpose=rng.PURPOSE_MISC)[:, 0]
    return SiteField((u <= r).astype(np.int8).reshape(shape), r)


def l_offsets(d, l):
    """Nonzero integer offsets of Euclidean norm <= l."""
    R = int(np.floor(l))
    offs = [o for o in itertools.product(range(-R, R + 1), repeat=d)
            if any(o) and sum(c * c for c in o) <= l * l * (1 + 1e-12)]
    return np.array(offs, dtype=np.int64)


def min_open_sites_on_path(field, x, y, l=1.0):
    """Minimum number of open sites on an l-nearest-neighbour path from x to y.

    ``x`` and ``y`` are coordinate tuples in the field's box (free boundary).
    0-1 BFS where entering a site costs its value; endpoints are counted.
    """
    z = field.zeta
    shape = z.shape
    x, y = tuple(int(c) for c in x), tuple(int(c) for c in y)
    if x == y:
        raise ValueError("x and y must differ")
    offs = [tuple(o) for o in l_offsets(z.ndim, l)]
    dist = np.full(shape, np.iinfo(np.int64).max, dtype=np.int64)
    dist[x] = z[x]
    dq = collections.deque([x])
    while dq:
        u = dq.popleft()
        du = dist[u]
        if u == y:
            return int(du)
        for o in offs:
            v = tuple(a + b for a, b in zip(u, o))
            if any(c < 0 or c >= s for c, s in zip(v, shape)):
                continue
            w = int(z[v])
            if du + w < dist[v]:
                dist[v] = du + w
                if w:
                    dq.append(v)
                else:
                    dq.appendleft(v)
    raise RuntimeError("target not reachable")  # box is l-connected for l >= 1


# ----------------------------------------------------------------------------
# hole statistics


def hole_volume_stats(holes, n=None, spec=None):
    """Max volume, size histogram and the number of holes meeting [-n, n]^d.

    The box is centred at ``spec.center()``; ``n=None`` skips the count.
    """
    vols = np.array([len(h) for h in holes.holes], dtype=np.int64)
    hist = collections.Counter(vols.tolist())
    out = {
        "max_volume": int(vols.max()) if len(vols) else 0,
        "histogram": dict(sorted(hist.items())),
        "count": len(vols),
    }
    if n is not None:
        if spec is None:
            raise ValueError("spec is required to count holes in a box")
        c0 = np.array(spec.coords(spec.center()))
        hit = 0
        for h in holes.holes:
            dc = np.abs(spec.coords(h) - c0).max(axis=1)
            hit += bool((dc <= n).any())
        out["count_in_box"] = hit
    return out

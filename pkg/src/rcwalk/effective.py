"""Effective conductances of the time-changed walk, Dirichlet forms,
spectral gaps and exact transition kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats
from scipy.sparse import csgraph

from .geometry import DegenerateEnvironmentError, find_holes, giant_members, label_clusters, mask_graph
from .lattice import Environment, threshold_mask

DIRECT_SOLVE_MAX = 10_000
KERNEL_TAIL = 1e-12


class SingularHoleError(ValueError):
    """A hole is not attached to C^xi, so its hitting system is singular."""


@dataclass
class EffectiveWeights:
    """Symmetric jump weights of X^xi on C^xi (global vertex indexing).

    ``W`` has zero diagonal; ``diag`` keeps the discarded return mass
    (excursions into a hole that come back to the starting vertex).
    ``partial`` marks entries fed by holes that cross the window edge.
    """

    spec: object
    xi: float
    vertices: np.ndarray
    W: sp.csr_matrix
    diag: np.ndarray
    partial: sp.csr_matrix
    n: np.ndarray
    in_cxi: np.ndarray

    def weight(self, x, y):
        return float(self.W[x, y])

    def symmetry_residual(self):
        d = (self.W - self.W.T).tocoo()
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def symmetric(self):
        return ((self.W + self.W.T) * 0.5).tocsr()

    def trusted(self):
        """W with partial entries removed."""
        W = self.W.copy().tolil()
        p = self.partial.tocoo()
        for i, j in zip(p.row, p.col):
            W[i, j] = 0.0
        return W.tocsr()

    def triplets(self):
        c = sp.triu(self.W, k=1).tocoo()
        pf = self.partial.tocsr()
        return [(int(i), int(j), float(w), bool(pf[i, j] or pf[j, i])) for i, j, w in zip(c.row, c.col, c.data)]


def _window_members(spec, window):
    if window is None:
        return np.ones(spec.n_vertices, dtype=bool)
    c = spec.coords(np.arange(spec.n_vertices))
    return window.contains(c)


def effective_conductances(env, xi, window=None, holes=None):
    """w^xi(x, y) = sum_z w(x, z) [1{z = y} + 1{z in a hole} P_z(first C^xi hit = y)].

    One linear hitting system is solved per hole.  With ``window`` (a region
    with a ``contains`` method on coordinates) the result is restricted to
    C^xi vertices inside it, and entries depending on a hole that is not
    strictly inside the window are flagged as partial.
    """
    spec = env.spec
    holes = find_holes(env, xi) if holes is None else holes
    in_cxi = holes.in_cxi
    if not in_cxi.any():
        raise DegenerateEnvironmentError("C^xi is empty")
    V = spec.n_vertices
    inc = env.incident()
    nb = env.neighbors()
    nex = spec.neighbor_exists()
    nw = inc.sum(axis=1)

    # direct jumps between C^xi vertices
    u, v, w = env.edge_list(env.values > 0)
    keep = in_cxi[u] & in_cxi[v]
    rows = [u[keep], v[keep]]
    cols = [v[keep], u[keep]]
    vals = [w[keep], w[keep]]

    inwin = _window_members(spec, window)
    if window is not None:
        # strictly inside: the vertex and all its lattice neighbours are in the window
        strict = inwin & np.all(inwin[nb] | ~nex, axis=1)
    prow, pcol = [], []
    diag = np.zeros(V)
    local = np.full(V, -1, dtype=np.int64)
    for h in holes.holes:
        local[h] = np.arange(len(h))
        wh = inc[h]
        th = nb[h]
        pos = wh > 0
        zi, zj = np.nonzero(pos)
        tgt = th[zi, zj]
        ww = wh[zi, zj]
        tin = local[tgt] >= 0
        bmask = ~tin
        if not bmask.any():
            local[h] = -1
            raise SingularHoleError(f"hole at vertex {h[0]} has no open edge to C^xi")
        B, binv = np.unique(tgt[bmask], return_inverse=True)
        m = len(h)
        nz = nw[h]
        if m <= DIRECT_SOLVE_MAX:
            A = sp.csr_matrix((-ww[tin] / nz[zi[tin]], (zi[tin], local[tgt[tin]])), shape=(m, m)) + sp.identity(m, format="csr")
            rhs = np.zeros((m, len(B)))
            np.add.at(rhs, (zi[bmask], binv), ww[bmask] / nz[zi[bmask]])
            if m <= 400:
                G = np.linalg.solve(A.toarray(), rhs)
            else:
                G = spla.splu(A.tocsc()).solve(rhs)
        else:
            A = sp.csr_matrix((-ww[tin] / nz[zi[tin]], (zi[tin], local[tgt[tin]])), shape=(m, m)) + sp.identity(m, format="csr")
            G = np.empty((m, len(B)))
            for b in range(len(B)):
                r = np.zeros(m)
                sel = binv == b
                np.add.at(r, zi[bmask][sel], ww[bmask][sel] / nz[zi[bmask][sel]])
                G[:, b], info = spla.gmres(A, r, rtol=1e-13, atol=0.0, restart=200, maxiter=10_000)
                if info:
                    raise RuntimeError("iterative hole solve did not converge")
        local[h] = -1
        # excursion weights: sum over edges (x, z), x in B, z in hole
        Om = np.zeros((len(B), m))
        np.add.at(Om, (binv, zi[bmask]), ww[bmask])
        Wh = Om @ G
        diag[B] += np.diag(Wh)
        np.fill_diagonal(Wh, 0.0)
        bi, bj = np.nonzero(Wh)
        rows.append(B[bi])
        cols.append(B[bj])
        vals.append(Wh[bi, bj])
        if window is not None and not strict[h].all():
            prow.append(B[bi])
            pcol.append(B[bj])

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    x = np.concatenate(vals)
    W = sp.coo_matrix((x, (r, c)), shape=(V, V)).tocsr()
    W.sum_duplicates()
    if prow:
        pr, pc = np.concatenate(prow), np.concatenate(pcol)
        partial = sp.coo_matrix((np.ones(len(pr)), (pr, pc)), shape=(V, V)).tocsr()
        partial.data[:] = 1.0
    else:
        partial = sp.csr_matrix((V, V))
    members = in_cxi & inwin
    if window is not None:
        keep = sp.diags(members.astype(float))
        W = (keep @ W @ keep).tocsr()
        W.eliminate_zeros()
        partial = (keep @ partial @ keep).tocsr()
        diag = diag * members
    return EffectiveWeights(spec, float(xi), np.flatnonzero(members), W, diag, partial, nw, in_cxi)


def support_ok(weights, env, holes):
    """Every positive w^xi(x, y) joins open neighbours or two boundary points of one hole."""
    spec = env.spec
    c = sp.triu(weights.W, k=1).tocoo()
    nb = env.neighbors()
    inc = env.incident()
    adj_sets = [set(a.tolist()) for a in holes.adjacency]
    member = {}
    for i, a in enumerate(adj_sets):
        for v in a:
            member.setdefault(v, set()).add(i)
    bad = []
    for x, y in zip(c.row, c.col):
        row = nb[x]
        j = np.flatnonzero(row == y)
        if len(j) and (inc[x, j] > 0).any():
            continue
        if member.get(x, set()) & member.get(y, set()):
            continue
        bad.append((int(x), int(y)))
    return bad


# ----------------------------------------------------------------------------
# Dirichlet forms


def mask_weights(env, mask, vertices=None):
    """0/1 weight matrix of the edges in ``mask`` (optionally among ``vertices`` only)."""
    g = mask_graph(env.spec, mask).astype(float)
    if vertices is not None:
        keep = np.zeros(env.spec.n_vertices)
        keep[np.asarray(vertices)] = 1.0
        k = sp.diags(keep)
        g = (k @ g @ k).tocsr()
    g.data[:] = 1.0
    g.eliminate_zeros()
    return g


def dirichlet_form(weights, f):
    """1/2 sum_{x,y} w(x, y) (f(x) - f(y))^2."""
    W = weights.W if isinstance(weights, EffectiveWeights) else sp.csr_matrix(weights)
    f = np.asarray(f, dtype=float)
    c = W.tocoo()
    return 0.5 * float(np.sum(c.data * (f[c.row] - f[c.col]) ** 2))


# ----------------------------------------------------------------------------
# spectral gap / Poincare constant


@dataclass
class SpectralReport:
    n: int
    poincare: float
    gap: float
    size: int
    vertices: np.ndarray
    root: int


def laplacian(W):
    W = sp.csr_matrix(W)
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsc()


def spectral_gap(W, m, dense_max=600):
    """Smallest nonzero eigenvalue of (Deg - W) v = lam diag(m) v.

    ``W`` is a symmetric weight matrix of a connected graph and ``m`` the
    positive reversible weights.  Uses the symmetrised operator
    diag(m)^-1/2 (Deg - W) diag(m)^-1/2 with the known null vector sqrt(m)
    deflated, shift-invert Lanczos, and a shift adapted to the gap size.
    """
    m = np.asarray(m, dtype=float)
    N = len(m)
    if N < 2:
        raise DegenerateEnvironmentError("need at least two states")
    K = laplacian(W)
    r = 1.0 / np.sqrt(m)
    S = (sp.diags(r) @ K @ sp.diags(r)).tocsc()
    S = ((S + S.T) * 0.5).tocsc()
    if N <= dense_max:
        ev = sla.eigh(S.toarray(), eigvals_only=True, subset_by_index=[0, 1])
        if ev[1] > 1e3 * np.finfo(float).eps * max(1.0, abs(S).max()):
            return float(ev[1])
    v0 = np.sqrt(m)
    v0 /= np.linalg.norm(v0)

    def proj(x):
        return x - v0 * (v0 @ x)

    # Rayleigh quotient of a smooth test vector bounds the gap from above
    rng_ = np.random.default_rng(0)
    test = proj(rng_.standard_normal(N))
    s = float(test @ (S @ test)) / float(test @ test) * 1e-6
    gap = np.nan
    for _ in range(40):
        lu = spla.splu((S + s * sp.identity(N, format="csc")).tocsc())
        op = spla.LinearOperator((N, N), matvec=lambda x: proj(lu.solve(proj(np.ravel(x)))), dtype=float)
        theta = spla.eigsh(op, k=1, which="LA", tol=1e-12, v0=proj(np.ones(N) + np.arange(N) / N),
                           return_eigenvectors=False, maxiter=20_000)[0]
        gap = 1.0 / theta - s
        if gap > 0 and s <= 0.25 * gap:
            return float(gap)
        s = gap / 8 if gap > 0 else s / 1e3
    return float(gap)


def _box_members(spec, n):
    if 2 * n + 1 > spec.L:
        raise ValueError(f"box [-{n},{n}]^d does not fit in side {spec.L}")
    c = spec.coords(np.arange(spec.n_vertices))
    c0 = np.asarray(spec.coords(spec.center()))
    return np.abs(c - c0).max(axis=1) <= n


def box_component(env, xi, n):
    """Component C^n of (giant cluster) & [-n, n]^d containing the giant vertex nearest the centre.

    ``xi=None`` uses the cluster of positive conductances (the original walk).
    """
    spec = env.spec
    mask = threshold_mask(env, 0.0 if xi is None else xi)
    giant = giant_members(spec, mask)
    inbox = _box_members(spec, n)
    cand = np.flatnonzero(giant & inbox)
    if not len(cand):
        raise DegenerateEnvironmentError("giant cluster misses the box")
    c0 = np.asarray(spec.coords(spec.center()))
    dist = ((spec.coords(cand) - c0) ** 2).sum(axis=1)
    root = int(cand[np.argmin(dist)])
    nb = spec.neighbor_table()
    nowrap = spec.coords(np.arange(spec.n_vertices)) < spec.L - 1
    sub = mask & nowrap & inbox[:, None] & inbox[nb[:, : spec.d]] & giant[:, None]
    lab = label_clusters(spec, sub).label
    return np.flatnonzero(lab == lab[root]), root


def poincare_constant(env, xi, n, weights=None, measure="full"):
    """Inverse spectral gap of the walk restricted (reflected) to C^n.

    ``xi=None`` treats the original walk with conductances w; otherwise the
    time-changed walk with weights w^xi.  With ``measure="full"`` the
    reversible measure is n(x) of the whole environment and jumps leaving
    C^n are suppressed.  ``measure="restricted"`` instead uses the degree
    inside C^n, i.e. the walk on the subgraph itself, which has no boundary
    traps made of edges pointing out of the box.
    """
    if measure not in ("full", "restricted"):
        raise ValueError("measure must be 'full' or 'restricted'")
    verts, root = box_component(env, xi, n)
    if len(verts) < 2:
        raise DegenerateEnvironmentError("component C^n is trivial")
    if xi is None:
        u, v, w = env.edge_list(env.values > 0)
        V = env.spec.n_vertices
        W = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(V, V)).tocsr()
    else:
        weights = effective_conductances(env, xi) if weights is None else weights
        W = weights.symmetric()
    Wn = W[verts][:, verts]
    m = env.weights()[verts] if measure == "full" else np.asarray(Wn.sum(axis=1)).ravel()
    gap = spectral_gap(Wn, m)
    return SpectralReport(n, 1.0 / gap, gap, len(verts), verts, root)


def dense_spectral_gap(W, m):
    """Reference gap from the dense generalised eigenproblem (no symmetrisation)."""
    K = laplacian(W).toarray()
    ev = sla.eigh(K, np.diag(np.asarray(m, dtype=float)), eigvals_only=True)
    return float(np.sort(ev)[1])


# ----------------------------------------------------------------------------
# exact kernels by uniformisation


def jump_matrix(source, region=None):
    """Uniformised one-step matrix at rate 1.

    ``source`` is an :class:`Environment` (original walk) or
    :class:`EffectiveWeights` (time-changed walk).  With ``region`` (vertex
    indices) jumps leaving it are suppressed.
    """
    if isinstance(source, Environment):
        u, v, w = source.edge_list(source.values > 0)
        V = source.spec.n_vertices
        W = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(V, V)).tocsr()
        n = source.weights()
    else:
        W = source.symmetric()
        n = source.n
        V = len(n)
    if region is not None:
        keep = np.zeros(V)
        keep[np.asarray(region)] = 1.0
        k = sp.diags(keep)
        W = (k @ W @ k).tocsr()
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(n > 0, 1.0 / n, 0.0)
    P = sp.diags(inv) @ W
    out = np.asarray(P.sum(axis=1)).ravel()
    return (P + sp.diags(1.0 - out)).tocsr()


def heat_kernel_times(source, x, ts, region=None, P=None):
    """P_x(X(t) = .) for every t in ``ts``; array (len(ts), V)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if (ts < 0).any():
        raise ValueError("t must be >= 0")
    P = jump_matrix(source, region) if P is None else P
    PT = P.T.tocsr()
    V = P.shape[0]
    tmax = float(ts.max())
    kmax = int(stats.poisson.isf(KERNEL_TAIL, tmax)) + 2 if tmax > 0 else 0
    ks = np.arange(kmax + 1)
    with np.errstate(divide="ignore"):
        logw = stats.poisson.logpmf(ks[:, None], ts[None, :])
    logw[:, ts == 0] = np.where(ks[:, None] == 0, 0.0, -np.inf)
    wts = np.exp(logw)
    out = np.zeros((len(ts), V))
    vec = np.zeros(V)
    vec[int(x)] = 1.0
    for k in range(kmax + 1):
        wk = wts[k]
        live = wk > 0
        if live.any():
            out[live] += wk[live, None] * vec[None, :]
        vec = PT @ vec
    return out


def heat_kernel_exact(source, x, t, region=None):
    """P_x(X(t) = .) by uniformisation (Poisson tail below 1e-12)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return heat_kernel_times(source, x, [t], region)[0]


def jump_graph_distances(source, x, region=None):
    """Graph distance from ``x`` in the support of the jump weights."""
    P = jump_matrix(source, region)
    P = P - sp.diags(P.diagonal())
    P.eliminate_zeros()
    return csgraph.shortest_path(P, unweighted=True, directed=False, indices=int(x))


CV_RATE = np.log(4.0) - 1.0


def carne_varopoulos_check(source, sources, ts, region=None):
    """Fit C in p_t(x,y) <= C exp(-d^2/(4t)) + exp(-(log 4 - 1) t).

    Returns the fitted constant, the largest bound-to-value ratio violation
    (<= 1 means never violated) and the reference constant
    2 * max sqrt(n(y) / n(x)) over the probed pairs.
    """
    P = jump_matrix(source, region)
    n = source.weights() if isinstance(source, Environment) else source.n
    fitted = 0.0
    ref = 0.0
    records = []
    for x in sources:
        dist = jump_graph_distances(source, x, region)
        ker = heat_kernel_times(source, x, ts, region, P=P)
        ok = np.isfinite(dist) & (n > 0)
        for i, t in enumerate(ts):
            g = np.exp(-dist[ok] ** 2 / (4 * t))
            excess = ker[i, ok] - np.exp(-CV_RATE * t)
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(g > 0, excess / g, np.where(excess > 0, np.inf, 0.0))
            fitted = max(fitted, float(c.max()))
            records.append((x, t, ker[i, ok], dist[ok], g))
        ref = max(ref, float(2 * np.sqrt(n[ok] / n[x]).max()))
    worst = 0.0
    for x, t, k, dd, g in records:
        bound = fitted * g + np.exp(-CV_RATE * t)
        worst = max(worst, float((k / bound).max()))
    return {"C": fitted, "worst_ratio": worst, "reference_C": ref}

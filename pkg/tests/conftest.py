"""Shared independent oracles for the test suite.

The helpers here deliberately avoid the package's own graph code: they walk
the lattice with plain Python loops so they can serve as reference
implementations.
"""
import collections
import itertools

import numpy as np
import pytest

from rcwalk.lattice import LatticeSpec


def lattice_neighbors(spec, x):
    """Lattice neighbours of vertex ``x`` from first principles."""
    c = list(np.unravel_index(x, spec.shape))
    out = []
    for k in range(spec.d):
        for s in (1, -1):
            y = list(c)
            y[k] += s
            if spec.boundary == "torus":
                y[k] %= spec.L
            elif not 0 <= y[k] < spec.L:
                continue
            out.append(int(np.ravel_multi_index(tuple(y), spec.shape)))
    return out


def edge_value(env, x, y):
    """Conductance of {x, y} read straight from the storage slots."""
    spec = env.spec
    cx = np.array(np.unravel_index(x, spec.shape))
    cy = np.array(np.unravel_index(y, spec.shape))
    for k in range(spec.d):
        e = np.zeros(spec.d, dtype=int)
        e[k] = 1
        for lo, hi in ((cx, cy), (cy, cx)):
            nxt = lo + e
            if spec.boundary == "torus":
                nxt %= spec.L
            if (nxt == hi).all():
                return float(env.values[int(np.ravel_multi_index(tuple(lo), spec.shape)), k])
    raise ValueError("not neighbours")


def open_adjacency(spec, mask):
    """Adjacency lists of the edges where ``mask`` (V x d) is true."""
    adj = collections.defaultdict(set)
    for x in range(spec.n_vertices):
        c = np.array(np.unravel_index(x, spec.shape))
        for k in range(spec.d):
            if not mask[x, k]:
                continue
            y = c.copy()
            y[k] += 1
            if spec.boundary == "torus":
                y[k] %= spec.L
            elif y[k] >= spec.L:
                continue
            yi = int(np.ravel_multi_index(tuple(y), spec.shape))
            adj[x].add(yi)
            adj[yi].add(x)
    return adj


def flood_fill(n, adj):
    """Component partition of vertices 0..n-1 as a set of frozensets."""
    seen = [False] * n
    parts = set()
    for s in range(n):
        if seen[s]:
            continue
        comp = {s}
        seen[s] = True
        q = collections.deque([s])
        while q:
            u = q.popleft()
            for v in adj.get(u, ()):
                if not seen[v]:
                    seen[v] = True
                    comp.add(v)
                    q.append(v)
        parts.add(frozenset(comp))
    return parts


def bfs_dist(adj, s):
    dist = {s: 0}
    q = collections.deque([s])
    while q:
        u = q.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def largest(parts):
    return max(parts, key=lambda c: (len(c), -min(c)))


@pytest.fixture
def spec5():
    return LatticeSpec(2, 5, "free")


def all_pairs(items):
    return itertools.combinations(items, 2)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)

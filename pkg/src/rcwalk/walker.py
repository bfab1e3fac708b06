"""Continuous-time walk among conductances, its time change and exit times.

The walk waits an Exp(1) time at every vertex and then jumps to a neighbour
chosen with probability proportional to the edge conductance; a vertex with
no open edge traps the walker forever.

Replica ``r`` of a simulation driven by ``seed`` draws its k-th pair of
uniforms from the counter ``(k, r)``, so every replica is reproducible on its
own and ensembles can be simulated in lockstep, in any chunking.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from . import rng


class HorizonExceededError(ValueError):
    pass


def _move_vectors(d):
    e = np.zeros((2 * d + 1, d), dtype=np.int64)
    for k in range(d):
        e[k, k] = 1
        e[d + k, k] = -1
    return e  # last row: padding code -1 maps to zero move


def _jump_tables(env):
    tab = env.__dict__.get("_jump_tables")
    if tab is None:
        cum = np.cumsum(env.incident(), axis=1)
        tab = (cum, cum[:, -1].copy())
        object.__setattr__(env, "_jump_tables", tab)
    return tab


# ----------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Box:
    """Closed box ``|x - center|_inf <= half`` in unwrapped coordinates."""

    center: tuple
    half: float

    def contains(self, coords):
        c = np.asarray(coords) - np.asarray(self.center)
        return np.abs(c).max(axis=-1) <= self.half


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball ``|x - center| <= radius``."""

    center: tuple
    radius: float

    def contains(self, coords):
        c = np.asarray(coords, dtype=float) - np.asarray(self.center, dtype=float)
        return np.einsum("...i,...i->...", c, c) <= self.radius ** 2 * (1 + 1e-12)


# ----------------------------------------------------------------------------
# single trajectories


@dataclass
class Trajectory:
    """Piecewise-constant path: ``vertices[i]`` is occupied from ``times[i]`` on.

    ``times[0] == 0`` and ``vertices[0]`` is the start; ``moves[i-1]`` is the
    direction code of jump ``i`` (k for +e_k, d+k for -e_k).
    """

    spec: object
    times: np.ndarray
    vertices: np.ndarray
    moves: np.ndarray
    horizon: float

    @property
    def start(self):
        return int(self.vertices[0])

    @property
    def n_jumps(self):
        return len(self.times) - 1

    @property
    def events(self):
        return list(zip(self.times[1:].tolist(), self.vertices[1:].tolist()))

    def _segment(self, t):
        if not 0 <= t <= self.horizon:
            raise HorizonExceededError(f"t={t} outside [0, {self.horizon}]")
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def position_at(self, t):
        return int(self.vertices[self._segment(t)])

    def unwrapped(self):
        """(n_jumps + 1, d) unwrapped coordinates along the path."""
        d = self.spec.d
        steps = _move_vectors(d)[self.moves]
        start = np.asarray(self.spec.coords(self.start))
        return start + np.concatenate([np.zeros((1, d), dtype=np.int64), np.cumsum(steps, axis=0)])

    def displacement_at(self, t):
        u = self.unwrapped()
        return u[self._segment(t)] - u[0]


def scripted_trajectory(spec, start, events, horizon):
    """Trajectory from explicit ``[(time, vertex), ...]`` jumps to neighbours."""
    nb = spec.neighbor_table()
    times = [0.0]
    verts = [int(start)]
    moves = []
    for t, v in events:
        row = nb[verts[-1]]
        hit = np.flatnonzero(row == v)
        if not len(hit):
            raise ValueError(f"{v} is not a neighbour of {verts[-1]}")
        if t <= times[-1] or t > horizon:
            raise ValueError("jump times must increase and stay within the horizon")
        times.append(float(t))
        verts.append(int(v))
        moves.append(int(hit[0]))
    return Trajectory(spec, np.array(times), np.array(verts, dtype=np.int64),
                      np.array(moves, dtype=np.int64), float(horizon))


# ----------------------------------------------------------------------------
# ensembles


@dataclass
class WalkEnsemble:
    """Lockstep simulation output for R replicas, padded to a common length.

    ``times[:, k]`` is the time of jump k+1 (inf when it did not happen before
    the horizon), ``vertices[:, k]`` the vertex occupied after k jumps, and
    ``moves[:, k]`` the direction code of jump k+1 (-1 for padding).
    """

    spec: object
    horizon: float
    replica_ids: np.ndarray
    times: np.ndarray
    vertices: np.ndarray
    moves: np.ndarray
    counts: np.ndarray

    @property
    def n_replicas(self):
        return len(self.replica_ids)

    @property
    def starts(self):
        return self.vertices[:, 0]

    def trajectory(self, r):
        n = int(self.counts[r])
        return Trajectory(
            self.spec,
            np.concatenate([[0.0], self.times[r, :n]]),
            self.vertices[r, : n + 1].copy(),
            self.moves[r, :n].astype(np.int64),
            self.horizon,
        )

    def _n_before(self, t):
        return (self.times <= t).sum(axis=1)

    def positions_at(self, t):
        if t > self.horizon:
            raise HorizonExceededError(f"t={t} beyond horizon {self.horizon}")
        k = self._n_before(t)
        return self.vertices[np.arange(self.n_replicas), k]

    def displacements_at(self, t):
        """(R, d) unwrapped displacement X(t) - X(0)."""
        if t > self.horizon:
            raise HorizonExceededError(f"t={t} beyond horizon {self.horizon}")
        d = self.spec.d
        done = self.times <= t
        out = np.empty((self.n_replicas, d), dtype=np.int64)
        for k in range(d):
            out[:, k] = ((self.moves == k) & done).sum(axis=1) - ((self.moves == d + k) & done).sum(axis=1)
        return out

    def cumulative_displacements(self):
        """(R, K+1, d) unwrapped displacement after each jump (int32)."""
        d = self.spec.d
        R, K = self.moves.shape
        out = np.zeros((R, K + 1, d), dtype=np.int32)
        for k in range(d):
            step = (self.moves == k).astype(np.int32) - (self.moves == d + k).astype(np.int32)
            np.cumsum(step, axis=1, out=out[:, 1:, k])
        return out

    def jump_counts(self, t):
        return self._n_before(t)

    def sup_displacement(self, t, norm=np.inf):
        """sup_{s <= t} |X(s) - X(0)| per replica."""
        disp = self.cumulative_displacements()
        done = np.concatenate([np.ones((self.n_replicas, 1), bool), self.times <= t], axis=1)
        r = np.linalg.norm(disp.astype(float), ord=norm, axis=2)
        return np.where(done, r, 0.0).max(axis=1)

    def exit_times(self, region_of):
        """First jump time leaving the region; inf if none before the horizon.

        ``region_of(start_coords)`` must return a region (relative regions
        are built from each replica's own start).  Coordinates are unwrapped.
        """
        disp = self.cumulative_displacements()
        out = np.full(self.n_replicas, np.inf)
        starts = self.spec.coords(self.starts)
        for r in range(self.n_replicas):
            reg = region_of(starts[r])
            n = int(self.counts[r])
            pts = starts[r] + disp[r, : n + 1]
            if not reg.contains(pts[0]):
                raise ValueError("start outside region")
            outside = np.flatnonzero(~reg.contains(pts[1:]))
            if len(outside):
                out[r] = self.times[r, outside[0]]
        return out

    def time_change(self, in_cxi):
        return EnsembleTimeChange(self, np.asarray(in_cxi, dtype=bool))


def simulate_walks(env, starts, horizon, seed, replica_ids=None):
    """Simulate independent walks from ``starts`` up to ``horizon`` in lockstep."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    starts = np.asarray(starts, dtype=np.int64).ravel()
    R = len(starts)
    if replica_ids is None:
        replica_ids = np.arange(R, dtype=np.int64)
    replica_ids = np.asarray(replica_ids, dtype=np.int64)
    cum, nw = _jump_tables(env)
    nb = env.neighbors()
    pos = starts.copy()
    t = np.zeros(R)
    active = nw[pos] > 0
    times_cols, vert_cols, move_cols = [], [], []
    k = 0
    while active.any():
        idx = np.flatnonzero(active)
        u = rng.uniforms(seed, np.uint64(k), stream=replica_ids[idx], purpose=rng.PURPOSE_WALK)
        tn = t[idx] - np.log(u[:, 0])
        jump = tn <= horizon
        idx, tn, u1 = idx[jump], tn[jump], u[jump, 1]
        p = pos[idx]
        v = (1.0 - u1) * nw[p]
        choice = (cum[p] <= v[:, None]).sum(axis=1)
        newp = nb[p, choice]
        col_t = np.full(R, np.inf)
        col_m = np.full(R, -1, dtype=np.int8)
        col_t[idx] = tn
        col_m[idx] = choice
        pos[idx] = newp
        t[idx] = tn
        times_cols.append(col_t)
        move_cols.append(col_m)
        vert_cols.append(pos.copy())
        nxt = np.zeros(R, dtype=bool)
        nxt[idx] = True
        active = nxt
        k += 1
    if times_cols:
        times = np.stack(times_cols, axis=1)
        moves = np.stack(move_cols, axis=1)
        verts = np.concatenate([starts[:, None], np.stack(vert_cols, axis=1)], axis=1)
    else:
        times = np.empty((R, 0))
        moves = np.empty((R, 0), dtype=np.int8)
        verts = starts[:, None].copy()
    counts = np.isfinite(times).sum(axis=1)
    return WalkEnsemble(env.spec, float(horizon), replica_ids, times, verts, moves, counts)


def simulate_walk(env, x0, horizon, seed, replica=0):
    """One trajectory; equal to replica ``replica`` of any ensemble with this seed."""
    ens = simulate_walks(env, [x0], horizon, seed, replica_ids=[replica])
    return ens.trajectory(0)


# ----------------------------------------------------------------------------
# time change


@dataclass
class TimeChange:
    """Additive functional A(t) = time spent in C^xi up to t, and its inverse.

    Segments are the constant pieces of the source trajectory; ``a_start``
    holds A at the start of each segment.
    """

    source: Trajectory
    seg_start: np.ndarray
    seg_end: np.ndarray
    inside: np.ndarray
    a_start: np.ndarray
    a_end: np.ndarray

    @property
    def total(self):
        return float(self.a_end[-1])

    def A(self, t):
        j = self.source._segment(t)
        return float(self.a_start[j] + (t - self.seg_start[j]) * self.inside[j])

    def inverse(self, s):
        """inf{u : A(u) > s}."""
        if not 0 <= s < self.total:
            raise HorizonExceededError(f"s={s} outside [0, A(horizon)={self.total})")
        j = int(np.searchsorted(self._a_end_in, s, side="right"))
        seg = self._in_idx[j]
        return float(self.seg_start[seg] + (s - self.a_start[seg]))

    def segment_at(self, s):
        if not 0 <= s < self.total:
            raise HorizonExceededError(f"s={s} outside [0, A(horizon)={self.total})")
        j = int(np.searchsorted(self._a_end_in, s, side="right"))
        return int(self._in_idx[j])

    def __post_init__(self):
        self._in_idx = np.flatnonzero(self.inside & (self.seg_end > self.seg_start))
        self._a_end_in = self.a_end[self._in_idx]

    def jumps(self):
        """Jump times (intrinsic) and vertices of X^xi, equal neighbours merged."""
        idx = self._in_idx
        verts = self.source.vertices[idx]
        keep = np.concatenate([[True], verts[1:] != verts[:-1]])
        return self.a_start[idx][keep], verts[keep]


def build_time_change(traj, in_cxi):
    """A^xi for ``traj`` given the C^xi membership array ``in_cxi``.

    ``in_cxi`` is a boolean vertex array (e.g. ``HoleSet.in_cxi``).
    """
    in_cxi = np.asarray(in_cxi, dtype=bool)
    start = traj.times
    end = np.concatenate([traj.times[1:], [traj.horizon]])
    inside = in_cxi[traj.vertices]
    dur = (end - start) * inside
    a_end = np.cumsum(dur)
    a_start = a_end - dur
    return TimeChange(traj, start, end, inside, a_start, a_end)


def time_changed_position(tc, s):
    """X^xi(s) = X(inverse A(s)); always a C^xi vertex."""
    return int(tc.source.vertices[tc.segment_at(s)])


def time_changed_displacement(tc, s):
    u = tc.source.unwrapped()
    return u[tc.segment_at(s)] - u[0]


def exit_time(traj, region):
    """First jump time at which the walk is outside ``region``; None if never."""
    pts = traj.unwrapped()
    if not region.contains(pts[0]):
        raise ValueError("start outside region")
    out = np.flatnonzero(~region.contains(pts[1:]))
    return float(traj.times[out[0] + 1]) if len(out) else None


def time_changed_exit_time(tc, region):
    """Exit time of X^xi (intrinsic clock) from ``region``; None if never."""
    pts = tc.source.unwrapped()
    if not region.contains(pts[0]):
        raise ValueError("start outside region")
    idx = tc._in_idx
    out = np.flatnonzero(~region.contains(pts[idx]))
    return float(tc.a_start[idx[out[0]]]) if len(out) else None


# ----------------------------------------------------------------------------
# vectorised time change


class EnsembleTimeChange:
    """A^xi and X^xi evaluated for every replica of a :class:`WalkEnsemble`."""

    def __init__(self, ens, in_cxi):
        self.ens = ens
        R = ens.n_replicas
        H = ens.horizon
        start = np.concatenate([np.zeros((R, 1)), np.minimum(ens.times, H)], axis=1)
        end = np.concatenate([np.minimum(ens.times, H), np.full((R, 1), H)], axis=1)
        self.inside = in_cxi[ens.vertices]
        dur = (end - start) * self.inside
        self.a_end = np.cumsum(dur, axis=1)
        self.a_start = self.a_end - dur
        self.seg_start = start

    @property
    def totals(self):
        """A(horizon) per replica."""
        return self.a_end[:, -1]

    def A(self, t):
        R = self.ens.n_replicas
        k = self.ens._n_before(t)
        rows = np.arange(R)
        return self.a_start[rows, k] + (t - self.seg_start[rows, k]) * self.inside[rows, k]

    def segments_at(self, s):
        """Segment index of X^xi(s) per replica; -1 where A(horizon) <= s."""
        hit = self.inside & (self.a_end > s)
        j = hit.argmax(axis=1)
        j[~hit.any(axis=1)] = -1
        return j

    def positions_at(self, s):
        j = self.segments_at(s)
        if (j < 0).any():
            raise HorizonExceededError(f"{(j < 0).sum()} replicas have A(horizon) <= {s}")
        return self.ens.vertices[np.arange(self.ens.n_replicas), j]

    def displacements_at(self, s, disp=None):
        j = self.segments_at(s)
        if (j < 0).any():
            raise HorizonExceededError(f"{(j < 0).sum()} replicas have A(horizon) <= {s}")
        disp = self.ens.cumulative_displacements() if disp is None else disp
        return disp[np.arange(self.ens.n_replicas), j].astype(np.int64)

    def exit_times(self, region_of, disp=None):
        """Intrinsic exit time of X^xi per replica (inf if not before A(horizon))."""
        ens = self.ens
        disp = ens.cumulative_displacements() if disp is None else disp
        starts = ens.spec.coords(ens.starts)
        out = np.full(ens.n_replicas, np.inf)
        for r in range(ens.n_replicas):
            reg = region_of(starts[r])
            n = int(ens.counts[r]) + 1
            idx = np.flatnonzero(self.inside[r, :n] & (self.a_end[r, :n] > self.a_start[r, :n]))
            pts = starts[r] + disp[r, idx]
            if not reg.contains(starts[r]):
                raise ValueError("start outside region")
            outside = np.flatnonzero(~reg.contains(pts))
            if len(outside):
                out[r] = self.a_start[r, idx[outside[0]]]
        return out

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcwalk import walker as wk
from rcwalk.experiments import stationary_starts
from rcwalk.geometry import find_holes, label_clusters
from rcwalk.lattice import (
    LatticeSpec, PolynomialTail, ZeroUniformMixture, constant_environment, from_edges, sample_environment,
    threshold_mask,
)

from conftest import lattice_neighbors


def mixture_env(L=24, seed=3, q=0.8, boundary="torus"):
    return sample_environment(LatticeSpec(2, L, boundary), ZeroUniformMixture(q), seed)


# ---------------------------------------------------------------- simulation

def test_isolated_start_is_frozen():
    spec = LatticeSpec(2, 5, "free")
    env = from_edges(spec, {(12, 7): 0, (12, 11): 0, (12, 13): 0, (12, 17): 0}, default=1.0)
    tr = wk.simulate_walk(env, 12, 100.0, seed=1)
    assert tr.events == []
    assert tr.position_at(50.0) == 12
    assert wk.exit_time(tr, wk.Ball((2, 2), 1.0)) is None


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        wk.simulate_walk(constant_environment(LatticeSpec(2, 4)), 0, 0.0, 1)


def test_jump_count_is_poisson_mean():
    env = constant_environment(LatticeSpec(2, 32))
    R, t = 10_000, 5.0
    ens = wk.simulate_walks(env, np.zeros(R, int), t, seed=2)
    n = ens.jump_counts(t)
    assert abs(n.mean() - t) <= 3 * np.sqrt(t / R)
    assert abs(n.var() - t) <= 5 * np.sqrt(2 * t * t / R + t / R)


def test_mean_square_displacement_equals_t():
    env = constant_environment(LatticeSpec(2, 128))
    R, t = 10_000, 20.0
    ens = wk.simulate_walks(env, np.full(R, env.spec.center()), t, seed=3)
    sq = (ens.displacements_at(t).astype(float) ** 2).sum(axis=1)
    assert abs(sq.mean() - t) <= 3 * sq.std(ddof=1) / np.sqrt(R)


def test_trajectory_invariants():
    env = mixture_env()
    spec = env.spec
    lab = label_clusters(spec, threshold_mask(env, 0.0)).label
    nz = np.flatnonzero(env.weights() > 0)
    ens = wk.simulate_walks(env, nz[:200], 50.0, seed=4)
    for r in range(ens.n_replicas):
        tr = ens.trajectory(r)
        assert np.all(np.diff(tr.times) > 0)
        assert tr.times[-1] <= tr.horizon
        v = tr.vertices
        for a, b in zip(v[:-1], v[1:]):
            assert b in lattice_neighbors(spec, a)
            assert env.conductance(a, b) > 0
        assert (lab[v] == lab[v[0]]).all()


def test_replica_is_reproducible_alone_and_chunk_free():
    env = mixture_env()
    starts = np.flatnonzero(env.weights() > 0)[:50]
    ens = wk.simulate_walks(env, starts, 30.0, seed=9)
    half = wk.simulate_walks(env, starts[20:], 30.0, seed=9, replica_ids=np.arange(20, 50))
    for r in range(20, 50):
        a = ens.trajectory(r)
        b = half.trajectory(r - 20)
        c = wk.simulate_walk(env, starts[r], 30.0, seed=9, replica=r)
        for x, y in ((a, b), (a, c)):
            assert np.array_equal(x.times, y.times) and np.array_equal(x.vertices, y.vertices)


def test_longer_horizon_extends_prefix():
    env = mixture_env()
    x0 = int(np.flatnonzero(env.weights() > 0)[0])
    short = wk.simulate_walk(env, x0, 10.0, seed=5)
    long = wk.simulate_walk(env, x0, 40.0, seed=5)
    n = short.n_jumps
    assert np.array_equal(long.times[: n + 1], short.times)
    assert np.array_equal(long.vertices[: n + 1], short.vertices)


def test_ensemble_views_agree_with_trajectories():
    env = mixture_env()
    starts = np.flatnonzero(env.weights() > 0)[:30]
    ens = wk.simulate_walks(env, starts, 25.0, seed=6)
    disp = ens.displacements_at(12.5)
    pos = ens.positions_at(12.5)
    sup = ens.sup_displacement(25.0, norm=np.inf)
    for r in range(30):
        tr = ens.trajectory(r)
        assert np.array_equal(tr.displacement_at(12.5), disp[r])
        assert tr.position_at(12.5) == pos[r]
        u = tr.unwrapped()
        assert sup[r] == np.abs(u - u[0]).max()
    with pytest.raises(wk.HorizonExceededError):
        ens.positions_at(26.0)


def test_stationary_occupation_proportional_to_weights():
    spec = LatticeSpec(2, 4, "torus")
    env = sample_environment(spec, PolynomialTail(1.0), 8)
    members = np.ones(spec.n_vertices, bool)
    R, T = 4000, 20.0
    starts = stationary_starts(env, members, R, seed=1)
    ens = wk.simulate_walks(env, starts, T, seed=2)
    occ = np.zeros((R, spec.n_vertices))
    start = np.concatenate([np.zeros((R, 1)), np.minimum(ens.times, T)], axis=1)
    end = np.concatenate([np.minimum(ens.times, T), np.full((R, 1), T)], axis=1)
    rows = np.repeat(np.arange(R), start.shape[1])
    np.add.at(occ, (rows, ens.vertices.ravel()), (end - start).ravel())
    frac = occ / T
    target = env.weights() / env.weights().sum()
    se = frac.std(axis=0, ddof=1) / np.sqrt(R)
    assert np.all(np.abs(frac.mean(axis=0) - target) <= 3.5 * se)


# ---------------------------------------------------------------- time change

def scripted():
    spec = LatticeSpec(2, 5, "free")
    in_cxi = np.ones(spec.n_vertices, bool)
    in_cxi[12] = False
    # C^xi on [0, 1) at 11, hole on [1, 2) at 12, C^xi on [2, 3] at 13
    tr = wk.scripted_trajectory(spec, 11, [(1.0, 12), (2.0, 13)], 3.0)
    return tr, in_cxi


def test_scripted_time_change():
    tr, in_cxi = scripted()
    tc = wk.build_time_change(tr, in_cxi)
    assert tc.A(3.0) == 2.0
    assert tc.A(1.5) == 1.0
    assert tc.inverse(1.5) == 2.5
    assert wk.time_changed_position(tc, 1.5) == tr.position_at(2.5) == 13
    assert wk.time_changed_position(tc, 0.5) == 11
    with pytest.raises(wk.HorizonExceededError):
        wk.time_changed_position(tc, 2.0)
    times, verts = tc.jumps()
    assert times.tolist() == [0.0, 1.0] and verts.tolist() == [11, 13]


def test_reentry_at_same_vertex_is_merged():
    spec = LatticeSpec(2, 5, "free")
    in_cxi = np.ones(spec.n_vertices, bool)
    in_cxi[12] = False
    tr = wk.scripted_trajectory(spec, 11, [(1.0, 12), (2.0, 11), (2.5, 6)], 3.0)
    times, verts = wk.build_time_change(tr, in_cxi).jumps()
    assert verts.tolist() == [11, 6]
    assert times.tolist() == [0.0, 1.5]


def test_no_holes_time_change_is_identity():
    env = constant_environment(LatticeSpec(2, 16))
    tr = wk.simulate_walk(env, 0, 20.0, seed=1)
    tc = wk.build_time_change(tr, np.ones(env.spec.n_vertices, bool))
    for t in np.linspace(0, 19.9, 37):
        assert tc.A(t) == pytest.approx(t, abs=1e-12)
        assert wk.time_changed_position(tc, t) == tr.position_at(t)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_time_change_properties(seed):
    env = mixture_env(seed=seed % 7)
    hs = find_holes(env, 0.3)
    g = np.random.default_rng(seed)
    x0 = int(g.choice(np.flatnonzero(hs.in_c)))
    tr = wk.simulate_walk(env, x0, 40.0, seed=seed)
    tc = wk.build_time_change(tr, hs.in_cxi)
    ts = np.sort(g.uniform(0, 40, 30))
    A = np.array([tc.A(t) for t in ts])
    assert tc.A(0.0) == 0.0
    assert np.all(np.diff(A) >= 0)
    assert np.all(np.diff(A) <= np.diff(ts) + 1e-12)
    assert np.all(A <= ts + 1e-12)
    assert 0.0 <= tc.total / 40.0 <= 1.0
    for t, a in zip(ts, A):
        if a < tc.total:
            inv = tc.inverse(a)
            assert inv >= t - 1e-9
            if hs.in_cxi[tr.position_at(t)]:
                assert inv == pytest.approx(t, abs=1e-9)
    if tc.total > 0:
        for s in g.uniform(0, tc.total, 20):
            assert hs.in_cxi[wk.time_changed_position(tc, s)]


def test_ensemble_time_change_matches_single():
    env = mixture_env()
    hs = find_holes(env, 0.3)
    starts = np.flatnonzero(hs.in_cxi)[:40]
    ens = wk.simulate_walks(env, starts, 60.0, seed=12)
    etc = ens.time_change(hs.in_cxi)
    s = 10.0
    disp = etc.displacements_at(s)
    pos = etc.positions_at(s)
    Avals = etc.A(33.3)
    for r in range(40):
        tc = wk.build_time_change(ens.trajectory(r), hs.in_cxi)
        assert etc.totals[r] == pytest.approx(tc.total, abs=1e-9)
        assert Avals[r] == pytest.approx(tc.A(33.3), abs=1e-9)
        assert pos[r] == wk.time_changed_position(tc, s)
        assert np.array_equal(disp[r], wk.time_changed_displacement(tc, s))
    ex = etc.exit_times(lambda c: wk.Ball(tuple(c), 3.0))
    for r in range(40):
        tc = wk.build_time_change(ens.trajectory(r), hs.in_cxi)
        e = wk.time_changed_exit_time(tc, wk.Ball(tuple(env.spec.coords(starts[r])), 3.0))
        assert (e is None and np.isinf(ex[r])) or e == pytest.approx(ex[r])


def test_x_and_xxi_closer_for_smaller_xi():
    env = mixture_env(L=96, seed=21, q=0.75)
    R, t = 3000, 150.0
    frac = {}
    for xi in (0.02, 0.3):
        hs = find_holes(env, xi)
        starts = np.full(R, int(np.flatnonzero(hs.in_cxi)[0]))
        ens = wk.simulate_walks(env, starts, 4 * t, seed=31)
        etc = ens.time_change(hs.in_cxi)
        assert (etc.totals > t).all()
        d = (ens.displacements_at(t) - etc.displacements_at(t)).astype(float)
        far = np.sqrt((d ** 2).sum(axis=1)) / np.sqrt(t) > 0.25
        frac[xi] = far.mean()
    se = np.sqrt(sum(f * (1 - f) / R for f in frac.values()))
    assert frac[0.02] <= frac[0.3] + 3 * se


# ---------------------------------------------------------------- exit times

def test_exit_time_examples():
    spec = LatticeSpec(2, 9, "free")
    c = spec.index([4, 4])
    path = [(1.0, spec.index([4, 5])), (2.0, spec.index([4, 6])), (3.0, spec.index([4, 7]))]
    tr = wk.scripted_trajectory(spec, c, path, 5.0)
    assert wk.exit_time(tr, wk.Ball((4, 4), 2.0)) == 3.0
    assert wk.exit_time(tr, wk.Box((4, 4), 2)) == 3.0
    assert wk.exit_time(tr, wk.Box((4, 4), 100)) is None
    with pytest.raises(ValueError):
        wk.exit_time(tr, wk.Ball((0, 0), 1.0))


def test_region_larger_than_window_never_exits():
    env = constant_environment(LatticeSpec(2, 8, "free"))
    ens = wk.simulate_walks(env, np.full(50, 27), 30.0, seed=1)
    ex = ens.exit_times(lambda c: wk.Box(tuple(c), 100))
    assert np.isinf(ex).all()

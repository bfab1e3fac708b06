
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcwalk import renorm as rn
from rcwalk.geometry import find_holes, giant_members
from rcwalk.lattice import Bernoulli, Constant, LatticeSpec, ZeroUniformMixture, sample_environment, threshold_mask


def full_mask(spec):
    return np.ones((spec.n_vertices, spec.d), bool) & spec.edge_exists()


def ring_complete(cls, i):
    ring = cls.grid.neighbors_within_one(i)
    return len(ring) == 3 ** cls.grid.spec.d and all(cls.complete[j] for j in ring)


# ---------------------------------------------------------------- grid

def test_grid_validation_and_geometry():
    spec = LatticeSpec(2, 72, "free")
    with pytest.raises(ValueError):
        rn.BoxGrid(spec, 6)
    with pytest.raises(ValueError):
        rn.BoxGrid(LatticeSpec(2, 20, "free"), 4)
    g = rn.BoxGrid(spec, 8)
    assert g.side == 17 and g.enlarged_side == 21 and g.blocks_per_axis == 4
    # blocks tile their region disjointly
    seen = np.zeros(spec.n_vertices, int)
    for i in g.indices():
        seen[g.block_vertices(i).ravel()] += 1
    assert seen.max() == 1 and seen.sum() == (4 * 17) ** 2
    # B' contains B and overlaps only blocks at L-inf distance <= 1
    for i in g.indices():
        if not g.enlarged_complete(i):
            continue
        big = set(g.enlarged_vertices(i).ravel().tolist())
        assert set(g.block_vertices(i).ravel().tolist()) <= big
        for j in g.indices():
            if g.enlarged_complete(j) and max(abs(a - b) for a, b in zip(i, j)) >= 2:
                assert not big & set(g.enlarged_vertices(j).ravel().tolist())


def test_crossing_for_subboxes():
    K = np.ones((11, 11), bool)
    assert rn.crossing_for_subboxes(K, 3, 2)
    K[:, 5] = False
    # the set (not its connectivity) must meet both faces of each subbox
    assert rn.crossing_for_subboxes(K, 3, 2)
    K[4:7, 4:7] = False
    assert not rn.crossing_for_subboxes(K, 3, 2)
    K = np.zeros((9, 9), bool)
    K[4, :] = True
    K[:, 4] = True
    # a cross meets the faces of big subboxes but not of small corner ones
    assert rn.crossing_for_subboxes(K, 9, 1)
    assert not rn.crossing_for_subboxes(K, 3, 1)
    assert not rn.crossing_for_subboxes(K, 3, 1, exhaustive=True)


# ---------------------------------------------------------------- colours

def test_all_open_gives_immaculate_interior():
    spec = LatticeSpec(2, 72, "free")
    m = full_mask(spec)
    for strict in rn.STRICT_MODES:
        cls = rn.classify_boxes(spec, m, m, 8, strict=strict)
        assert (cls.color[cls.complete] == rn.PURE_WHITE).all()
        assert (cls.color[~cls.complete] == rn.BLACK).all()
        for i in cls.grid.indices():
            assert cls.immaculate[i] == ring_complete(cls, i)
        assert set(cls.crossing_cluster) == {i for i in cls.grid.indices() if cls.complete[i]}


def test_all_open_exhaustive_small_n():
    spec = LatticeSpec(2, 45, "free")
    m = full_mask(spec)
    cls = rn.classify_boxes(spec, m, m, 4, exhaustive=True)
    assert (cls.color[cls.complete] == rn.PURE_WHITE).all()


def test_empty_alpha_is_black():
    spec = LatticeSpec(2, 72, "free")
    z = np.zeros((spec.n_vertices, 2), bool)
    cls = rn.classify_boxes(spec, z, z, 8)
    assert (cls.color == rn.BLACK).all()
    assert not cls.immaculate.any()


def test_consistency_error():
    spec = LatticeSpec(2, 72, "free")
    m = full_mask(spec)
    a = m.copy()
    a[100, 0] = False
    with pytest.raises(rn.ConsistencyError):
        rn.classify_boxes(spec, a, m, 8)
    with pytest.raises(ValueError):
        rn.classify_boxes(spec, m, m, 8, strict="loose")


def test_single_missing_edge_greys_block_and_ring():
    spec = LatticeSpec(2, 8 * 17, "free")
    m = full_mask(spec)
    base = rn.classify_boxes(spec, m, m, 8)
    i = (3, 3)
    c = base.grid.center(i)
    ap = m.copy()
    ap[spec.index(c), 0] = False  # edge at the block centre
    cls = rn.classify_boxes(spec, m, ap, 8)
    assert cls.color[i] == rn.GREY
    changed = {j for j in cls.grid.indices() if cls.color[j] != base.color[j]}
    assert changed == {i}
    lost = {j for j in cls.grid.indices() if base.immaculate[j] and not cls.immaculate[j]}
    expected = {j for j in cls.grid.indices()
                if base.immaculate[j] and max(abs(a - b) for a, b in zip(i, j)) <= 1}
    assert lost == expected and len(lost) == 9


def test_edge_on_block_border_greys_both_blocks():
    spec = LatticeSpec(2, 8 * 17, "free")
    m = full_mask(spec)
    g = rn.BoxGrid(spec, 8)
    # last row of block (3, 3) to first row of block (4, 3)
    x = spec.index([4 * 17 - 1, 3 * 17 + 5])
    ap = m.copy()
    ap[x, 0] = False
    cls = rn.classify_boxes(spec, m, ap, 8)
    assert cls.color[3, 3] == rn.GREY and cls.color[4, 3] == rn.GREY
    assert (cls.color == rn.GREY).sum() == 2


def test_p_one_has_no_grey_boxes():
    r = rn.estimate_renormalized_params(ZeroUniformMixture(0.8), 1.0, 4, 2, seed=3, L=90)
    assert r["p_prime"] == r["p"]
    assert r["xi"] == 0.0
    r = rn.estimate_renormalized_params(Constant(1.0), 1.0, 4, 1, seed=0, L=90)
    assert r["p"] == r["p_prime"] == r["p_second"] == 1.0


def test_whiteness_improves_with_scale():
    law = Bernoulli(0.75)
    r8 = rn.estimate_renormalized_params(law, 1.0, 8, 6, seed=11, L=8 * 33)
    r16 = rn.estimate_renormalized_params(law, 1.0, 16, 6, seed=11, L=8 * 33)
    se8 = np.sqrt(r8["p"] * (1 - r8["p"]) / r8["blocks"])
    assert r16["p"] >= r8["p"] - 3 * se8
    assert r8["e_N"] == rn.edges_per_block(8, 2) == 2 * 17 * 18
    assert r8["p_prime_bound"] == pytest.approx(r8["p"])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_flipping_alpha_prime_up_never_greys(seed):
    spec = LatticeSpec(2, 60, "free")
    env = sample_environment(spec, ZeroUniformMixture(0.85), seed)
    alpha = threshold_mask(env, 0.0)
    ap = threshold_mask(env, 0.05)
    cls = rn.classify_boxes(spec, alpha, ap, 4)
    g = np.random.default_rng(seed)
    cand = np.argwhere(alpha & ~ap)
    for x, k in cand[g.choice(len(cand), min(5, len(cand)), replace=False)]:
        ap2 = ap.copy()
        ap2[x, k] = True
        cls2 = rn.classify_boxes(spec, alpha, ap2, 4)
        assert not ((cls.color == rn.PURE_WHITE) & (cls2.color == rn.GREY)).any()
        assert np.array_equal(cls.white(), cls2.white())


# ---------------------------------------------------------------- proof skeleton

@pytest.fixture(scope="module")
def supercritical_instances():
    out = []
    for s in range(6):
        spec = LatticeSpec(2, 144, "free")
        env = sample_environment(spec, ZeroUniformMixture(0.85), 500 + s)
        out.append((env, rn.classify_environment(env, 0.003, 4)))
    return out


def test_fact_i(supercritical_instances):
    for env, cls in supercritical_instances:
        alpha = threshold_mask(env, 0.0)
        giant = giant_members(env.spec, alpha)
        whites = [i for i in cls.grid.indices() if cls.color[i] != rn.BLACK]
        assert whites
        for i in whites:
            assert rn.fact_i_holds(env.spec, alpha, cls, i, giant)


def test_fact_ii(supercritical_instances):
    n = 0
    for env, cls in supercritical_instances:
        alpha = threshold_mask(env, 0.0)
        for i in cls.grid.indices():
            for k in range(2):
                j = list(i)
                j[k] += 1
                j = tuple(j)
                if j in cls.crossing_cluster and i in cls.crossing_cluster:
                    assert rn.fact_ii_holds(env.spec, alpha, cls, i, j)
                    n += 1
    assert n > 0


def test_hole_footprints_avoid_giant_immaculate(supercritical_instances):
    holes_seen = 0
    for env, cls in supercritical_instances:
        hs = find_holes(env, 0.003)
        holes_seen += len(hs)
        assert rn.footprint_violations(env, 0.003, cls, hs) == []
    assert holes_seen > 0


def test_block_components_and_giant():
    mask = np.array([[1, 1, 0, 0], [0, 1, 0, 1], [0, 0, 0, 1], [1, 0, 0, 1]], bool)
    lab = rn.block_components(mask)
    assert lab[0, 0] == lab[1, 1] and lab[1, 3] == lab[3, 3] and lab[0, 0] != lab[1, 3]


def test_to_dict_summary():
    spec = LatticeSpec(2, 45, "free")
    m = full_mask(spec)
    d = rn.classify_boxes(spec, m, m, 4).to_dict()
    assert d["summary"]["pure_white"] == 1.0
    assert len(d["blocks"]) == 25

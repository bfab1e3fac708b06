"""Estimators and statistical checks built on the simulation layers, plus
the config-driven experiment runner.

Every random quantity is derived from the config seed through the
counter-based generator, so reruns of a config are bit-identical.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, rng
from .effective import effective_conductances, heat_kernel_times, poincare_constant
from .geometry import (
    DegenerateEnvironmentError,
    chemical_distances_from,
    chemical_graph,
    find_holes,
    giant_members,
)
from .lattice import LatticeSpec, parse_law, sample_environment, threshold_mask
from .walker import simulate_walks

SCHEMA_VERSION = 1
KINDS = (
    "sigma2",
    "c_xi",
    "variance_identity",
    "gaussianity",
    "kernel_decay",
    "exit_tail",
    "chemical_distance",
    "poincare_scaling",
    "hole_volume",
    "tightness",
)
MIN_GIANT_DENSITY = 0.01
MAX_RESAMPLES = 100
CHUNK = 4096
# bond percolation threshold of Z^2 (Kesten); other dimensions must be supplied
PC_BOND = {2: 0.5}


# ----------------------------------------------------------------------------
# config and results


@dataclass
class ExperimentConfig:
    """Recipe for one experiment.

    ``mode`` is ``"quenched"`` (``n_envs`` environments, many walks each) or
    ``"annealed"`` (a fresh environment per batch of walks; the batch means
    are the replicas).  ``params`` holds kind-specific settings.
    """

    kind: str
    d: int = 2
    L: int = 64
    boundary: str = "torus"
    law: str = "constant:1"
    seed: int = 0
    xi: list = field(default_factory=list)
    horizons: list = field(default_factory=lambda: [100.0])
    replicas: int = 1000
    mode: str = "quenched"
    n_envs: int = 1
    params: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {self.schema_version}")
        if self.replicas < 2:
            raise ValueError("replicas must be >= 2 for standard errors")
        if self.mode not in ("quenched", "annealed"):
            raise ValueError("mode must be 'quenched' or 'annealed'")
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        parse_law(self.law)
        self.xi = [float(x) for x in self.xi]
        self.horizons = [float(t) for t in self.horizons]

    @property
    def spec(self):
        return LatticeSpec(self.d, self.L, self.boundary)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        ver = data.get("schema_version", None)
        if ver != SCHEMA_VERSION:
            raise ValueError(f"config schema_version must be {SCHEMA_VERSION}, got {ver!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class ResultRow:
    quantity: str
    estimate: float
    se: float
    n: int
    meta: str = ""


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, quantity, estimate, se=float("nan"), n=0, /, **meta):
        m = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(meta.items()))
        self.rows.append(ResultRow(quantity, float(estimate), float(se), int(n), m))

    def get(self, quantity):
        for r in self.rows:
            if r.quantity == quantity:
                return r
        raise KeyError(quantity)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "estimate", "se", "n", "meta"])
        for r in self.rows:
            w.writerow([r.quantity, _fmt(r.estimate), _fmt(r.se), r.n, r.meta])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


# ----------------------------------------------------------------------------
# seeds, environments, starts


def env_seed(seed, e, attempt=0):
    return rng.replica_seed(rng.replica_seed(seed, e), attempt)


def walk_seed(seed, e):
    return rng.replica_seed(rng.replica_seed(seed, e), 1 << 40)


def nearest_member(spec, members):
    """Vertex of ``members`` closest (Euclidean, then index) to the centre."""
    cand = np.flatnonzero(members)
    if not len(cand):
        raise DegenerateEnvironmentError("empty vertex set")
    disp = spec.displacement(np.full(len(cand), spec.center()), cand)
    dist = (disp.astype(float) ** 2).sum(axis=1)
    return int(cand[np.argmin(dist)])


@dataclass
class QuenchedEnv:
    env: object
    start: int
    substituted: bool
    attempts: int
    in_c: np.ndarray
    in_cxi: np.ndarray = None


def quenched_environment(cfg, e, xi=None):
    """Environment ``e`` of a config, resampled until the giant cluster is usable.

    The start is the centre if it lies in the giant cluster (of w >= xi when
    ``xi`` is given), otherwise the nearest giant vertex; ``substituted``
    records which.
    """
    spec = cfg.spec
    law = parse_law(cfg.law)
    for a in range(MAX_RESAMPLES):
        env = sample_environment(spec, law, env_seed(cfg.seed, e, a))
        alpha = threshold_mask(env, 0.0)
        if not alpha.any():
            continue
        in_c = giant_members(spec, alpha)
        if in_c.mean() < MIN_GIANT_DENSITY:
            continue
        in_cxi = None
        target = in_c
        if xi is not None:
            ap = threshold_mask(env, xi)
            if not ap.any():
                continue
            in_cxi = giant_members(spec, ap)
            if in_cxi.mean() < MIN_GIANT_DENSITY:
                continue
            target = in_cxi
        start = nearest_member(spec, target)
        return QuenchedEnv(env, start, start != spec.center(), a + 1, in_c, in_cxi)
    raise DegenerateEnvironmentError(f"no usable environment after {MAX_RESAMPLES} draws")


def stationary_starts(env, members, R, seed, stream=0):
    """R starts drawn from n(x) restricted to ``members`` (the reversible measure)."""
    w = np.where(members, env.weights(), 0.0)
    cdf = np.cumsum(w)
    u = rng.uniforms(seed, np.arange(R, dtype=np.uint64), stream=stream, purpose=rng.PURPOSE_START)[:, 0]
    idx = np.searchsorted(cdf, (1.0 - u) * cdf[-1], side="right")
    return np.minimum(idx, len(w) - 1)


def _chunks(R, chunk=CHUNK):
    for a in range(0, R, chunk):
        yield a, min(R, a + chunk)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


# ----------------------------------------------------------------------------
# diffusivity


def sigma2_samples(env, starts, T, seed):
    """Per-replica mean over coordinates of X_i(T)^2 / T, and the raw displacements."""
    R = len(starts)
    vals = np.empty(R)
    disp = np.empty((R, env.spec.d), dtype=np.int64)
    for a, b in _chunks(R):
        ens = simulate_walks(env, starts[a:b], T, seed, replica_ids=np.arange(a, b))
        disp[a:b] = ens.displacements_at(T)
    vals[:] = (disp.astype(float) ** 2).mean(axis=1) / T
    return vals, disp


def time_changed_samples(env, in_cxi, starts, S, seed, c_guess=1.0):
    """Displacements of X^xi at intrinsic time S (unwrapped), per replica.

    The source walk is simulated up to a horizon chosen from ``c_guess``;
    replicas whose clock A(horizon) falls short are re-simulated with a
    doubled horizon (same random streams, so the prefix is unchanged).
    """
    R = len(starts)
    d = env.spec.d
    disp = np.empty((R, d), dtype=np.int64)
    H0 = 1.5 * S / max(c_guess, 1e-3) + 20.0
    for a, b in _chunks(R):
        ids = np.arange(a, b)
        todo = ids
        H = H0
        while len(todo):
            ens = simulate_walks(env, starts[todo], H, seed, replica_ids=todo)
            tc = ens.time_change(in_cxi)
            ok = tc.totals > S
            if ok.any():
                sub = np.flatnonzero(ok)
                j = tc.segments_at(S)[sub]
                cd = ens.cumulative_displacements()
                disp[todo[sub]] = cd[sub, j]
            todo = todo[~ok]
            H *= 2
    return disp


def estimate_sigma2(cfg, T=None):
    """sigma^2 = E[X_i(T)^2] / T averaged over coordinates, with SE.

    Quenched: per environment the walks start at the (substituted) centre and
    the SE is over walks; with several environments the pooled SE is over
    environment means.  Annealed: ``n_envs`` environments, the replicas split
    evenly among them, SE over environment batch means.
    """
    T = cfg.horizons[-1] if T is None else float(T)
    table = ResultTable()
    env_means = []
    all_vals = []
    subs = 0
    draws = 0
    per_env = cfg.replicas if cfg.mode == "quenched" else max(2, cfg.replicas // cfg.n_envs)
    for e in range(cfg.n_envs):
        q = quenched_environment(cfg, e)
        subs += q.substituted
        draws += q.attempts - 1
        starts = np.full(per_env, q.start)
        vals, disp = sigma2_samples(q.env, starts, T, walk_seed(cfg.seed, e))
        m, se = _mean_se(vals)
        env_means.append(m)
        all_vals.append(vals)
        if cfg.mode == "quenched":
            table.add(f"sigma2[env={e}]", m, se, per_env, t=T)
            for k in range(cfg.d):
                mk, sk = _mean_se(disp[:, k].astype(float) ** 2 / T)
                table.add(f"sigma2_coord{k}[env={e}]", mk, sk, per_env, t=T)
    if cfg.n_envs == 1:
        m, se = _mean_se(all_vals[0])
        n = len(all_vals[0])
    else:
        m, se = _mean_se(env_means)
        n = cfg.n_envs
    table.add("sigma2", m, se, n, t=T, mode=cfg.mode, substitutions=subs, resamples=draws)
    return table


# ----------------------------------------------------------------------------
# time fraction c(xi)


def c_xi_spatial(env, in_c, in_cxi):
    """E2: n-weighted fraction of the giant cluster lying in C^xi."""
    w = env.weights()
    return float(w[in_c & in_cxi].sum() / w[in_c].sum())


def c_xi_temporal(env, in_c, in_cxi, T, R, seed):
    """E1: A^xi(T)/T per replica, walks started from n restricted to C."""
    starts = stationary_starts(env, in_c, R, seed)
    out = np.empty(R)
    for a, b in _chunks(R):
        ens = simulate_walks(env, starts[a:b], T, seed, replica_ids=np.arange(a, b))
        out[a:b] = ens.time_change(in_cxi).totals / T
    return out


def estimate_c_xi(cfg, xi, T=None):
    """Both estimators of c(xi) on each of ``n_envs`` quenched environments.

    Rows ``E1[env=e]`` (mean of A(T)/T over walks, SE over walks) and
    ``E2[env=e]`` (exact spatial average for that environment) plus pooled
    ``E1`` and ``E2`` with SE over environments.
    """
    T = cfg.horizons[-1] if T is None else float(T)
    table = ResultTable()
    e1s, e2s = [], []
    for e in range(cfg.n_envs):
        q = quenched_environment(cfg, e, xi)
        e2 = c_xi_spatial(q.env, q.in_c, q.in_cxi)
        vals = c_xi_temporal(q.env, q.in_c, q.in_cxi, T, cfg.replicas, walk_seed(cfg.seed, e))
        m, se = _mean_se(vals)
        table.add(f"E1[env={e}]", m, se, cfg.replicas, xi=xi, t=T)
        table.add(f"E2[env={e}]", e2, 0.0, int(q.in_c.sum()), xi=xi)
        e1s.append(m)
        e2s.append(e2)
    for name, arr in (("E1", e1s), ("E2", e2s)):
        if len(arr) > 1:
            m, se = _mean_se(arr)
        else:
            m, se = arr[0], table.get(f"{name}[env=0]").se
        table.add(name, m, se, len(arr), xi=xi)
    return table


# ----------------------------------------------------------------------------
# variance identity


def verify_variance_identity(cfg, xi, T=None, S=None):
    """Compare c(xi) sigma^2(xi) with sigma^2 on one quenched environment.

    sigma^2 comes from X at time T, sigma^2(xi) from X^xi at intrinsic time S,
    each on its own replica set started from the reversible measure (n on C,
    resp. n on C^xi).  c(xi) is the exact spatial estimator of that
    environment.  Pass iff the difference is within 3 pooled SE.
    """
    T = cfg.horizons[-1] if T is None else float(T)
    S = T if S is None else float(S)
    q = quenched_environment(cfg, 0, xi)
    env = q.env
    R = cfg.replicas
    base = walk_seed(cfg.seed, 0)
    c = c_xi_spatial(env, q.in_c, q.in_cxi)
    s0 = stationary_starts(env, q.in_c, R, base, stream=1)
    v0, _ = sigma2_samples(env, s0, T, rng.replica_seed(base, 1))
    s1 = stationary_starts(env, q.in_cxi, R, base, stream=2)
    d1 = time_changed_samples(env, q.in_cxi, s1, S, rng.replica_seed(base, 2), c_guess=c)
    v1 = (d1.astype(float) ** 2).mean(axis=1) / S
    m0, se0 = _mean_se(v0)
    m1, se1 = _mean_se(v1)
    diff = c * m1 - m0
    pooled = math.sqrt((c * se1) ** 2 + se0 ** 2)
    table = ResultTable()
    table.add("sigma2", m0, se0, R, t=T)
    table.add("sigma2_xi", m1, se1, R, xi=xi, s=S)
    table.add("c_xi", c, 0.0, int(q.in_c.sum()), xi=xi)
    table.add("c_sigma2_xi", c * m1, c * se1, R, xi=xi)
    table.add("identity_gap", diff, pooled, R, xi=xi, passed=int(abs(diff) <= 3 * pooled))
    return table


# ----------------------------------------------------------------------------
# Gaussianity


MIN_KS_SAMPLES = 1000


def gaussianity_test(samples):
    """Two-sided KS test of ``samples`` against N(0, 1) (asymptotic p-value)."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < MIN_KS_SAMPLES:
        raise ValueError(f"need at least {MIN_KS_SAMPLES} samples, got {len(x)}")
    res = stats.kstest(x, "norm", method="asymp")
    return float(res.statistic), float(res.pvalue)


def scaled_coordinates(disp, seed, coord=0, center=True):
    """Jittered, standardised lattice coordinate.

    Adding U(-1/2, 1/2) removes the lattice atoms (which a KS test would
    otherwise flag).  With ``center`` the empirical mean is subtracted: in a
    fixed environment E[X(t)] is an O(1) offset set by the geometry around
    the start, invisible after diffusive scaling but detectable by KS at a
    few thousand samples.  The result is divided by its empirical spread,
    i.e. by sqrt(sigma^2 t + 1/12).
    """
    x = np.asarray(disp, dtype=float)[:, coord]
    u = rng.uniforms(seed, np.arange(len(x), dtype=np.uint64), purpose=rng.PURPOSE_MISC)[:, 0]
    y = x + (u - 0.5)
    if center:
        y = y - y.mean()
    return y / math.sqrt(np.mean(y ** 2))


def gaussianity_experiment(cfg, T=None):
    T = cfg.horizons[-1] if T is None else float(T)
    q = quenched_environment(cfg, 0)
    ws = walk_seed(cfg.seed, 0)
    _, disp = sigma2_samples(q.env, np.full(cfg.replicas, q.start), T, ws)
    table = ResultTable()
    for k in range(cfg.d):
        x = disp[:, k].astype(float)
        table.add(f"mean_offset_coord{k}", x.mean(), x.std(ddof=1) / math.sqrt(len(x)), len(x), t=T)
    for center in (True, False):
        z = scaled_coordinates(disp, rng.replica_seed(ws, 7), center=center)
        D, p = gaussianity_test(z)
        tag = "" if center else "_uncentered"
        table.add("ks_statistic" + tag, D, float("nan"), len(z), t=T)
        table.add("ks_pvalue" + tag, p, float("nan"), len(z), t=T)
    return table


def ks_calibration(runs, n, seed, level=0.05):
    """Rejection rate of the KS test on exact N(0,1) samples with a Clopper-Pearson CI."""
    rej = 0
    for r in range(runs):
        u = rng.uniforms(seed, np.arange(n, dtype=np.uint64), stream=r, purpose=rng.PURPOSE_MISC)[:, 0]
        x = stats.norm.ppf(np.clip(u, 1e-300, 1 - 2 ** -53))
        _, p = gaussianity_test(x)
        rej += p < level
    ci = stats.binomtest(rej, runs).proportion_ci(0.95, method="exact")
    return {"rate": rej / runs, "ci": (float(ci.low), float(ci.high)), "runs": runs}


# ----------------------------------------------------------------------------
# on-diagonal decay


def kernel_decay_experiment(cfg):
    """Slope of log P_0[X(t) = 0] against log t from exact kernels.

    With ``cfg.xi`` set, the time-changed walk on the first xi is used.
    Params: ``t_min`` (10), ``t_max`` (horizons[-1]), ``n_t`` (12), ``rtol``
    (1e-9, slack of the monotonicity check of t^(d/2) P), ``t_burn``
    (t_min; the monotonicity check only looks at t >= t_burn).
    """
    p = cfg.params
    t_min = float(p.get("t_min", 10.0))
    t_max = float(p.get("t_max", cfg.horizons[-1]))
    n_t = int(p.get("n_t", 12))
    rtol = float(p.get("rtol", 1e-9))
    t_burn = float(p.get("t_burn", t_min))
    xi = cfg.xi[0] if cfg.xi else None
    q = quenched_environment(cfg, 0, xi)
    source = q.env if xi is None else effective_conductances(q.env, xi)
    ts = np.geomspace(t_min, t_max, n_t)
    ker = heat_kernel_times(source, q.start, ts)
    p0 = ker[:, q.start]
    fit = stats.linregress(np.log(ts), np.log(p0))
    g = ts ** (cfg.d / 2) * p0
    tail = g[ts >= t_burn]
    nonincreasing = bool(np.all(np.diff(tail) <= rtol * tail[:-1]))
    table = ResultTable()
    for t, v in zip(ts, p0):
        table.add("p0", v, 0.0, 1, t=t)
    table.add("slope", fit.slope, fit.stderr, n_t, t_min=t_min, t_max=t_max)
    table.add("max_scaled_return", float(g.max()), 0.0, n_t)
    table.add("scaled_return_nonincreasing", float(nonincreasing), 0.0, len(tail), t_burn=t_burn)
    return table


# ----------------------------------------------------------------------------
# exit times


def exit_times_ball(env, starts, radii, horizon, seed, in_cxi=None, replica_ids=None):
    """Exit times from Euclidean balls (closed, centred at the start) for each radius.

    Returns an (R, len(radii)) array, inf when no exit before the horizon.
    With ``in_cxi`` the exit times are those of X^xi in its own clock.
    """
    radii = np.asarray(radii, dtype=float)
    R = len(starts)
    ids = np.arange(R) if replica_ids is None else np.asarray(replica_ids)
    out = np.full((R, len(radii)), np.inf)
    for a, b in _chunks(R):
        ens = simulate_walks(env, starts[a:b], horizon, seed, replica_ids=ids[a:b])
        cd = ens.cumulative_displacements().astype(float)
        dist = np.sqrt((cd ** 2).sum(axis=2))
        K = dist.shape[1]
        if in_cxi is None:
            clock = np.concatenate([np.zeros((b - a, 1)), ens.times], axis=1)
            valid = np.arange(K)[None, :] <= ens.counts[:, None]
        else:
            tc = ens.time_change(in_cxi)
            clock = tc.a_start
            valid = tc.inside & (tc.a_end > tc.a_start)
        dist = np.where(valid, dist, -np.inf)
        run = np.maximum.accumulate(dist, axis=1)
        for j, r in enumerate(radii):
            hit = run > r
            first = hit.argmax(axis=1)
            got = hit.any(axis=1)
            out[a:b, j][got] = clock[np.flatnonzero(got), first[got]]
    return out


def exit_tail_experiment(cfg):
    """P[tau(0, r) < t] over an (r, t) grid and the fitted constants.

    c_e is the least constant with P <= c_e sqrt(t)/r on the grid, c_e' the
    least with P <= c_e' (sqrt(t)/r)^3.  Replicas are split into two
    disjoint batches for a stability check.  Params: ``radii``, ``times``.
    """
    p = cfg.params
    radii = np.asarray(p.get("radii", [4, 8, 16, 32]), dtype=float)
    times = np.asarray(p.get("times", [1, 4, 16, 64]), dtype=float)
    xi = cfg.xi[0] if cfg.xi else None
    q = quenched_environment(cfg, 0, xi)
    R = cfg.replicas
    horizon = float(times.max())
    c_guess = 1.0
    if xi is not None:
        c_guess = c_xi_spatial(q.env, q.in_c, q.in_cxi)
        horizon = 2.0 * horizon / c_guess + 20.0
    ex = exit_times_ball(q.env, np.full(R, q.start), radii, horizon, walk_seed(cfg.seed, 0),
                         in_cxi=None if xi is None else q.in_cxi)
    table = ResultTable()
    half = R // 2
    ces = []
    for name, sl in (("all", slice(0, R)), ("batch0", slice(0, half)), ("batch1", slice(half, R))):
        e = ex[sl]
        n = e.shape[0]
        ce = 0.0
        ce3 = 0.0
        for j, r in enumerate(radii):
            for t in times:
                ph = float((e[:, j] < t).mean())
                if name == "all":
                    table.add("p_exit", ph, math.sqrt(ph * (1 - ph) / n), n, r=r, t=t)
                x = math.sqrt(t) / r
                ce = max(ce, ph / x)
                ce3 = max(ce3, ph / x ** 3)
        table.add(f"c_e[{name}]", ce, float("nan"), n)
        table.add(f"c_e_cube[{name}]", ce3, float("nan"), n)
        if name != "all":
            ces.append(ce)
    ce_all = table.get("c_e[all]").estimate
    ce3_all = table.get("c_e_cube[all]").estimate
    table.add("batch_relative_difference", abs(ces[0] - ces[1]) / max(ces), float("nan"), R)
    table.add("cube_ratio", ce3_all / (27 * ce_all ** 3), float("nan"), R)
    return table


# ----------------------------------------------------------------------------
# chemical distance


def chemical_distance_experiment(cfg):
    """Ratios d^xi(x, y) / |x - y| for sampled pairs with |x - y| >= (log L)^2.

    Params: ``n_sources`` (20), ``n_targets`` (50).  For each xi the OLS
    slope through the origin, the max/min ratio and the mean ratio (SE over
    sources) are reported; unreachable pairs are excluded and counted.
    """
    p = cfg.params
    n_src = int(p.get("n_sources", 20))
    n_tgt = int(p.get("n_targets", 50))
    xis = cfg.xi or [0.0]
    table = ResultTable()
    spec = cfg.spec
    rmin = math.log(cfg.L) ** 2
    for xi in xis:
        q = quenched_environment(cfg, 0, xi)
        holes = find_holes(q.env, xi)
        cg = chemical_graph(q.env, xi, holes)
        members = np.flatnonzero(holes.in_cxi)
        ws = walk_seed(cfg.seed, 0)
        u = rng.uniforms(ws, np.arange(n_src, dtype=np.uint64), purpose=rng.PURPOSE_START)[:, 0]
        sources = members[np.minimum((u * len(members)).astype(np.int64), len(members) - 1)]
        dist_all, d_all = [], []
        per_source = []
        unreachable = 0
        for s_i, x in enumerate(sources):
            dist = chemical_distances_from(cg, x)
            disp = spec.displacement(np.full(len(members), x), members).astype(float)
            eu = np.sqrt((disp ** 2).sum(axis=1))
            far = np.flatnonzero(eu >= rmin)
            if not len(far):
                continue
            ut = rng.uniforms(ws, np.arange(len(far), dtype=np.uint64), stream=s_i + 1, purpose=rng.PURPOSE_MISC)[:, 0]
            pick = far[np.argsort(ut, kind="stable")[:n_tgt]]
            dv = dist[members[pick]]
            ok = np.isfinite(dv)
            unreachable += int((~ok).sum())
            if ok.any():
                dist_all.append(eu[pick][ok])
                d_all.append(dv[ok])
                per_source.append(float((dv[ok] / eu[pick][ok]).mean()))
        r = np.concatenate(dist_all)
        dd = np.concatenate(d_all)
        ratio = dd / r
        slope = float((dd * r).sum() / (r * r).sum())
        resid = dd - slope * r
        slope_se = float(math.sqrt((resid ** 2).sum() / (len(r) - 1) / (r * r).sum()))
        table.add("ols_slope", slope, slope_se, len(r), xi=xi)
        table.add("max_ratio", float(ratio.max()), float("nan"), len(r), xi=xi)
        table.add("min_ratio", float(ratio.min()), float("nan"), len(r), xi=xi)
        m, se = _mean_se(per_source)
        table.add("mean_ratio", m, se, len(per_source), xi=xi)
        table.add("unreachable", unreachable, float("nan"), len(r) + unreachable, xi=xi)
    return table


# ----------------------------------------------------------------------------
# Poincare scaling


def poincare_scaling_experiment(law, n_list, replicas, seed, d=2, measure="restricted", xi=None):
    """log A_n against log n on free boxes of side 2 max(n) + 1.

    Returns a ResultTable with the mean log A_n per n and the OLS slope; the
    SE of the slope is over environment replicas (each replica is fitted on
    its own).
    """
    law = parse_law(law) if isinstance(law, str) else law
    n_list = [int(n) for n in n_list]
    spec = LatticeSpec(d, 2 * max(n_list) + 1, "free")
    logs = np.empty((replicas, len(n_list)))
    sizes = np.empty((replicas, len(n_list)), dtype=np.int64)
    for r in range(replicas):
        env = sample_environment(spec, law, env_seed(seed, r))
        for j, n in enumerate(n_list):
            rep = poincare_constant(env, xi, n, measure=measure)
            logs[r, j] = math.log(rep.poincare)
            sizes[r, j] = rep.size
    x = np.log(n_list)
    slopes = np.array([np.polyfit(x, logs[r], 1)[0] for r in range(replicas)])
    table = ResultTable()
    for j, n in enumerate(n_list):
        m, se = _mean_se(logs[:, j]) if replicas > 1 else (float(logs[0, j]), 0.0)
        table.add("log_A", m, se, replicas, n=n, size=int(sizes[:, j].mean()))
    m, se = _mean_se(slopes) if replicas > 1 else (float(slopes[0]), 0.0)
    table.add("slope", m, se, replicas, law=law.tag, measure=measure)
    return table


# ----------------------------------------------------------------------------
# hole volumes


def hole_volume_experiment(cfg):
    """Largest hole volume against L; params ``sizes`` (list of L)."""
    sizes = [int(v) for v in cfg.params.get("sizes", [cfg.L])]
    xi = cfg.xi[0]
    law = parse_law(cfg.law)
    table = ResultTable()
    means = []
    for L in sizes:
        spec = LatticeSpec(cfg.d, L, cfg.boundary)
        vals = []
        for r in range(cfg.replicas):
            env = sample_environment(spec, law, env_seed(cfg.seed, L * 100_003 + r))
            h = find_holes(env, xi)
            vals.append(max((len(a) for a in h.holes), default=0))
        m, se = _mean_se(vals)
        means.append(m)
        table.add("max_hole_volume", m, se, cfg.replicas, L=L, xi=xi)
    fit = stats.linregress(np.log(sizes), np.log(np.maximum(means, 1e-12)))
    table.add("slope", fit.slope, fit.stderr, len(sizes), xi=xi)
    return table


# ----------------------------------------------------------------------------
# tightness proxy


def tightness_experiment(cfg):
    """P(sup_{s <= T} |X(s)| / sqrt(T) >= K) for K in params ``K`` and each horizon."""
    Ks = np.asarray(cfg.params.get("K", [0.5, 1.0, 1.5, 2.0, 3.0]), dtype=float)
    q = quenched_environment(cfg, 0)
    table = ResultTable()
    for h_i, T in enumerate(cfg.horizons):
        seed = rng.replica_seed(walk_seed(cfg.seed, 0), h_i)
        R = cfg.replicas
        sup = np.empty(R)
        for a, b in _chunks(R):
            ens = simulate_walks(q.env, np.full(b - a, q.start), T, seed, replica_ids=np.arange(a, b))
            sup[a:b] = ens.sup_displacement(T, norm=2)
        for K in Ks:
            ph = float((sup / math.sqrt(T) >= K).mean())
            table.add("p_sup", ph, math.sqrt(ph * (1 - ph) / R), R, T=T, K=K)
    return table


# ----------------------------------------------------------------------------
# runner


def supercritical(law, xi, d):
    """Q(w >= xi) > p_c(d); raises when p_c is unknown for d."""
    if d not in PC_BOND:
        raise ValueError(f"no bond threshold stored for d={d}")
    return law.prob_at_least(xi) > PC_BOND[d]


def run_experiment(cfg, out_dir=None):
    """Dispatch on ``cfg.kind``; optionally write results.csv and manifest.json."""
    kind = cfg.kind
    if kind == "sigma2":
        table = estimate_sigma2(cfg)
    elif kind == "c_xi":
        table = ResultTable()
        for xi in cfg.xi:
            table.rows.extend(estimate_c_xi(cfg, xi).rows)
    elif kind == "variance_identity":
        table = ResultTable()
        for xi in cfg.xi:
            table.rows.extend(verify_variance_identity(cfg, xi).rows)
    elif kind == "gaussianity":
        table = gaussianity_experiment(cfg)
    elif kind == "kernel_decay":
        table = kernel_decay_experiment(cfg)
    elif kind == "exit_tail":
        table = exit_tail_experiment(cfg)
    elif kind == "chemical_distance":
        table = chemical_distance_experiment(cfg)
    elif kind == "poincare_scaling":
        table = poincare_scaling_experiment(
            cfg.law, cfg.params.get("n_list", [8, 16, 32, 64]), cfg.replicas, cfg.seed, cfg.d,
            cfg.params.get("measure", "restricted"), cfg.xi[0] if cfg.xi else None)
    elif kind == "hole_volume":
        table = hole_volume_experiment(cfg)
    else:
        table = tightness_experiment(cfg)
    if out_dir is not None:
        write_outputs(cfg, table, out_dir)
    return table


def write_outputs(cfg, table, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = table.to_csv().encode("utf-8")
    (out / "results.csv").write_bytes(data)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "env_seeds": [env_seed(cfg.seed, e) for e in range(cfg.n_envs)],
        "walk_seeds": [walk_seed(cfg.seed, e) for e in range(cfg.n_envs)],
        "results_sha256": hashlib.sha256(data).hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def rerun_from_manifest(path, out_dir=None):
    """Re-run the config stored in a manifest; returns (table, reproduced?)."""
    m = json.loads(Path(path).read_text())
    cfg = ExperimentConfig.from_dict(m["config"])
    if cfg.digest() != m["config_sha256"]:
        raise ValueError("manifest config does not match its hash")
    table = run_experiment(cfg, out_dir)
    same = hashlib.sha256(table.to_csv().encode("utf-8")).hexdigest() == m["results_sha256"]
    return table, same

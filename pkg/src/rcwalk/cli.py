"""Command line entry point: ``rcwalk <group> <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import lattice
from .effective import effective_conductances, heat_kernel_exact, poincare_constant
from .experiments import ExperimentConfig, rerun_from_manifest, run_experiment
from .geometry import chemical_distance, find_holes, hole_volume_stats
from .renorm import classify_environment
from .walker import Box, simulate_walks


def _vertex(spec, text):
    """Vertex given as an index (``17``) or coordinates (``3,4``)."""
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        x = int(parts[0])
        if not 0 <= x < spec.n_vertices:
            raise SystemExit(f"vertex {x} out of range")
        return x
    if len(parts) != spec.d:
        raise SystemExit(f"expected {spec.d} coordinates, got {text!r}")
    return int(spec.index(np.array([int(p) for p in parts])))


def _window(spec, text):
    """Window ``cx,cy,...:half`` (closed L-infinity box)."""
    if text is None:
        return None
    c, _, h = text.partition(":")
    center = np.array([int(v) for v in c.split(",")])
    if len(center) != spec.d or not h:
        raise SystemExit("window must look like 'cx,cy:half'")
    return Box(center, int(h))


def _dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def cmd_env_sample(a):
    spec = lattice.LatticeSpec(a.d, a.L, a.boundary)
    env = lattice.sample_environment(spec, lattice.parse_law(a.law), a.seed)
    lattice.save(env, a.out)
    print(f"wrote {a.out}: d={a.d} L={a.L} {a.boundary} law={env.law_tag} seed={a.seed}")


def cmd_env_info(a):
    env = lattice.load(a.env)
    v = env.values[env.spec.edge_exists()]
    _dump({"d": env.spec.d, "L": env.spec.L, "boundary": env.spec.boundary, "law": env.law_tag,
           "seed": env.seed, "edges": int(v.size), "open_fraction": float((v > 0).mean()),
           "mean_conductance": float(v.mean())}, None)


def cmd_geom_holes(a):
    env = lattice.load(a.env)
    holes = find_holes(env, a.xi)
    st = hole_volume_stats(holes)
    out = {"xi": a.xi, "count": st["count"], "max_volume": st["max_volume"],
           "histogram": {str(k): int(v) for k, v in st["histogram"].items()},
           "giant_size": int(holes.in_c.sum()), "giant_xi_size": int(holes.in_cxi.sum())}
    if a.list:
        out["holes"] = [h.tolist() for h in holes.holes]
    _dump(out, a.out)


def cmd_geom_chemdist(a):
    env = lattice.load(a.env)
    x = _vertex(env.spec, a.x)
    y = _vertex(env.spec, a.y)
    d = chemical_distance(env, a.xi, x, y)
    print("unreachable" if d is None else d)


def cmd_renorm_classify(a):
    env = lattice.load(a.env)
    cls = classify_environment(env, a.xi, a.block_size, a.strict, a.exhaustive)
    _dump(cls.to_dict(), a.out)


def cmd_walk_run(a):
    env = lattice.load(a.env)
    x0 = _vertex(env.spec, a.x0)
    ens = simulate_walks(env, np.full(a.replicas, x0), a.horizon, a.seed)
    disp = ens.displacements_at(a.horizon)
    lines = ["replica,jumps," + ",".join(f"dx{k}" for k in range(env.spec.d))]
    for r in range(a.replicas):
        lines.append(f"{r},{int(ens.counts[r])}," + ",".join(str(int(v)) for v in disp[r]))
    text = "\n".join(lines) + "\n"
    if a.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(a.out, "w") as fh:
            fh.write(text)


def cmd_eff_weights(a):
    env = lattice.load(a.env)
    W = effective_conductances(env, a.xi, window=_window(env.spec, a.window))
    trip = W.triplets()
    _dump({"xi": a.xi, "vertices": int(len(W.vertices)),
           "weights": [[x, y, "%.17g" % w, p] for x, y, w, p in trip]}, a.out)


def cmd_eff_gap(a):
    env = lattice.load(a.env)
    xi = None if a.xi is None else a.xi
    rep = poincare_constant(env, xi, a.n, measure=a.measure)
    _dump({"n": rep.n, "poincare": "%.17g" % rep.poincare, "gap": "%.17g" % rep.gap,
           "component_size": rep.size, "root": rep.root, "measure": a.measure}, None)


def cmd_eff_kernel(a):
    env = lattice.load(a.env)
    x = _vertex(env.spec, a.x)
    source = env if a.xi is None else effective_conductances(env, a.xi)
    p = heat_kernel_exact(source, x, a.t)
    nz = np.flatnonzero(p > a.cutoff)
    lines = ["vertex,probability"] + [f"{v},{'%.17g' % p[v]}" for v in nz]
    text = "\n".join(lines) + "\n"
    if a.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(a.out, "w") as fh:
            fh.write(text)


def cmd_exp_run(a):
    cfg = ExperimentConfig.load(a.config)
    table = run_experiment(cfg, a.out)
    sys.stdout.write(table.to_csv())


def cmd_exp_rerun(a):
    table, same = rerun_from_manifest(a.manifest, a.out)
    print("identical" if same else "DIFFERENT")
    return 0 if same else 1


def build_parser():
    p = argparse.ArgumentParser(prog="rcwalk", description="Random walks among random conductances.")
    g = p.add_subparsers(dest="group", required=True)

    env = g.add_parser("env", help="environments").add_subparsers(dest="cmd", required=True)
    s = env.add_parser("sample", help="sample an i.i.d. environment")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--boundary", choices=["torus", "free"], default="torus")
    s.add_argument("--law", required=True, help="e.g. constant:1, bernoulli:0.6, mixture:0.75, polytail:0.1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_env_sample)
    s = env.add_parser("info", help="summary of a stored environment")
    s.add_argument("--env", required=True)
    s.set_defaults(func=cmd_env_info)

    geom = g.add_parser("geom", help="percolation geometry").add_subparsers(dest="cmd", required=True)
    s = geom.add_parser("holes", help="holes of C minus C^xi")
    s.add_argument("--env", required=True)
    s.add_argument("--xi", type=float, required=True)
    s.add_argument("--list", action="store_true", help="include the vertex lists")
    s.add_argument("--out")
    s.set_defaults(func=cmd_geom_holes)
    s = geom.add_parser("chemdist", help="chemical distance on C^xi")
    s.add_argument("--env", required=True)
    s.add_argument("--xi", type=float, required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)
    s.set_defaults(func=cmd_geom_chemdist)

    ren = g.add_parser("renorm", help="block renormalization").add_subparsers(dest="cmd", required=True)
    s = ren.add_parser("classify", help="colour the blocks")
    s.add_argument("--env", required=True)
    s.add_argument("--xi", type=float, required=True)
    s.add_argument("--block-size", type=int, required=True, dest="block_size")
    s.add_argument("--strict", choices=["crossing", "nonsingleton"], default="crossing")
    s.add_argument("--exhaustive", action="store_true", help="check every subbox (small N only)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_renorm_classify)

    walk = g.add_parser("walk", help="walk simulation").add_subparsers(dest="cmd", required=True)
    s = walk.add_parser("run", help="simulate walks and print displacements")
    s.add_argument("--env", required=True)
    s.add_argument("--x0", required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_walk_run)

    eff = g.add_parser("eff", help="effective conductances and kernels").add_subparsers(dest="cmd", required=True)
    s = eff.add_parser("weights", help="effective conductances as triplets")
    s.add_argument("--env", required=True)
    s.add_argument("--xi", type=float, required=True)
    s.add_argument("--window", help="cx,cy:half")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eff_weights)
    s = eff.add_parser("gap", help="Poincare constant on the box component")
    s.add_argument("--env", required=True)
    s.add_argument("--xi", type=float, help="omit for the original walk")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--measure", choices=["full", "restricted"], default="full")
    s.set_defaults(func=cmd_eff_gap)
    s = eff.add_parser("kernel", help="exact transition probabilities")
    s.add_argument("--env", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--xi", type=float, help="use the time-changed walk")
    s.add_argument("--cutoff", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eff_kernel)

    exp = g.add_parser("exp", help="experiments").add_subparsers(dest="cmd", required=True)
    s = exp.add_parser("run", help="run a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_exp_run)
    s = exp.add_parser("rerun", help="rerun a manifest and compare outputs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_exp_rerun)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    rc = args.func(args)
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())

"""Holes of a dilute environment and the effective conductances that bridge them.

Run: python3 demos/holes_and_weights.py
"""
import numpy as np

from rcwalk.effective import effective_conductances, heat_kernel_exact
from rcwalk.geometry import chemical_distance, find_holes, hole_volume_stats
from rcwalk.lattice import LatticeSpec, ZeroUniformMixture, sample_environment


def main():
    spec = LatticeSpec(2, 64, "torus")
    env = sample_environment(spec, ZeroUniformMixture(0.75), seed=1)
    for xi in (0.02, 0.1, 0.3):
        holes = find_holes(env, xi)
        st = hole_volume_stats(holes)
        print(f"xi={xi:<5} |C|={holes.in_c.sum():5d} |C^xi|={holes.in_cxi.sum():5d} "
              f"holes={st['count']:4d} largest={st['max_volume']}")

    xi = 0.1
    holes = find_holes(env, xi)
    W = effective_conductances(env, xi, holes=holes)
    k = int(np.argmax([len(h) for h in holes.holes]))
    print(f"\nlargest hole at xi={xi}: {len(holes.holes[k])} vertices, {len(holes.adjacency[k])} boundary points")
    rows = np.asarray(W.W.sum(axis=1)).ravel()
    on = holes.in_cxi
    print(f"max |rowsum + diag - n| on C^xi: {np.abs(rows[on] + W.diag[on] - env.weights()[on]).max():.2e}")
    print(f"symmetry residual: {W.symmetry_residual():.2e}")

    x = int(np.flatnonzero(on)[0])
    y = int(np.flatnonzero(on)[-1])
    print(f"chemical distance {x} -> {y}: {chemical_distance(env, xi, x, y)}")
    for t in (1.0, 10.0, 100.0):
        p = heat_kernel_exact(W, x, t)
        print(f"t={t:6.1f}  P[X^xi(t)=x]={p[x]:.5f}  mass={p.sum():.12f}")


if __name__ == "__main__":
    main()

"""Diffusivity of the walk, the time fraction c(xi) and the variance identity.

Run: python3 demos/diffusivity.py   (about a minute)
"""
from rcwalk.experiments import ExperimentConfig, estimate_c_xi, estimate_sigma2, verify_variance_identity


def main():
    for law in ("constant:1", "mixture:0.9", "mixture:0.75"):
        cfg = ExperimentConfig("sigma2", L=128, law=law, horizons=[100.0], replicas=4000, seed=1)
        r = estimate_sigma2(cfg).get("sigma2")
        print(f"{law:<14} sigma2 = {r.estimate:.4f} +- {r.se:.4f}")

    cfg = ExperimentConfig("c_xi", L=96, law="mixture:0.75", horizons=[500.0], replicas=500, seed=2)
    for xi in (0.3, 0.1, 0.02):
        t = estimate_c_xi(cfg, xi)
        e1, e2 = t.get("E1"), t.get("E2")
        print(f"xi={xi:<5} c(xi): temporal {e1.estimate:.4f} +- {e1.se:.4f}, spatial {e2.estimate:.4f}")

    cfg = ExperimentConfig("variance_identity", L=128, law="mixture:0.75", horizons=[100.0], replicas=4000, seed=3)
    t = verify_variance_identity(cfg, 0.1)
    g = t.get("identity_gap")
    print(f"c(xi) sigma2(xi) = {t.get('c_sigma2_xi').estimate:.4f}, sigma2 = {t.get('sigma2').estimate:.4f}, "
          f"gap/SE = {g.estimate / g.se:.2f}")


if __name__ == "__main__":
    main()

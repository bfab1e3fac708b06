"""ASCII map of the renormalized block field.

Legend: '#' black, '+' grey, 'o' pure white, '@' immaculate.
Run: python3 demos/block_colours.py
"""
from rcwalk import renorm as rn
from rcwalk.lattice import LatticeSpec, ZeroUniformMixture, sample_environment

GLYPH = {rn.BLACK: "#", rn.GREY: "+", rn.PURE_WHITE: "o"}


def main():
    spec = LatticeSpec(2, 9 * 16, "free")
    env = sample_environment(spec, ZeroUniformMixture(0.85), seed=4)
    for xi in (0.003, 0.05):
        cls = rn.classify_environment(env, xi, N=4)
        print(f"xi={xi}  {cls.fractions()}")
        rows = cls.grid.shape[0]
        for a in range(rows):
            line = ""
            for b in range(cls.grid.shape[1]):
                line += "@" if cls.immaculate[a, b] else GLYPH[int(cls.color[a, b])]
            print("  " + line)
        print()


if __name__ == "__main__":
    main()

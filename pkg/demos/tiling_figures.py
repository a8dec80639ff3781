"""Quantum box tilings of one torus GFF sample at three values of gamma."""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.collections import PolyCollection

from lqgkpz import DomainSpec, sample_gff
from lqgkpz.lqg_measure import discrete_masses
from lqgkpz.quantum_boxes import build_tiling_masses


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=256)
    ap.add_argument("--delta-exp", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="tilings.png")
    args = ap.parse_args()

    spec = DomainSpec("torus", args.grid)
    h = sample_gff(spec, args.seed).values
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, g in zip(axes, (0.5, 1.0, 1.5)):
        m = discrete_masses(h, spec, g)
        t = build_tiling_masses(spec, m / m.sum(), 2.0**-args.delta_exp)
        quads = [[(x, y), (x + s, y), (x + s, y + s), (x, y + s)] for (x, y), s in zip(t.corners(), t.box_size())]
        ax.add_collection(PolyCollection(quads, facecolors="none", edgecolors="k", linewidths=0.2))
        ax.set(xlim=(0, 1), ylim=(0, 1), aspect="equal", title=f"gamma={g}: {t.n_leaves} boxes")
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

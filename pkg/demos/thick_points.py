"""Circle averages about a quantum-typical root grow like gamma log(1/eps)."""
import argparse
import math

from lqgkpz.grid_field import DomainSpec
from lqgkpz.rooted_measure import rooted_ensemble, thick_point_slope


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=512)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--samples", type=int, default=400)
    args = ap.parse_args()

    spec = DomainSpec("dirichlet_square", args.grid, 2.0)
    steps = int(math.log2(0.25 / (2 * spec.a)))
    ens = rooted_ensemble(spec, args.gamma, 7, args.samples, 0.25, steps, margin=0.75)
    print(f"{'eps':>10} {'rooted':>16} {'control':>16}")
    for t, eps in zip(ens.t[1:], ens.radii[1:]):
        s, se = thick_point_slope(ens, t)
        c, ce = thick_point_slope(ens, t, control=True)
        print(f"{eps:10.5f} {s:8.4f}+-{se:.4f} {c:8.4f}+-{ce:.4f}")


if __name__ == "__main__":
    main()

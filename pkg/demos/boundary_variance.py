"""Exact lattice variances: interior circles grow like -log eps, boundary semicircles like -2 log eps."""
import argparse

import numpy as np

from lqgkpz.boundary import boundary_spec, exact_semicircle_covariance
from lqgkpz.lqg_measure import circle_covariance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=256)
    args = ap.parse_args()

    spec = boundary_spec(args.grid)
    radii = 2.0 ** -np.arange(2, 7)
    edge = np.diag(exact_semicircle_covariance(spec, (0.5, 0.0), radii))
    inner = np.array([circle_covariance(spec, [(0.5, 0.6)], r)[0, 0] for r in radii])
    print(f"{'eps':>8} {'Var interior':>13} {'Var boundary':>13}")
    for r, a, b in zip(radii, inner, edge):
        print(f"{r:8.5f} {a:13.4f} {b:13.4f}")
    x = -np.log(radii)
    print(f"slopes: interior {np.polyfit(x, inner, 1)[0]:.3f}, boundary {np.polyfit(x, edge, 1)[0]:.3f}")


if __name__ == "__main__":
    main()

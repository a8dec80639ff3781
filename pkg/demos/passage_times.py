"""First passage of B_t + a t through A: exact sampler, Euler walk and the closed forms."""
import argparse

import numpy as np

from lqgkpz.stopping_time import (
    PassageProblem,
    first_passage_cdf,
    ks_two_sample,
    laplace_expected,
    ldp_optimum,
    sample_first_passage,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=float, default=1.5)
    ap.add_argument("--A", type=float, default=3.0)
    ap.add_argument("--x", type=float, default=0.5)
    ap.add_argument("--n", type=int, default=200_000)
    args = ap.parse_args()

    p = PassageProblem(args.a, args.A, args.x)
    t = sample_first_passage(p, 1, args.n)
    e = sample_first_passage(p, 2, min(args.n, 20_000), method="euler")
    print(f"mean T_A   {t.mean():.5f}  (A/a = {p.A / p.a:.5f})")
    print(f"KS exact vs Euler  {ks_two_sample(t, e):.4f}")
    print(f"E exp(-2xT)  {np.mean(np.exp(-2 * p.x * t)):.5f}  (exp(-beta A) = {laplace_expected(p):.5f})")
    eta, beta = ldp_optimum(p.x, p.a)
    print(f"LDP optimum eta0 = {eta:.7f}, beta = {beta:.7f}")
    edges = np.quantile(t, np.linspace(0, 1, 11))
    counts, _ = np.histogram(t, edges)
    expect = args.n * np.diff(first_passage_cdf(edges, p))
    print("decile counts vs CDF:", " ".join(f"{c}/{x:.0f}" for c, x in zip(counts, expect)))


if __name__ == "__main__":
    main()

"""First passage of ``B_t + a t`` through level ``A``.

The exact sampler draws from the inverse-Gaussian law with mean ``A / a``
and shape ``A^2``; the Euler walk is an independent oracle that shares no
code with it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .rng import stream


@dataclass(frozen=True)
class PassageProblem:
    a: float  # drift
    A: float  # level
    x: float = 0.0  # exponent weight

    def __post_init__(self):
        if not self.a > 0 or not self.A > 0:
            raise ValueError("drift a and level A must be positive")
        if self.x < 0:
            raise ValueError("exponent weight x must be non-negative")

    @classmethod
    def from_threshold(cls, delta: float, gamma: float, x: float = 0.0) -> "PassageProblem":
        """Level ``A = -log(delta) / gamma`` with drift ``a = 2/gamma - gamma/2``."""
        return cls(2 / gamma - gamma / 2, -math.log(delta) / gamma, x)

    @property
    def beta(self) -> float:
        return math.sqrt(self.a**2 + 4 * self.x) - self.a


def _inverse_gaussian(rng: np.random.Generator, mean: float, shape: float, n: int) -> np.ndarray:
    # two-root transformation: pick the smaller root with probability mean / (mean + root)
    nu = rng.standard_normal(n)
    y = nu * nu
    mu = mean
    r = mu + mu * mu * y / (2 * shape) - mu / (2 * shape) * np.sqrt(4 * mu * shape * y + (mu * y) ** 2)
    u = rng.random(n)
    return np.where(u <= mu / (mu + r), r, mu * mu / r)


def _euler(rng: np.random.Generator, a: float, A: float, n: int, dt: float, block: int = 64) -> np.ndarray:
    """First grid time ``k dt`` at which the Gaussian walk with steps ``N(a dt, dt)`` reaches ``A``.

    The walk advances ``block`` steps at a time (the block sum is exact in
    law).  Blocks whose Brownian-bridge crossing probability
    ``exp(-2 (A - x0)(A - x1) / (block dt))`` could exceed ``e^{-40}`` are
    filled in step by step as a discrete Gaussian bridge between the block
    endpoints, so the result has the law of the plain step-by-step walk.
    """
    out = np.empty(n)
    pos = np.zeros(n)
    t = np.zeros(n)
    alive = np.arange(n)
    var = block * dt
    frac = np.arange(1, block + 1) / block
    while alive.size:
        x0 = pos[alive]
        x1 = x0 + a * var + math.sqrt(var) * rng.standard_normal(alive.size)
        near = (A - x0) * (A - x1) < 20 * var
        hit_time = np.full(alive.size, np.nan)
        if near.any():
            k = int(near.sum())
            w = np.cumsum(rng.standard_normal((k, block)) * math.sqrt(dt), axis=1)
            bridge = x0[near, None] + w - frac * w[:, -1:] + frac * (x1[near] - x0[near])[:, None]
            crossed = bridge >= A
            got = crossed.any(axis=1)
            first = np.argmax(crossed, axis=1) + 1
            idx = np.flatnonzero(near)[got]
            hit_time[idx] = first[got] * dt
        done = ~np.isnan(hit_time)
        out[alive[done]] = t[alive[done]] + hit_time[done]
        keep = alive[~done]
        pos[keep] = x1[~done]
        t[keep] += var
        alive = keep
    return out


def sample_first_passage(p: PassageProblem, seed: int, n: int = 1, method: str = "exact", dt: float = 1e-4, index: int = 0) -> np.ndarray:
    """``n`` samples of ``T_A = inf{t : B_t + a t = A}``."""
    if method == "exact":
        return _inverse_gaussian(stream(seed, "stopping_time/exact", index), p.A / p.a, p.A**2, n)
    if method == "euler":
        return _euler(stream(seed, "stopping_time/euler", index), p.a, p.A, n, dt)
    raise ValueError(f"unknown method {method!r}")


def first_passage_density(t, p: PassageProblem):
    """``(2 pi)^{-1/2} A t^{-3/2} exp(-(A t^{-1/2} - a t^{1/2})^2 / 2)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("density is defined for t > 0")
    r = np.sqrt(t)
    out = p.A / math.sqrt(2 * math.pi) * t**-1.5 * np.exp(-0.5 * (p.A / r - p.a * r) ** 2)
    return out if out.ndim else float(out)


def first_passage_cdf(t, p: PassageProblem):
    from scipy.stats import norm

    t = np.asarray(t, dtype=float)
    r = np.sqrt(t)
    return norm.cdf((p.a * t - p.A) / r) + math.exp(2 * p.a * p.A) * norm.cdf(-(p.a * t + p.A) / r)


def tail_bound(T: float, p: PassageProblem) -> float:
    """Upper bound on ``int_T^inf P_A(t) dt`` (uses ``t^{-3/2} <= T^{-3/2}``)."""
    return p.A / math.sqrt(2 * math.pi) * T**-1.5 * math.exp(p.a * p.A) * (2 / p.a**2) * math.exp(-p.a**2 * T / 2)


def density_mass(p: PassageProblem, tol: float = 1e-10) -> tuple[float, float]:
    """Adaptive quadrature of the density; returns ``(integral, tail bound)``."""
    T = p.A / p.a
    while tail_bound(T, p) > tol:
        T *= 2
    pieces = np.linspace(0, T, 65)
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        val, _ = integrate.quad(lambda s: first_passage_density(s, p) if s > 0 else 0.0, lo, hi, epsabs=tol / 64, epsrel=1e-12, limit=200)
        total += val
    return total, tail_bound(T, p)


def laplace_expected(p: PassageProblem) -> float:
    """``E exp(-2 x T_A) = exp(-beta A)``."""
    return math.exp(-p.beta * p.A)


def rate_function(eta, a: float):
    """``I(eta) = (eta / 2) (1/eta - a)^2``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise ValueError("eta must be positive")
    out = 0.5 * eta * (1 / eta - a) ** 2
    return out if out.ndim else float(out)


def ldp_optimum(x: float, a: float) -> tuple[float, float]:
    """Minimizer ``eta0`` of ``I(eta) + 2 x eta`` and the minimum ``beta``."""
    if x < 0 or a <= 0:
        raise ValueError("need x >= 0 and a > 0")
    eta0 = 1 / math.sqrt(a * a + 4 * x)
    return eta0, rate_function(eta0, a) + 2 * x * eta0


def ldp_optimum_numeric(x: float, a: float) -> tuple[float, float]:
    """Bounded scalar minimization, for cross-checking the closed form."""
    res = optimize.minimize_scalar(lambda e: rate_function(e, a) + 2 * x * e, bounds=(1e-9, 10 / a), method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def thick_alpha(gamma: float, delta: float) -> float:
    """``alpha = gamma (1 - Delta)``."""
    if delta < 0:
        raise ValueError("Delta must be non-negative")
    return gamma * (1 - delta)


def ks_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    from scipy.stats import ks_2samp

    return float(ks_2samp(x, y).statistic)


def concentration(p: PassageProblem, seed: int, n: int = 200_000) -> float:
    """Mean of ``A / T_A`` under the tilt ``exp(-2 x T_A)``."""
    t = sample_first_passage(p, seed, n)
    w = np.exp(-2 * p.x * (t - t.min()))
    return float(np.sum(w * p.A / t) / np.sum(w))


__all__ = [
    "PassageProblem",
    "sample_first_passage",
    "first_passage_density",
    "first_passage_cdf",
    "density_mass",
    "tail_bound",
    "laplace_expected",
    "rate_function",
    "ldp_optimum",
    "ldp_optimum_numeric",
    "thick_alpha",
    "ks_two_sample",
    "concentration",
]

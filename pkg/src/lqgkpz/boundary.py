"""Free and mixed boundary fields, semicircle averages and the boundary measure.

The linear boundary piece is the lower edge ``y = 0`` of the square
``[0, L]^2``.  Under ``mixed`` conditions the field is free there and zero on
the other three sides; under ``free`` conditions it is free on all four sides
and normalized to mean zero.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .circle_average import bilinear, check_radius, circle_points, circle_weights, n_circle_points
from .grid_field import DomainSpec, Field, _dirichlet_rect, _oracle, _synthesize, sample_gff, sample_gff_batch
from .kpz import _slope_stderr_from_samples, estimate_exponent, kpz_inverse
from .lqg_measure import check_gamma
from .rng import stream, white_noise

BC_KINDS = {"free": "free_square", "mixed": "mixed_square"}


def boundary_spec(N: int, L: float = 1.0, bc: str = "mixed") -> DomainSpec:
    if bc not in BC_KINDS:
        raise ValueError(f"unsupported boundary condition {bc!r}; expected 'free' or 'mixed'")
    return DomainSpec(BC_KINDS[bc], N, L)


def sample_gff_boundary(spec: DomainSpec, bc: str, seed: int, index: int = 0) -> Field:
    """Free (cosine modes, zero mean) or mixed (reflected doubled-domain) field."""
    return sample_gff(boundary_spec(spec.N, spec.L, bc), seed, index)


def sample_doubled(spec: DomainSpec, seed: int, index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """The doubled-domain Dirichlet field on ``[0, L] x [-L, L]`` and its mixed restriction."""
    ms = boundary_spec(spec.N, spec.L, "mixed")
    coef = white_noise((ms.N - 1, 2 * ms.N - 1), seed, f"grid_field/{ms.kind}", ms.N, index)
    mixed = _synthesize(ms, coef[None])[0]
    doubled = _dirichlet_rect(coef[None])[0]
    return doubled, mixed


def _check_edge_point(spec: DomainSpec, z, eps: float, eps0: float | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if spec.kind not in BC_KINDS.values():
        raise ValueError("semicircle averages need a free or mixed square")
    if abs(z[1]) > 1e-12 * spec.L:
        raise ValueError("z must lie on the lower edge")
    check_radius(spec, eps)
    top = eps if eps0 is None else eps0
    if eps0 is not None and eps > eps0:
        raise ValueError("eps exceeds eps0")
    if not (top <= z[0] <= spec.L - top) or top >= spec.L:
        raise ValueError("the semicircle must meet the boundary only on the lower edge")
    return z


def semicircle_values(values: np.ndarray, spec: DomainSpec, z, eps: float, eps0: float | None = None) -> np.ndarray:
    """Mean over the upper semicircle; batch-aware."""
    z = _check_edge_point(spec, z, eps, eps0)
    pts = circle_points(z, eps, n_circle_points(spec, eps), half=True)
    return bilinear(values, spec, pts).mean(axis=-1)


def semicircle_average(f: Field, z, eps: float, eps0: float | None = None) -> float:
    return float(semicircle_values(f.values, f.spec, z, eps, eps0))


def exact_semicircle_covariance(spec: DomainSpec, z, radii) -> np.ndarray:
    """``Cov(h_eps(z), h_eps'(z))`` for the lattice field, from sparse Green solves."""
    z = np.asarray(z, dtype=float)
    ws = [circle_weights(spec, z, r, half=True) for r in radii]
    gw = [_oracle(spec).apply(w) for w in ws]
    return np.array([[float(np.sum(a * b)) for b in gw] for a in ws])


def zeta(spec: DomainSpec, z, eps: float, y) -> np.ndarray:
    """``-2 log(|y - z| v eps) + pi (|y - z|^2 + eps^2) / (2 |D|)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = np.hypot(y[:, 0] - z[0], y[:, 1] - z[1])
    area = spec.L**2
    return -2 * np.log(np.maximum(d, eps)) + math.pi / (2 * area) * (d * d + eps * eps)


@dataclass(frozen=True, eq=False)
class BoundaryPotential:
    """``zeta^z_eps``, the lattice potential ``xi^z_eps = G w_eps`` and ``G^_z = zeta - xi``."""

    spec: DomainSpec
    z: tuple
    eps: float
    zeta: np.ndarray
    xi: np.ndarray

    @property
    def g_hat(self) -> np.ndarray:
        return self.zeta - self.xi


def boundary_potential(spec: DomainSpec, z, eps: float) -> BoundaryPotential:
    """Potentials on the vertex grid.  For free fields ``xi`` is the hatted potential
    (Neumann, zero mean); for mixed fields it is the tilde one."""
    z = _check_edge_point(spec, z, eps)
    x, y = spec.vertex_coords()
    pts = np.column_stack([x.ravel(), y.ravel()])
    zt = zeta(spec, z, eps, pts).reshape(spec.shape)
    xi = _oracle(spec).apply(circle_weights(spec, z, eps, half=True))
    return BoundaryPotential(spec, (float(z[0]), float(z[1])), eps, zt, xi)


def free_inner_product_table(spec: DomainSpec, z, radii, anchor: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Lattice table of ``(xi_eps, xi_eps')`` against the closed form with ``G^_z(z)`` fitted.

    The constant ``G^_z(z)`` is read off the ``anchor`` radius alone, so the
    table at ``radii`` is a prediction.  Returns ``(lattice, model, G^_z(z))``.
    """
    if spec.kind != "free_square":
        raise ValueError("the inner-product table is for free boundary conditions")
    area = spec.L**2
    a_var = exact_semicircle_covariance(spec, z, [anchor])[0, 0]
    g_hat = -2 * math.log(anchor) + math.pi / area * anchor**2 - a_var
    lat = exact_semicircle_covariance(spec, z, radii)
    model = np.array([[-2 * math.log(max(e, f)) + math.pi / (2 * area) * (e * e + f * f) - g_hat for f in radii] for e in radii])
    return lat, model, g_hat

def semicircle_variance_slope(spec: DomainSpec, z, radii, seed: int, n: int, batch: int = 40) -> tuple[float, float, float]:
    """Slope of ``Var h_eps(z)`` on ``-log eps`` over an ensemble.

    Returns ``(empirical slope, bootstrap-free delta stderr, exact lattice slope)``.
    """
    radii = np.asarray(radii, dtype=float)
    vals = np.empty((n, radii.size))
    for s in range(0, n, batch):
        idx = range(s, min(s + batch, n))
        v = sample_gff_batch(spec, seed, idx)
        for k, r in enumerate(radii):
            vals[idx.start:idx.stop, k] = semicircle_values(v, spec, z, r).ravel()
    x = -np.log(radii)
    w = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
    sq = vals * vals  # the field is centered
    slope = float(w @ sq.mean(axis=0))
    se = float(math.sqrt(max(w @ np.cov(sq, rowvar=False) @ w / n, 0.0)))
    exact = float(w @ np.diag(exact_semicircle_covariance(spec, z, radii)))
    return slope, se, exact


# --------------------------------------------------------------------------
# boundary measure


@dataclass(frozen=True, eq=False)
class BoundaryMeasure:
    spec: DomainSpec
    gamma: float
    eps: float
    masses: np.ndarray  # one per lower-edge cell

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=np.float64)
        if m.shape != (self.spec.N,) or np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("boundary masses must be N finite non-negative values")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))


def edge_centers(spec: DomainSpec) -> np.ndarray:
    return spec.a * (np.arange(spec.N) + 0.5)


def boundary_masses(values: np.ndarray, spec: DomainSpec, gamma: float, eps: float) -> np.ndarray:
    """``a eps^{g^2/4} exp(g h_eps(x, 0) / 2)`` at each lower-edge cell center; batch-aware.

    Semicircles near the corners read zero beyond the side walls.
    """
    check_gamma(gamma)
    check_radius(spec, eps)
    xs = edge_centers(spec)
    m = n_circle_points(spec, eps)
    theta = np.pi * (np.arange(m) + 0.5) / m
    px = (xs[:, None] + eps * np.cos(theta)[None, :]).ravel()
    py = np.broadcast_to(eps * np.sin(theta)[None, :], (xs.size, m)).ravel()
    he = bilinear(values, spec, np.column_stack([px, py])).reshape(values.shape[:-2] + (xs.size, m)).mean(axis=-1)
    return spec.a * np.exp(0.5 * gamma * he + 0.25 * gamma**2 * math.log(eps))


def build_boundary_measure(f: Field, gamma: float, eps: float) -> BoundaryMeasure:
    if f.spec.kind not in BC_KINDS.values():
        raise ValueError("boundary measure needs a free or mixed square")
    return BoundaryMeasure(f.spec, gamma, eps, boundary_masses(f.values, f.spec, gamma, eps))


def boundary_mass_drift(spec: DomainSpec, gamma: float, eps_list, seed: int, n: int, window=(0.25, 0.75), batch: int = 40) -> tuple[np.ndarray, float]:
    """Ensemble means of ``mu^B_eps / a`` per edge cell in ``window * L`` and their largest relative drift.

    The drift is ``max |m_eps / m_{eps_0} - 1|`` with ``eps_0`` the first entry.
    """
    check_gamma(gamma)
    xs = edge_centers(spec)
    sel = (xs > window[0] * spec.L) & (xs < window[1] * spec.L)
    tot = np.zeros(len(eps_list))
    for s in range(0, n, batch):
        v = sample_gff_batch(spec, seed, range(s, min(s + batch, n)))
        for k, e in enumerate(eps_list):
            tot[k] += float(boundary_masses(v, spec, gamma, e)[:, sel].sum()) / spec.a
    means = tot / (n * int(sel.sum()))
    return means, float(np.max(np.abs(means / means[0] - 1)))


def boundary_kpz_inverse(x: float, gamma: float) -> float:
    """Boundary exponent from ``2 x = beta a + beta^2 / 2``; the same quadratic as the interior."""
    return kpz_inverse(x, gamma)


# --------------------------------------------------------------------------
# one-dimensional dyadic tiling of the edge


@dataclass(frozen=True, eq=False)
class IntervalTiling:
    L: float
    delta: float
    pyramid: list
    level: np.ndarray
    i: np.ndarray
    mass: np.ndarray
    forced: np.ndarray
    leaf_map: np.ndarray  # fine cell -> leaf id

    @property
    def depth(self) -> int:
        return len(self.pyramid) - 1

    def leaf_of_point(self, x: float) -> int:
        n = self.leaf_map.size
        u = x / self.L * n
        if u < 0 or u > n:
            raise ValueError("point outside the edge")
        c = int(math.floor(u))
        if c == u and c > 0:
            c -= 1  # shared endpoint goes to the left interval
        return int(self.leaf_map[min(c, n - 1)])


def interval_pyramid(masses: np.ndarray) -> list[np.ndarray]:
    levels = [np.asarray(masses, dtype=np.float64)]
    while levels[-1].size > 1:
        m = levels[-1]
        levels.append(m[0::2] + m[1::2])
    return levels[::-1]


def build_interval_tiling(masses: np.ndarray, delta: float, L: float = 1.0, pyramid=None) -> IntervalTiling:
    if not delta > 0:
        raise ValueError("delta must be positive")
    pyr = interval_pyramid(masses) if pyramid is None else pyramid
    K = len(pyr) - 1
    lv, ii, ms, fs = [], [], [], []
    leaf_level = np.empty(pyr[-1].size, dtype=np.int64)
    parent_split = np.ones(1, dtype=bool)
    for k, p in enumerate(pyr):
        split = p >= delta
        open_ = np.repeat(parent_split, 2) if k else parent_split
        leaf = open_ & (~split if k < K else np.ones_like(split))
        idx = np.flatnonzero(leaf)
        lv.append(np.full(idx.size, k, dtype=np.int64))
        ii.append(idx)
        ms.append(p[idx])
        fs.append(split[idx] if k == K else np.zeros(idx.size, dtype=bool))
        leaf_level[np.repeat(leaf, 2 ** (K - k))] = k
        parent_split = open_ & split
        if not parent_split.any():
            break
    level = np.concatenate(lv)
    i = np.concatenate(ii)
    key = (level << (K + 1)) | i
    order = np.argsort(key)
    level, i, key = level[order], i[order], key[order]
    mass = np.concatenate(ms)[order]
    forced = np.concatenate(fs)[order]
    fine = np.arange(pyr[-1].size)
    leaf_map = np.searchsorted(key, (leaf_level << (K + 1)) | (fine >> (K - leaf_level)))
    return IntervalTiling(L, float(delta), pyr, level, i, mass, forced, leaf_map)


def check_interval_tiling(t: IntervalTiling) -> list[str]:
    bad = []
    K = t.depth
    cover = np.zeros(t.leaf_map.size, dtype=np.int64)
    for lev, i in zip(t.level, t.i):
        s = 2 ** (K - lev)
        cover[i * s : (i + 1) * s] += 1
    if np.any(cover != 1):
        bad.append("intervals do not tile the edge exactly")
    if np.any(t.mass[~t.forced] >= t.delta):
        bad.append("leaf with mass >= delta")
    for lev, i in zip(t.level, t.i):
        if lev > 0 and t.pyramid[lev - 1][i // 2] < t.delta:
            bad.append("leaf whose parent has mass < delta")
            break
    return bad


# --------------------------------------------------------------------------
# experiment


@dataclass
class BoundaryConfig:
    N: int = 1024
    L: float = 1.0
    bc: str = "mixed"
    gamma: float = 1.0
    samples: int = 64
    points_per_field: int = 32
    delta_exps: tuple = tuple(range(3, 8))
    eps_cells: int = 2
    window: tuple = (0.25, 0.75)
    seed: int = 7
    workers: int = 1


@dataclass
class BoundaryReport:
    config: BoundaryConfig
    delta_hat: float
    stderr: float
    fit_stderr: float
    target: float
    mean_mass: np.ndarray
    forced_leaves: int
    forced_hit: int

    def to_csv(self, path, provenance: dict | None = None) -> None:
        prov = provenance or {}
        keys = list(prov)
        lines = [",".join(keys + ["delta_exp", "mean_mass"])]
        for e, m in zip(self.config.delta_exps, self.mean_mass):
            lines.append(",".join([str(prov[k]) for k in keys] + [str(e), repr(float(m))]))
        with open(path, "w", newline="") as fh:
            fh.write("\r\n".join(lines) + "\r\n")

    def summary(self) -> str:
        c = self.config
        return (
            f"bc={c.bc} gamma={c.gamma:g} grid={c.N} samples={c.samples}x{c.points_per_field}  "
            f"Delta~_hat={self.delta_hat:.4f}+-{self.stderr:.4f}  target={self.target:.4f}  "
            f"forced_leaves={self.forced_leaves} forced_hit={self.forced_hit}"
        )


def run_boundary_experiment(cfg: BoundaryConfig, progress: Callable[[int], None] | None = None) -> BoundaryReport:
    """Single boundary points (``x~ = 1``) against 1-D ``(mu^B, delta)`` intervals.

    Points are uniform on ``window * L`` from a stream independent of the
    fields; masses are normalized by the total boundary mass and averaged
    over fields and points before logs.
    """
    check_gamma(cfg.gamma)
    if len(cfg.delta_exps) < 4:
        raise ValueError("need at least four delta scales")
    spec = boundary_spec(cfg.N, cfg.L, cfg.bc)
    eps = cfg.eps_cells * spec.a
    lo, hi = cfg.window
    if not (0 < lo < hi < 1):
        raise ValueError("window must lie strictly inside (0, 1)")

    def job(s):
        h = sample_gff(spec, cfg.seed, s).values
        m = boundary_masses(h, spec, cfg.gamma, eps)
        m = m / m.sum()
        pyr = interval_pyramid(m)
        pts = cfg.L * stream(cfg.seed, "boundary/points", s).uniform(lo, hi, cfg.points_per_field)
        row = np.empty(len(cfg.delta_exps))
        forced = fhit = 0
        for n, e in enumerate(cfg.delta_exps):
            t = build_interval_tiling(m, 2.0**-e, cfg.L, pyr)
            ids = np.array([t.leaf_of_point(x) for x in pts])
            row[n] = t.mass[ids].mean()
            forced = max(forced, int(t.forced.sum()))
            fhit += int(t.forced[ids].sum())
        if progress:
            progress(s)
        return row, forced, fhit

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            res = list(ex.map(job, range(cfg.samples)))
    else:
        res = [job(s) for s in range(cfg.samples)]
    per = np.array([r[0] for r in res])
    deltas = 2.0 ** -np.array(cfg.delta_exps, dtype=float)
    d_hat, se = _slope_stderr_from_samples(deltas, per, "quantum")
    fit = estimate_exponent(zip(deltas, per.mean(axis=0)), "quantum", cfg.samples)
    forced = max(r[1] for r in res)
    fhit = sum(r[2] for r in res)
    if forced:
        warnings.warn(f"{forced} forced boundary leaves ({fhit} hit)", RuntimeWarning, stacklevel=2)
    return BoundaryReport(cfg, d_hat, se, fit.stderr, boundary_kpz_inverse(1.0, cfg.gamma) if cfg.gamma > 0 else 1.0,
                          per.mean(axis=0), forced, fhit)


__all__ = [
    "BoundaryMeasure",
    "BoundaryPotential",
    "BoundaryConfig",
    "BoundaryReport",
    "IntervalTiling",
    "boundary_spec",
    "sample_gff_boundary",
    "sample_doubled",
    "semicircle_average",
    "semicircle_values",
    "exact_semicircle_covariance",
    "semicircle_variance_slope",
    "boundary_mass_drift",
    "zeta",
    "boundary_potential",
    "free_inner_product_table",
    "boundary_masses",
    "edge_centers",
    "build_boundary_measure",
    "boundary_kpz_inverse",
    "build_interval_tiling",
    "check_interval_tiling",
    "interval_pyramid",
    "run_boundary_experiment",
]

"""Dyadic (mu, delta) box tilings and box counting.

A tiling lives on the ``N x N`` cell grid of a domain.  Boxes are addressed
by ``(level, i, j)``: level ``k`` has ``2^k x 2^k`` boxes of side ``L / 2^k``,
and level ``K = log2 N`` boxes are single cells.  A box is subdivided when
its mass is at least ``delta``; leaves are boxes that are not subdivided but
whose parent is.  Finest cells that still carry mass ``>= delta`` become
*forced* leaves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .grid_field import DomainSpec
from .lqg_measure import QuantumMeasure
from .rng import stream


def mass_pyramid(masses: np.ndarray) -> list[np.ndarray]:
    """Block sums ``[root, ..., finest]``; each level is summed from the next."""
    levels = [np.asarray(masses, dtype=np.float64)]
    while levels[-1].shape[0] > 1:
        m = levels[-1]
        levels.append(m[0::2, 0::2] + m[1::2, 0::2] + m[0::2, 1::2] + m[1::2, 1::2])
    return levels[::-1]


def _upsample(a: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return a
    return np.repeat(np.repeat(a, factor, axis=0), factor, axis=1)


@dataclass(frozen=True, eq=False)
class BoxTiling:
    spec: DomainSpec
    delta: float
    pyramid: list
    level: np.ndarray  # leaf arrays, sorted by (level, i, j)
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    forced: np.ndarray
    leaf_map: np.ndarray = field(repr=False)  # fine cell -> leaf id

    @property
    def depth(self) -> int:
        return len(self.pyramid) - 1

    @property
    def n_leaves(self) -> int:
        return int(self.level.size)

    @property
    def n_forced(self) -> int:
        return int(self.forced.sum())

    def box_size(self, ids=None) -> np.ndarray:
        lev = self.level if ids is None else self.level[ids]
        return self.spec.L / 2.0**lev

    def corners(self, ids=None) -> np.ndarray:
        """Lower-left corners of leaves, shape ``(n, 2)``."""
        ids = np.arange(self.n_leaves) if ids is None else np.asarray(ids)
        s = self.box_size(ids)
        ox, oy = self.spec.origin
        return np.stack([ox + self.i[ids] * s, oy + self.j[ids] * s], axis=-1)

    def parent_mass(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        out = np.empty(ids.size)
        for n, leaf in enumerate(ids):
            k = self.level[leaf]
            out[n] = np.inf if k == 0 else self.pyramid[k - 1][self.i[leaf] // 2, self.j[leaf] // 2]
        return out

    def to_csv(self, path) -> None:
        xy = self.corners()
        size = self.box_size()
        with open(path, "w", newline="") as fh:
            fh.write("x0,y0,size,mass,forced\r\n")
            for (x0, y0), s, m, f in zip(xy, size, self.mass, self.forced):
                fh.write(f"{float(x0)!r},{float(y0)!r},{float(s)!r},{float(m)!r},{int(f)}\r\n")


def build_tiling_masses(spec: DomainSpec, masses: np.ndarray, delta: float, pyramid=None) -> BoxTiling:
    if not delta > 0:
        raise ValueError("delta must be positive")
    pyr = mass_pyramid(masses) if pyramid is None else pyramid
    if pyr[-1].shape != (spec.N, spec.N):
        raise ValueError("masses must be an N x N cell array")
    if not np.isfinite(pyr[0][0, 0]):
        raise ValueError("total mass must be finite")
    K = len(pyr) - 1
    levels, iis, jjs, ms, fs = [], [], [], [], []
    leaf_level = np.empty((spec.N, spec.N), dtype=np.int8)
    parent_split = np.ones((1, 1), dtype=bool)
    for k, p in enumerate(pyr):
        split = p >= delta
        open_ = np.repeat(np.repeat(parent_split, 2, 0), 2, 1) if k else parent_split
        leaf = open_ & (~split if k < K else np.ones_like(split))
        ii, jj = np.nonzero(leaf)
        levels.append(np.full(ii.size, k, dtype=np.int64))
        iis.append(ii)
        jjs.append(jj)
        ms.append(p[ii, jj])
        fs.append(split[ii, jj] if k == K else np.zeros(ii.size, dtype=bool))
        leaf_level[_upsample(leaf, 2 ** (K - k))] = k
        parent_split = open_ & split
        if not parent_split.any():
            break
    level = np.concatenate(levels)
    i = np.concatenate(iis).astype(np.int64)
    j = np.concatenate(jjs).astype(np.int64)
    # leaf ids on the fine grid: index of the ancestor box in the sorted leaf list
    key = _key(level, i, j, K)
    order = np.argsort(key, kind="stable")
    level, i, j = level[order], i[order], j[order]
    mass = np.concatenate(ms)[order]
    forced = np.concatenate(fs)[order]
    key = key[order]
    fi, fj = np.indices((spec.N, spec.N))
    sh = (K - leaf_level).astype(np.int64)
    fine_key = _key(leaf_level, fi >> sh, fj >> sh, K)
    leaf_map = np.searchsorted(key, fine_key)
    return BoxTiling(spec, float(delta), pyr, level, i, j, mass, forced, leaf_map)


def _key(level, i, j, K):
    level = np.asarray(level, dtype=np.int64)
    return (level << (2 * K + 2)) | (np.asarray(i, dtype=np.int64) << (K + 1)) | np.asarray(j, dtype=np.int64)


def build_tiling(measure: QuantumMeasure, delta: float) -> BoxTiling:
    """Subdivide every dyadic square whose mass is at least ``delta``."""
    return build_tiling_masses(measure.spec, measure.masses, delta)


def _fine_coords(spec: DomainSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    u = (z - np.asarray(spec.origin)) / spec.a
    if np.any(u < 0) or np.any(u > spec.N):
        raise ValueError(f"point {tuple(z)} outside the root square")
    return u


def _candidate_cells(spec: DomainSpec, z) -> list[tuple[int, int]]:
    """Fine cells whose closure contains ``z``."""
    u = _fine_coords(spec, z)
    per_axis = []
    for c in u:
        f = math.floor(c)
        opts = {f} if c != f else {f - 1, f}
        per_axis.append(sorted(o for o in opts if 0 <= o < spec.N))
    return [(a, b) for a in per_axis[0] for b in per_axis[1]]


def box_of_point(tiling: BoxTiling, z) -> tuple[float, float, float]:
    """``(x0, y0, size)`` of the leaf containing ``z``.

    Points on shared edges go to the box with the lexicographically smallest
    lower-left corner.
    """
    ids = {int(tiling.leaf_map[c]) for c in _candidate_cells(tiling.spec, z)}
    best = min(ids, key=lambda n: tuple(tiling.corners([n])[0]))
    x0, y0 = tiling.corners([best])[0]
    return float(x0), float(y0), float(tiling.box_size([best])[0])


# --------------------------------------------------------------------------
# test sets


@dataclass(frozen=True, eq=False)
class FractalSet:
    mask: np.ndarray
    tag: str
    x: float | None = None
    region: tuple[int, int, int, int] | None = None  # (i0, j0, i1, j1) cell box of D~

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("mask must be a square cell grid")
        if not m.any():
            raise ValueError("empty set")
        if self.region is not None:
            i0, j0, i1, j1 = self.region
            inside = np.zeros_like(m)
            inside[i0:i1, j0:j1] = True
            if np.any(m & ~inside):
                raise ValueError("set leaves its declared sub-square")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    def translated(self, di: int, dj: int) -> "FractalSet":
        """Periodic shift by whole cells (torus use)."""
        return FractalSet(np.roll(self.mask, (di, dj), axis=(0, 1)), self.tag, self.x)


def _cells_for_interval(lo: float, hi: float, n: int) -> slice:
    return slice(max(int(math.floor(lo)), 0), min(int(math.ceil(hi)), n))


def segment_set(spec: DomainSpec, y: float, x0: float, x1: float) -> FractalSet:
    """Closed horizontal segment ``[x0, x1] x {y}`` rasterized to the cells it meets."""
    mask = np.zeros((spec.N, spec.N), dtype=bool)
    ox, oy = spec.origin
    rows = [c[1] for c in _candidate_cells(spec, (x0, y))]
    u0, u1 = (x0 - ox) / spec.a, (x1 - ox) / spec.a
    lo = max(int(math.floor(u0)) - (1 if u0 == math.floor(u0) else 0), 0)
    hi = min(int(math.floor(u1)) + 1, spec.N)
    for r in set(rows):
        mask[lo:hi, r] = True
    return FractalSet(mask, "segment", 0.5)


def point_set(spec: DomainSpec, points: Sequence) -> FractalSet:
    mask = np.zeros((spec.N, spec.N), dtype=bool)
    for p in points:
        for c in _candidate_cells(spec, p):
            mask[c] = True
    return FractalSet(mask, "point_set", 1.0)


def cantor_dust(spec: DomainSpec, levels: int, corner=(0, 0), ratio_exp: int = 2) -> FractalSet:
    """Product of two middle-removed Cantor sets keeping 2 of ``2^ratio_exp`` pieces per axis.

    The side is ``2^(ratio_exp * levels)`` cells; ``ratio_exp = 2`` gives ratio
    1/4 and dimension 1, so ``x = 1/2``.
    """
    keep = np.zeros(2**ratio_exp, dtype=bool)
    keep[[0, -1]] = True
    line = np.ones(1, dtype=bool)
    for _ in range(levels):
        line = np.kron(keep, line).astype(bool)
    side = line.size
    i0, j0 = corner
    if i0 + side > spec.N or j0 + side > spec.N:
        raise ValueError("Cantor dust does not fit in the grid")
    mask = np.zeros((spec.N, spec.N), dtype=bool)
    mask[i0 : i0 + side, j0 : j0 + side] = np.outer(line, line)
    dim = 2 * math.log(2) / math.log(2**ratio_exp)
    return FractalSet(mask, f"cantor_dust({2**-ratio_exp})", 1 - dim / 2, (i0, j0, i0 + side, j0 + side))


def random_translate(X: FractalSet, seed: int, index: int = 0, name: str = "quantum_boxes/translate") -> FractalSet:
    """Uniform periodic translation drawn from a stream disjoint from the field streams."""
    n = X.mask.shape[0]
    di, dj = stream(seed, name, index).integers(0, n, size=2)
    return X.translated(int(di), int(dj))


# --------------------------------------------------------------------------
# counting


def hit_leaves(tiling: BoxTiling, X: FractalSet) -> np.ndarray:
    if X.mask.shape != tiling.leaf_map.shape:
        raise ValueError("set and tiling grids differ")
    return np.unique(tiling.leaf_map[X.mask])


def count_boxes_hit(tiling: BoxTiling, X: FractalSet) -> int:
    """``N(mu, delta, X)``: leaves containing at least one cell of ``X``."""
    return int(hit_leaves(tiling, X).size)


def euclid_box_count(X: FractalSet, block: int) -> int:
    """``N(eps, X)`` for dyadic squares of ``block`` cells a side (``eps = block * a``)."""
    n = X.mask.shape[0]
    if block < 1 or n % block or block & (block - 1):
        raise ValueError("block must be a power of two dividing the grid")
    b = X.mask.reshape(n // block, block, n // block, block).any(axis=(1, 3))
    return int(b.sum())


@dataclass(frozen=True)
class NeighborhoodStats:
    n: int  # leaves hit
    mass: float  # mu(S^delta(X))
    n_parents: int  # distinct parent boxes
    parent_mass_sum: float  # sum over distinct parents
    parent_union_mass: float  # mu(union of parents)
    forced_hit: int


def neighborhood_stats(tiling: BoxTiling, X: FractalSet) -> NeighborhoodStats:
    ids = hit_leaves(tiling, X)
    K = tiling.depth
    lev = tiling.level[ids].astype(np.int64)
    has_parent = lev > 0
    pk = lev[has_parent] - 1
    pi = tiling.i[ids][has_parent] // 2
    pj = tiling.j[ids][has_parent] // 2
    keys, first = np.unique(_key(pk, pi, pj, K), return_index=True)
    pk, pi, pj = pk[first], pi[first], pj[first]
    psum = float(sum(tiling.pyramid[k][a, b] for k, a, b in zip(pk, pi, pj)))
    union = np.zeros((tiling.spec.N, tiling.spec.N), dtype=bool)
    for k in np.unique(pk):
        sel = pk == k
        lv = np.zeros((2**k, 2**k), dtype=bool)
        lv[pi[sel], pj[sel]] = True
        union |= _upsample(lv, 2 ** (K - k))
    if not has_parent.all():
        union[:] = True
    umass = float(np.sum(tiling.pyramid[-1][union]))
    return NeighborhoodStats(
        int(ids.size),
        float(np.sum(tiling.mass[ids])),
        int(keys.size) + int((~has_parent).sum()),
        psum + float(np.sum(tiling.mass[ids][~has_parent])),
        umass,
        int(tiling.forced[ids].sum()),
    )


def neighborhood_mass(tiling: BoxTiling, X: FractalSet) -> float:
    """``mu(S^delta(X))``: total mass of the leaves hit by ``X``."""
    return float(np.sum(tiling.mass[hit_leaves(tiling, X)]))


def euclid_neighborhood_area(X: FractalSet, block: int, a: float) -> float:
    """Lebesgue area of ``S_eps(X)``, equal to ``eps^2 N(eps, X)``."""
    return (block * a) ** 2 * euclid_box_count(X, block)


def ball_neighborhood_area(X: FractalSet, radius_cells: float, a: float) -> float:
    """Area of the cells whose centers lie within ``radius_cells`` of the closed cells of ``X``."""
    r = float(radius_cells)
    R = int(math.ceil(r + 0.5))
    d = np.arange(-R, R + 1)
    gx = np.maximum(np.abs(d)[:, None] - 0.5, 0.0)
    gy = np.maximum(np.abs(d)[None, :] - 0.5, 0.0)
    kernel = (np.hypot(gx, gy) < r).astype(float)
    hit = signal.fftconvolve(X.mask.astype(float), kernel, mode="same") > 0.5
    return float(hit.sum()) * a * a


def quantum_ball_radius(measure: QuantumMeasure, z, delta: float) -> float:
    """``sup{eps : mu(B_eps(z)) <= delta}`` with cells counted by their centers."""
    x, y = measure.spec.cell_centers()
    d = np.hypot(x - z[0], y - z[1]).ravel()
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(measure.masses.ravel()[order])
    k = int(np.searchsorted(cum, delta, side="right"))
    return float(d[order][k]) if k < d.size else math.inf


# --------------------------------------------------------------------------
# rendering


def render_tiling(tiling: BoxTiling, stroke: float = 0.5, color_by_depth: bool = False, size: int = 800, metadata: str | None = None) -> str:
    """SVG 1.1 document with one rectangle per leaf."""
    scale = size / tiling.spec.L
    ox, oy = tiling.spec.origin
    K = max(tiling.depth, 1)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
    ]
    if metadata:
        out.append(f"<metadata>{metadata}</metadata>")
    out.append(f'<g fill="none" stroke="black" stroke-width="{stroke:g}">')
    xy = tiling.corners()
    sizes = tiling.box_size()
    for n in range(tiling.n_leaves):
        x = (xy[n, 0] - ox) * scale
        # y axis points up in the domain, down in SVG
        s = sizes[n] * scale
        y = size - (xy[n, 1] - oy) * scale - s
        extra = ""
        if color_by_depth:
            g = int(255 * (1 - tiling.level[n] / K))
            extra = f' fill="rgb({g},{g},255)"'
        out.append(f'<rect x="{x:.6g}" y="{y:.6g}" width="{s:.6g}" height="{s:.6g}"{extra}/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def size_histogram(tiling: BoxTiling) -> dict[int, int]:
    """Leaf count per level."""
    lv, counts = np.unique(tiling.level, return_counts=True)
    return {int(k): int(c) for k, c in zip(lv, counts)}


def check_tiling(tiling: BoxTiling) -> list[str]:
    """Exhaustive invariant check; returns a list of violations."""
    bad = []
    K = tiling.depth
    cover = np.zeros((tiling.spec.N, tiling.spec.N), dtype=np.int64)
    for k in np.unique(tiling.level):
        sel = tiling.level == k
        lv = np.zeros((2**k, 2**k), dtype=np.int64)
        np.add.at(lv, (tiling.i[sel], tiling.j[sel]), 1)
        cover += _upsample(lv, 2 ** (K - k))
    if np.any(cover != 1):
        bad.append("leaves do not tile the root exactly")
    free = ~tiling.forced
    if np.any(tiling.mass[free] >= tiling.delta):
        bad.append("leaf with mass >= delta")
    pm = tiling.parent_mass(np.arange(tiling.n_leaves))
    if np.any(pm < tiling.delta):
        bad.append("leaf whose parent has mass < delta")
    if np.any(tiling.forced & (tiling.level != K)):
        bad.append("forced leaf above the finest level")
    return bad


def check_sandwich(tiling: BoxTiling, X: FractalSet) -> list[str]:
    """Neighborhood inequalities between the leaves hit by ``X`` and their parents.

    With ``N`` non-forced leaves hit and ``N_hat`` distinct parents:
    ``mu(S) <= delta N``, ``N <= 4 N_hat``, ``delta N_hat <= sum of parent masses``
    (skipped when a forced leaf is hit) and ``mu(S) <= mu(union of parents)``.
    """
    s = neighborhood_stats(tiling, X)
    free = hit_leaves(tiling, X)
    free = free[~tiling.forced[free]]
    bad = []
    if float(tiling.mass[free].sum()) > tiling.delta * free.size:
        bad.append("mu(S) > delta N")
    if s.n > 4 * s.n_parents:
        bad.append("N > 4 N_hat")
    if s.forced_hit == 0 and tiling.delta * s.n_parents > s.parent_mass_sum * (1 + 1e-12):
        bad.append("delta N_hat > sum of parent masses")
    if s.mass > s.parent_union_mass * (1 + 1e-12):
        bad.append("mu(S) > mu(S_hat)")
    return bad


__all__ = [
    "BoxTiling",
    "FractalSet",
    "NeighborhoodStats",
    "build_tiling",
    "build_tiling_masses",
    "box_of_point",
    "count_boxes_hit",
    "euclid_box_count",
    "neighborhood_mass",
    "neighborhood_stats",
    "ball_neighborhood_area",
    "euclid_neighborhood_area",
    "quantum_ball_radius",
    "segment_set",
    "point_set",
    "cantor_dust",
    "random_translate",
    "render_tiling",
    "check_tiling",
    "check_sandwich",
    "mass_pyramid",
    "size_histogram",
]

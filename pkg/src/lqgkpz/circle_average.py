"""Circle averages, conformal radii and the harmonic potentials ``xi``.

A circle average is the mean of the bilinear interpolant of the field at ``M``
equispaced points.  The field is taken to vanish outside a bounded domain.
Averages at every cell center come from one FFT correlation with a circle
stencil; the stencil uses the same points and weights as the pointwise path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .grid_field import DomainSpec, Field

MIN_RADIUS_CELLS = 2.0


class UnderResolvedError(ValueError):
    """A radius below two lattice spacings was requested."""


def n_circle_points(spec: DomainSpec, eps: float) -> int:
    return max(16, 2 * math.ceil(2 * math.pi * eps / spec.a))


def check_radius(spec: DomainSpec, eps: float) -> None:
    if eps < MIN_RADIUS_CELLS * spec.a * (1 - 1e-12):
        raise UnderResolvedError(f"radius {eps:g} is below 2a = {2 * spec.a:g}")


def circle_points(z, eps: float, m: int, half: bool = False) -> np.ndarray:
    """``m`` equispaced points on the circle (or upper semicircle) about ``z``."""
    if half:
        theta = np.pi * (np.arange(m) + 0.5) / m
    else:
        theta = 2 * np.pi * np.arange(m) / m
    return np.column_stack([z[0] + eps * np.cos(theta), z[1] + eps * np.sin(theta)])


def bilinear(values: np.ndarray, spec: DomainSpec, pts) -> np.ndarray:
    """Bilinear interpolation of vertex data at physical points.

    ``values`` may carry leading batch axes.  Points off a bounded grid read 0.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    u = (pts[:, 0] - spec.origin[0]) / spec.a
    v = (pts[:, 1] - spec.origin[1]) / spec.a
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    n1, n2 = values.shape[-2:]
    out = 0.0
    for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)), (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        ii = i0 + di
        jj = j0 + dj
        if spec.periodic:
            ok = np.ones(ii.shape, dtype=bool)
            ii = ii % n1
            jj = jj % n2
        else:
            ok = (ii >= 0) & (ii < n1) & (jj >= 0) & (jj < n2)
            ii = np.clip(ii, 0, n1 - 1)
            jj = np.clip(jj, 0, n2 - 1)
        out = out + values[..., ii, jj] * np.where(ok, w, 0.0)
    return out


def average_weights(spec: DomainSpec, pts) -> np.ndarray:
    """Vertex weights ``w`` with ``sum(w * values) = mean of bilinear(values, pts)``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    u = (pts[:, 0] - spec.origin[0]) / spec.a
    v = (pts[:, 1] - spec.origin[1]) / spec.a
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    n1, n2 = spec.shape
    w = np.zeros(spec.shape)
    for di, dj, c in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)), (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        ii, jj = i0 + di, j0 + dj
        if spec.periodic:
            ok = np.ones(ii.shape, dtype=bool)
            ii, jj = ii % n1, jj % n2
        else:
            ok = (ii >= 0) & (ii < n1) & (jj >= 0) & (jj < n2)
        np.add.at(w, (ii[ok], jj[ok]), c[ok] / len(pts))
    return w


def circle_weights(spec: DomainSpec, z, eps: float, half: bool = False) -> np.ndarray:
    check_radius(spec, eps)
    return average_weights(spec, circle_points(z, eps, n_circle_points(spec, eps), half=half))


def circle_average_values(values: np.ndarray, spec: DomainSpec, z, eps: float, half: bool = False) -> np.ndarray:
    check_radius(spec, eps)
    m = n_circle_points(spec, eps)
    return bilinear(values, spec, circle_points(z, eps, m, half=half)).mean(axis=-1)


def circle_average(f: Field, z, eps: float) -> float:
    """Mean of ``f`` on the circle of radius ``eps`` about ``z``."""
    return float(circle_average_values(f.values, f.spec, z, eps))


# --------------------------------------------------------------------------
# whole-grid circle averages


def circle_stencil(spec: DomainSpec, eps: float, offset=(0.5, 0.5)):
    """Correlation stencil for circles centered ``offset`` (lattice units) from a vertex.

    Returns ``(weights, r)`` with ``weights[r + di, r + dj]`` the weight of
    vertex ``base + (di, dj)``.
    """
    check_radius(spec, eps)
    m = n_circle_points(spec, eps)
    rl = eps / spec.a
    r = int(math.ceil(rl)) + 2
    pts = circle_points((offset[0], offset[1]), rl, m)
    i0 = np.floor(pts[:, 0]).astype(int)
    j0 = np.floor(pts[:, 1]).astype(int)
    fu = pts[:, 0] - i0
    fv = pts[:, 1] - j0
    k = np.zeros((2 * r + 1, 2 * r + 1))
    for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)), (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        np.add.at(k, (i0 + di + r, j0 + dj + r), w / m)
    return k, r


def circle_average_grid(values: np.ndarray, spec: DomainSpec, eps: float, at: str = "cells") -> np.ndarray:
    """Circle averages at every cell center (``N x N``) or every vertex.

    ``values`` may be a batch ``(B, n1, n2)``.
    """
    if at not in ("cells", "vertices"):
        raise ValueError("at must be 'cells' or 'vertices'")
    offset = (0.5, 0.5) if at == "cells" else (0.0, 0.0)
    k, r = circle_stencil(spec, eps, offset)
    n1, n2 = values.shape[-2:]
    if spec.periodic:
        p1, p2 = n1, n2
        if 2 * r + 1 > n1:
            raise UnderResolvedError("circle larger than the torus")
        src = values
    else:
        p1 = sfft.next_fast_len(n1 + 2 * r + 1, real=True)
        p2 = sfft.next_fast_len(n2 + 2 * r + 1, real=True)
        src = values
    kp = np.zeros((p1, p2))
    di = (np.arange(2 * r + 1) - r) % p1
    dj = (np.arange(2 * r + 1) - r) % p2
    kp[np.ix_(di, dj)] = k
    fh = sfft.rfft2(src, s=(p1, p2))
    fk = sfft.rfft2(kp)
    out = sfft.irfft2(fh * np.conj(fk), s=(p1, p2))
    if at == "cells":
        return out[..., : spec.N, : spec.N]
    return out[..., :n1, :n2]


# --------------------------------------------------------------------------
# radial ladder


@dataclass(frozen=True)
class RadialLadder:
    z: tuple
    eps0: float
    t: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,V_t\r\n")
            for t, v in zip(self.t, self.values):
                fh.write(f"{float(t)!r},{float(v)!r}\r\n")


def ladder_radii(spec: DomainSpec, z, eps0: float, steps: int, dt: float) -> np.ndarray:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    radii = eps0 * np.exp(-dt * np.arange(steps + 1))
    if radii[-1] < 2 * spec.a * (1 - 1e-12):
        raise UnderResolvedError(f"ladder radius {radii[-1]:g} underflows 2a = {2 * spec.a:g}")
    if not spec.periodic and spec.distance_to_boundary(np.asarray(z, dtype=float)) < eps0:
        raise ValueError("base circle must lie inside the domain")
    return radii


def ladder_values(values: np.ndarray, spec: DomainSpec, z, eps0: float, steps: int, dt: float) -> np.ndarray:
    """``V_{t_j} = h_{eps0 e^{-t_j}}(z) - h_{eps0}(z)``; batch-aware, last axis is ``j``."""
    radii = ladder_radii(spec, z, eps0, steps, dt)
    avgs = np.stack([circle_average_values(values, spec, z, r) for r in radii], axis=-1)
    return avgs - avgs[..., :1]


def radial_ladder(f: Field, z, eps0: float, steps: int, dt: float = math.log(2)) -> RadialLadder:
    v = ladder_values(f.values, f.spec, z, eps0, steps, dt)
    return RadialLadder(tuple(z), eps0, dt * np.arange(steps + 1), v)


# --------------------------------------------------------------------------
# harmonic extension (Shortley-Weller, so curved boundaries stay second order)


class HarmonicExtension:
    """Discrete harmonic extension of boundary data into a Dirichlet domain.

    Works on the vertex grid of ``spec`` (``dirichlet_square`` or
    ``disc_embedded``), or on a rectangle ``[0, L] x [-L, L]`` when
    ``doubled=True`` (the reflected domain of a mixed-boundary square).
    """

    def __init__(self, spec: DomainSpec, doubled: bool = False):
        if spec.kind not in ("dirichlet_square", "disc_embedded", "mixed_square"):
            raise ValueError(f"harmonic extension needs a Dirichlet-type domain, not {spec.kind}")
        if doubled != (spec.kind == "mixed_square"):
            raise ValueError("doubled extension is used exactly for mixed_square domains")
        self.spec = spec
        n, a = spec.N, spec.a
        if doubled:
            self.shape = (n + 1, 2 * n + 1)
            self.origin = (0.0, -spec.L)
        else:
            self.shape = (n + 1, n + 1)
            self.origin = spec.origin
        x = self.origin[0] + a * np.arange(self.shape[0])
        y = self.origin[1] + a * np.arange(self.shape[1])
        self.x, self.y = np.meshgrid(x, y, indexing="ij")
        if spec.kind == "disc_embedded":
            self.mask = self.x**2 + self.y**2 < (spec.L / 2) ** 2
        else:
            self.mask = np.zeros(self.shape, dtype=bool)
            self.mask[1:-1, 1:-1] = True
        self._build()

    def _theta(self, px, py, ex, ey):
        """Fraction of the edge from interior vertex to the boundary crossing."""
        if self.spec.kind != "disc_embedded":
            return np.ones_like(px)
        a, R = self.spec.a, self.spec.L / 2
        b = px * ex + py * ey
        c = px**2 + py**2 - R**2
        s = -b + np.sqrt(b * b - c)
        return np.clip(s / a, 1e-9, 1.0)

    def _build(self):
        mask = self.mask
        idx = -np.ones(self.shape, dtype=np.int64)
        idx[mask] = np.arange(mask.sum())
        nint = int(mask.sum())
        ii, jj = np.nonzero(mask)
        px, py = self.x[ii, jj], self.y[ii, jj]
        a = self.spec.a
        rows, cols, vals = [], [], []
        brow, bx, by, bw = [], [], [], []
        diag = np.zeros(nint)
        me = idx[ii, jj]
        for axis in (0, 1):
            thetas = []
            for sgn in (1, -1):
                ni = ii + (sgn if axis == 0 else 0)
                nj = jj + (sgn if axis == 1 else 0)
                inside = mask[ni, nj]
                ex, ey = (sgn, 0) if axis == 0 else (0, sgn)
                th = np.where(inside, 1.0, self._theta(px, py, ex, ey))
                thetas.append((th, ni, nj, inside, ex, ey))
            (tp, *_), (tm, *_) = thetas
            for th, ni, nj, inside, ex, ey in thetas:
                w = 2.0 / (th * (tp + tm))
                rows.append(me[inside])
                cols.append(idx[ni[inside], nj[inside]])
                vals.append(w[inside])
                out = ~inside
                brow.append(me[out])
                bx.append(px[out] + th[out] * a * ex)
                by.append(py[out] + th[out] * a * ey)
                bw.append(w[out])
            diag -= 2.0 / (tp * tm)
        r = np.concatenate(rows + [me])
        c = np.concatenate(cols + [me])
        v = np.concatenate(vals + [diag])
        self._lu = spla.splu(sp.csc_matrix((v, (r, c)), shape=(nint, nint)))
        self._brow = np.concatenate(brow)
        self._bpts = np.column_stack([np.concatenate(bx), np.concatenate(by)])
        self._bw = np.concatenate(bw)
        self._nint = nint
        # boundary vertices: values used for interpolation near the boundary
        outside = ~mask
        ox, oy = self.x[outside], self.y[outside]
        if self.spec.kind == "disc_embedded":
            rad = np.hypot(ox, oy)
            R = self.spec.L / 2
            scale = np.where(rad > 0, R / np.maximum(rad, 1e-300), 1.0)
            ox, oy = ox * scale, oy * scale
        self._opts = np.column_stack([ox, oy])

    def extend_many(self, f_batch) -> np.ndarray:
        """Extend several boundary functions at once.

        ``f_batch(pts)`` maps ``(P, 2)`` points to a ``(P, K)`` array.
        Returns ``(K, *shape)``.
        """
        fb = np.atleast_2d(np.asarray(f_batch(self._bpts)).T).T
        k = fb.shape[1]
        rhs = np.zeros((self._nint, k))
        np.add.at(rhs, self._brow, -self._bw[:, None] * fb)
        sol = self._lu.solve(rhs)
        out = np.empty((k,) + self.shape)
        out[:, self.mask] = sol.T
        fo = np.atleast_2d(np.asarray(f_batch(self._opts)).T).T
        out[:, ~self.mask] = fo.T
        return out

    def extend(self, f) -> np.ndarray:
        return self.extend_many(lambda p: np.asarray(f(p))[:, None])[0]

    def interpolate(self, u: np.ndarray, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        fake = DomainSpec("dirichlet_square", self.spec.N, self.spec.L)
        shifted = pts - np.asarray(self.origin)
        return bilinear(u, fake, shifted)


@lru_cache(maxsize=16)
def _extension(kind: str, n: int, L: float) -> HarmonicExtension:
    spec = DomainSpec(kind, n, L)
    return HarmonicExtension(spec, doubled=(kind == "mixed_square"))


def harmonic_extension(spec: DomainSpec, resolution: int | None = None) -> HarmonicExtension:
    n = spec.N if resolution is None else min(spec.N, resolution)
    return _extension(spec.kind, n, spec.L)


def log_potential_extension(spec: DomainSpec, z, resolution: int | None = 128, coeff: float = 1.0) -> tuple:
    """``G~_z``: harmonic extension of ``-coeff * log|y - z|`` from the boundary.

    Returns ``(ext, u)`` where ``u`` lives on ``ext``'s grid.
    """
    ext = harmonic_extension(spec, resolution)
    z = np.asarray(z, dtype=float)
    u = ext.extend(lambda p: -coeff * np.log(np.hypot(p[:, 0] - z[0], p[:, 1] - z[1])))
    return ext, u


# --------------------------------------------------------------------------
# conformal radius


@dataclass(frozen=True)
class ConformalRadiusMap:
    """``log C(z; D)`` on the vertex grid; ``-inf`` off the open domain."""

    spec: DomainSpec
    log_c: np.ndarray

    def at(self, pts) -> np.ndarray:
        c = np.exp(self.log_c)
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log(bilinear(c, self.spec, pts))

    def cells(self) -> np.ndarray:
        """``C`` (not its log) at cell centers, ``N x N``."""
        c = np.exp(self.log_c)
        return 0.25 * (c[:-1, :-1] + c[1:, :-1] + c[:-1, 1:] + c[1:, 1:])

    def cells_log(self) -> np.ndarray:
        x, y = self.spec.cell_centers()
        return self.at(np.column_stack([x.ravel(), y.ravel()])).reshape(x.shape)


def conformal_radius_at(spec: DomainSpec, z, resolution: int | None = 128) -> float:
    """``C(z; D)`` from ``log C = -G~_z(z)``, one harmonic solve."""
    _check_conformal(spec)
    z = np.asarray(z, dtype=float)
    if not spec.distance_to_boundary(z) > 0:
        raise ValueError("point is not inside the domain")
    ext, u = log_potential_extension(spec, z, resolution)
    return float(np.exp(-ext.interpolate(u, z[None, :])[0]))


def _check_conformal(spec: DomainSpec) -> None:
    if spec.kind not in ("dirichlet_square", "disc_embedded"):
        raise ValueError(f"conformal radius is defined for dirichlet_square and disc_embedded, not {spec.kind}")


@lru_cache(maxsize=8)
def _coarse_log_c(kind: str, n: int, L: float) -> np.ndarray:
    spec = DomainSpec(kind, n, L)
    ext = _extension(kind, n, L)
    zi, zj = np.nonzero(ext.mask)
    zx, zy = ext.x[zi, zj], ext.y[zi, zj]
    logc = np.full(ext.shape, -np.inf)
    chunk = 1024
    for s in range(0, len(zi), chunk):
        sl = slice(s, s + chunk)

        def f(p, sl=sl):
            return -np.log(np.hypot(p[:, 0, None] - zx[None, sl], p[:, 1, None] - zy[None, sl]))

        u = ext.extend_many(f)
        logc[zi[sl], zj[sl]] = -u[np.arange(u.shape[0]), zi[sl], zj[sl]]
    del spec
    return logc


def conformal_radius(spec: DomainSpec, resolution: int = 64) -> ConformalRadiusMap:
    """Conformal-radius map by discrete harmonic extension of ``-log|y - z|``.

    Solved at every vertex of a grid with at most ``resolution`` cells per side,
    then carried to finer grids by cubic interpolation of ``C`` (which vanishes
    on the boundary).
    """
    _check_conformal(spec)
    n = min(spec.N, resolution)
    coarse = _coarse_log_c(spec.kind, n, spec.L)
    if n == spec.N:
        log_c = coarse.copy()
    else:
        c = np.exp(coarse)
        t = spec.origin[0] + (spec.L / n) * np.arange(n + 1)
        spline = RectBivariateSpline(t, t, c, kx=3, ky=3)
        x, y = spec.vertex_coords()
        cf = spline.ev(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_c = np.where(spec.interior_mask & (cf > 0), np.log(np.maximum(cf, 1e-300)), -np.inf)
    log_c.flags.writeable = False
    return ConformalRadiusMap(spec, log_c)


# --------------------------------------------------------------------------
# xi potentials


def xi(spec: DomainSpec, z, eps: float, y, resolution: int | None = 128) -> np.ndarray:
    """``xi^z_eps(y) = -log max(|z - y|, eps) - G~_z(y)`` for ``B_eps(z)`` inside D."""
    _check_conformal(spec)
    z = np.asarray(z, dtype=float)
    if spec.distance_to_boundary(z) < eps:
        raise ValueError("B_eps(z) must lie inside the domain")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if not np.all(spec.contains(y)):
        raise ValueError("y outside the closed domain")
    ext, u = log_potential_extension(spec, z, resolution)
    gt = ext.interpolate(u, y)
    d = np.hypot(y[:, 0] - z[0], y[:, 1] - z[1])
    return -np.log(np.maximum(d, eps)) - gt


def xi_grid(spec: DomainSpec, z, eps: float, resolution: int | None = 128) -> np.ndarray:
    """``xi^z_eps`` on the vertex grid of ``spec`` (zero off the open domain)."""
    _check_conformal(spec)
    z = np.asarray(z, dtype=float)
    ext, u = log_potential_extension(spec, z, resolution)
    x, y = spec.vertex_coords()
    pts = np.column_stack([x.ravel(), y.ravel()])
    gt = ext.interpolate(u, pts).reshape(spec.shape)
    d = np.hypot(x - z[0], y - z[1])
    out = -np.log(np.maximum(d, eps)) - gt
    out[~spec.interior_mask] = 0.0
    return out


def variance_table_csv(path, eps, var, stderr) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("eps,var,stderr\r\n")
        for e, v, s in zip(eps, var, stderr):
            fh.write(f"{float(e)!r},{float(v)!r},{float(s)!r}\r\n")

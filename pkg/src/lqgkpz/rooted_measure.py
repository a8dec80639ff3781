"""Rooted pairs ``(z, h)``: a root drawn from ``C(z; D)^{gamma^2/2} dz`` and a
field equal to a fresh GFF plus the deterministic singularity ``gamma xi^z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circle_average import (
    UnderResolvedError,
    circle_average_values,
    circle_points,
    conformal_radius,
    ladder_radii,
    log_potential_extension,
    n_circle_points,
    xi_grid,
)
from .grid_field import DomainSpec, Field, sample_gff, sample_gff_batch
from .lqg_measure import check_gamma
from .rng import stream


@dataclass(frozen=True, eq=False)
class RootedSample:
    root: tuple
    field: Field
    shift: np.ndarray
    weight: float  # normalized root probability of the chosen vertex

    @property
    def residual(self) -> np.ndarray:
        return self.field.values - self.shift


def _check(spec: DomainSpec, gamma: float) -> None:
    check_gamma(gamma)
    if gamma == 0:
        raise ValueError("gamma = 0 makes rooting trivial")
    if spec.kind not in ("dirichlet_square", "disc_embedded"):
        raise ValueError("rooted sampling needs a Dirichlet domain")


def root_weights(spec: DomainSpec, gamma: float, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Interior vertices at distance ``>= margin`` from the boundary and their probabilities."""
    x, y = spec.vertex_coords()
    pts = np.column_stack([x.ravel(), y.ravel()])
    ok = spec.interior_mask.ravel() & (spec.distance_to_boundary(pts) >= margin)
    logc = conformal_radius(spec).log_c.ravel()[ok]
    w = np.exp(0.5 * gamma**2 * (logc - logc.max()))
    return pts[ok], w / w.sum()


def sample_roots(spec: DomainSpec, gamma: float, seed: int, n: int, margin: float = 0.0, index: int = 0) -> np.ndarray:
    pts, p = root_weights(spec, gamma, margin)
    idx = stream(seed, "rooted_measure/root", index).choice(p.size, size=n, p=p)
    return pts[idx]


def sample_rooted(spec: DomainSpec, gamma: float, seed: int, index: int = 0, margin: float = 0.0) -> RootedSample:
    """One draw from the rooted law; the singularity is clamped at radius ``2a``."""
    _check(spec, gamma)
    pts, p = root_weights(spec, gamma, margin)
    k = int(stream(seed, "rooted_measure/root", index).choice(p.size, p=p))
    z = pts[k]
    shift = gamma * xi_grid(spec, z, 2 * spec.a)
    base = sample_gff(spec, seed, index)
    f = Field(base.values + shift, spec, seed, "shifted", index)
    return RootedSample((float(z[0]), float(z[1])), f, shift, float(p[k]))


def shift_circle_averages(spec: DomainSpec, gamma: float, z, radii) -> np.ndarray:
    """Circle averages of ``gamma xi^z_{2a}`` about ``z``, from the shift at the circle points."""
    z = np.asarray(z, dtype=float)
    ext, u = log_potential_extension(spec, z)
    clamp = 2 * spec.a
    out = np.empty(len(radii))
    for n, r in enumerate(radii):
        pts = circle_points(z, r, n_circle_points(spec, r))
        out[n] = -math.log(max(r, clamp)) - float(np.mean(ext.interpolate(u, pts)))
    return gamma * out


@dataclass(frozen=True)
class RootedEnsemble:
    gamma: float
    eps0: float
    t: np.ndarray
    roots: np.ndarray  # (n, 2)
    rooted: np.ndarray  # (n, steps+1) circle averages h_eps(z) with the shift
    control: np.ndarray  # same fresh fields without the shift

    @property
    def radii(self) -> np.ndarray:
        return self.eps0 * np.exp(-self.t)

    def _col(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[j] - t) > 1e-9:
            raise UnderResolvedError(f"t = {t:g} is not on the ladder")
        return j

    def drift(self, t: float) -> tuple[float, float]:
        """Mean and stderr of ``h_{e^{-t} eps0}(z) - h_{eps0}(z)``."""
        d = self.rooted[:, self._col(t)] - self.rooted[:, 0]
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,mean_slope,stderr,control_slope,control_stderr\r\n")
            for t in self.t:
                if t == 0:
                    continue
                s, e = thick_point_slope(self, t)
                c, ce = thick_point_slope(self, t, control=True)
                fh.write(f"{float(t)!r},{s!r},{e!r},{c!r},{ce!r}\r\n")


def rooted_ensemble(spec: DomainSpec, gamma: float, seed: int, n: int, eps0: float, steps: int, dt: float = math.log(2), batch: int = 8, margin: float | None = None) -> RootedEnsemble:
    """``n`` rooted samples, recording circle averages about each root.

    The control column uses the same fresh GFF without the shift.  Roots are
    restricted to vertices at distance ``>= margin`` (default ``eps0``) from
    the boundary.
    """
    _check(spec, gamma)
    margin = eps0 if margin is None else max(margin, eps0)
    roots = sample_roots(spec, gamma, seed, n, margin=margin)
    radii = ladder_radii(spec, roots[0], eps0, steps, dt)
    rooted = np.empty((n, steps + 1))
    control = np.empty((n, steps + 1))
    for s in range(0, n, batch):
        idx = range(s, min(s + batch, n))
        vals = sample_gff_batch(spec, seed, idx)
        for b, i in enumerate(idx):
            z = roots[i]
            plain = np.array([circle_average_values(vals[b], spec, z, r) for r in radii]).ravel()
            control[i] = plain
            rooted[i] = plain + shift_circle_averages(spec, gamma, z, radii)
    return RootedEnsemble(gamma, eps0, dt * np.arange(steps + 1), roots, rooted, control)


def thick_point_slope(ens: RootedEnsemble, t: float, control: bool = False) -> tuple[float, float]:
    """Ensemble mean and stderr of ``h_eps(z) / log(1/eps)`` at ``eps = e^{-t} eps0``."""
    j = ens._col(t)
    eps = ens.radii[j]
    v = (ens.control if control else ens.rooted)[:, j] / math.log(1 / eps)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def reweighted_mean(spec: DomainSpec, gamma: float, z, eps: float, eps_prime: float, seed: int, n: int, batch: int = 16) -> tuple[float, float, float]:
    """Mean of ``h_{eps'}(z)`` under plain GFF samples reweighted by ``e^{gamma h_eps(z)}``.

    Returns ``(reweighted mean, delta-method stderr, rooted prediction)``;
    the prediction is ``gamma (-log max(eps, eps') + log C(z))``.
    """
    hs, hp = [], []
    for s in range(0, n, batch):
        vals = sample_gff_batch(spec, seed, range(s, min(s + batch, n)))
        hs.append(circle_average_values(vals, spec, z, eps).ravel())
        hp.append(circle_average_values(vals, spec, z, eps_prime).ravel())
    he, hq = np.concatenate(hs), np.concatenate(hp)
    w = np.exp(gamma * (he - he.max()))
    w /= w.sum()
    m = float(np.sum(w * hq))
    se = float(math.sqrt(np.sum(w**2 * (hq - m) ** 2)))
    logc = float(conformal_radius(spec).at(np.asarray(z, dtype=float)[None, :])[0])
    return m, se, gamma * (-math.log(max(eps, eps_prime)) + logc)


__all__ = [
    "RootedSample",
    "RootedEnsemble",
    "root_weights",
    "sample_roots",
    "sample_rooted",
    "shift_circle_averages",
    "rooted_ensemble",
    "thick_point_slope",
    "reweighted_mean",
]

"""Quantum area measures built from a sampled field.

Masses live on the ``N x N`` cells of the domain grid, so regions are cell
masks and region masses add exactly.  Cell ``(i, j)`` is the square
``[i a, (i+1) a] x [j a, (j+1) a]`` (shifted by ``spec.origin``).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .circle_average import (
    UnderResolvedError,
    check_radius,
    circle_average_grid,
    circle_average_values,
    circle_weights,
    conformal_radius,
)
from .grid_field import (
    KINDS,
    DomainSpec,
    Field,
    _HEADER,
    MAGIC,
    VERSION,
    _oracle,
    lowpass_variance,
    project_lowpass,
    sample_gff_batch,
)

REGULARIZATIONS = ("circle", "discrete")


def check_gamma(gamma: float) -> None:
    if not 0 <= gamma < 2:
        raise ValueError(f"gamma must lie in [0, 2), got {gamma!r}")


@dataclass(frozen=True, eq=False)
class QuantumMeasure:
    spec: DomainSpec
    gamma: float
    regularization: str
    masses: np.ndarray
    eps: float | None = None

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=np.float64)
        if m.shape != (self.spec.N, self.spec.N):
            raise ValueError("masses must be an N x N cell array")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("masses must be finite and non-negative")
        if m.flags.writeable:
            m = m.copy()
            m.flags.writeable = False
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def mass(self, region) -> float:
        region = np.asarray(region, dtype=bool)
        if region.shape != self.masses.shape:
            raise ValueError("region must be an N x N cell mask")
        return float(np.sum(self.masses[region]))

    def normalized(self) -> "QuantumMeasure":
        return QuantumMeasure(self.spec, self.gamma, self.regularization, self.masses / self.total_mass, self.eps)


@dataclass(frozen=True, eq=False)
class ProjectedMeasure(QuantumMeasure):
    n_modes: int = 0


def _corner_mean(v: np.ndarray) -> np.ndarray:
    return 0.25 * (v[..., :-1, :-1] + v[..., 1:, :-1] + v[..., :-1, 1:] + v[..., 1:, 1:])


def circle_masses(values: np.ndarray, spec: DomainSpec, gamma: float, eps: float) -> np.ndarray:
    """``a^2 eps^{gamma^2/2} exp(gamma h_eps(c))`` at every cell center; batch-aware."""
    check_gamma(gamma)
    check_radius(spec, eps)
    if gamma == 0:
        return np.full(values.shape[:-2] + (spec.N, spec.N), spec.a**2) * _cell_inside(spec)
    he = circle_average_grid(values, spec, eps, at="cells")
    return spec.a**2 * np.exp(gamma * he + 0.5 * gamma**2 * np.log(eps)) * _cell_inside(spec)


def build_measure(f: Field, gamma: float, eps: float) -> QuantumMeasure:
    """Circle-regularized measure ``eps^{gamma^2/2} e^{gamma h_eps(z)} dz``."""
    return QuantumMeasure(f.spec, gamma, "circle", circle_masses(f.values, f.spec, gamma, eps), eps)


def discrete_masses(values: np.ndarray, spec: DomainSpec, gamma: float) -> np.ndarray:
    check_gamma(gamma)
    if spec.periodic:
        return np.exp(gamma * values)
    return np.exp(gamma * _corner_mean(values)) * _cell_inside(spec)


def build_measure_discrete(f: Field, gamma: float) -> QuantumMeasure:
    """Counting-measure variant ``e^{gamma h}``, not normalized.

    On the torus cell ``(i, j)`` carries vertex ``(i, j)``; on bounded grids
    the field is read at the cell center (mean of its four corners).
    """
    return QuantumMeasure(f.spec, gamma, "discrete", discrete_masses(f.values, f.spec, gamma))


# --------------------------------------------------------------------------
# expectation formulas


def _cell_inside(spec: DomainSpec) -> np.ndarray:
    """Cells whose center lies in the open domain (all cells on the torus)."""
    x, y = spec.cell_centers()
    return spec.distance_to_boundary(np.stack([x, y], axis=-1)) > 0


def first_moment_density(spec: DomainSpec, gamma: float) -> np.ndarray:
    """``C(c; D)^{gamma^2/2}`` at cell centers (zero off the domain)."""
    check_gamma(gamma)
    inside = _cell_inside(spec)
    if gamma == 0:
        return inside.astype(float)
    logc = conformal_radius(spec).cells_log()
    return np.where(inside, np.exp(0.5 * gamma**2 * np.where(inside, logc, 0.0)), 0.0)


def expected_mass(spec: DomainSpec, gamma: float, region, h0=None) -> float:
    """Midpoint-rule value of ``int_A C(z; D)^{gamma^2/2} e^{gamma h0(z)} dz``."""
    region = np.asarray(region, dtype=bool)
    if region.shape != (spec.N, spec.N):
        raise ValueError("region must be an N x N cell mask")
    if spec.kind not in ("dirichlet_square", "disc_embedded"):
        raise ValueError("expected_mass needs a Dirichlet-type domain with a conformal radius")
    if np.any(region & ~_cell_inside(spec)):
        raise ValueError("region extends outside the domain")
    dens = first_moment_density(spec, gamma)
    if h0 is not None:
        h0 = np.asarray(h0, dtype=float)
        if h0.shape != spec.shape:
            raise ValueError("h0 must be a vertex grid function")
        dens = dens * np.exp(gamma * _corner_mean(h0))
    return float(spec.a**2 * np.sum(dens[region]))


def conditional_measure(f: Field, n: int, gamma: float) -> ProjectedMeasure:
    """Martingale approximation ``mu^n`` from the ``n`` lowest modes of ``f``."""
    check_gamma(gamma)
    if f.spec.kind != "dirichlet_square":
        raise ValueError("conditional_measure is implemented on dirichlet_square")
    hn = project_lowpass(f, n).values
    var = lowpass_variance(f.spec, n)
    dens = first_moment_density(f.spec, gamma)
    expo = gamma * _corner_mean(hn) - 0.5 * gamma**2 * _corner_mean(var)
    masses = f.spec.a**2 * dens * np.exp(expo)
    return ProjectedMeasure(f.spec, gamma, "circle", masses, None, n_modes=n)


def pullback_identity_residual(spec: DomainSpec, gamma: float, r: float, region) -> tuple[float, float]:
    """Expectation-level coordinate-change identity for ``psi(z) = r z``.

    Compares ``int_A C(z; D~)^{g^2/2} |psi'|^{g Q} dz`` with
    ``int_{psi(A)} C(w; D)^{g^2/2} dw`` where ``D~ = D / r``.  ``region`` is a
    cell mask on the grid of ``D~`` (same ``N``, side ``L / r``); the image
    ``psi(A)`` is then the same cell mask on the grid of ``D``.  Returns
    ``(absolute residual, mass of psi(A))``.
    """
    check_gamma(gamma)
    if not r > 0:
        raise ValueError("dilation factor must be positive")
    region = np.asarray(region, dtype=bool)
    big = DomainSpec(spec.kind, spec.N, spec.L / r)
    if np.any(region & ~_cell_inside(big)):
        raise ValueError("region escapes the pulled-back domain")
    if np.any(region & ~_cell_inside(spec)):
        raise ValueError("image of region escapes the domain")
    lhs_density = first_moment_density(big, gamma)
    gq = 2 + 0.5 * gamma**2 if gamma > 0 else 2.0
    lhs = big.a**2 * np.sum(lhs_density[region]) * r**gq
    rhs = spec.a**2 * np.sum(first_moment_density(spec, gamma)[region])
    return float(abs(lhs - rhs)), float(rhs)


# --------------------------------------------------------------------------
# circle-average moments
#
# h_eps(z) is a fixed linear functional of the Gaussian lattice field, so its
# exponential moments are closed-form in the exact lattice covariance.  The
# sampled ensemble is used to check that covariance, not to replace it.


def circle_covariance(spec: DomainSpec, points, eps: float) -> np.ndarray:
    """Exact lattice covariance matrix of ``h_eps`` at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    o = _oracle(spec)
    w = [circle_weights(spec, z, eps) for z in pts]
    gw = [o.apply(x) for x in w]
    return np.array([[float(np.sum(a * g)) for g in gw] for a in w])


def log_pair_moment(gamma: float, eps: float, var_y: float, var_z: float, cov: float) -> float:
    """``log(eps^{g^2} E[e^{g h_eps(y)} e^{g h_eps(z)}])`` for a centered Gaussian pair."""
    return gamma**2 * math.log(eps) + 0.5 * gamma**2 * (var_y + var_z + 2 * cov)


def first_moment_ratio(spec: DomainSpec, gamma: float, z, eps: float) -> float:
    """``eps^{g^2/2} E e^{g h_eps(z)} / C(z; D)^{g^2/2}`` for the lattice field."""
    check_gamma(gamma)
    z = np.asarray(z, dtype=float)
    var = float(circle_covariance(spec, z, eps)[0, 0])
    logc = float(conformal_radius(spec).at(z[None, :])[0])
    return math.exp(0.5 * gamma**2 * (var + math.log(eps) - logc))


def pair_moment_prediction(spec: DomainSpec, gamma: float, y, z) -> float:
    """``(C(y) C(z))^{g^2/2} e^{g^2 G(y, z)}`` with the lattice Green function at vertices."""
    y, z = np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    logc = conformal_radius(spec).at(np.stack([y, z]))
    g = green_at(spec, y, z)
    return math.exp(0.5 * gamma**2 * float(logc.sum()) + gamma**2 * g)


def green_at(spec: DomainSpec, y, z) -> float:
    """Lattice Green function between the vertices nearest ``y`` and ``z``."""
    idx = [tuple(np.rint((np.asarray(p, dtype=float) - spec.origin) / spec.a).astype(int)) for p in (y, z)]
    w = np.zeros(spec.shape)
    w[idx[0]] = 1.0
    return float(_oracle(spec).apply(w)[idx[1]])


def pair_moment_slope(spec: DomainSpec, gamma: float, eps: float, seps, center=None) -> tuple[float, np.ndarray]:
    """Slope of exact ``log`` pair moments on ``log |y - z|`` for pairs straddling ``center``.

    Returns ``(slope, log pair moments)``.  Separations must exceed ``2 eps``.
    """
    seps = np.asarray(seps, dtype=float)
    if np.any(seps <= 2 * eps):
        raise ValueError("pairs must be separated by more than 2 eps")
    c = np.asarray(center if center is not None else (spec.origin[0] + spec.L / 2, spec.origin[1] + spec.L / 2))
    lp = []
    for r in seps:
        cov = circle_covariance(spec, [c - (r / 2, 0), c + (r / 2, 0)], eps)
        lp.append(log_pair_moment(gamma, eps, cov[0, 0], cov[1, 1], cov[0, 1]))
    lp = np.array(lp)
    return float(np.polyfit(np.log(seps), lp, 1)[0]), lp


def circle_average_samples(spec: DomainSpec, seed: int, n: int, points, radii, batch: int = 64) -> np.ndarray:
    """``h_eps(z)`` over an ensemble: array of shape ``(n, len(points), len(radii))``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((n, len(pts), len(radii)))
    for s in range(0, n, batch):
        idx = range(s, min(s + batch, n))
        vals = sample_gff_batch(spec, seed, idx)
        for p, z in enumerate(pts):
            for k, r in enumerate(radii):
                out[idx.start:idx.stop, p, k] = circle_average_values(vals, spec, z, r).ravel()
    return out


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    direct: float  # plain sample mean of the exponential, for reference
    direct_stderr: float


def first_moment_mc(samples: np.ndarray, gamma: float, eps: float) -> MomentEstimate:
    """``eps^{g^2/2} E e^{g h}`` from samples of a centered Gaussian ``h``.

    ``value`` uses the lognormal identity with the sample second moment;
    ``direct`` averages the exponential itself (heavy-tailed for larger g).
    """
    h = np.asarray(samples, dtype=float).ravel()
    n = h.size
    v2 = float(np.mean(h * h))
    value = math.exp(0.5 * gamma**2 * (v2 + math.log(eps)))
    se = value * 0.5 * gamma**2 * float(np.std(h * h, ddof=1)) / math.sqrt(n)
    e = np.exp(gamma * h) * eps ** (0.5 * gamma**2)
    return MomentEstimate(value, se, float(e.mean()), float(e.std(ddof=1) / math.sqrt(n)))


# --------------------------------------------------------------------------
# serialization

_MEASURE_EXTRA = struct.Struct("<dBd")


def measure_to_bytes(m: QuantumMeasure, seed: int = 0) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, KINDS.index(m.spec.kind), m.spec.N, m.spec.L, seed)
    extra = _MEASURE_EXTRA.pack(m.gamma, REGULARIZATIONS.index(m.regularization), m.eps or 0.0)
    return head + extra + np.ascontiguousarray(m.masses, dtype="<f8").tobytes()


def measure_from_bytes(buf: bytes) -> QuantumMeasure:
    magic, version, kind, n, L, _seed = _HEADER.unpack_from(buf)
    if magic != MAGIC or version != VERSION:
        raise ValueError("not a measure file")
    gamma, reg, eps = _MEASURE_EXTRA.unpack_from(buf, _HEADER.size)
    spec = DomainSpec(KINDS[kind], n, L)
    off = _HEADER.size + _MEASURE_EXTRA.size
    masses = np.frombuffer(buf, dtype="<f8", offset=off).reshape(n, n).copy()
    return QuantumMeasure(spec, gamma, REGULARIZATIONS[reg], masses, eps if reg == 0 else None)


def region_mass_csv(path, names, measures_by_region) -> None:
    """Summary CSV: one row per region with its mass."""
    with open(path, "w", newline="") as fh:
        fh.write("region,mass\r\n")
        for name, mass in zip(names, measures_by_region):
            fh.write(f"{name},{float(mass)!r}\r\n")


__all__ = [
    "QuantumMeasure",
    "ProjectedMeasure",
    "UnderResolvedError",
    "build_measure",
    "build_measure_discrete",
    "circle_masses",
    "discrete_masses",
    "expected_mass",
    "conditional_measure",
    "pullback_identity_residual",
    "first_moment_density",
    "circle_covariance",
    "log_pair_moment",
    "first_moment_ratio",
    "pair_moment_prediction",
    "green_at",
    "pair_moment_slope",
    "circle_average_samples",
    "MomentEstimate",
    "first_moment_mc",
    "measure_to_bytes",
    "measure_from_bytes",
    "region_mass_csv",
]

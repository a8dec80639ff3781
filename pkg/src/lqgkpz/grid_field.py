"""Discrete Gaussian free fields on square grids.

Conventions
-----------
Vertex ``(i, j)`` sits at the physical point ``origin + (i*a, j*a)``; the first
array axis is x.  Bounded domains carry ``(N+1, N+1)`` vertices including the
boundary ring, the torus carries ``N x N``.

The field is normalized so that ``Cov(h(x), h(y)) = G(x, y) = 2*pi * Lap^{-1}``,
where ``Lap`` is the combinatorial 5-point Laplacian (``4 I - adjacency``).  In
physical units this reads ``Delta_a G(x, .) = -2*pi * delta_x / a**2``, so the
field is ``sqrt(2*pi)`` times the unit lattice GFF and ``G(x, y) ~ -log|x-y|``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .rng import white_noise

KINDS = ("torus", "dirichlet_square", "disc_embedded", "free_square", "mixed_square")
FIELD_TAGS = ("centered", "shifted", "lowpass")
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DomainSpec:
    """Grid domain: ``N`` cells per side of a square of side ``L``.

    ``disc_embedded`` is the disc of radius ``L/2`` inscribed in the square and
    centered at the origin (so ``L=2`` gives the unit disc).  ``mixed_square``
    is free on the lower edge ``y=0`` and zero on the other three sides.
    """

    kind: str
    N: int
    L: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported domain kind {self.kind!r}; expected one of {KINDS}")
        n = int(self.N)
        if n != self.N or n < 16 or n & (n - 1):
            raise ValueError(f"grid size N must be a power of two >= 16, got {self.N!r}")
        if not self.L > 0:
            raise ValueError("physical side L must be positive")

    @property
    def a(self) -> float:
        return self.L / self.N

    @property
    def origin(self) -> tuple[float, float]:
        if self.kind == "disc_embedded":
            return (-self.L / 2, -self.L / 2)
        return (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        if self.kind == "torus":
            return (self.N, self.N)
        return (self.N + 1, self.N + 1)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def dirichlet(self) -> bool:
        return self.kind in ("dirichlet_square", "disc_embedded", "mixed_square")

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Vertices carrying a free (non-pinned) field value."""
        m = np.ones(self.shape, dtype=bool)
        if self.kind in ("dirichlet_square", "mixed_square"):
            m[0, :] = m[-1, :] = False
            m[:, -1] = False
            if self.kind == "dirichlet_square":
                m[:, 0] = False
        elif self.kind == "disc_embedded":
            x, y = self.vertex_coords()
            m = x**2 + y**2 < (self.L / 2) ** 2
        m.flags.writeable = False
        return m

    def vertex_coords(self) -> tuple[np.ndarray, np.ndarray]:
        n1, n2 = self.shape
        x = self.origin[0] + self.a * np.arange(n1)
        y = self.origin[1] + self.a * np.arange(n2)
        return np.meshgrid(x, y, indexing="ij")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.a * (np.arange(self.N) + 0.5)
        return np.meshgrid(self.origin[0] + c, self.origin[1] + c, indexing="ij")

    def contains(self, p) -> np.ndarray:
        """Whether physical points lie in the closed domain."""
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.kind == "torus":
            return np.ones(x.shape, dtype=bool)
        if self.kind == "disc_embedded":
            return x**2 + y**2 <= (self.L / 2) ** 2 * (1 + 1e-12)
        tol = 1e-12 * self.L
        return (x >= -tol) & (x <= self.L + tol) & (y >= -tol) & (y <= self.L + tol)

    def distance_to_boundary(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.kind == "torus":
            return np.full(x.shape, np.inf)
        if self.kind == "disc_embedded":
            return self.L / 2 - np.hypot(x, y)
        return np.minimum.reduce([x, self.L - x, y, self.L - y])


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable field sample on the vertices of ``spec``."""

    values: np.ndarray
    spec: DomainSpec
    seed: int = 0
    tag: str = "centered"
    index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.spec.shape:
            raise ValueError(f"field shape {v.shape} does not match domain grid {self.spec.shape}")
        if self.tag not in FIELD_TAGS:
            raise ValueError(f"unknown field tag {self.tag!r}")
        if v.flags.writeable:
            v = v.copy()
            v.flags.writeable = False
        object.__setattr__(self, "values", v)


# --------------------------------------------------------------------------
# spectral bases


def _dirichlet_eigs(n_int1: int, n_int2: int) -> np.ndarray:
    k = np.arange(1, n_int1 + 1)
    l = np.arange(1, n_int2 + 1)
    lam1 = 2 - 2 * np.cos(np.pi * k / (n_int1 + 1))
    lam2 = 2 - 2 * np.cos(np.pi * l / (n_int2 + 1))
    return lam1[:, None] + lam2[None, :]


def _torus_eigs(n: int) -> np.ndarray:
    k = np.arange(n)
    lam = 2 - 2 * np.cos(2 * np.pi * k / n)
    return lam[:, None] + lam[None, :]


def _neumann_eigs(n: int) -> np.ndarray:
    k = np.arange(n)
    lam = 2 - 2 * np.cos(np.pi * k / n)
    return lam[:, None] + lam[None, :]


def _dirichlet_rect(coef: np.ndarray) -> np.ndarray:
    """Interior coefficients (..., n1, n2) -> field with zero boundary ring."""
    lam = _dirichlet_eigs(coef.shape[-2], coef.shape[-1])
    inner = sfft.idstn(coef * np.sqrt(TWO_PI / lam), type=1, axes=(-2, -1), norm="ortho")
    out = np.zeros(coef.shape[:-2] + (coef.shape[-2] + 2, coef.shape[-1] + 2))
    out[..., 1:-1, 1:-1] = inner
    return out


def _coefficient_shape(spec: DomainSpec) -> tuple[int, int]:
    n = spec.N
    if spec.kind == "torus":
        return (n, n)
    if spec.kind in ("dirichlet_square", "disc_embedded"):
        return (n - 1, n - 1)
    if spec.kind == "free_square":
        return (n + 1, n + 1)
    return (n - 1, 2 * n - 1)  # mixed: doubled domain [0, L] x [-L, L]


def _synthesize(spec: DomainSpec, coef: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "torus":
        lam = _torus_eigs(spec.N)
        mult = np.zeros_like(lam)
        mult[lam > 0] = np.sqrt(TWO_PI / lam[lam > 0])
        h = sfft.ifft2(sfft.fft2(coef, norm="ortho") * mult, norm="ortho").real
        return h - h.mean(axis=(-2, -1), keepdims=True)
    if kind == "dirichlet_square":
        return _dirichlet_rect(coef)
    if kind == "disc_embedded":
        return _disc_restrict(spec, _dirichlet_rect(coef))
    if kind == "free_square":
        lam = _neumann_eigs(spec.N + 1)
        mult = np.zeros_like(lam)
        mult[lam > 0] = np.sqrt(TWO_PI / lam[lam > 0])
        h = sfft.idctn(coef * mult, type=2, axes=(-2, -1), norm="ortho")
        return h - h.mean(axis=(-2, -1), keepdims=True)
    doubled = _dirichlet_rect(coef)
    return mixed_from_doubled(doubled, spec.N)


def mixed_from_doubled(doubled: np.ndarray, n: int) -> np.ndarray:
    """Even part of a doubled-domain Dirichlet field, restricted to ``y >= 0``.

    The factor ``sqrt(2)`` (rather than the plain symmetric average) makes the
    covariance ``G(x, y) + G(x, reflect(y))``, the reflected Green function.
    """
    upper = doubled[..., :, n:]
    lower = doubled[..., :, n::-1]
    return (upper + lower) / np.sqrt(2.0)


def sample_gff_batch(spec: DomainSpec, seed: int, indices) -> np.ndarray:
    """Stack of GFF samples, one per ensemble index, shape ``(B, *spec.shape)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    cshape = _coefficient_shape(spec)
    idx = [int(i) for i in np.atleast_1d(indices)]
    coef = np.empty((len(idx),) + cshape)
    for b, i in enumerate(idx):
        coef[b] = white_noise(cshape, seed, f"grid_field/{spec.kind}", spec.N, i)
    return _synthesize(spec, coef)


def sample_gff(spec: DomainSpec, seed: int, index: int = 0) -> Field:
    """Sample a centered discrete GFF; identical ``(spec, seed, index)`` give identical fields."""
    values = sample_gff_batch(spec, seed, [index])[0]
    return Field(values, spec, seed=seed, tag="centered", index=index)


# --------------------------------------------------------------------------
# disc embedding (Markov property: subtract harmonic extension of the outside)


_DISC_CACHE: dict = {}


def _disc_solver(spec: DomainSpec):
    key = (spec.N, spec.L)
    if key not in _DISC_CACHE:
        mask = spec.interior_mask
        lap, couple = _restricted_laplacian(mask)
        _DISC_CACHE[key] = (mask, spla.splu(lap.tocsc()), couple)
    return _DISC_CACHE[key]


def _disc_restrict(spec: DomainSpec, h: np.ndarray) -> np.ndarray:
    mask, lu, couple = _disc_solver(spec)
    flat = h.reshape(h.shape[:-2] + (-1,))
    outside = flat * (~mask.ravel())
    rhs = couple @ outside.reshape(-1, mask.size).T
    ext = lu.solve(np.ascontiguousarray(rhs))
    out = np.zeros_like(flat)
    out[..., mask.ravel()] = flat[..., mask.ravel()] - ext.T.reshape(flat.shape[:-1] + (-1,))
    return out.reshape(h.shape)


def _restricted_laplacian(mask: np.ndarray):
    """``4I - A`` on the masked vertices and the adjacency from the rest."""
    n1, n2 = mask.shape
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(mask.sum())
    rows, cols = [], []
    crow, ccol = [], []
    flat = np.arange(mask.size).reshape(mask.shape)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src = np.zeros(mask.shape, dtype=bool)
        sl_dst = (slice(max(di, 0), n1 + min(di, 0)), slice(max(dj, 0), n2 + min(dj, 0)))
        sl_src = (slice(max(-di, 0), n1 + min(-di, 0)), slice(max(-dj, 0), n2 + min(-dj, 0)))
        src[sl_src] = mask[sl_src]
        nb_in = np.zeros(mask.shape, dtype=bool)
        nb_in[sl_src] = mask[sl_dst]
        both = src & nb_in
        nb_idx = np.full(mask.shape, -1, dtype=np.int64)
        nb_idx[sl_src] = idx[sl_dst]
        rows.append(idx[both])
        cols.append(nb_idx[both])
        out_nb = src & ~nb_in
        nb_flat = np.full(mask.shape, -1, dtype=np.int64)
        nb_flat[sl_src] = flat[sl_dst]
        crow.append(idx[out_nb])
        ccol.append(nb_flat[out_nb])
    n = int(mask.sum())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    lap = sp.coo_matrix((-np.ones(len(r)), (r, c)), shape=(n, n)) + 4 * sp.identity(n)
    cr = np.concatenate(crow)
    cc = np.concatenate(ccol)
    couple = sp.coo_matrix((np.ones(len(cr)), (cr, cc)), shape=(n, mask.size)).tocsr()
    return lap.tocsr(), couple


def _graph_laplacian(n: int, periodic: bool) -> sp.csr_matrix:
    """Graph Laplacian of the n x n grid, periodic (torus) or free (Neumann)."""
    if periodic:
        off = sp.diags([np.ones(n - 1), np.ones(n - 1), [1.0], [1.0]], [1, -1, n - 1, -(n - 1)])
        path = 2 * sp.identity(n) - off
    else:
        off = sp.diags([np.ones(n - 1), np.ones(n - 1)], [1, -1])
        deg = np.full(n, 2.0)
        deg[0] = deg[-1] = 1.0
        path = sp.diags(deg) - off
    eye = sp.identity(n)
    return (sp.kron(path, eye) + sp.kron(eye, path)).tocsr()


# --------------------------------------------------------------------------
# Green oracle: direct sparse solves, independent of the spectral sampler


class GreenOracle:
    """Discrete Green function ``G_d`` by sparse LU of the grid Laplacian.

    Dirichlet kinds solve ``Lap G(., y) = 2*pi e_y`` on interior vertices.
    Torus and free kinds pin one vertex, solve the compatible system
    ``Lap u = 2*pi (e_y - 1/n)``, then remove the mean (zero-mode convention).
    The mixed kind uses the reflected doubled-domain oracle.
    """

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self._cols: dict = {}
        kind = spec.kind
        if kind == "mixed_square":
            self._mask = np.ones((spec.N + 1, 2 * spec.N + 1), dtype=bool)
            self._mask[0, :] = self._mask[-1, :] = False
            self._mask[:, 0] = self._mask[:, -1] = False
        elif kind in ("dirichlet_square", "disc_embedded"):
            self._mask = np.array(spec.interior_mask)
        else:
            self._mask = None
        if self._mask is not None:
            lap, _ = _restricted_laplacian(self._mask)
        else:
            lap = _graph_laplacian(spec.shape[0], periodic=spec.periodic)
            keep = np.arange(lap.shape[0] - 1)
            lap = lap[keep][:, keep]
        self._lu = spla.splu(lap.tocsc())

    def _check(self, v) -> tuple[int, int]:
        i, j = (int(v[0]), int(v[1]))
        n1, n2 = self.spec.shape
        if not (0 <= i < n1 and 0 <= j < n2):
            raise ValueError(f"vertex {v} outside domain grid {self.spec.shape}")
        return i, j

    def column(self, y) -> np.ndarray:
        """``G_d(., y)`` on the full vertex grid."""
        i, j = self._check(y)
        if (i, j) in self._cols:
            return self._cols[(i, j)]
        spec = self.spec
        if spec.kind == "mixed_square":
            n = spec.N
            col = self._dirichlet_column(i, n + j) + self._dirichlet_column(i, n - j)
            col = col[:, n:]
        elif self._mask is not None:
            col = self._dirichlet_column(i, j) if self._mask[i, j] else np.zeros(spec.shape)
        else:
            n = spec.shape[0] ** 2
            rhs = np.full(n, -TWO_PI / n)
            rhs[i * spec.shape[1] + j] += TWO_PI
            u = np.zeros(n)
            u[:-1] = self._lu.solve(rhs[:-1])
            u -= u.mean()
            col = u.reshape(spec.shape)
        col.flags.writeable = False
        self._cols[(i, j)] = col
        return col

    def _dirichlet_column(self, i: int, j: int) -> np.ndarray:
        mask = self._mask
        out = np.zeros(mask.shape)
        if not mask[i, j]:
            return out
        idx = np.cumsum(mask.ravel()) - 1
        rhs = np.zeros(int(mask.sum()))
        rhs[idx[i * mask.shape[1] + j]] = TWO_PI
        out[mask] = self._lu.solve(rhs)
        return out

    def solve(self, x, y) -> float:
        i, j = self._check(x)
        return float(self.column(y)[i, j])

    def apply(self, w: np.ndarray) -> np.ndarray:
        """``G_d w`` for a weight grid ``w`` on the vertices (so ``Cov(w1.h, w2.h) = w1 . G_d w2``)."""
        spec = self.spec
        w = np.asarray(w, dtype=float)
        if w.shape != spec.shape:
            raise ValueError("weights must live on the vertex grid")
        if spec.kind == "mixed_square":
            n = spec.N
            big = np.zeros(self._mask.shape)
            big[:, n:] += w
            big[:, n::-1] += w
            out = np.zeros(self._mask.shape)
            out[self._mask] = self._lu.solve(TWO_PI * big[self._mask])
            return out[:, n:]
        if self._mask is not None:
            out = np.zeros(spec.shape)
            out[self._mask] = self._lu.solve(TWO_PI * w[self._mask])
            return out
        rhs = TWO_PI * (w - w.mean()).ravel()
        u = np.zeros(rhs.size)
        u[:-1] = self._lu.solve(rhs[:-1])
        u -= u.mean()
        return u.reshape(spec.shape)


def green_solve(spec: DomainSpec, x, y) -> float:
    """Discrete Green value ``G_d(x, y)`` for vertex index pairs."""
    return _oracle(spec).solve(x, y)


_ORACLES: dict = {}


def _oracle(spec: DomainSpec) -> GreenOracle:
    if spec not in _ORACLES:
        _ORACLES[spec] = GreenOracle(spec)
    return _ORACLES[spec]


# --------------------------------------------------------------------------
# spectral projection and background shifts


def _eigen_order(spec: DomainSpec) -> np.ndarray:
    """Flat coefficient indices ordered by eigenvalue, ties broken by index."""
    if spec.kind not in ("dirichlet_square", "torus"):
        raise ValueError("low-pass projection is implemented for dirichlet_square and torus")
    cshape = _coefficient_shape(spec)
    lam = (_dirichlet_eigs(*cshape) if spec.kind == "dirichlet_square" else _torus_eigs(spec.N)).ravel()
    order = np.lexsort((np.arange(lam.size), np.round(lam, 12)))
    if spec.kind == "torus":
        order = order[1:]  # the constant mode is not part of the field
    return order


def n_modes(spec: DomainSpec) -> int:
    return len(_eigen_order(spec))


def _analysis(spec: DomainSpec, h: np.ndarray) -> np.ndarray:
    if spec.kind == "dirichlet_square":
        return sfft.dstn(h[..., 1:-1, 1:-1], type=1, axes=(-2, -1), norm="ortho")
    return sfft.fft2(h, norm="ortho")


def _synthesis(spec: DomainSpec, c: np.ndarray) -> np.ndarray:
    if spec.kind == "dirichlet_square":
        out = np.zeros(c.shape[:-2] + spec.shape)
        out[..., 1:-1, 1:-1] = sfft.idstn(c, type=1, axes=(-2, -1), norm="ortho")
        return out
    return sfft.ifft2(c, norm="ortho").real


def _mode_mask(spec: DomainSpec, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("number of modes must be non-negative")
    order = _eigen_order(spec)
    if n > len(order):
        raise ValueError(f"only {len(order)} modes available, asked for {n}")
    keep = np.zeros(int(np.prod(_coefficient_shape(spec))), dtype=bool)
    keep[order[:n]] = True
    if spec.kind == "torus":
        # complex Fourier modes pair with their conjugates; keep the pair together
        N = spec.N
        k = np.arange(N * N)
        conj = ((-(k // N)) % N) * N + ((-(k % N)) % N)
        keep = keep | keep[conj]
    return keep.reshape(_coefficient_shape(spec))


def project_lowpass(f: Field, n: int) -> Field:
    """Orthogonal projection onto the ``n`` lowest Laplacian eigenmodes."""
    keep = _mode_mask(f.spec, n)
    c = _analysis(f.spec, f.values)
    vals = _synthesis(f.spec, np.where(keep, c, 0))
    return Field(vals, f.spec, seed=f.seed, tag="lowpass", index=f.index)


def lowpass_variance(spec: DomainSpec, n: int) -> np.ndarray:
    """Pointwise ``Var h^n(v)`` from the eigenmode sum."""
    keep = _mode_mask(spec, n)
    if spec.kind == "dirichlet_square":
        lam = _dirichlet_eigs(*_coefficient_shape(spec))
        N = spec.N
        s = np.sin(np.pi * np.outer(np.arange(1, N), np.arange(1, N)) / N) * np.sqrt(2.0 / N)
        # Var = 2pi * sum_kl keep/lam * phi_k(i)^2 phi_l(j)^2
        w = np.where(keep, TWO_PI / lam, 0.0)
        inner = (s**2) @ w @ (s**2).T
        out = np.zeros(spec.shape)
        out[1:-1, 1:-1] = inner
        return out
    lam = _torus_eigs(spec.N)
    w = np.where(keep & (lam > 0), TWO_PI / np.where(lam > 0, lam, 1), 0.0)
    return np.full(spec.shape, w.sum() / spec.N**2)


def add_background(f: Field, h0) -> Field:
    """Pointwise ``h + h0`` tagged as shifted."""
    h0 = np.asarray(h0, dtype=float)
    if h0.shape != f.spec.shape:
        raise ValueError(f"background shape {h0.shape} does not match grid {f.spec.shape}")
    return Field(f.values + h0, f.spec, seed=f.seed, tag="shifted", index=f.index)


# --------------------------------------------------------------------------
# serialization

MAGIC = b"LQGF"
VERSION = 1
_HEADER = struct.Struct("<4sHHIdQ")


def field_to_bytes(f: Field) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, KINDS.index(f.spec.kind), f.spec.N, f.spec.L, f.seed)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(buf: bytes) -> Field:
    magic, version, kind, n, L, seed = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError("not a field file (bad magic)")
    if version != VERSION:
        raise ValueError(f"unsupported field file version {version}")
    spec = DomainSpec(KINDS[kind], n, L)
    vals = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(spec.shape)
    return Field(vals.copy(), spec, seed=seed)


def save_field(f: Field, path) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_csv(f: Field, path) -> None:
    x, y = f.spec.vertex_coords()
    with open(path, "w", newline="") as fh:
        fh.write("i,j,x,y,h\r\n")
        for (i, j), v in np.ndenumerate(f.values):
            fh.write(f"{i},{j},{float(x[i, j])!r},{float(y[i, j])!r},{float(v)!r}\r\n")

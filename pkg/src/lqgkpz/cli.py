"""Command-line pipelines.

``lqg-kpz <command> [flags]`` with commands figures, kpz, boundary, passage,
moments, rooted and validate.  Settings come from built-in defaults, then an
optional INI file (``[run]`` for shared keys, ``[<command>]`` for the rest),
then flags; flags win.  Every CSV row and SVG file carries the package
version, a hash of the result-relevant settings and the seed.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .grid_field import KINDS, DomainSpec, sample_gff

COMMANDS = ("figures", "kpz", "boundary", "passage", "moments", "rooted")
OUT_ENV = "LQG_KPZ_OUT"

# tolerances used by --check
KPZ_TOL = {0.5: 0.07, 1.0: 0.07, 1.5: 0.10}
BOUNDARY_TOL = 0.10
MOMENT_TOL = 0.05
PAIR_TOL = 0.15
ROOTED_TOL = 0.10


class ConfigError(ValueError):
    """Invalid configuration value; the message starts with the field path."""


@dataclass
class RunConfig:
    kind: str
    domain: str = "torus"
    grid: int = 1024
    L: float = 1.0
    gammas: tuple = (1.0,)
    seed: int = 7
    samples: int = 50
    delta_exps: tuple = ()
    eps_exps: tuple = ()
    out_dir: str = "out"
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def spec(self) -> DomainSpec:
        return DomainSpec(self.domain, self.grid, self.L)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gammas"] = list(self.gammas)
        d["delta_exps"] = list(self.delta_exps)
        d["eps_exps"] = list(self.eps_exps)
        return d

    def config_hash(self) -> str:
        # output location and worker count do not change results
        d = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "workers")}
        d["extra"] = {k: v for k, v in d["extra"].items() if k not in ("png",)}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"version": __version__, "config_hash": self.config_hash(), "seed": self.seed}


DEFAULTS = {
    "figures": dict(domain="torus", grid=1024, gammas=(0.5, 1.0, 1.5), samples=1, delta_exps=(12,),
                    extra=dict(stroke=0.5, color_by_depth=False, size=800, png=False)),
    "kpz": dict(domain="torus", grid=1024, gammas=(1.0,), samples=50, delta_exps=tuple(range(8, 15)),
                eps_exps=tuple(range(4, 10)), extra=dict(set="segment")),
    "boundary": dict(domain="mixed_square", grid=1024, gammas=(1.0,), samples=64, delta_exps=tuple(range(3, 8)),
                     extra=dict(bc="mixed", points=32, eps_cells=2, window_lo=0.25, window_hi=0.75)),
    "passage": dict(domain="torus", grid=16, gammas=(), samples=1_000_000,
                    extra=dict(a=1.5, A=3.0, x=0.5, euler_n=100_000, dt=1e-4)),
    "moments": dict(domain="dirichlet_square", grid=256, gammas=(0.5, 1.0), samples=4000, eps_exps=(3, 4, 5),
                    extra=dict(panel="0.5:0.5;0.3:0.3;0.7:0.4;0.35:0.68;0.65:0.7",
                               pair_seps="0.125,0.1875,0.25,0.3125,0.375")),
    "rooted": dict(domain="dirichlet_square", grid=1024, L=2.0, gammas=(1.0,), samples=2000,
                   extra=dict(eps0=0.25, steps=6, margin=0.75)),
}

# ---------------------------------------------------------------------------
# parsing helpers


def parse_floats(text: str, path: str) -> tuple:
    try:
        return tuple(float(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise ConfigError(f"{path}: expected comma-separated numbers, got {text!r}") from None


def parse_exps(text: str, path: str) -> tuple:
    """``8:14`` (inclusive) or ``8,9,10``; signs are ignored so ``-12`` means ``2^-12``."""
    s = str(text).replace(" ", "")
    try:
        if ":" in s.lstrip("-"):
            lo, hi = s.split(":")
            lo, hi = abs(int(lo)), abs(int(hi))
            return tuple(range(min(lo, hi), max(lo, hi) + 1))
        return tuple(abs(int(t)) for t in s.split(",") if t)
    except ValueError:
        raise ConfigError(f"{path}: expected integers like '8:14' or '8,9,10', got {text!r}") from None


def parse_bool(text, path: str) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{path}: expected a boolean, got {text!r}")


def _coerce(key: str, value, template, path: str):
    if key == "gammas":
        return parse_floats(value, path)
    if key in ("delta_exps", "eps_exps"):
        return parse_exps(value, path)
    if isinstance(template, bool):
        return parse_bool(value, path)
    try:
        if isinstance(template, int):
            return int(float(value)) if float(value).is_integer() else int(value)
        if isinstance(template, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    return str(value)


def _base_config(kind: str) -> RunConfig:
    d = dict(DEFAULTS[kind])
    extra = dict(d.pop("extra", {}))
    return RunConfig(kind=kind, out_dir=os.environ.get(OUT_ENV, "out"), extra=extra, **d)


_TOP = {f.name for f in dataclasses.fields(RunConfig)} - {"kind", "extra"}
_ALIASES = {"gamma": "gammas", "delta_exp": "delta_exps", "out": "out_dir"}


def _apply(cfg: RunConfig, items: dict, section: str) -> None:
    for raw, value in items.items():
        key = _ALIASES.get(raw.replace("-", "_"), raw.replace("-", "_"))
        path = f"{section}.{raw}"
        if key in _TOP:
            setattr(cfg, key, _coerce(key, value, getattr(cfg, key), path))
        elif key in cfg.extra:
            cfg.extra[key] = _coerce(key, value, cfg.extra[key], path)
        else:
            raise ConfigError(f"{path}: unknown setting")


def load_config(kind: str, ini_path=None, flags: dict | None = None) -> RunConfig:
    """Defaults, then the INI file, then flags (non-``None`` values only)."""
    cfg = _base_config(kind)
    if ini_path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(ini_path):
            raise ConfigError(f"config: cannot read {ini_path}")
        for section in ("run", kind):
            if cp.has_section(section):
                _apply(cfg, dict(cp.items(section)), section)
    if flags:
        _apply(cfg, {k: v for k, v in flags.items() if v is not None}, "flag")
    if kind == "boundary" and cfg.extra["bc"] in ("free", "mixed"):
        cfg.domain = f"{cfg.extra['bc']}_square"
    if cfg.domain not in KINDS:
        raise ConfigError(f"domain: unsupported domain kind {cfg.domain!r}")
    return cfg


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    field: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.field}: {self.message}"


def atom_fraction(N: int, gamma: float, dim: int = 2) -> float:
    """Typical largest cell fraction of the normalized lattice measure."""
    if dim == 2:
        return N ** (-((2 - gamma) ** 2) / 2)
    return N ** (-((1 - gamma / 2) ** 2))


def validate(cfg: RunConfig) -> list[Diagnostic]:
    out = []
    for g in cfg.gammas:
        if not 0 <= g < 2:
            out.append(Diagnostic("error", "gammas", f"gamma = {g:g} is outside the admissible range [0, 2)"))
    if cfg.samples < 1:
        out.append(Diagnostic("error", "samples", "need at least one sample"))
    if cfg.kind == "passage":
        e = cfg.extra
        if not (e["a"] > 0 and e["A"] > 0):
            out.append(Diagnostic("error", "passage.a", "drift and level must be positive"))
        if e["x"] < 0:
            out.append(Diagnostic("error", "passage.x", "exponent weight must be non-negative"))
        return out
    try:
        spec = cfg.spec()
    except ValueError as exc:
        return out + [Diagnostic("error", "grid", str(exc))]
    ok_g = [g for g in cfg.gammas if 0 <= g < 2]
    if cfg.kind in ("figures", "kpz", "boundary") and cfg.delta_exps:
        dim = 1 if cfg.kind == "boundary" else 2
        dmin = 2.0 ** -max(cfg.delta_exps)
        for g in ok_g:
            atom = atom_fraction(spec.N, g, dim)
            if dmin < atom:
                out.append(Diagnostic("warning", "delta_exps",
                                      f"gamma = {g:g}: delta = 2^-{max(cfg.delta_exps)} is below the typical largest "
                                      f"cell mass {atom:.3g}; expect forced leaves"))
    if cfg.kind == "kpz":
        if len(cfg.delta_exps) < 4 or len(cfg.eps_exps) < 4:
            out.append(Diagnostic("error", "delta_exps", "need at least four scales on each ladder"))
        if cfg.eps_exps and 2.0 ** -max(cfg.eps_exps) * spec.L < spec.a:
            out.append(Diagnostic("error", "eps_exps", "Euclidean scale below one lattice cell"))
    if cfg.kind == "moments":
        for e in cfg.eps_exps:
            if 2.0 ** -e * spec.L < 2 * spec.a:
                out.append(Diagnostic("error", "eps_exps", f"eps = 2^-{e} is below 2a = {2 * spec.a:g}"))
        try:
            panel = parse_panel(cfg.extra["panel"])
        except ConfigError as exc:
            return out + [Diagnostic("error", "moments.panel", str(exc))]
        if cfg.eps_exps:
            emax = 2.0 ** -min(cfg.eps_exps) * spec.L
            d = spec.distance_to_boundary(panel)
            for z, dz in zip(panel, d):
                if dz < emax:
                    out.append(Diagnostic("error", "moments.panel", f"point {tuple(z)} is within eps of the boundary"))
    if cfg.kind == "boundary":
        e = cfg.extra
        if e["bc"] not in ("free", "mixed"):
            out.append(Diagnostic("error", "boundary.bc", f"unsupported boundary condition {e['bc']!r}"))
        if e["eps_cells"] < 2:
            out.append(Diagnostic("error", "boundary.eps_cells", "eps below 2a"))
        lo, hi = e["window_lo"], e["window_hi"]
        if not 0 < lo < hi < 1:
            out.append(Diagnostic("error", "boundary.window", "window must lie strictly inside (0, 1)"))
        elif min(lo, 1 - hi) * spec.L < e["eps_cells"] * spec.a:
            out.append(Diagnostic("warning", "boundary.window", "semicircles near the window ends reach the side walls"))
    if cfg.kind == "rooted":
        e = cfg.extra
        if e["eps0"] * math.exp(-math.log(2) * e["steps"]) < 2 * spec.a:
            out.append(Diagnostic("error", "rooted.steps", "smallest ladder radius is below 2a"))
        if e["margin"] < e["eps0"]:
            out.append(Diagnostic("warning", "rooted.margin", "margin below eps0 is raised to eps0"))
        if e["margin"] < 0.25 * spec.L:
            out.append(Diagnostic("warning", "rooted.margin",
                                  "roots near the boundary bias the slope through log C(z; D)"))
    return out


def parse_panel(text: str) -> np.ndarray:
    try:
        pts = [tuple(float(c) for c in p.split(":")) for p in str(text).replace(" ", "").split(";") if p]
        arr = np.array(pts, dtype=float)
    except ValueError:
        raise ConfigError("expected points like '0.5:0.5;0.3:0.3'") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError("expected points like '0.5:0.5;0.3:0.3'")
    return arr


# ---------------------------------------------------------------------------
# artifact writers


def write_csv(path: Path, header: list, rows, prov: dict) -> None:
    """RFC-4180 CSV with provenance columns first."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(prov) + list(header))
        pv = [str(v) for v in prov.values()]
        for r in rows:
            w.writerow(pv + [_fmt(v) for v in r])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(int(v))
    return str(v)


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_text(path: Path, cfg: RunConfig, body: str) -> None:
    prov = cfg.provenance()
    head = f"# version={prov['version']} config_hash={prov['config_hash']} seed={prov['seed']}\n"
    path.write_text(head + body.rstrip("\n") + "\n")


def _write_png(svg_path: Path, tiling, size: int) -> None:
    try:
        from PIL import Image, ImageDraw
    except ImportError:
        raise RuntimeError("PNG output needs Pillow (pip install Pillow)") from None
    img = Image.new("RGB", (size, size), "white")
    draw = ImageDraw.Draw(img)
    scale = size / tiling.spec.L
    ox, oy = tiling.spec.origin
    for (x0, y0), s in zip(tiling.corners(), tiling.box_size()):
        x = (x0 - ox) * scale
        y = size - (y0 - oy) * scale - s * scale
        draw.rectangle([x, y, x + s * scale, y + s * scale], outline="black")
    img.save(svg_path.with_suffix(".png"))


# ---------------------------------------------------------------------------
# pipelines; each returns (list of check failures, list of written paths)


def run_figures(cfg: RunConfig, log=print):
    from .lqg_measure import discrete_masses
    from .quantum_boxes import build_tiling_masses, check_tiling, render_tiling

    spec = cfg.spec()
    out = _out(cfg)
    prov = cfg.provenance()
    meta = " ".join(f"{k}={v}" for k, v in prov.items())
    h = sample_gff(spec, cfg.seed, 0).values
    fails, paths = [], []
    e = cfg.extra
    for g in cfg.gammas:
        m = discrete_masses(h, spec, g)
        m = m / m.sum()
        for k in cfg.delta_exps:
            t = build_tiling_masses(spec, m, 2.0**-k)
            bad = check_tiling(t)
            fails += [f"figures gamma={g:g}: {b}" for b in bad]
            stem = f"tiling_gamma{g:g}_delta{k}"
            svg = out / f"{stem}.svg"
            svg.write_text(render_tiling(t, e["stroke"], e["color_by_depth"], e["size"], meta + f" gamma={g:g} delta=2^-{k}"))
            rows = [(x0, y0, s, mm, int(f)) for (x0, y0), s, mm, f in zip(t.corners(), t.box_size(), t.mass, t.forced)]
            write_csv(out / f"{stem}.csv", ["x0", "y0", "size", "mass", "forced"], rows, prov)
            paths += [svg, out / f"{stem}.csv"]
            if e["png"]:
                _write_png(svg, t, e["size"])
                paths.append(svg.with_suffix(".png"))
            log(f"gamma={g:g} delta=2^-{k}: {t.n_leaves} leaves, {t.n_forced} forced, depth {t.depth}")
    return fails, paths


def run_kpz(cfg: RunConfig, log=print):
    from .kpz import KpzConfig, run_kpz_experiment

    kc = KpzConfig(cfg.spec(), tuple(cfg.gammas), cfg.extra["set"], tuple(cfg.delta_exps), tuple(cfg.eps_exps),
                   cfg.samples, cfg.seed, cfg.workers)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = run_kpz_experiment(kc)
    out = _out(cfg)
    prov = cfg.provenance()
    rep.to_csv(out / "kpz_scales.csv", prov)
    rows, fails = [], []
    for r in rep.rows:
        tol = KPZ_TOL.get(r.gamma, 0.10 if r.gamma > 1 else 0.07)
        ok = r.target is None or abs(r.delta_hat - r.target) <= tol
        rows.append((r.gamma, r.x_hat, r.x_stderr, r.delta_hat, r.delta_stderr, r.predicted,
                     "" if r.target is None else r.target, tol, r.forced_leaves, r.forced_hit, "pass" if ok else "fail"))
        if not ok:
            fails.append(f"kpz gamma={r.gamma:g}: Delta_hat={r.delta_hat:.4f} target={r.target:.4f} tol={tol}")
    write_csv(out / "kpz_report.csv", ["gamma", "x_hat", "x_stderr", "delta_hat", "delta_stderr", "predicted", "target",
                                       "tolerance", "forced_leaves", "forced_hit", "status"], rows, prov)
    text = rep.summary() + "".join(f"\nwarning: {w.message}" for w in caught)
    _write_text(out / "kpz_summary.txt", cfg, text)
    log(text)
    return fails, [out / "kpz_scales.csv", out / "kpz_report.csv", out / "kpz_summary.txt"]


def run_boundary(cfg: RunConfig, log=print):
    from .boundary import BoundaryConfig, run_boundary_experiment

    e = cfg.extra
    bc = BoundaryConfig(cfg.grid, cfg.L, e["bc"], cfg.gammas[0], cfg.samples, e["points"], tuple(cfg.delta_exps),
                        e["eps_cells"], (e["window_lo"], e["window_hi"]), cfg.seed, cfg.workers)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = run_boundary_experiment(bc)
    out = _out(cfg)
    prov = cfg.provenance()
    rep.to_csv(out / "boundary_scales.csv", prov)
    ok = abs(rep.delta_hat - rep.target) <= BOUNDARY_TOL
    write_csv(out / "boundary_report.csv", ["bc", "gamma", "delta_hat", "stderr", "target", "tolerance", "forced_leaves",
                                            "forced_hit", "status"],
              [(e["bc"], bc.gamma, rep.delta_hat, rep.stderr, rep.target, BOUNDARY_TOL, rep.forced_leaves, rep.forced_hit,
                "pass" if ok else "fail")], prov)
    text = rep.summary() + "".join(f"\nwarning: {w.message}" for w in caught)
    _write_text(out / "boundary_summary.txt", cfg, text)
    log(text)
    fails = [] if ok else [f"boundary: Delta~_hat={rep.delta_hat:.4f} target={rep.target:.4f}"]
    return fails, [out / "boundary_scales.csv", out / "boundary_report.csv", out / "boundary_summary.txt"]


def run_passage(cfg: RunConfig, log=print):
    from .stopping_time import (
        PassageProblem,
        density_mass,
        ks_two_sample,
        laplace_expected,
        sample_first_passage,
    )

    e = cfg.extra
    p = PassageProblem(e["a"], e["A"], e["x"])
    t = sample_first_passage(p, cfg.seed, cfg.samples)
    m = min(e["euler_n"], cfg.samples)
    ks = ks_two_sample(t[:m], sample_first_passage(p, cfg.seed, m, "euler", e["dt"]))
    lap = float(np.mean(np.exp(-2 * p.x * t)))
    mass, tail = density_mass(p)
    mean_rel = abs(t.mean() / (p.A / p.a) - 1)
    lap_rel = abs(lap / laplace_expected(p) - 1)
    rows = [
        ("mean_T", float(t.mean()), p.A / p.a, mean_rel, 0.01),
        ("laplace", lap, laplace_expected(p), lap_rel, 0.01),
        ("ks_exact_euler", ks, 0.0, ks, 0.01),
        ("density_mass", mass, 1.0, abs(mass - 1), 1e-8),
    ]
    fails = [f"passage {name}: {err:.3g} > {tol:g}" for name, _, _, err, tol in rows if err > tol]
    out = _out(cfg)
    write_csv(out / "passage.csv", ["quantity", "estimate", "closed_form", "error", "tolerance"], rows, cfg.provenance())
    for r in rows:
        log(f"{r[0]}: estimate={r[1]:.6g} closed_form={r[2]:.6g} error={r[3]:.3g}")
    return fails, [out / "passage.csv"]


def run_moments(cfg: RunConfig, log=print):
    from .circle_average import conformal_radius
    from .lqg_measure import (
        circle_average_samples,
        circle_covariance,
        first_moment_mc,
        first_moment_ratio,
        pair_moment_slope,
    )

    spec = cfg.spec()
    panel = parse_panel(cfg.extra["panel"])
    eps = [2.0**-e * spec.L for e in cfg.eps_exps]
    smp = circle_average_samples(spec, cfg.seed, cfg.samples, panel, eps)
    logc = conformal_radius(spec).at(panel)
    rows, fails = [], []
    for p, z in enumerate(panel):
        for k, ep in enumerate(eps):
            var = float(circle_covariance(spec, z, ep)[0, 0])
            h2 = smp[:, p, k] ** 2
            zscore = (h2.mean() - var) / (h2.std(ddof=1) / math.sqrt(h2.size))
            for g in cfg.gammas:
                ratio = first_moment_ratio(spec, g, z, ep)
                mc = first_moment_mc(smp[:, p, k], g, ep)
                cg = math.exp(0.5 * g * g * logc[p])
                ok = abs(ratio - 1) <= MOMENT_TOL
                rows.append(("first", g, z[0], z[1], ep, "", ratio, mc.value / cg, mc.stderr / cg, mc.direct / cg,
                             mc.direct_stderr / cg, zscore, "pass" if ok else "fail"))
                if not ok:
                    fails.append(f"moments gamma={g:g} z={tuple(z)} eps={ep:g}: ratio {ratio:.4f}")
    seps = parse_floats(cfg.extra["pair_seps"], "moments.pair_seps")
    pe = min(eps)
    for g in cfg.gammas:
        slope, _ = pair_moment_slope(spec, g, pe, seps)
        ok = abs(slope / -(g * g) - 1) <= PAIR_TOL if g > 0 else abs(slope) < 1e-9
        rows.append(("pair_slope", g, "", "", pe, -g * g, slope, "", "", "", "", "", "pass" if ok else "fail"))
        if not ok:
            fails.append(f"pair slope gamma={g:g}: {slope:.4f}")
    out = _out(cfg)
    write_csv(out / "moments.csv", ["kind", "gamma", "zx", "zy", "eps", "expected", "exact_ratio", "mc_ratio", "mc_stderr",
                                    "direct_ratio", "direct_stderr", "variance_z", "status"], rows, cfg.provenance())
    log(f"{len(rows)} moment rows, {len(fails)} outside tolerance")
    return fails, [out / "moments.csv"]


def run_rooted(cfg: RunConfig, log=print):
    from .rooted_measure import rooted_ensemble, thick_point_slope

    e = cfg.extra
    g = cfg.gammas[0]
    ens = rooted_ensemble(cfg.spec(), g, cfg.seed, cfg.samples, e["eps0"], int(e["steps"]), margin=e["margin"])
    rows = []
    for t in ens.t[1:]:
        s, se = thick_point_slope(ens, t)
        c, ce = thick_point_slope(ens, t, control=True)
        rows.append((t, float(e["eps0"] * math.exp(-t)), s, se, c, ce))
    last = rows[-1]
    fails = []
    if abs(last[2] / g - 1) > ROOTED_TOL:
        fails.append(f"rooted slope {last[2]:.4f} not within {ROOTED_TOL:.0%} of gamma={g:g}")
    if abs(last[4]) > 4 * last[5]:
        fails.append(f"control slope {last[4]:.4f} is not within noise of 0")
    out = _out(cfg)
    write_csv(out / "rooted.csv", ["t", "eps", "slope", "stderr", "control_slope", "control_stderr"], rows, cfg.provenance())
    log(f"t={last[0]:.4f}: slope={last[2]:.4f}+-{last[3]:.4f} control={last[4]:.4f}+-{last[5]:.4f}")
    return fails, [out / "rooted.csv"]


PIPELINES = {
    "figures": run_figures,
    "kpz": run_kpz,
    "boundary": run_boundary,
    "passage": run_passage,
    "moments": run_moments,
    "rooted": run_rooted,
}


def run(cfg: RunConfig, check: bool = False, log=print) -> int:
    """Validate, run the pipeline and return the exit status."""
    diags = validate(cfg)
    for d in diags:
        log(str(d))
    if any(d.level == "error" for d in diags):
        return 2
    fails, paths = PIPELINES[cfg.kind](cfg, log)
    for p in paths:
        log(f"wrote {p}")
    for f in fails:
        log(f"CHECK FAILED: {f}")
    return 1 if check and fails else 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [run] and per-command sections")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="cells per side (power of two)")
    p.add_argument("--L", type=float, help="physical side length")
    p.add_argument("--domain", choices=KINDS)
    p.add_argument("--gamma", help="comma-separated gamma values")
    p.add_argument("--samples", type=int, help="ensemble size")
    p.add_argument("--delta-exps", help="quantum ladder exponents, e.g. 8:14")
    p.add_argument("--eps-exps", help="Euclidean ladder exponents, e.g. 4:9")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--check", action="store_true", help="exit nonzero on a tolerance violation")


def _add_extra(p: argparse.ArgumentParser, kind: str) -> None:
    for key, val in DEFAULTS[kind].get("extra", {}).items():
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            p.add_argument(flag, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=key, type=type(val) if not isinstance(val, str) else str)


def _command_aliases(p: argparse.ArgumentParser, kind: str) -> None:
    if kind == "figures":
        p.add_argument("--delta-exp", dest="delta_exps", help="alias of --delta-exps")
    if kind == "passage":
        p.add_argument("--n", dest="samples", type=int, help="alias of --samples")


def build_parser(only: str | None = None) -> argparse.ArgumentParser:
    if only:
        p = argparse.ArgumentParser(prog=f"{only}", allow_abbrev=False, description=f"run the {only} pipeline")
        _common(p)
        _add_extra(p, only)
        _command_aliases(p, only)
        return p
    p = argparse.ArgumentParser(prog="lqg-kpz", allow_abbrev=False, description="LQG measures and KPZ experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for kind in COMMANDS:
        sp_ = sub.add_parser(kind, allow_abbrev=False)
        _common(sp_)
        _add_extra(sp_, kind)
        _command_aliases(sp_, kind)
    v = sub.add_parser("validate", allow_abbrev=False, help="check a configuration without running it")
    v.add_argument("target", choices=COMMANDS)
    _common(v)
    return p


def _flags(ns: argparse.Namespace, kind: str) -> dict:
    skip = {"config", "check", "command", "target"}
    d = {k: v for k, v in vars(ns).items() if k not in skip}
    d["out_dir"] = d.pop("out", None)
    d["gammas"] = d.pop("gamma", None)
    known = set(DEFAULTS[kind].get("extra", {})) | _TOP
    return {k: v for k, v in d.items() if k in known}


def _dispatch(kind: str, ns: argparse.Namespace, validate_only: bool = False) -> int:
    try:
        cfg = load_config(kind, ns.config, _flags(ns, kind))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if validate_only:
        diags = validate(cfg)
        for d in diags:
            print(d)
        if not diags:
            print("ok")
        return 2 if any(d.level == "error" for d in diags) else 0
    try:
        return run(cfg, ns.check)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    if ns.command == "validate":
        return _dispatch(ns.target, ns, validate_only=True)
    return _dispatch(ns.command, ns)


def _single(kind: str, argv=None) -> int:
    return _dispatch(kind, build_parser(kind).parse_args(argv))


def kpz_main(argv=None) -> int:
    return _single("kpz", argv)


def passage_main(argv=None) -> int:
    return _single("passage", argv)


def boundary_main(argv=None) -> int:
    return _single("boundary", argv)


if __name__ == "__main__":
    sys.exit(main())

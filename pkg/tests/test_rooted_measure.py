import math

import numpy as np
import pytest
from scipy.stats import chisquare

from lqgkpz.circle_average import UnderResolvedError, circle_average_values, conformal_radius, xi_grid
from lqgkpz.grid_field import DomainSpec, GreenOracle, sample_gff
from lqgkpz.rooted_measure import (
    reweighted_mean,
    root_weights,
    rooted_ensemble,
    sample_roots,
    sample_rooted,
    shift_circle_averages,
    thick_point_slope,
)

LOG2 = math.log(2)


def test_root_weights_follow_conformal_radius():
    spec = DomainSpec("dirichlet_square", 32)
    pts, p = root_weights(spec, 1.0)
    c = conformal_radius(spec).at(pts)
    q = np.exp(0.5 * c)
    assert np.allclose(p, q / q.sum(), rtol=1e-9)
    pts_m, _ = root_weights(spec, 1.0, margin=0.25)
    assert np.all(np.minimum.reduce([pts_m[:, 0], pts_m[:, 1], 1 - pts_m[:, 0], 1 - pts_m[:, 1]]) >= 0.25 - 1e-12)


def test_root_histogram_chi_square():
    spec = DomainSpec("dirichlet_square", 16)
    pts, p = root_weights(spec, 1.5)
    z = sample_roots(spec, 1.5, 0, 100_000)
    key = {tuple(v): i for i, v in enumerate(pts)}
    counts = np.bincount([key[tuple(v)] for v in z], minlength=p.size)
    assert chisquare(counts, 100_000 * p).pvalue > 1e-4


def test_gamma_zero_and_domain_rejected():
    with pytest.raises(ValueError):
        sample_rooted(DomainSpec("dirichlet_square", 16), 0.0, 1)
    with pytest.raises(ValueError):
        sample_rooted(DomainSpec("torus", 16), 1.0, 1)
    with pytest.raises(ValueError):
        sample_rooted(DomainSpec("dirichlet_square", 16), 2.0, 1)


def test_rooted_sample_is_gff_plus_shift():
    spec = DomainSpec("dirichlet_square", 32)
    s = sample_rooted(spec, 1.0, 4, index=2)
    assert np.allclose(s.residual, sample_gff(spec, 4, 2).values, atol=1e-12)
    assert np.allclose(s.shift, xi_grid(spec, np.array(s.root), 2 * spec.a))
    assert 0 < s.weight < 1 and s.field.tag == "shifted"


def test_residual_covariance_mc():
    spec = DomainSpec("dirichlet_square", 16)
    v = (8, 5)
    res = np.array([sample_rooted(spec, 1.0, 6, index=i).residual[v] for i in range(3000)])
    var = GreenOracle(spec).solve(v, v)
    assert abs(np.var(res) - var) < 4 * var * math.sqrt(2 / res.size)
    assert abs(res.mean()) < 4 * math.sqrt(var / res.size)


def test_shift_profile_on_disc():
    spec = DomainSpec("disc_embedded", 128, 2.0)
    x = xi_grid(spec, np.zeros(2), 2 * spec.a)
    X, Y = spec.vertex_coords()
    r = np.hypot(X, Y)
    m = (r > 2 * spec.a) & (r < 0.95)
    assert np.max(np.abs(x[m] + np.log(r[m]))) < 1e-6
    assert np.all(x[~spec.interior_mask] == 0)
    # circle averages of the shift about the root: gamma (-log r + log C)
    radii = [0.5, 0.25, 0.125]
    got = shift_circle_averages(spec, 1.0, (0.0, 0.0), radii)
    assert np.allclose(got, -np.log(radii), atol=1e-6)


def test_reweighting_reproduces_rooted_mean():
    spec = DomainSpec("dirichlet_square", 64)
    m, se, pred = reweighted_mean(spec, 1.0, (0.5, 0.5), 1 / 8, 1 / 16, 1, 4000)
    assert abs(m - pred) < 4 * se + 0.03 * pred


@pytest.fixture(scope="module")
def small_ensemble():
    spec = DomainSpec("dirichlet_square", 256, 2.0)
    return rooted_ensemble(spec, 1.0, 11, 400, 0.25, 4, margin=0.75)


def test_ensemble_drift_and_control(small_ensemble):
    e = small_ensemble
    t = 3 * LOG2
    d, se = e.drift(t)
    assert abs(d - t) < 4 * se
    c = e.control[:, 3] - e.control[:, 0]
    assert abs(c.mean()) < 4 * c.std() / math.sqrt(c.size)
    s, sse = thick_point_slope(e, 4 * LOG2)
    cs, cse = thick_point_slope(e, 4 * LOG2, control=True)
    assert abs(cs) < 4 * cse
    assert s > 0.7
    with pytest.raises(UnderResolvedError):
        e.drift(0.3)


def test_ensemble_matches_direct_circle_averages(small_ensemble):
    e = small_ensemble
    spec = DomainSpec("dirichlet_square", 256, 2.0)
    z = e.roots[0]
    h = sample_gff(spec, 11, 0).values
    want = [float(np.ravel(circle_average_values(h, spec, z, r))[0]) for r in e.radii]
    assert np.allclose(e.control[0], want, atol=1e-12)


def test_ensemble_csv(tmp_path, small_ensemble):
    small_ensemble.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"t,mean_slope,stderr,control_slope,control_stderr"
    assert len(lines) == 4 + 2


def test_small_gamma_slope():
    spec = DomainSpec("dirichlet_square", 256, 2.0)
    e = rooted_ensemble(spec, 0.25, 12, 2000, 0.25, 4, margin=0.75)
    s, se = thick_point_slope(e, 4 * LOG2)
    assert abs(s / 0.25 - 1) < 0.15
    assert se < 0.02

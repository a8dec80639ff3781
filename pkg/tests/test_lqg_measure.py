import math

import numpy as np
import pytest

from lqgkpz.grid_field import DomainSpec, Field, project_lowpass, sample_gff, sample_gff_batch
from lqgkpz.lqg_measure import (
    QuantumMeasure,
    build_measure,
    build_measure_discrete,
    circle_covariance,
    circle_masses,
    conditional_measure,
    expected_mass,
    first_moment_density,
    first_moment_mc,
    first_moment_ratio,
    log_pair_moment,
    measure_from_bytes,
    measure_to_bytes,
    pair_moment_prediction,
    pair_moment_slope,
    pullback_identity_residual,
    region_mass_csv,
)

# closed-form radial integral of (1 - r^2)^{1/2} over the disc of radius 1/2
DISC_HALF_MASS = 2 * math.pi / 3 * (1 - 0.75**1.5)


def disc_half(spec):
    x, y = spec.cell_centers()
    return np.hypot(x, y) < 0.5


def test_closed_form_oracle_value():
    assert DISC_HALF_MASS == pytest.approx(0.73405, abs=5e-6)


def test_gamma_zero_is_lebesgue():
    spec = DomainSpec("dirichlet_square", 32)
    f = sample_gff(spec, 0)
    m = build_measure(f, 0.0, 4 * spec.a)
    assert np.allclose(m.masses, spec.a**2)
    assert m.total_mass == pytest.approx(1.0)
    d = build_measure_discrete(f, 0.0)
    assert np.allclose(d.masses, 1.0)


def test_gamma_range_and_resolution_errors():
    spec = DomainSpec("torus", 32)
    f = sample_gff(spec, 0)
    for g in (-0.1, 2.0, 2.5):
        with pytest.raises(ValueError):
            build_measure(f, g, 4 * spec.a)
    with pytest.raises(ValueError):
        build_measure(f, 1.0, spec.a)


def test_masses_positive_and_total_exact():
    spec = DomainSpec("torus", 64)
    f = sample_gff(spec, 5)
    for g in (0.5, 1.0, 1.5, 1.9):
        m = build_measure(f, g, 2 * spec.a)
        assert np.all(m.masses > 0) and np.all(np.isfinite(m.masses))
        assert m.total_mass == float(np.sum(m.masses))
        assert m.normalized().total_mass == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        m.masses[0, 0] = 1.0
    with pytest.raises(ValueError):
        QuantumMeasure(spec, 1.0, "circle", -np.ones((64, 64)))


def test_disc_cells_outside_carry_no_mass():
    spec = DomainSpec("disc_embedded", 32, 2.0)
    f = sample_gff(spec, 1)
    x, y = spec.cell_centers()
    out = np.hypot(x, y) >= 1
    assert np.all(build_measure_discrete(f, 1.0).masses[out] == 0)
    assert np.all(build_measure(f, 1.0, 2 * spec.a).masses[out] == 0)


def test_expected_mass_quadrature():
    spec = DomainSpec("disc_embedded", 256, 2.0)
    assert expected_mass(spec, 1.0, disc_half(spec)) == pytest.approx(DISC_HALF_MASS, rel=3e-3)
    sq = DomainSpec("dirichlet_square", 64)
    region = np.zeros((64, 64), bool)
    region[10:30, 5:25] = True
    assert expected_mass(sq, 0.0, region) == pytest.approx(400 * sq.a**2)
    h0 = np.full(sq.shape, 0.3)
    assert expected_mass(sq, 1.0, region, h0) == pytest.approx(math.exp(0.3) * expected_mass(sq, 1.0, region))
    with pytest.raises(ValueError):
        expected_mass(DomainSpec("torus", 32), 1.0, np.ones((32, 32), bool))
    with pytest.raises(ValueError):
        expected_mass(spec, 1.0, np.ones((256, 256), bool))


def test_expected_mass_monte_carlo():
    spec = DomainSpec("disc_embedded", 64, 2.0)
    reg = disc_half(spec)
    eps = 4 * spec.a
    tot = np.concatenate([circle_masses(sample_gff_batch(spec, 3, range(b, b + 250)), spec, 1.0, eps)[:, reg].sum(axis=1)
                          for b in range(0, 5000, 250)])
    mean, se = tot.mean(), tot.std(ddof=1) / math.sqrt(tot.size)
    assert mean == pytest.approx(DISC_HALF_MASS, rel=0.05)
    # the lattice expectation, from exact circle-average variances
    x, y = spec.cell_centers()
    pts = np.column_stack([x[reg], y[reg]])
    lattice = sum(spec.a**2 * math.exp(0.5 * (circle_covariance(spec, z, eps)[0, 0] + math.log(eps))) for z in pts)
    assert abs(mean - lattice) < 4 * se


def test_conditional_measure_identities():
    spec = DomainSpec("dirichlet_square", 64)
    f = sample_gff(spec, 1)
    m0 = conditional_measure(f, 0, 1.0)
    assert np.allclose(m0.masses, spec.a**2 * first_moment_density(spec, 1.0))
    assert m0.total_mass == pytest.approx(expected_mass(spec, 1.0, np.ones((64, 64), bool)))
    assert np.allclose(conditional_measure(f, 17, 0.0).masses, spec.a**2)
    assert np.all(conditional_measure(f, 17, 1.5).masses > 0)
    with pytest.raises(ValueError):
        conditional_measure(sample_gff(DomainSpec("torus", 32), 0), 3, 1.0)


def test_conditional_measure_martingale_mc():
    spec = DomainSpec("dirichlet_square", 64)
    f = sample_gff(spec, 1)
    n = 10
    x, y = spec.cell_centers()
    A = (np.abs(x - 0.5) < 0.1) & (np.abs(y - 0.5) < 0.1)
    hn = project_lowpass(f, n).values
    vals = []
    for b in range(0, 2000, 200):
        v = sample_gff_batch(spec, 5, range(b, b + 200))
        hs = np.array([hn + w - project_lowpass(Field(w, spec), n).values for w in v])
        vals.append(circle_masses(hs, spec, 1.0, 4 * spec.a)[:, A].sum(axis=1))
    vals = np.concatenate(vals)
    assert vals.mean() == pytest.approx(conditional_measure(f, n, 1.0).mass(A), rel=0.05)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
def test_pullback_identity(gamma):
    spec = DomainSpec("disc_embedded", 128, 2.0)
    big = DomainSpec("disc_embedded", 128, 4.0)
    x, y = big.cell_centers()
    region = np.hypot(x, y) < 1.6
    res, mass = pullback_identity_residual(spec, gamma, 0.5, region)
    assert res < 1e-3 * mass


def test_pullback_trivial_cases():
    spec = DomainSpec("disc_embedded", 64, 2.0)
    region = disc_half(spec)
    res, _ = pullback_identity_residual(spec, 1.0, 1.0, region)
    assert res < 1e-12
    big = DomainSpec("disc_embedded", 64, 4.0)
    x, y = big.cell_centers()
    res, mass = pullback_identity_residual(spec, 0.0, 0.5, np.hypot(x, y) < 1.5)
    assert res < 1e-10
    with pytest.raises(ValueError):
        pullback_identity_residual(spec, 1.0, 0.5, np.hypot(x, y) < 3)


def test_cauchy_in_eps_medians_decrease():
    spec = DomainSpec("dirichlet_square", 256)
    x, y = spec.cell_centers()
    S = (x >= 0.25) & (x < 0.75) & (y >= 0.25) & (y < 0.75)
    v = sample_gff_batch(spec, 2, range(200))
    for g in (0.5, 1.0, 1.5):
        ms = [circle_masses(v, spec, g, 2.0**-k)[:, S].sum(axis=1) for k in range(2, 8)]
        med = [float(np.median(np.abs(ms[i] - ms[i + 1]) / ms[i])) for i in range(5)]
        assert all(b < a for a, b in zip(med, med[1:])), med


def test_first_moment_at_eps_sixteenth_mc():
    spec = DomainSpec("dirichlet_square", 128)
    eps = 1 / 16
    z = (0.5, 0.5)
    assert first_moment_ratio(spec, 1.0, z, eps) == pytest.approx(1.0, rel=0.05)
    # sampled m(v) / a^2 against C(v)^{1/2}, pooled over the central cells
    from lqgkpz.circle_average import conformal_radius
    x, y = spec.cell_centers()
    inner = (np.abs(x - 0.5) < 0.25) & (np.abs(y - 0.5) < 0.25)
    c = np.exp(0.5 * conformal_radius(spec).cells_log())[inner]
    ratios = np.concatenate([(circle_masses(sample_gff_batch(spec, 4, range(b, b + 200)), spec, 1.0, eps)[:, inner]
                              / spec.a**2 / c).mean(axis=1) for b in range(0, 2000, 200)])
    assert ratios.mean() == pytest.approx(1.0, rel=0.05)


def test_two_point_moment_matches_green_form():
    spec = DomainSpec("dirichlet_square", 128)
    eps = 1 / 32
    y, z = (0.375, 0.5), (0.625, 0.5)
    cov = circle_covariance(spec, [y, z], eps)
    exact = math.exp(log_pair_moment(1.0, eps, cov[0, 0], cov[1, 1], cov[0, 1]))
    assert exact == pytest.approx(pair_moment_prediction(spec, 1.0, y, z), rel=0.10)
    slope, lp = pair_moment_slope(spec, 1.0, eps, [0.125, 0.1875, 0.25, 0.3125, 0.375])
    assert slope == pytest.approx(-1.0, rel=0.15)
    with pytest.raises(ValueError):
        pair_moment_slope(spec, 1.0, eps, [0.05])


def test_first_moment_mc_estimators_agree_for_gaussian_input():
    rng = np.random.default_rng(0)
    h = rng.normal(0, 1.5, 200_000)
    est = first_moment_mc(h, 1.0, 0.1)
    truth = math.exp(0.5 * (2.25 + math.log(0.1)))
    assert est.value == pytest.approx(truth, rel=4 * est.stderr / truth)
    assert est.direct == pytest.approx(truth, rel=5 * est.direct_stderr / truth)


def test_measure_serialization(tmp_path):
    spec = DomainSpec("torus", 32, 2.0)
    m = build_measure(sample_gff(spec, 3), 1.2, 4 * spec.a)
    r = measure_from_bytes(measure_to_bytes(m, seed=3))
    assert r.gamma == 1.2 and r.eps == m.eps and r.regularization == "circle"
    assert np.array_equal(r.masses, m.masses)
    d = build_measure_discrete(sample_gff(spec, 3), 0.5)
    assert measure_from_bytes(measure_to_bytes(d)).eps is None
    region_mass_csv(tmp_path / "r.csv", ["all"], [m.total_mass])
    assert (tmp_path / "r.csv").read_bytes().startswith(b"region,mass\r\nall,")

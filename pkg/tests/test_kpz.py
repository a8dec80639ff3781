import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from lqgkpz.grid_field import DomainSpec
from lqgkpz.kpz import (
    SET_GENERATORS,
    KpzConfig,
    KpzParams,
    brownian_table,
    estimate_exponent,
    kpz_forward,
    kpz_inverse,
    run_kpz_experiment,
)
from lqgkpz.quantum_boxes import euclid_box_count

G_BROWN = math.sqrt(8 / 3)


def test_forward_oracles():
    assert kpz_forward(0.25, G_BROWN) == pytest.approx(0.125, abs=1e-15)
    assert kpz_forward(0.5, 1.0) == pytest.approx(0.4375, abs=1e-15)


def test_inverse_oracles():
    assert kpz_inverse(0.125, G_BROWN) == pytest.approx(0.25, abs=1e-15)
    assert kpz_inverse(0.5, 1.0) == pytest.approx(0.5615528, abs=1e-7)
    root = brentq(lambda d: kpz_forward(d, 1.0) - 0.5, 0, 1, xtol=1e-15)
    assert kpz_inverse(0.5, 1.0) == pytest.approx(root, abs=1e-12)


@pytest.mark.parametrize("gamma,target", [(0.5, 0.5156), (1.0, 0.5616), (1.5, 0.6310)])
def test_segment_targets(gamma, target):
    assert kpz_inverse(0.5, gamma) == pytest.approx(target, abs=5e-5)


def test_brownian_table():
    rows = brownian_table(range(1, 7))
    assert rows[0] == (1, pytest.approx(0.125), pytest.approx(0.25))
    assert rows[1] == (2, pytest.approx(0.625), pytest.approx(0.75))
    d = [r[2] for r in rows]
    assert np.allclose(np.diff(d), 0.5)
    with pytest.raises(ValueError):
        brownian_table([0])


def test_fixed_points_and_gamma_zero():
    for g in np.linspace(0, 1.95, 14):
        assert kpz_inverse(0.0, g) == 0.0
        assert kpz_inverse(1.0, g) == pytest.approx(1.0, abs=1e-12)
    assert kpz_inverse(0.3, 0.0) == 0.3


def test_errors_and_params():
    with pytest.raises(ValueError):
        kpz_inverse(-0.1, 1.0)
    with pytest.raises(ValueError):
        kpz_forward(-0.1, 1.0)
    with pytest.raises(ValueError):
        kpz_inverse(0.5, 2.0)
    p = KpzParams(1.0)
    assert p.Q == 2.5 and p.a == 1.5 and p.beta(0.5) == 0.5
    with pytest.raises(ValueError):
        KpzParams(0.0).Q


@settings(max_examples=200, deadline=None)
@given(g=st.floats(0, 1.99), x=st.floats(0, 1))
def test_round_trip_property(g, x):
    d = kpz_inverse(x, g)
    assert 0 <= d <= 1 + 1e-12
    assert kpz_forward(d, g) == pytest.approx(x, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.01, 1.99), x1=st.floats(0, 1), x2=st.floats(0, 1))
def test_inverse_monotone_and_above_x(g, x1, x2):
    lo, hi = sorted((x1, x2))
    assert kpz_inverse(lo, g) <= kpz_inverse(hi, g) + 1e-15
    # quantum exponents exceed Euclidean ones on (0, 1)
    assert kpz_inverse(lo, g) >= lo - 1e-15


def test_estimate_exponent_recovers_power_law():
    s = 2.0 ** -np.arange(4, 10)
    est = estimate_exponent(zip(s, 3 * s**0.4), "quantum")
    assert est.slope == pytest.approx(0.4) and est.stderr < 1e-10
    est = estimate_exponent(zip(s, 3 * s**0.8), "euclidean")
    assert est.slope == pytest.approx(0.4)
    with pytest.warns(RuntimeWarning):
        est = estimate_exponent(list(zip(s, s**0.5)) + [(1e-4, 0.0)], "quantum")
    assert est.slope == pytest.approx(0.5)
    with pytest.raises(ValueError):
        estimate_exponent(zip(s[:3], s[:3]), "quantum")
    with pytest.raises(ValueError):
        estimate_exponent(zip(s, s), "other")


def test_segment_euclidean_exponent():
    spec = DomainSpec("torus", 1024)
    X = SET_GENERATORS["segment"](spec)
    eps = 2.0 ** -np.arange(4, 10)
    area = [e * e * euclid_box_count(X, int(e * 1024)) for e in eps]
    assert estimate_exponent(zip(eps, area), "euclidean").slope == pytest.approx(0.5, abs=0.02)


def small_config(**kw):
    base = dict(spec=DomainSpec("torus", 256), gammas=(0.5, 1.0), delta_exps=tuple(range(6, 11)),
                eps_exps=tuple(range(3, 8)), samples=4, seed=2)
    base.update(kw)
    return KpzConfig(**base)


def test_small_experiment_is_deterministic(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = run_kpz_experiment(small_config())
        b = run_kpz_experiment(small_config(workers=2))
    assert [r.delta_hat for r in a.rows] == [r.delta_hat for r in b.rows]
    a.to_csv(tmp_path / "a.csv", {"seed": 2})
    b.to_csv(tmp_path / "b.csv", {"seed": 2})
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    text = a.summary()
    assert "gamma=0.5" in text and "Delta_hat" in text
    r = a.rows[1]
    assert r.target == pytest.approx(kpz_inverse(0.5, 1.0))
    assert r.predicted == pytest.approx(kpz_inverse(max(r.x_hat, 0), 1.0))
    assert np.all(np.diff(r.mean_mass) < 0)


def test_experiment_rejects_short_ladders():
    with pytest.raises(ValueError):
        run_kpz_experiment(small_config(delta_exps=(6, 7, 8)))


@pytest.mark.parametrize("gamma", [0.1 * k for k in range(1, 20)])
def test_round_trip_grid(gamma):
    for x in np.linspace(0, 10, 101):
        assert kpz_forward(kpz_inverse(x, gamma), gamma) == pytest.approx(x, abs=1e-12)
        if 0 < x < 1:
            assert kpz_inverse(x, gamma) > x
        elif x > 1:
            assert kpz_inverse(x, gamma) < x


@pytest.mark.slow
def test_cantor_dust_hits_segment_target():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = run_kpz_experiment(KpzConfig(gammas=(0.5, 1.0, 1.5), set_name="cantor", samples=20))
    for r in rep.rows:
        assert abs(r.delta_hat - kpz_inverse(0.5, r.gamma)) < 0.08

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gapblowup import rates

mpmath.mp.dps = 50


def mp_alpha_k(n, k):
    # independent oracle: positive root of c^2 + (n-1)c - k(k+n-3) in 50 digits
    b = mpmath.mpf(n - 1)
    mu = mpmath.mpf(k * (k + n - 3))
    return (-b + mpmath.sqrt(b * b + 4 * mu)) / 2


def test_alpha_3_closed_form():
    assert rates.alpha(3) == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
    assert (rates.alpha(3) - 1) / 2 == pytest.approx((math.sqrt(2) - 2) / 2, abs=1e-12)


def test_alpha_4_closed_form():
    assert rates.alpha(4) == pytest.approx((-3 + math.sqrt(17)) / 2, abs=1e-15)


def test_alpha_5_closed_form():
    assert rates.alpha(5) == pytest.approx(math.sqrt(7) - 2, abs=1e-15)


@pytest.mark.parametrize("n", range(3, 21))
@pytest.mark.parametrize("k", range(0, 11))
def test_alpha_k_matches_extended_precision(n, k):
    exact = mp_alpha_k(n, k)
    got = rates.alpha_k(n, k)
    assert abs(mpmath.mpf(got) - exact) <= 2e-16 * max(1, abs(exact))


def test_alpha_k_examples():
    assert rates.alpha_k(7, 0) == 0.0
    assert rates.alpha_k(6, 1) == rates.alpha(6)
    assert rates.alpha_k(3, 2) == pytest.approx(-1 + math.sqrt(5), abs=1e-12)
    assert rates.alpha_k(3, 2) == pytest.approx(1.2360679775, abs=1e-10)


@pytest.mark.parametrize("bad", [2, 0, -1, 3.5, True, "x"])
def test_dimension_rejected(bad):
    with pytest.raises((rates.DomainError, ValueError)):
        rates.alpha(bad)


def test_negative_mode_rejected():
    with pytest.raises(rates.DomainError):
        rates.alpha_k(3, -1)


def test_alpha_invariants_over_n():
    vals = [rates.alpha(n) for n in range(3, 21)]
    assert all(0 < a < 1 for a in vals)
    assert all(b > a for a, b in zip(vals, vals[1:]))
    for n, a in zip(range(3, 21), vals):
        assert abs(a * a + (n - 1) * a - (n - 2)) < 1e-13


@given(st.integers(3, 20))
def test_alpha_k_increasing_in_k(n):
    ak = [rates.alpha_k(n, k) for k in range(0, 11)]
    assert ak[0] == 0.0
    assert ak[1] == rates.alpha(n)
    assert all(b > a for a, b in zip(ak, ak[1:]))


def test_euler_exponent_at_k1():
    # c^2 + (n-3)c - (n-2) = 0 has root c = 1
    for n in range(3, 10):
        assert rates.euler_exponent(n, 1) == pytest.approx(1.0, abs=1e-14)


# ---------------------------------------------------------------- beta thresholds


def test_beta_star_n3():
    # p'(1) = 2a^2 + 2a - 2a beta at n = 3, so beta = a + 1 = sqrt 2
    assert rates.beta_star(3) == pytest.approx(math.sqrt(2), abs=1e-14)


def test_beta_loose_n3():
    assert rates.beta_loose(3) == pytest.approx(2 * math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("n", range(3, 21))
def test_beta_star_above_alpha_and_paper_value_sufficient(n):
    assert rates.beta_star(n) > rates.alpha(n)
    assert rates.beta_loose(n) >= rates.beta_star(n)
    assert rates.subsolution_condition(n, rates.beta_loose(n))


def test_beta_loose_identity_n4():
    a = rates.alpha(4)
    alt = (2 * (4 - 2) - (4 - 1) * a) / (4 - 3 + a)
    assert rates.beta_loose(4) == pytest.approx(alt, rel=1e-13)


def test_beta_star_matches_extended_precision():
    for n in range(3, 21):
        a = mp_alpha_k(n, 1)
        exact = (2 * a * a + a * (n - 1)) / (n - 3 + 2 * a)
        assert abs(mpmath.mpf(rates.beta_star(n)) - exact) < 1e-14


def test_polynomial_examples():
    p = rates.subsolution_polynomial(3, rates.alpha(3))
    assert p.c2 == 0.0
    p = rates.subsolution_polynomial(3, rates.beta_star(3))
    assert abs(p.slope_at_one) < 1e-10
    p = rates.subsolution_polynomial(3, 2 * math.sqrt(2))
    assert p.slope_at_one < 0


def test_condition_examples():
    b = rates.beta_star(3)
    assert rates.subsolution_condition(3, b + 0.1)
    assert not rates.subsolution_condition(3, b - 0.1)
    assert rates.subsolution_condition(3, 2 * math.sqrt(2) + 0.1)
    for n in range(3, 21):
        assert rates.subsolution_condition(n, rates.beta_star(n))


@pytest.mark.parametrize("n", range(3, 21))
def test_condition_equivalence_on_grid(n):
    bs = rates.beta_star(n)
    for beta in np.linspace(0.0, 6.0, 200):
        assert rates.subsolution_condition(n, beta) == (beta >= bs - 1e-12)


@given(st.integers(3, 20), st.floats(0.0, 6.0))
def test_polynomial_vanishes_at_one(n, beta):
    p = rates.subsolution_polynomial(n, beta)
    scale = abs(p.c2) + abs(p.c1) + abs(p.c0) + 1.0
    assert abs(p(1.0)) <= 1e-12 * scale


@given(st.integers(3, 20), st.floats(0.0, 6.0))
def test_condition_is_sign_of_slope(n, beta):
    p = rates.subsolution_polynomial(n, beta)
    bs = rates.beta_star(n)
    if abs(beta - bs) > 1e-9:
        assert rates.subsolution_condition(n, beta) == (p.slope_at_one < 0)


# ---------------------------------------------------------------- tilde alpha


def test_tilde_alpha_examples():
    assert rates.tilde_alpha(3, 0.9, 0.0).value == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
    assert rates.tilde_alpha(3, 0.1, 0.5).value == pytest.approx(0.1, abs=1e-15)
    assert rates.tilde_alpha(5, 0.5, 0.0).value == pytest.approx(math.sqrt(7) - 2, abs=1e-15)


def test_tilde_alpha_resonance_flagged():
    a = rates.alpha(3)
    t = rates.tilde_alpha(3, a - 1.0 + 0.4, 0.2)
    assert t.resonant
    assert t.value == pytest.approx(a)


def test_tilde_alpha_errors():
    with pytest.raises(rates.DomainError):
        rates.tilde_alpha(3, 0.1, 0.6)
    with pytest.raises(rates.DomainError):
        rates.tilde_alpha(3, 0.1, -0.1)


def test_rate_table_columns():
    rows = rates.rate_table(3, 8, 6)
    assert [r["n"] for r in rows] == list(range(3, 9))
    assert rows[0]["gradient_exponent"] == pytest.approx((math.sqrt(2) - 2) / 2, abs=1e-12)
    assert set(f"alpha_{k}" for k in range(7)) <= set(rows[0])

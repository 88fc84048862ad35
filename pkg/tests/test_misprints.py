"""Commonly tabulated variants of identities the package relies on.

Each correct form must hold to working precision and each miswritten form
must miss by a wide margin, so a silent regression to the wrong form fails.
"""
import math

import mpmath as mp
import numpy as np
import pytest

from gsr_density.gsr_core import (
    DensityQuery,
    ModelParams,
    cdf_on_grid,
    cdf_zero_headstart_closed_form,
    hostler_identity_sides,
    transition_pdf,
    transition_pdf_bessel_form,
)

# ---------------------------------------------------------------------------
# hyperbolic-kernel integral for W M: sum (c/2)(x1 + x2) versus product x1 x2


@pytest.mark.parametrize("x1, x2, b", [(6.0, 1.0, 0.75), (6.0, 1.0, 1.5), (2.0, 1.0, 0.75), (3.0, 0.4, 2.0)])
def test_hostler_sum_form_holds(x1, x2, b):
    lhs, rhs = hostler_identity_sides(x1, x2, b)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@pytest.mark.parametrize("x1, x2, b", [(6.0, 1.0, 0.75), (6.0, 1.0, 1.5)])
def test_hostler_product_form_is_wrong_where_convergent(x1, x2, b):
    lhs, rhs = hostler_identity_sides(x1, x2, b, variant="product")
    assert abs(rhs / lhs - 1) > 0.5


def test_hostler_product_form_diverges_for_small_arguments():
    _, rhs = hostler_identity_sides(2.0, 1.0, 0.75, variant="product")
    assert rhs == math.inf


# ---------------------------------------------------------------------------
# double-integral density: μ² denominator and the csch² factor


@pytest.mark.parametrize("mu, t, x, r", [(1.0, 1.0, 1.0, 1.0), (1.5, 2.0, 0.5, 1.0)])
def test_bessel_corrected_form_holds(mu, t, x, r):
    params = ModelParams(mu)
    q = DensityQuery(x, t, r)
    assert abs(transition_pdf_bessel_form(q, params).value / transition_pdf(q, params).value - 1) < 1e-10


def test_bessel_mu_denominator_fails_away_from_unit_mu():
    params = ModelParams(1.5)
    q = DensityQuery(0.5, 2.0, 1.0)
    wrong = transition_pdf_bessel_form(q, params, variant="mu_denominator").value
    assert wrong / transition_pdf(q, params).value > 5


def test_bessel_mu_denominator_is_invisible_at_unit_mu():
    q = DensityQuery(1.0, 1.0, 1.0)
    a = transition_pdf_bessel_form(q, ModelParams(1.0), variant="mu_denominator").value
    b = transition_pdf_bessel_form(q, ModelParams(1.0)).value
    assert a == b


@pytest.mark.parametrize("mu, t, x, r", [(1.0, 1.0, 1.0, 1.0), (1.5, 2.0, 0.5, 1.0)])
def test_bessel_printed_form_fails(mu, t, x, r):
    params = ModelParams(mu)
    q = DensityQuery(x, t, r)
    wrong = transition_pdf_bessel_form(q, params, variant="printed").value
    assert abs(wrong / transition_pdf(q, params).value - 1) > 0.5


def test_bessel_variants_other_than_corrected_need_positive_headstart():
    with pytest.raises(ValueError):
        transition_pdf_bessel_form(DensityQuery(1.0, 1.0, 0.0), ModelParams(1.0), variant="printed")


# ---------------------------------------------------------------------------
# zero-headstart cdf in closed form: s^{-1/2} e^{-s/8} weight


def test_cdf_printed_form_fails():
    xs = np.array([0.5, 1.0, 2.0])
    quad, _, _ = cdf_on_grid(xs, 1.0, 0.0, ModelParams(1.0))
    gaps = [abs(cdf_zero_headstart_closed_form(x, 1.0, variant="printed").value - q) for x, q in zip(xs, quad)]
    right = [abs(cdf_zero_headstart_closed_form(x, 1.0).value - q) for x, q in zip(xs, quad)]
    assert max(right) < 1e-10
    assert min(gaps) > 100 * 1e-5


# ---------------------------------------------------------------------------
# 2F0 against Tricomi U: first argument -α - iμ, not -α/2 - iμ


@pytest.mark.parametrize("a, m, x", [(0.3, 0.7, 0.2), (1.1, 0.4, 0.05), (0.5, 2.0, 0.1)])
def test_hypergeometric_tricomi_relation(a, m, x):
    with mp.workdps(30):
        a, m, x = mp.mpf(a), mp.mpf(m), mp.mpf(x)
        i = mp.mpc(0, 1)
        lhs = mp.hyp2f0(-a - i * m, -a + i * m, -x)
        right = x ** (a + i * m) * mp.hyperu(-a - i * m, 1 - 2 * i * m, 1 / x)
        wrong = x ** (a + i * m) * mp.hyperu(-a / 2 - i * m, 1 - 2 * i * m, 1 / x)
        assert abs(lhs - right) < 1e-20 * abs(lhs)
        assert abs(lhs - wrong) > 1e-2 * abs(lhs)

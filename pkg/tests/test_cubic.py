from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locsec import oracles
from locsec.core import CubicCoefficients, cubic_real_roots, solve_cubic_real
from locsec.errors import InvalidCubic


def _residual_ok(c, roots):
    scale = max(abs(v) for v in c)
    p = np.polyval(c, np.asarray(roots))
    return np.all(np.abs(p) <= 1e-8 * scale * (1 + np.abs(roots)) ** 3)


def test_three_distinct_roots():
    np.testing.assert_allclose(solve_cubic_real(CubicCoefficients(1, -6, 11, -6)), [1, 2, 3], atol=1e-12)


def test_triple_root():
    roots = solve_cubic_real(CubicCoefficients(1, 0, 0, 0))
    assert roots == [0.0]


def test_double_root_collapsed():
    # (x - 1)^2 (x + 2)
    roots = solve_cubic_real(CubicCoefficients(1, 0, -3, 2))
    np.testing.assert_allclose(roots, [-2, 1], atol=1e-7)


def test_single_real_root():
    roots = solve_cubic_real(CubicCoefficients(1, 0, 1, 1))
    assert len(roots) == 1
    assert _residual_ok((1, 0, 1, 1), roots)


def test_leading_zero_rejected():
    with pytest.raises(InvalidCubic):
        solve_cubic_real(CubicCoefficients(0, 1, 2, 3))


def test_matches_companion_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        c = rng.normal(size=4)
        got = np.array(solve_cubic_real(CubicCoefficients(*c)))
        ref = oracles.companion_roots(*c)
        assert got.size == ref.size
        np.testing.assert_allclose(got, ref, atol=1e-7)


def test_batched_solver_agrees_with_scalar():
    rng = np.random.default_rng(8)
    c = rng.normal(size=(4, 50))
    batch = cubic_real_roots(*c)
    for i in range(50):
        got = np.sort(batch[i][~np.isnan(batch[i])])
        ref = np.array(solve_cubic_real(CubicCoefficients(*c[:, i])))
        # the batch keeps repeated roots; compare as sets
        for r in ref:
            assert np.min(np.abs(got - r)) < 1e-7


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4).filter(lambda c: abs(c[0]) > 1e-3))
def test_residual_bound_and_sign_changes(c):
    roots = solve_cubic_real(CubicCoefficients(*c))
    assert 1 <= len(roots) <= 3
    assert roots == sorted(roots)
    assert _residual_ok(c, roots)
    # sign changes on a bracketing grid never exceed the root count
    bound = 1 + max(abs(v / c[0]) for v in c[1:])
    xs = np.linspace(-bound, bound, 2001)
    p = np.polyval(c, xs)
    # ignore grid values lost in rounding; those straddle (near-)double roots
    p = p[np.abs(p) > 1e-9 * max(abs(v) for v in c)]
    changes = int(np.sum(np.signbit(p[1:]) != np.signbit(p[:-1])))
    assert changes <= len(roots)


def test_roots_with_widely_scaled_coefficients():
    # (x - 1e-3)(x - 1)(x - 1e3)
    c = np.poly([1e-3, 1.0, 1e3])
    roots = solve_cubic_real(CubicCoefficients(*c))
    np.testing.assert_allclose(roots, [1e-3, 1.0, 1e3], rtol=1e-9)


def test_small_roots_beside_a_large_one_stay_distinct():
    # x (0.25 x^2 + 480 x + 0.5): the shift to the depressed form cancels badly
    c = (0.25, 480.0, 0.5, 0.0)
    roots = solve_cubic_real(CubicCoefficients(*c))
    # small root from the cancellation-free quadratic formula at 40 digits
    assert len(roots) == 3
    assert roots[1] == pytest.approx(-0.0010416672318076155, rel=1e-14)
    assert roots[2] == 0.0
    assert roots[0] == pytest.approx(-1919.9989583328, rel=1e-12)

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from mfshare.distributions import (
    Empirical,
    Product,
    StdGaussian,
    Trapezoidal1D,
    Triangle2D,
    Triangular1D,
    UniformBox,
    cdf_1d,
    erf_inv,
    in_support,
    law_from_dict,
    ppf_1d,
    sample,
)
from mfshare.errors import DomainError, ParameterError, UnsupportedLawError

RD_TRIANGLE = ((0.25e-3, 4e-3), (1.75e-3, 5e-3), (1e-3, 6e-3))


def test_degenerate_box():
    b = sample(UniformBox((0.5,), (0.5,)), 3, 0)
    assert b.values.shape == (3, 1)
    assert np.all(b.values == 0.5)


def test_uniform_moments():
    X = sample(UniformBox((-1, -1), (1, 1)), 10**5, 11).values
    assert np.all(np.abs(X.mean(axis=0)) < 0.01)
    assert np.all(np.abs(X.var(axis=0) - 1.0 / 3.0) < 0.01)


def test_triangle_centroid_and_containment():
    law = Triangle2D(*RD_TRIANGLE)
    X = sample(law, 10**5, 5).values
    assert np.all(np.abs(X.mean(axis=0) / np.array([1e-3, 5e-3]) - 1.0) < 0.02)
    assert np.all(in_support(law, X))
    assert np.allclose(law.centroid(), [1e-3, 5e-3])


def test_sampling_is_deterministic():
    law = Product((Triangle2D(*RD_TRIANGLE), UniformBox((0.5e-3,), (1.5e-3,))))
    a = sample(law, 50, 123).values
    b = sample(law, 50, 123).values
    c = sample(law, 50, 124).values
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_batch_is_immutable():
    b = sample(StdGaussian(2), 4, 0)
    with pytest.raises(ValueError):
        b.values[0, 0] = 1.0


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        UniformBox((1.0,), (0.0,))
    with pytest.raises(ParameterError):
        Triangular1D(0.0, 2.0, 1.0)
    with pytest.raises(ParameterError):
        Trapezoidal1D(0.0, 2.0, 1.0, 3.0)
    with pytest.raises(ParameterError):
        Triangle2D((0, 0), (1, 1), (2, 2))
    with pytest.raises(ParameterError):
        sample(StdGaussian(1), 0, 0)


def test_cdf_examples():
    tri = Triangular1D(-2.0, 0.0, 2.0)
    trap = Trapezoidal1D(-2.5, -1.5, 1.5, 2.5)
    assert cdf_1d(tri, 0.0) == pytest.approx(0.5)
    assert 2 * cdf_1d(tri, 0.0) - 1 == pytest.approx(0.0, abs=1e-15)
    assert cdf_1d(trap, 0.0) == pytest.approx(0.5)
    assert cdf_1d(tri, -2.0) == 0.0
    assert cdf_1d(tri, -5.0) == 0.0 and cdf_1d(tri, 5.0) == 1.0
    assert cdf_1d(trap, 3.0) == 1.0


def test_cdf_multivariate_rejected():
    with pytest.raises(UnsupportedLawError):
        cdf_1d(UniformBox((0, 0), (1, 1)), 0.5)


@pytest.mark.parametrize("law", [Triangular1D(-2, 0, 2), Trapezoidal1D(-2.5, -1.5, 1.5, 2.5),
                                 Triangular1D(0, 0, 1), UniformBox((-1,), (3,))])
def test_cdf_monotone_and_bisection_inverse(law):
    lo, hi = (float(np.ravel(x)[0]) for x in law.bounds())
    z = np.linspace(lo - 1, hi + 1, 2001)
    F = np.asarray(cdf_1d(law, z))
    assert np.all(np.diff(F) >= 0)
    for p in np.linspace(0.01, 0.99, 25):
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if cdf_1d(law, mid) < p:
                a = mid
            else:
                b = mid
        assert float(cdf_1d(law, 0.5 * (a + b))) == pytest.approx(p, abs=1e-9)
        assert float(ppf_1d(law, p)) == pytest.approx(0.5 * (a + b), abs=1e-9)


def test_trapezoid_sampling_matches_cdf():
    law = Trapezoidal1D(-2.5, -1.5, 1.5, 2.5)
    x = np.sort(sample(law, 20000, 3).values[:, 0])
    F = np.asarray(cdf_1d(law, x))
    i = np.arange(1, x.size + 1)
    ks = max(np.max(i / x.size - F), np.max(F - (i - 1) / x.size))
    assert ks < 0.015


def _erf_series(x: float) -> float:
    # Maclaurin series, exact enough for |x| <= 3 with 120 terms in double
    s, term, n = 0.0, x, 0
    while n < 120:
        s += term / (2 * n + 1)
        n += 1
        term *= -x * x / n
    return 2.0 / math.sqrt(math.pi) * s


def test_erf_inv_examples():
    assert erf_inv(0.0) == 0.0
    assert erf_inv(_erf_series(1.0)) == pytest.approx(1.0, abs=1e-9)
    a, b = 0.0, 2.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if _erf_series(mid) < 0.5:
            a = mid
        else:
            b = mid
    assert erf_inv(0.5) == pytest.approx(0.5 * (a + b), abs=1e-9)


def test_erf_inv_domain():
    for p in (1.0, -1.0, 1.5, float("nan")):
        with pytest.raises(DomainError):
            erf_inv(p)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-3.0, max_value=3.0))
def test_erf_inv_round_trip(x):
    assert abs(erf_inv(erf(x)) - x) < 1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-0.999999, max_value=0.999999))
def test_erf_inv_odd_and_inverse(p):
    assert erf_inv(-p) == -erf_inv(p)
    assert abs(erf(erf_inv(p)) - p) < 1e-9


def test_empirical_and_product():
    emp = Empirical(np.array([[1.0, 2.0], [3.0, 4.0]]))
    X = sample(emp, 100, 0).values
    assert set(map(tuple, X)) <= {(1.0, 2.0), (3.0, 4.0)}
    with pytest.raises(ParameterError):
        Empirical(np.empty((0, 2)))
    prod = Product((UniformBox((0,), (1,)), StdGaussian(2)))
    assert prod.dim == 3
    assert sample(prod, 7, 1).values.shape == (7, 3)


def test_law_from_dict():
    law = law_from_dict({"type": "uniform_box", "lo": [-1, -1], "hi": [1, 1]})
    assert isinstance(law, UniformBox) and law.dim == 2
    tri = law_from_dict({"type": "triangle_2d", "v1": RD_TRIANGLE[0], "v2": RD_TRIANGLE[1], "v3": RD_TRIANGLE[2]})
    assert isinstance(tri, Triangle2D)
    with pytest.raises(ParameterError):
        law_from_dict({"type": "nope"})

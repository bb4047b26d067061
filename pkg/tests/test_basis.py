import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from supfpca.basis import (bspline_of_size, make_bspline, orthonormalize, panel_quadrature, tensor_row,
                           tensor_rows)
from supfpca.errors import DomainError, InvalidArgumentError

domains = st.tuples(st.floats(-5, 5), st.floats(0.1, 10)).map(lambda p: (p[0], p[0] + p[1]))


def scipy_design(basis, x):
    """Reference values from scipy's B-spline implementation."""
    return BSpline.design_matrix(x, basis.knots, basis.degree, extrapolate=False).toarray()


def test_size_and_knots():
    assert make_bspline(3, 6, (0, 1)).size == 10
    b = make_bspline(3, 1, (0, 2))
    assert b.size == 5
    assert np.unique(b.knots).tolist() == [0.0, 1.0, 2.0]
    assert make_bspline(3, 0, (0, 1)).size == 4


@pytest.mark.parametrize("domain", [(1, 1), (2, 0), (0, np.inf)])
def test_bad_domain(domain):
    with pytest.raises(InvalidArgumentError):
        make_bspline(3, 2, domain)


def test_bad_degree_and_knots():
    with pytest.raises(InvalidArgumentError):
        make_bspline(0, 2, (0, 1))
    with pytest.raises(InvalidArgumentError):
        make_bspline(3, -1, (0, 1))
    with pytest.raises(InvalidArgumentError):
        bspline_of_size(3, 3, (0, 1))


def test_bernstein_values_and_second_derivatives():
    b = make_bspline(3, 0, (0, 1))
    np.testing.assert_allclose(b.eval(0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)
    np.testing.assert_allclose(b.eval_deriv2(0.0), [6, -12, 6, 0], atol=1e-12)
    np.testing.assert_allclose(b.eval(0.0), [1, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(b.eval(1.0), [0, 0, 0, 1], atol=1e-15)


@given(domains, st.integers(0, 9), st.integers(1, 4))
def test_matches_scipy(domain, n_int, degree):
    b = make_bspline(degree, n_int, domain)
    x = np.linspace(domain[0], domain[1], 37)[:-1]
    np.testing.assert_allclose(b.eval(x), scipy_design(b, x), atol=1e-12)


@given(domains, st.integers(0, 9), st.integers(1, 4), st.floats(0, 1))
def test_partition_of_unity(domain, n_int, degree, frac):
    b = make_bspline(degree, n_int, domain)
    t = domain[0] + frac * (domain[1] - domain[0])
    assert abs(b.eval(t).sum() - 1.0) <= 1e-12


@given(st.integers(0, 8), st.floats(0, 1))
def test_local_support(n_int, frac):
    b = make_bspline(3, n_int, (0, 1))
    vals = b.eval(frac)
    for i, v in enumerate(vals):
        lo, hi = b.knots[i], b.knots[i + 4]
        if not lo <= frac <= hi:
            assert v == 0.0


def test_right_endpoint_left_limit():
    b = make_bspline(3, 5, (0, 2))
    v = b.eval(2.0)
    assert v[-1] == pytest.approx(1.0)
    assert np.allclose(v[:-1], 0.0)


def test_domain_policy():
    b = make_bspline(3, 3, (0, 1))
    with pytest.raises(DomainError):
        b.eval(1.5)
    np.testing.assert_allclose(b.eval(1.5, outside="clamp"), b.eval(1.0))
    ext = b.eval(1.5, outside="extrapolate")
    assert ext.sum() == pytest.approx(1.0)
    assert not np.allclose(ext, b.eval(1.0))
    with pytest.raises(DomainError):
        b.eval(np.nan, outside="clamp")
    with pytest.raises(InvalidArgumentError):
        b.eval(0.5, outside="bogus")


def test_deriv2_matches_central_differences():
    b = make_bspline(3, 6, (0, 1))
    h = 1e-4
    x = np.linspace(0.02, 0.98, 41)
    fd = (b.eval(x + h) - 2 * b.eval(x) + b.eval(x - h)) / h ** 2
    assert np.max(np.abs(fd - b.eval_deriv2(x))) < 1e-5 * max(1.0, np.abs(fd).max()) or \
        np.max(np.abs(fd - b.eval_deriv2(x))) < 1e-3


def test_deriv_matches_scipy():
    b = make_bspline(3, 4, (0, 1))
    x = np.linspace(0, 0.999, 23)
    for order in (1, 2, 3):
        ref = np.column_stack([BSpline(b.knots, np.eye(b.size)[i], 3).derivative(order)(x)
                               for i in range(b.size)])
        np.testing.assert_allclose(b.eval_deriv(x, order), ref, atol=1e-9)


def test_deriv2_of_line_is_zero():
    b = make_bspline(3, 5, (0, 3))
    # greville abscissae reproduce linear functions
    coef = np.array([b.knots[i + 1:i + 4].mean() for i in range(b.size)])
    x = np.linspace(0, 3, 50)
    np.testing.assert_allclose(b.eval(x) @ coef, x, atol=1e-12)
    np.testing.assert_allclose(b.eval_deriv2(x) @ coef, 0.0, atol=1e-10)


def test_gram_bernstein_and_quadrature():
    b = make_bspline(3, 0, (0, 1))
    assert b.gram()[0, 0] == pytest.approx(1.0 / 7.0, abs=1e-14)
    x, w = panel_quadrature([0.0, 0.5, 2.0], 3)
    assert w.sum() == pytest.approx(2.0)
    assert np.sum(w * x ** 5) == pytest.approx(2.0 ** 6 / 6)


@given(domains, st.integers(0, 10))
def test_orthonormal_gram(domain, n_int):
    b = orthonormalize(make_bspline(3, n_int, domain))
    assert b.orthonormal
    assert np.max(np.abs(b.gram() - np.eye(b.size))) <= 1e-8


def test_orthonormalize_twice_keeps_identity():
    b = orthonormalize(orthonormalize(make_bspline(3, 6, (0, 1))))
    np.testing.assert_allclose(b.gram(), np.eye(b.size), atol=1e-10)


def test_orthonormal_spans_same_space():
    raw = make_bspline(3, 4, (0, 1))
    ortho = orthonormalize(raw)
    x = np.linspace(0, 1, 30)
    coef, *_ = np.linalg.lstsq(raw.eval(x), ortho.eval(x), rcond=None)
    np.testing.assert_allclose(raw.eval(x) @ coef, ortho.eval(x), atol=1e-10)


def test_tensor_row():
    a = make_bspline(1, 0, (0, 1))      # (1 - t, t)
    u = make_bspline(1, 0, (0, 1))
    np.testing.assert_allclose(tensor_row(a, u, 0.0, 1.0), [0, 1, 0, 0])


@given(st.floats(0, 1), st.floats(0, 1))
def test_tensor_row_oracle(t, z):
    a = make_bspline(3, 3, (0, 1))
    u = make_bspline(3, 1, (0, 1))
    row = tensor_row(a, u, t, z)
    av, uv = a.eval(t), u.eval(z)
    brute = np.array([av[i] * uv[j] for i in range(a.size) for j in range(u.size)])
    np.testing.assert_allclose(row, brute, atol=1e-15)
    assert row.sum() == pytest.approx(av.sum() * uv.sum())


def test_tensor_rows_broadcast_z():
    a = make_bspline(3, 3, (0, 1))
    u = make_bspline(3, 1, (0, 1))
    t = np.array([0.1, 0.4, 0.9])
    rows = tensor_rows(a, u, t, 0.3)
    for k, tk in enumerate(t):
        np.testing.assert_allclose(rows[k], tensor_row(a, u, tk, 0.3))

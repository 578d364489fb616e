import numpy as np
import pytest

from semicone.cones import DirectionCone
from semicone.fields import Box, ScalarField, cubic_perturbed_frobenius, linear_field, sym2_frobenius, sym2_suite
from semicone.subdifferential import (CertificateRefused, MonotonicityError, directional_limit,
                                      nonconvexity_witness, subcone_extract, subgradient_at)
from semicone.tensor_core import sym2_det

SYM2 = DirectionCone.symmetric_dyad(2)
L1 = ScalarField(lambda x: np.abs(x[..., 0]) + np.abs(x[..., 1]), 2, homogeneous=True, name="l1")
EUCLID3 = ScalarField(lambda x: np.linalg.norm(x, axis=-1), 3, homogeneous=True)


def test_subcone_of_norm_is_directional_derivative(rng):
    e1 = np.array([1.0, 0.0, 0.0])
    g = subcone_extract(EUCLID3, DirectionCone.full(3), e1).g
    y = rng.standard_normal((50, 3))
    np.testing.assert_allclose(g(y), y[:, 0], atol=1e-7)


def test_subcone_of_linear_is_itself(rng):
    v = np.array([1.0, -2.0, 0.5])
    g = subcone_extract(linear_field(v), DirectionCone.full(3), np.array([0.0, 1.0, 1.0])).g
    y = rng.standard_normal((20, 3))
    np.testing.assert_allclose(g(y), y @ v, atol=1e-9)


def test_subcone_of_l1_on_axes(rng):
    g = subcone_extract(L1, DirectionCone.axes(2), np.array([1.0, 0.0])).g
    y = rng.standard_normal((50, 2))
    np.testing.assert_allclose(g(y), y[:, 0] + np.abs(y[:, 1]), atol=1e-9)


def test_subcone_is_homogeneous(rng):
    for f in sym2_suite():
        x0 = SYM2.sample_unit(1, 3)[0]
        g = subcone_extract(f, SYM2, x0).g
        y = rng.standard_normal((10, 3))
        for t in (0.5, 2.0):
            np.testing.assert_allclose(g(t * y), t * g(y), rtol=1e-6, atol=1e-9)


def test_directional_limit_detects_growth():
    concave = ScalarField(lambda x: -np.linalg.norm(x, axis=-1), 2, homogeneous=True)
    with pytest.raises(MonotonicityError):
        directional_limit(concave, np.array([1.0, 0.0]), np.array([[0.3, 0.2]]))


def test_norm_certificate_at_unit_dyads():
    f = ScalarField(sym2_frobenius, 3, homogeneous=True)
    for x0 in SYM2.sample_unit(5, 9):
        cert = subgradient_at(f, SYM2, x0, n_samples=20_000)
        # gradient of the Frobenius norm at a unit point, written in ambient coordinates
        np.testing.assert_allclose(cert.ell, x0 * np.array([1.0, 2.0, 1.0]), atol=1e-7)
        assert cert.touch_residual <= 1e-9
        assert cert.min_slack >= -1e-7


def test_l1_certificate_on_axes():
    cert = subgradient_at(L1, DirectionCone.axes(2), np.array([1.0, 0.0]), n_samples=20_000)
    np.testing.assert_allclose(cert.ell, [1.0, 0.0], atol=1e-12)
    assert cert.min_slack >= 0


def test_certificate_for_nonconvex_rank_one_convex_function():
    f = cubic_perturbed_frobenius()
    x0 = 1.3 * SYM2.sample_unit(1, 17)[0]
    cert = subgradient_at(f, SYM2, x0, n_samples=20_000)
    assert cert.touch_residual <= 1e-9 and cert.min_slack >= -1e-7


def test_certificate_rejects_non_members():
    with pytest.raises(ValueError):
        subgradient_at(EUCLID3, SYM2, np.array([1.0, 0.0, -1.0]))


def test_certificate_refused_for_non_rank_one_convex():
    # |x| - 0.9 |z| is not rank-one convex, so no linear minorant touches at the identity dyad
    bad = ScalarField(lambda v: sym2_frobenius(v) - 1.5 * np.abs(v[..., 1]), 3, homogeneous=True)
    with pytest.raises((CertificateRefused, MonotonicityError)):
        subgradient_at(bad, SYM2, np.array([0.5, 0.5, 0.5]), n_samples=20_000)


def test_monotone_quotient_on_suite(rng):
    for f in sym2_suite():
        x0 = rng.standard_normal((1000, 3))
        y = rng.standard_normal((1000, 3))
        fx, fy = f(x0), f(y)
        for lam in (0.1, 0.5, 0.9):
            quotient = (f(x0 + lam * (y - x0)) - fx) / lam
            # convex along every line (the suite functions are convex) so the quotient bounds the increment
            if f.name.startswith(("frobenius", "nuclear", "spectral", "coeff", "weighted", "trace")):
                assert np.all(fy - fx >= quotient - 1e-9 * (1 + np.abs(fy)))


def test_nonconvexity_witness():
    assert nonconvexity_witness(EUCLID3, Box.cube(3, 1.0), m=20_000) is None
    neg_det = ScalarField(lambda v: -sym2_det(v), 3)
    w = nonconvexity_witness(neg_det, Box.cube(3, 2.0), m=20_000, cone=SYM2)
    assert w is not None and w.violation > 0
    mid = w.weights @ w.points
    assert abs(sym2_det(mid)) > 1e-6
    # -det is concave along the identity: 0 and 2I straddle I, which has rank two
    x, y = np.zeros(3), np.array([2.0, 0, 2.0])
    assert neg_det(0.5 * (x + y)) - 0.5 * (neg_det(x) + neg_det(y)) == 1.0
    # diag(2,0), diag(0,2) is no witness: the midpoint value -1 sits below the average 0
    x, y = np.array([2.0, 0, 0]), np.array([0, 0, 2.0])
    assert neg_det(0.5 * (x + y)) < 0.5 * (neg_det(x) + neg_det(y))

import math

import numpy as np
import pytest

from semicone.cones import DirectionCone
from semicone.dconvexity import (check_dconvex, daffine_quadratics, empirical_lipschitz, keybound_check,
                                 lipschitz_estimate, qd_membership, recession)
from semicone.fields import Box, ScalarField, linear_field, sym2_frobenius, sym2_suite, weighted_norm_field
from semicone.tensor_core import sym2_det

SYM2 = DirectionCone.symmetric_dyad(2)
SQUARED_NORM = ScalarField(lambda x: -np.sum(x * x, axis=-1), 3, name="neg_sq")


def euclid(dim):
    return weighted_norm_field(np.ones(dim))


def test_norm_is_dconvex():
    for cone in (SYM2, DirectionCone.full(3), DirectionCone.axes(3)):
        rep = check_dconvex(euclid(3), cone, Box.cube(3, 1.0))
        assert rep.worst_violation <= 0
        assert rep.witness is None


def test_neg_det_is_affine_along_dyads():
    f = ScalarField(lambda v: -sym2_det(v), 3)
    assert check_dconvex(f, SYM2, Box.cube(3, 1.0)).worst_violation == 0.0


def test_neg_square_has_witness():
    rep = check_dconvex(SQUARED_NORM, DirectionCone.full(3), Box.cube(3, 1.0), n_points=2)
    assert rep.witness is not None
    # whole-segment midpoint defect of -|.|^2 is (s/2)^2 on a unit-direction segment of length s
    s = np.linalg.norm(rep.witness["y"] - rep.witness["x"])
    assert rep.worst_violation == pytest.approx((s / 2) ** 2, rel=1e-9)


def test_region_outside_domain_rejected():
    f = ScalarField(lambda x: x[..., 0], 2, domain=Box.cube(2, 1.0))
    with pytest.raises(ValueError):
        check_dconvex(f, DirectionCone.full(2), Box.cube(2, 2.0))


def test_suite_functions_are_rank_one_convex():
    for f in sym2_suite():
        assert check_dconvex(f, SYM2, Box.cube(3, 2.0), n_segments=500).worst_violation <= 1e-12, f.name


def test_lipschitz_linear():
    v = np.array([3.0, -1.0, 2.0])
    cone = DirectionCone.full(3)
    est = lipschitz_estimate(linear_field(v), cone, np.zeros(3), 1.0)
    assert np.linalg.norm(v) <= est.L <= 4 * est.c0 * np.linalg.norm(v)


def test_lipschitz_constant_and_norm():
    cone = DirectionCone.full(3)
    const = ScalarField(lambda x: np.full(x.shape[:-1], 2.0), 3)
    assert lipschitz_estimate(const, cone, np.zeros(3), 1.0).L == 0.0
    est = lipschitz_estimate(euclid(3), cone, np.zeros(3), 1.0)
    assert 1.0 <= est.L <= 4 * est.c0


def test_lipschitz_bound_dominates_empirical():
    for f in sym2_suite():
        for r in (0.5, 1.0):
            center = np.array([0.3, -0.2, 0.5])
            est = lipschitz_estimate(f, SYM2, center, r)
            assert empirical_lipschitz(f, SYM2, center, r) <= est.L, f.name


def test_recession_examples():
    e1 = np.array([1.0, 0.0, 0.0])
    soft = ScalarField(lambda x: np.sqrt(1 + np.sum(x * x, axis=-1)), 3)
    assert recession(soft, e1).value == pytest.approx(1.0, abs=1e-9)
    v = np.array([1.0, 2.0, -3.0])
    x = np.array([0.5, 0.1, 0.2])
    assert recession(linear_field(v), x).value == pytest.approx(v @ x, rel=1e-9)
    logf = ScalarField(lambda x: np.linalg.norm(x, axis=-1) + np.log1p(np.linalg.norm(x, axis=-1)), 3)
    assert recession(logf, e1, t_max=1e8).value == pytest.approx(1.0, abs=1e-5)


def test_recession_homogeneous_in_x():
    soft = ScalarField(lambda x: np.sqrt(1 + np.sum(x * x, axis=-1)), 3)
    x = np.array([0.3, -0.4, 1.2])
    base = recession(soft, x).value
    for t in (0.5, 2.0):
        assert recession(soft, t * x).value == pytest.approx(t * base, rel=1e-8)


def test_keybound_examples(rng):
    f = ScalarField(sym2_frobenius, 3, homogeneous=True)
    for a, y in zip(rng.standard_normal((20, 2)), rng.standard_normal((20, 3))):
        x = np.array([a[0] ** 2, a[0] * a[1], a[1] ** 2])
        assert keybound_check(f, SYM2, x, y) <= 1e-12
        assert keybound_check(linear_field([1.0, 2.0, 3.0]), SYM2, x, y) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        keybound_check(f, SYM2, np.array([1.0, 0.0, -1.0]), np.zeros(3))


def test_daffine_quadratics_sym2():
    qs = daffine_quadratics(SYM2)
    assert len(qs) == 1
    # det(x, z, y) = x y - z^2 as a symmetric matrix in ambient coordinates
    det = np.array([[0, 0, 0.5], [0, -1, 0], [0.5, 0, 0]])
    det /= np.linalg.norm(det)
    q = qs[0] * np.sign(qs[0][0, 2])
    np.testing.assert_allclose(q, det, atol=1e-9)


def test_daffine_quadratics_full_and_axes():
    assert daffine_quadratics(DirectionCone.full(3)) == []
    qs = daffine_quadratics(DirectionCone.axes(2))
    assert len(qs) == 1
    np.testing.assert_allclose(np.abs(qs[0]), np.array([[0, 1], [1, 0]]) / math.sqrt(2), atol=1e-12)


def test_qd_membership():
    tr = np.array([1.0, 0.0, 1.0])
    assert qd_membership(np.outer(tr, tr), SYM2).member
    neg_det = -np.array([[0, 0, 0.5], [0, -1, 0], [0.5, 0, 0]])
    res = qd_membership(neg_det, SYM2)
    assert res.member and abs(res.min_value) <= 1e-12
    res = qd_membership(-np.eye(3), SYM2)
    assert not res.member and res.min_value < 0

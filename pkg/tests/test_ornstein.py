import math

import numpy as np
import pytest

from semicone.fields import Box, ScalarField
from semicone.ornstein import (OperatorFamily, assemble_symbol, blowup_sequence, classical_pair, factorize,
                               integrand, pointwise_criterion, symbol_matrix)

A1, A2 = classical_pair()
DIFF = OperatorFamily.scalar({(2, 0): 1.0, (0, 2): -1.0})


def test_symbol_examples():
    xi = np.array([0.3, -1.1, 2.0])  # (xi_11, xi_12, xi_22)
    np.testing.assert_allclose(assemble_symbol(A1)(xi), [0.3, 2.0], atol=1e-12)
    np.testing.assert_allclose(assemble_symbol(A2)(xi), [-1.1], atol=1e-12)
    zero = OperatorFamily(2, 2, 1, 1, {})
    assert not np.any(assemble_symbol(zero).matrices[0])


def test_symbol_matches_test_polynomial(rng):
    # A applied to b <x, a>^2 / 2 gives the symbol at the dyad b a (x) a
    op = OperatorFamily.scalar([{(2, 0): 1.0, (1, 1): 2.0}, {(0, 2): -3.0}])
    sym = assemble_symbol(op)
    for a in rng.standard_normal((5, 2)):
        dyad = np.array([a[0] ** 2, a[0] * a[1], a[1] ** 2])
        expected = [a[0] ** 2 + 2 * a[0] * a[1], -3 * a[1] ** 2]
        np.testing.assert_allclose(sym(dyad), expected, atol=1e-12)


def test_operator_validation():
    with pytest.raises(ValueError):
        OperatorFamily(2, 2, 1, 1, {(1, 0): np.ones((1, 1))})
    with pytest.raises(ValueError):
        OperatorFamily(2, 2, 1, 1, {(2, 0): np.full((1, 1), np.nan)})


def test_operator_json_round_trip():
    box = Box(np.zeros(2), np.array([0.5, 1.0]))
    op = OperatorFamily(2, 2, 1, 1, {}, pieces=[(box, {(2, 0): np.ones((1, 1))}),
                                              (Box(np.array([0.5, 0.0]), np.ones(2)), {(0, 2): np.ones((1, 1))})])
    back = OperatorFamily.from_dict(op.to_dict())
    assert back.to_dict() == op.to_dict()
    assert len(assemble_symbol(back).matrices) == 2


def test_factorize_classical_pair_has_kernel_witness():
    fac = factorize(A1, A2)
    piece = fac.pieces[0]
    assert not fac.factors and piece.C is None
    w = piece.witness / piece.witness[1]
    np.testing.assert_allclose(w, [0.0, 1.0, 0.0], atol=1e-12)
    assert fac.norm == math.inf


def test_factorize_identity_and_difference():
    fac = factorize(A1, A1)
    np.testing.assert_allclose(fac.pieces[0].C, np.eye(2), atol=1e-12)
    assert fac.norm == pytest.approx(1.0, abs=1e-12)
    fac = factorize(A1, DIFF, c_bound=1.5)
    np.testing.assert_allclose(fac.pieces[0].C, [[1.0, -1.0]], atol=1e-12)
    assert abs(fac.norm - math.sqrt(2)) <= 1e-9
    assert fac.holds
    assert factorize(A1, DIFF, c_bound=1.4).holds is False


def test_factorize_piecewise_is_conjunction():
    left, right = Box(np.zeros(2), np.array([0.5, 1.0])), Box(np.array([0.5, 0.0]), np.ones(2))
    mixed = OperatorFamily(2, 2, 1, 1, {}, pieces=[(left, DIFF.coeffs), (right, A2.coeffs)])
    fac = factorize(A1, mixed)
    assert fac.pieces[0].C is not None and fac.pieces[1].C is None
    assert not fac.factors


def test_pointwise_examples():
    v = pointwise_criterion(integrand(A1, A2, 10.0))
    assert not v.nonnegative
    # F >= -|xi_12| >= -1 on the unit sphere, with equality on the xi_12 axis
    assert v.minimum == pytest.approx(-1.0, abs=1e-6)
    np.testing.assert_allclose(np.abs(v.witness), [0.0, 1.0, 0.0], atol=1e-3)
    assert pointwise_criterion(ScalarField(lambda x: np.linalg.norm(x[..., [0, 2]], axis=-1), 3)).nonnegative
    zero = pointwise_criterion(ScalarField(lambda x: np.zeros(x.shape[:-1]), 3))
    assert zero.nonnegative and zero.minimum == 0.0
    with pytest.raises(ValueError):
        pointwise_criterion(ScalarField(lambda x: x[..., 0], 3))


def random_pair(rng, factorizable):
    m1 = rng.standard_normal((2, 3))
    if factorizable:
        m2 = rng.standard_normal((1, 2)) @ m1
    else:
        m2 = rng.standard_normal((1, 3))
    alphas = [(2, 0), (1, 1), (0, 2)]
    op1 = OperatorFamily(2, 2, 1, 2, {a: m1[:, [i]] for i, a in enumerate(alphas)})
    op2 = OperatorFamily(2, 2, 1, 1, {a: m2[:, [i]] for i, a in enumerate(alphas)})
    return op1, op2


def test_pointwise_agrees_with_factorization(rng):
    for i in range(20):
        op1, op2 = random_pair(rng, factorizable=i % 2 == 0)
        fac = factorize(op1, op2)
        c = 1.25 * fac.norm if fac.factors else 5.0
        for cc in ([c, 0.8 * fac.norm] if fac.factors else [c]):
            verdict = pointwise_criterion(integrand(op1, op2, cc), starts=50)
            assert verdict.nonnegative == bool(factorize(op1, op2, cc).holds), (i, cc)


def test_symbol_matrix_layout():
    M = symbol_matrix(2, 2, 1, 2, A1.coeffs)
    np.testing.assert_array_equal(M, [[1, 0, 0], [0, 0, 1]])


def test_blowup_refuses_when_inequality_holds():
    with pytest.raises(ValueError):
        blowup_sequence(A1, DIFF, 2.0)


def test_blowup_classical_c04():
    res = blowup_sequence(A1, A2, 0.4, eps_list=(0.05,), grid=1024)
    assert res.status == "certified"
    assert res.steps[0].ratio >= 0.45
    assert res.best_ratio <= 0.5 + 1e-9


def test_blowup_c049_with_small_eps():
    res = blowup_sequence(A1, A2, 0.49, eps_list=(0.02,), grid=4096)
    assert res.status == "certified" and res.steps[0].ratio > 0.49


def test_blowup_c06_undetermined_at_depth_one():
    # a single split gives ratio at most 1/2 in the l1 convention
    res = blowup_sequence(A1, A2, 0.6, depth=1)
    assert res.status == "undetermined at depth 1"
    assert res.tree is None and res.laminate_value >= 0


def test_blowup_c06_depth_three_laminate():
    F = integrand(A1, A2, 0.6, norm="l1")
    res = blowup_sequence(A1, A2, 0.6, depth=3, eps_list=(0.2,))
    res.tree.check()
    # the leaves themselves, not the interpolated grid, carry a negative average
    assert res.tree.value(F) < -0.01
    leaves = res.tree.leaves()
    z = sum(w * abs(t[1]) for t, w in leaves)
    xy = sum(w * (abs(t[0]) + abs(t[2])) for t, w in leaves)
    assert z / xy > 0.6
    assert res.status == "certified" and res.steps[0].ratio > 0.6

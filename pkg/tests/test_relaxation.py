import numpy as np
import pytest

from semicone.cones import DirectionCone
from semicone.dconvexity import check_dconvex
from semicone.fields import Box, ScalarField, quadratic_field, sym2_frobenius, weighted_norm_field
from semicone.ornstein import classical_pair, integrand
from semicone.relaxation import (LaminateNode, LaminateTree, certify_unbounded, detect_neg_infinity, envelope,
                                 hessian_demo_data, lamination_step, GridFunction, lattice_for, realize_laminate,
                                 step_set)
from semicone.tensor_core import SymTensor

SYM2 = DirectionCone.symmetric_dyad(2)
P = np.array([0.5, 0.5, 0.5])  # (1,1) (x) (1,1) / 2, a unit rank-one direction


def f_c(c):
    return integrand(*classical_pair(), c, norm="l1")


def fresh_grid(F, region, spacing):
    lo, shape = lattice_for(region, spacing)
    return GridFunction(F, lo, spacing, np.zeros(shape), np.zeros(shape, dtype=bool), False, 1.0)


def test_step_set():
    assert step_set(4) == [1, 2, 3, 4]
    assert step_set(20) == [1, 2, 3, 4, 8, 16, 20]


def test_one_step_of_f04_reaches_split_value():
    F = f_c(0.4)
    G = fresh_grid(F, Box.cube(3, 2.5), 0.25)
    res = lamination_step(G, SYM2, dirs=16, reach=8)
    # 1/2 F(2P) + 1/2 F(-2P) = 2 (0.4 - 0.5) = -0.2
    assert res.grid(np.zeros((1, 3)))[0] <= -0.2 + 1e-12
    assert np.all(res.grid.delta >= 0)


def test_step_never_increases():
    F = f_c(0.4)
    G = fresh_grid(F, Box.cube(3, 1.0), 0.25)
    once = lamination_step(G, SYM2, dirs=8, reach=4).grid
    twice = lamination_step(once, SYM2, dirs=8, reach=4).grid
    assert np.all(twice.node_values() <= once.node_values())
    assert np.all(once.node_values() <= F(G.nodes()).reshape(G.shape))


def test_convex_quadratic_is_fixed_point():
    F = quadratic_field(np.diag([1.0, 2.0, 1.0]))
    res = envelope(F, SYM2, Box.cube(3, 1.0), spacing=0.05, max_sweeps=2, dirs=8)
    assert res.grid.delta.max() <= 1e-3
    assert res.converged


def test_convex_homogeneous_agrees_with_full_grid():
    F = ScalarField(sym2_frobenius, 3, homogeneous=True)
    full = envelope(F, SYM2, Box.cube(3, 1.0), spacing=0.1, max_sweeps=2, dirs=8)
    homog = envelope(F, SYM2, spacing=0.1, max_sweeps=2, dirs=8, homogeneous=True)
    pts = full.grid.nodes()
    np.testing.assert_allclose(homog.grid(pts), full.grid(pts), atol=2e-6)


def test_two_wells_envelope_vanishes_at_zero():
    F = ScalarField(lambda v: np.minimum(np.linalg.norm(v - P, axis=-1), np.linalg.norm(v + P, axis=-1)), 3)
    res = envelope(F, SYM2, Box.cube(3, 1.5), spacing=0.125, max_sweeps=5, dirs=16, reach=8)
    assert res.grid(np.zeros((1, 3)))[0] == pytest.approx(0.0, abs=1e-12)
    assert F(np.zeros(3)) > 0.5


def test_envelope_trees_match_grid_values():
    F = f_c(0.4)
    res = envelope(F, SYM2, Box.cube(3, 2.0), spacing=0.25, max_sweeps=2, dirs=16, reach=8, queries=[(0, 0, 0)])
    tree = res.trees["0,0,0"]
    tree.check()
    assert tree.depth >= 1
    assert tree.value(F) == pytest.approx(float(res.grid(np.zeros((1, 3)))[0]), abs=1e-9)
    assert res.to_dict()["quantity"] == "laminate upper bound"


def test_envelope_is_dconvex_up_to_interpolation():
    F = f_c(0.4)
    res = envelope(F, SYM2, Box.cube(3, 1.0), spacing=0.1, max_sweeps=3, dirs=16, reach=4)
    rep = check_dconvex(res.field, SYM2, Box.cube(3, 0.9))
    assert rep.worst_violation <= 5 * res.grid.interpolation_bound()


def test_detect_neg_infinity():
    v = detect_neg_infinity(f_c(0.4), SYM2)
    assert v.status == "-inf" and v.depth == 1
    assert f_c(0.4)(v.witness) + f_c(0.4)(-v.witness) < 0
    assert detect_neg_infinity(weighted_norm_field([1.0, 2.0, 1.0]), SYM2).status == "finite"
    v = detect_neg_infinity(f_c(0.6), SYM2)
    assert v.status == "undetermined" and "depth 1" in v.message


def test_certify_unbounded_examples():
    F, mu0, d, e = hessian_demo_data()
    w = certify_unbounded(F, mu0, d, -10.0, e)
    t = w.t_star
    norm = lambda v: -F(v.vector)  # noqa: E731
    assert norm(mu0 + d * t) + norm(mu0 - d * t) > 20
    assert w.value < -10.0
    # M = F(mu0): the first strict drop happens at a tiny t
    M = F(mu0.vector)
    w = certify_unbounded(F, mu0, d, M, e)
    assert w.value < M and w.t_star < 1e-3
    with pytest.raises(ValueError):
        certify_unbounded(F, mu0, d * 0.0, -10.0, e)
    with pytest.raises(ValueError):
        certify_unbounded(F, SymTensor.from_full(np.eye(3)), d, -10.0, e)


def test_certify_unbounded_linear_growth():
    F, mu0, d, e = hessian_demo_data()
    ts = [certify_unbounded(F, mu0, d, M, e).t_star for M in (-1e3, -1e6)]
    slope = (ts[1] - ts[0]) / (1e6 - 1e3)
    assert slope == pytest.approx(1 / d.norm(), rel=0.2)


def split(point, lam, plus, minus, weight=1.0):
    return LaminateNode(np.asarray(point, float), weight, lam, plus, minus)


def leaf(point, weight):
    return LaminateNode(np.asarray(point, float), weight)


def test_realize_leaf_and_depth_one():
    F = f_c(0.4)
    rep = realize_laminate(LaminateTree(leaf(P, 1.0), (2, 2, 1)), F)
    assert rep.gap == 0.0 and rep.passed
    tree = LaminateTree(split(np.zeros(3), 0.5, leaf(P, 0.5), leaf(-P, 0.5)), (2, 2, 1))
    rep = realize_laminate(tree, F, eps=0.1, grid=1024)
    assert rep.tree_value == pytest.approx(-0.1)
    assert rep.passed and rep.gap <= 0.1


def test_realize_depth_two():
    F = f_c(0.4)
    Q = np.array([0.5, -0.5, 0.5])  # (1,-1) (x) (1,-1) / 2
    inner = split(P, 0.5, leaf(P + Q, 0.25), leaf(P - Q, 0.25), weight=0.5)
    tree = LaminateTree(split(np.zeros(3), 0.5, inner, leaf(-P, 0.5)), (2, 2, 1))
    tree.check()
    assert tree.depth == 2
    rep = realize_laminate(tree, F, eps=0.1, grid=512)
    assert rep.passed, rep.to_dict()


def test_realize_rejects_deep_trees():
    node = leaf(P, 1.0 / 32)
    for _ in range(5):
        node = split(node.tensor, 0.5, node, leaf(node.tensor - 2 * P, node.weight), weight=2 * node.weight)
    with pytest.raises(ValueError):
        realize_laminate(LaminateTree(node, (2, 2, 1)), f_c(0.4))


def test_tree_check_rejects_bad_split():
    tree = LaminateTree(split(np.zeros(3), 0.5, leaf([1.0, 0, -1.0], 0.5), leaf([-1.0, 0, 1.0], 0.5)), (2, 2, 1))
    with pytest.raises(AssertionError):
        tree.check()

import math

import numpy as np
import pytest

from semicone.fields import Box, ScalarField
from semicone.laminate import (build_cutoff, build_oscillation, build_profile, eval_derivatives, growth_bound_violations,
                               integrate_energy, rescale_periodic, rescale_threshold, verify_split, weak_star_decay)
from semicone.tensor_core import SymTensor, dyad, eval_tensor

UNIT = Box.cube(2, 0.5, center=[0.5, 0.5])
A = np.ones(2) / math.sqrt(2)


def symmetric_pair():
    eta = dyad(0.5, 1.0, A, 2)
    return eta * -1.0, eta


@pytest.fixture(scope="module")
def oscillation():
    xi, eta = symmetric_pair()
    return build_oscillation(xi, eta, 0.5, 0.1, UNIT, grid=512)


@pytest.mark.parametrize("lam", [0.25, 0.5, 0.75, 2 / 3])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_profile_properties(lam, k):
    eps = 0.1
    p = build_profile(lam, eps, k)
    assert abs(p.integral()) <= 1e-10
    assert p.I_xi.length > (1 - eps / 2) * lam
    assert p.I_eta.length > (1 - eps / 2) * (1 - lam)
    t = np.linspace(0, 1, 20_001)
    h = p(t)
    assert h.min() >= lam - 1 - 1e-12 and h.max() <= lam + 1e-12
    np.testing.assert_allclose(h[p.I_xi.contains(t)], lam - 1, atol=1e-12)
    np.testing.assert_allclose(h[p.I_eta.contains(t)], lam, atol=1e-12)


def test_profile_primitives_differentiate():
    p = build_profile(0.25, 0.05, 3)
    t = np.linspace(-3.0, 3.0, 101)
    step = 1e-6
    for level in (1, 2, 3):
        fd = (p(t + step, level) - p(t - step, level)) / (2 * step)
        np.testing.assert_allclose(fd, p(t, level - 1), atol=1e-7)


def test_profile_rejects_bad_width():
    with pytest.raises(ValueError):
        build_profile(0.5, 0.1, mollify_width=0.2)
    with pytest.raises(ValueError):
        build_profile(1.2, 0.1)


def test_growth_bound_quarter():
    p = build_profile(0.25, 0.05, 2)
    rng = np.random.default_rng(0)
    ts = np.concatenate([rng.uniform(-1000, 1000, 9000), rng.uniform(-2, 2, 1000)])
    assert growth_bound_violations(p, 2, ts) == 0
    assert np.all(np.abs(p(ts, 1)) <= p.sup_norms[1] + 1e-12)


def test_cutoff():
    cut = build_cutoff(Box.cube(2, 0.5, center=[0.5, 0.5]), 0.1)
    plateau = cut.plateau
    assert np.prod(plateau.hi - plateau.lo) >= 0.95
    x = plateau.lo + (plateau.hi - plateau.lo) * np.random.default_rng(1).random((100, 2))
    for d in range(2):
        np.testing.assert_allclose(cut.axis(x[:, d], d, 0), 1.0)
        np.testing.assert_allclose(cut.axis(x[:, d], d, 1), 0.0, atol=1e-12)
    assert all(np.isfinite(cut.sup_norms))


def test_oscillation_volumes_and_distance(oscillation):
    rep = oscillation.report
    assert rep.passed
    assert rep.volume_xi / rep.omega_volume >= 0.45
    assert rep.volume_xi > 0.9 * 0.5 and rep.volume_eta > 0.9 * 0.5
    assert rep.dist_sup < 0.1
    assert max(rep.lower_sups) < 0.1


def test_verify_split_independent(oscillation):
    xi, eta = symmetric_pair()
    rep = verify_split(oscillation.phi, xi, eta, 0.5, 0.1, 256)
    assert rep.passed


def test_rejects_non_rank_one_difference():
    xi = SymTensor.zeros(2, 2)
    eta = SymTensor.from_full(np.eye(2))
    with pytest.raises(ValueError):
        build_oscillation(xi, eta, 0.5, 0.1, UNIT)


def test_plateau_derivative_formula(oscillation):
    phi = oscillation.phi
    plateau = phi.cutoff.plateau
    x = plateau.lo + (plateau.hi - plateau.lo) * np.random.default_rng(2).random((20, 2))
    for p in x:
        got = eval_derivatives(phi, p, 2) - phi.base
        h = phi.profile(phi.j * (p @ phi.a))
        np.testing.assert_allclose(got.coeffs, dyad(float(h), phi.b, phi.a, 2).coeffs, atol=1e-10)


def test_derivatives_match_finite_differences(oscillation):
    phi = oscillation.phi
    rng = np.random.default_rng(3)
    step = 1e-6
    for p in 0.05 + 0.9 * rng.random((20, 2)):
        h = rng.standard_normal(2)
        h /= np.linalg.norm(h)
        for l in (1, 2):
            lower_plus = eval_derivatives(phi, p + step * h, l - 1)
            lower_minus = eval_derivatives(phi, p - step * h, l - 1)
            if l == 1:
                fd = (lower_plus - lower_minus) / (2 * step)
            else:
                fd = (eval_tensor(lower_plus, h) - eval_tensor(lower_minus, h)) / (2 * step)
            exact = eval_tensor(eval_derivatives(phi, p, l), *([h] * l))
            assert np.allclose(fd, exact, rtol=1e-6, atol=1e-6 * (1 + np.abs(exact).max()))


def test_rescale_periodic(oscillation):
    phi = oscillation.phi
    J = rescale_threshold(phi, 0.5, 0.1)
    psi, rep = rescale_periodic(phi, J, 0.5)
    assert max(rep.lower_sups) < 0.1
    assert rep.holder_seminorm <= 0.1
    with pytest.raises(ValueError):
        rescale_periodic(phi, J, 1.5)


def test_rescale_preserves_energy(oscillation):
    phi = oscillation.phi
    F = ScalarField(lambda v: np.sqrt(1 + np.sum(v * v, axis=-1)) + v[..., 1] ** 3, 3)
    xi = SymTensor.zeros(2, 2)
    psi, _ = rescale_periodic(phi, 2, 0.5, pairs=100)
    # the midpoint grid of the rescaled map lands on the coarse grid of the original cell
    e_phi = integrate_energy(F, xi, phi, 128)
    e_psi = integrate_energy(F, xi, psi, 512)
    assert e_psi.fine == pytest.approx(e_phi.fine, abs=1e-6)


def test_energy_trivial_cases(oscillation):
    phi = oscillation.phi
    F = ScalarField(lambda v: 1 + v[..., 0] ** 2, 3)
    xi = SymTensor.from_vector(np.array([0.3, 0.1, -0.2]), 2, 2)
    assert integrate_energy(F, xi, None, 16, omega=UNIT).value == pytest.approx(F(xi.vector), rel=1e-12)



def test_linear_energy_cancels():
    # a coarse split keeps j = 33 so the grid resolves the stripes; the midpoint error is O((j h)^2)
    xi, eta = symmetric_pair()
    phi = build_oscillation(xi, eta, 0.5, 0.8, UNIT, verify=False).phi
    assert phi.j == 33
    zeta = np.array([1.0, -2.0, 0.5])
    lin = ScalarField(lambda v: v @ zeta, 3)
    base = SymTensor.from_vector(np.array([0.3, 0.1, -0.2]), 2, 2)
    res = integrate_energy(lin, base, phi, 2048)
    assert res.fine == pytest.approx(lin(base.vector), abs=1e-6)


def test_energy_f04(oscillation):
    def f_c(v, c=0.4):
        return c * (np.abs(v[..., 0]) + np.abs(v[..., 2])) - np.abs(v[..., 1])

    F = ScalarField(f_c, 3)
    _, eta = symmetric_pair()
    val = integrate_energy(F, SymTensor.zeros(2, 2), oscillation.phi, 1024).value
    # F takes the same value at both ends, so the plateaus carry F(eta) up to a fraction eps of the area
    assert F(eta.vector) == pytest.approx(-0.05)
    assert val <= (1 - 0.1) * F(eta.vector)


def test_weak_star_slope():
    p = build_profile(0.25, 0.1, 1)
    vals, slope = weak_star_decay(p, [8, 16, 32, 64, 128, 256], np.exp)
    # at least first order; the centred phase cancels the 1/j term and leaves 1/j^2
    assert slope <= -1.0 + 0.15
    assert abs(vals[-1]) < 1e-6

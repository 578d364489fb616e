"""Reproducible experiment batteries shared by the command line and the acceptance tests.

Every function returns plain rows (dicts) plus a pass flag, so the same
numbers end up in CSV files, in printed summaries and in assertions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cones import DirectionCone
from .dconvexity import check_dconvex, keybound_check, recession_field
from .fields import Box, ScalarField, cubic_perturbed_frobenius, sym2_frobenius, sym2_suite
from .laminate import build_oscillation, build_profile, growth_bound_violations
from .ornstein import OperatorFamily, blowup_sequence, classical_pair, factorize, integrand, symbol_matrix
from .relaxation import certify_unbounded, envelope, hessian_demo_data
from .subdifferential import CertificateRefused, subgradient_at
from .tensor_core import SymTensor, dyad


@dataclass
class Outcome:
    name: str
    passed: bool
    summary: str
    rows: list = field(default_factory=list)
    seconds: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


SYM2 = DirectionCone.symmetric_dyad(2)


def beta_integrand(beta: float = 0.5) -> ScalarField:
    """|xi| - beta |xi_12|: 1-homogeneous, not rank-one convex, bounded below by a norm for beta < sqrt 2."""
    return ScalarField(lambda v: sym2_frobenius(v) - beta * np.abs(np.asarray(v)[..., 1]), 3, homogeneous=True,
                       name=f"beta_{beta:g}")


def beta_envelope(beta: float = 0.5, spacing: float = 0.1, sweeps: int = 30):
    return envelope(beta_integrand(beta), SYM2, spacing=spacing, max_sweeps=sweeps, reach=8, homogeneous=True)


def reflected_cubic_envelope(sweeps: int = 4) -> ScalarField:
    """Envelope output for x -> f(-x), f the cubic perturbation: rank-one convex, not convex, so a fixed point."""
    base = cubic_perturbed_frobenius()
    g = ScalarField(lambda v: base(-np.asarray(v, dtype=float)), 3, homogeneous=True, name="cubic_reflected")
    env = envelope(g, SYM2, spacing=0.1, max_sweeps=sweeps, reach=8, homogeneous=True)
    return env.grid.as_field("cubic_reflected_envelope")


def certificate_functions(scale: str = "full") -> list[ScalarField]:
    return sym2_suite() + [cubic_perturbed_frobenius(), reflected_cubic_envelope()]


@_timed
def certificates(scale: str = "full", points: int = 20, n_samples: int = 100_000, seed: int = 0,
                 diagnostic: bool = False) -> Outcome:
    """Supporting functionals at rank-one points for 10 homogeneous rank-one convex functions."""
    rows, ok = [], True
    for f in certificate_functions(scale):
        xs = SYM2.sample_unit(points, 500 + seed) * np.linspace(0.5, 2.0, points)[:, None]
        for i, x0 in enumerate(xs):
            try:
                c = subgradient_at(f, SYM2, x0, n_samples=n_samples)
                row = {"function": f.name, "point": i, "touch_residual": c.touch_residual,
                       "min_slack": c.min_slack, "attempts": c.attempts, "refused": False}
            except CertificateRefused as err:
                row = {"function": f.name, "point": i, "touch_residual": float("nan"),
                       "min_slack": err.min_slack, "attempts": -1, "refused": True}
            good = (not row["refused"]) and row["touch_residual"] <= 1e-9 and row["min_slack"] >= -1e-7
            ok &= good
            rows.append(row | {"passed": good})
    worst_touch = max(r["touch_residual"] for r in rows)
    worst_slack = min(r["min_slack"] for r in rows)
    summary = f"{len(rows)} certificates, max touch {worst_touch:.2e}, min slack {worst_slack:.2e}"
    if diagnostic:
        # the interpolated envelope of a non-rank-one-convex integrand is only approximately
        # rank-one convex; report how the certificate fares without counting it
        env = beta_envelope(sweeps=30 if scale == "full" else 4).grid.as_field("beta_0.5_envelope")
        refused = 0
        for x0 in SYM2.sample_unit(points, 500 + seed) * np.linspace(0.5, 2.0, points)[:, None]:
            try:
                subgradient_at(env, SYM2, x0, n_samples=10_000)
            except Exception:
                refused += 1
        summary += f"; beta_0.5 envelope diagnostic: {refused}/{points} refused"
    return Outcome("certificates", ok, summary, rows)


def laminate_configs(scale: str = "full"):
    eps_list = (0.2, 0.1, 0.05) if scale == "full" else (0.2,)
    for n, k in ((2, 1), (2, 2), (3, 2)):
        for lam in (0.25, 0.5, 0.75):
            for eps in eps_list:
                yield n, k, lam, eps


def laminate_pair(n: int, k: int, seed: int = 0) -> tuple[SymTensor, SymTensor]:
    """Fixed xi and eta = xi + b (x) a^k for the suite; k = 1 uses 2-vector-valued maps."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 601 + 10 * n + k]))
    dim_y = 2 if k == 1 else 1
    xi = SymTensor.random(n, k, dim_y, rng)
    a = rng.standard_normal(n)
    a /= np.linalg.norm(a)
    b = rng.standard_normal(dim_y)
    return xi, xi + dyad(1.0, b, a, k)


@_timed
def laminate_suite(scale: str = "full", seed: int = 0) -> Outcome:
    rows, ok = [], True
    for n, k, lam, eps in laminate_configs(scale):
        xi, eta = laminate_pair(n, k, seed)
        omega = Box(np.zeros(n), np.ones(n))
        osc = build_oscillation(xi, eta, lam, eps, omega)
        rep = osc.report
        frac_xi = rep.volume_xi / ((1 - eps) * lam * rep.omega_volume)
        frac_eta = rep.volume_eta / ((1 - eps) * (1 - lam) * rep.omega_volume)
        good = bool(rep.passed and frac_xi > 1 and frac_eta > 1 and rep.dist_sup < eps
                    and max(rep.lower_sups, default=0.0) < eps)
        ok &= good
        rows.append({"n": n, "k": k, "lambda": lam, "eps": eps, "j": osc.phi.j, "grid": rep.grid,
                     "volume_xi": rep.volume_xi, "volume_eta": rep.volume_eta,
                     "bound_xi": (1 - eps) * lam * rep.omega_volume,
                     "bound_eta": (1 - eps) * (1 - lam) * rep.omega_volume,
                     "volume_error": rep.volume_error, "dist_sup": rep.dist_sup,
                     "lower_sup": max(rep.lower_sups, default=0.0), "passed": good})
    return Outcome("laminate_suite", ok, f"{sum(r['passed'] for r in rows)}/{len(rows)} configurations pass", rows)


@_timed
def growth_bounds(samples: int = 10_000, seed: int = 0) -> Outcome:
    rng = np.random.Generator(np.random.Philox(key=[seed, 602]))
    rows = []
    for k in (1, 2, 3):
        for lam in (0.25, 0.5, 0.75):
            for eps in (0.2, 0.1, 0.05):
                p = build_profile(lam, eps, k)
                ts = rng.uniform(-1000.0, 1000.0, samples)
                ts[: samples // 10] = rng.uniform(-2.0, 2.0, samples // 10)
                rows.append({"k": k, "lambda": lam, "eps": eps, "samples": samples,
                             "violations": growth_bound_violations(p, k, ts)})
    bad = sum(r["violations"] for r in rows)
    return Outcome("growth_bounds", bad == 0, f"{len(rows)} profiles, {bad} violations", rows)


@_timed
def ornstein_classical(c: float = 0.4, eps: float = 0.05, grid: int = 4096) -> Outcome:
    A1, A2 = classical_pair()
    fac = factorize(A1, A2, c)
    witness = fac.pieces[0].witness
    res = blowup_sequence(A1, A2, c, depth=1, eps_list=(eps,), grid=grid)
    ratio = res.steps[0].ratio if res.steps else float("nan")
    ok = (not fac.factors) and witness is not None and ratio >= 0.45
    rows = [{"c": c, "eps": eps, "grid": grid, "factors": fac.factors,
             "witness": None if witness is None else witness.tolist(), "ratio": ratio,
             "j": res.steps[0].j if res.steps else -1}]
    return Outcome("ornstein_classical", ok, f"kernel witness {np.round(witness, 12).tolist()}, "
                   f"measured ratio {ratio:.6f} (ideal 0.5)", rows)


def gaussian_bumps(rng, count: int = 3):
    """phi = sum_i w_i exp(-|x - c_i|^2 / s_i^2) with its exact second derivatives (xx, xy, yy)."""
    c = rng.uniform(0.3, 0.7, (count, 2))
    s = rng.uniform(0.05, 0.15, count)
    w = rng.standard_normal(count)

    def hess(x):
        out = np.zeros((len(x), 3))
        for ci, si, wi in zip(c, s, w):
            d = x - ci
            g = wi * np.exp(-np.sum(d * d, axis=1) / si**2)
            out[:, 0] += g * (4 * d[:, 0] ** 2 / si**4 - 2 / si**2)
            out[:, 1] += g * (4 * d[:, 0] * d[:, 1] / si**4)
            out[:, 2] += g * (4 * d[:, 1] ** 2 / si**4 - 2 / si**2)
        return out

    return hess


@_timed
def ornstein_factorization(maps: int = 50, grid: int = 256, seed: int = 0) -> Outcome:
    A1, _ = classical_pair()
    A2 = OperatorFamily.scalar({(2, 0): 1.0, (0, 2): -1.0})
    fac = factorize(A1, A2)
    C = fac.pieces[0].C
    norm = fac.norm
    ok = C is not None and np.allclose(C, [[1.0, -1.0]], atol=1e-9) and abs(norm - math.sqrt(2)) <= 1e-9
    M1 = symbol_matrix(2, 2, 1, 2, A1.coeffs)
    M2 = symbol_matrix(2, 2, 1, 1, A2.coeffs)
    g = (np.arange(grid) + 0.5) / grid
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    rng = np.random.Generator(np.random.Philox(key=[seed, 603]))
    rows = []
    for i in range(maps):
        H = gaussian_bumps(rng)(X)
        lhs = float(np.sum(np.abs(H @ M2.T))) / grid**2
        rhs = float(np.sum(np.linalg.norm(H @ M1.T, axis=1))) / grid**2
        good = lhs <= norm * rhs * (1 + 1e-6)
        ok &= good
        rows.append({"map": i, "A2_l1": lhs, "A1_l1": rhs, "ratio": lhs / rhs, "passed": good})
    worst = max(r["ratio"] for r in rows)
    return Outcome("ornstein_factorization", bool(ok), f"C = {np.round(C, 12).tolist()}, |C| = {norm:.15f}, "
                   f"worst ratio {worst:.6f} over {maps} maps", rows)


@_timed
def envelope_sanity(tol: float = 1e-6) -> Outcome:
    F = integrand(*classical_pair(), 0.4, norm="l1")
    res = envelope(F, SYM2, Box.cube(3, 4.0), spacing=0.1, max_sweeps=1, tol=tol, reach=32)
    at0 = float(res.grid(np.zeros((1, 3)))[0])
    rows = [{"function": "F_0.4", "value_at_0": at0, "max_decrease": res.trace[0]["max_decrease"]}]
    ok = at0 <= -0.19
    for f in sym2_suite():
        r = envelope(f, SYM2, Box.cube(3, 2.0), spacing=0.2, max_sweeps=3, tol=tol, reach=4)
        dec = float(r.grid.delta.max())
        ok &= dec <= 2 * tol
        rows.append({"function": f.name, "value_at_0": float(r.grid(np.zeros((1, 3)))[0]), "max_decrease": dec})
    worst = max(r["max_decrease"] for r in rows[1:])
    return Outcome("envelope_sanity", bool(ok), f"F_0.4 envelope at 0: {at0:.4f}; convex functions moved "
                   f"by at most {worst:.2e}", rows)


@_timed
def hessian_demo(Ms=(-10.0, -1e3, -1e6)) -> Outcome:
    F, mu0, d, e = hessian_demo_data()
    rows = []
    for M in Ms:
        w = certify_unbounded(F, mu0, d, M, e)
        rows.append({"M": M, "t_star": w.t_star, "value": w.value, "predicted": abs(M) / d.norm()})
    ok = all(r["value"] < r["M"] for r in rows)
    absM = np.array([abs(r["M"]) for r in rows])
    ts = np.array([r["t_star"] for r in rows])
    slope = float(np.polyfit(absM, ts, 1)[0])
    ok &= abs(slope * d.norm() - 1) <= 0.2
    return Outcome("hessian_demo", bool(ok), f"t*/|M| slope {slope:.6f}, predicted 1/|d| = {1 / d.norm():.6f}",
                   rows)


@_timed
def self_consistency(segments: int = 1000, samples: int = 100, seed: int = 0, scale: str = "full") -> Outcome:
    """D-convexity, key bound and recession audits of envelope outputs."""
    sweeps = 30 if scale == "full" else 4
    envs = [("beta_0.5", beta_envelope(sweeps=sweeps))]
    for f in sym2_suite()[:2]:
        envs.append((f.name, envelope(f, SYM2, spacing=0.1, max_sweeps=2, reach=8, homogeneous=True)))
    rng = np.random.Generator(np.random.Philox(key=[seed, 604]))
    rows, ok = [], True
    unit = Box.cube(3, 1.0)
    for name, res in envs:
        g = res.grid.as_field(name)
        bound = res.grid.interpolation_bound()
        allowed = 5 * bound
        rep = check_dconvex(g, SYM2, unit, n_segments=segments)
        xs = SYM2.sample_unit(samples, 605) * rng.uniform(0.1, 2.0, samples)[:, None]
        ys = rng.standard_normal((samples, 3))
        kb = max(keybound_check(g, SYM2, x, y) for x, y in zip(xs, ys))
        rec = check_dconvex(recession_field(g), SYM2, unit, n_segments=segments)
        good = rep.worst_violation <= allowed and kb <= 1e-6 and rec.worst_violation <= allowed
        ok &= good
        rows.append({"envelope": name, "interp_bound": bound, "dconvex_worst": rep.worst_violation,
                     "keybound_max": kb, "recession_dconvex_worst": rec.worst_violation,
                     "recession_within_1e-6": rec.worst_violation <= 1e-6, "passed": good})
    return Outcome("self_consistency", bool(ok), "; ".join(
        f"{r['envelope']}: dconvex {r['dconvex_worst']:.2e}/{5 * r['interp_bound']:.2e}, "
        f"keybound {r['keybound_max']:.2e}, recession {r['recession_dconvex_worst']:.2e}" for r in rows), rows)

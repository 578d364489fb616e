"""Directional convexity audits and the quantitative estimates that go with them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cones import DirectionCone
from .fields import Box, ScalarField


@dataclass
class ConvexityReport:
    samples_tested: int
    worst_violation: float
    witness: Optional[dict] = None
    neg_inf: bool = False
    profile: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "samples_tested": self.samples_tested,
            "worst_violation": self.worst_violation,
            "witness": self.witness,
            "neg_inf": self.neg_inf,
        }


def _segment_lengths(x, d, region: Box, cap: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (region.hi - x) / d, np.inf)
        dn = np.where(d < 0, (region.lo - x) / d, np.inf)
    return np.minimum(np.min(np.minimum(up, dn), axis=1), cap)


def check_dconvex(f: ScalarField, cone: DirectionCone, region: Box, n_segments: int = 1000,
                  n_points: int = 8, max_length: Optional[float] = None, stream: int = 11,
                  rtol: float = 1e-12, keep_profile: bool = False) -> ConvexityReport:
    """Midpoint-convexity audit on random segments [x, x + s d], d in the cone.

    On every segment the whole-segment triple (0, 1/2, 1) and all consecutive
    triples of an even subdivision into ``n_points`` pieces are tested.  The
    violation is f(mid) - (f(left) + f(right))/2; values within rounding
    (rtol relative to the sampled |f|) count as zero.
    """
    if f.domain is not None and not f.domain.contains_box(region):
        raise ValueError("region is not inside the declared domain of f")
    if n_points < 2 or n_points % 2:
        raise ValueError("n_points must be even and >= 2")
    rng = cone.rng(stream)
    x = region.sample(rng, n_segments)
    d = cone.sample_unit(n_segments, stream)
    cap = max_length if max_length is not None else float(np.max(region.hi - region.lo))
    s = _segment_lengths(x, d, region, cap)
    t = np.linspace(0.0, 1.0, n_points + 1)
    pts = x[:, None, :] + (s[:, None] * t[None, :])[:, :, None] * d[:, None, :]
    vals = f(pts)
    neg_inf = bool(np.any(np.isneginf(vals)))
    with np.errstate(invalid="ignore"):
        local = vals[:, 1:-1] - 0.5 * (vals[:, :-2] + vals[:, 2:])
        whole = vals[:, n_points // 2] - 0.5 * (vals[:, 0] + vals[:, -1])
    viol = np.column_stack([whole, local])
    viol = np.where(np.isfinite(viol), viol, -np.inf)
    finite = vals[np.isfinite(vals)]
    snap = rtol * (1.0 + (np.abs(finite).max() if finite.size else 0.0))
    worst_idx = np.unravel_index(int(np.argmax(viol)), viol.shape)
    worst = float(viol[worst_idx])
    witness = None
    if worst > snap:
        i, j = worst_idx
        if j == 0:
            a, b = 0, n_points
        else:
            a, b = j - 1, j + 1
        witness = {"x": pts[i, a], "y": pts[i, b], "direction": d[i], "violation": worst}
    elif worst > 0:
        worst = 0.0
    profile = []
    if keep_profile:
        profile = [(i, float(s[i] * tt), float(v)) for i in range(n_segments) for tt, v in zip(t, vals[i])]
    return ConvexityReport(int(viol.size), worst, witness, neg_inf, profile)


@dataclass
class LipschitzEstimate:
    L: float
    c: float
    c0: float
    oscillation: float
    neg_inf: bool = False

    def to_dict(self):
        return self.__dict__.copy()


def norm_equivalence_constant(cone: DirectionCone, basis: np.ndarray, m: int = 10_000,
                              stream: int = 21) -> float:
    """Smallest sampled c >= 1 with (1/c) sum|t| <= ||sum t_j e_j|| <= c sum|t|."""
    rng = cone.rng(stream)
    t = rng.standard_normal((m, len(basis)))
    ratio = cone.norm(t @ basis) / np.sum(np.abs(t), axis=1)
    return float(max(1.0, ratio.max(), 1.0 / ratio.min()))


def sample_ball(cone: DirectionCone, center, radius: float, m: int, stream: int) -> np.ndarray:
    """Points in the cone-norm ball; half of them on the boundary sphere."""
    rng = cone.rng(stream)
    center = np.asarray(center, dtype=float)
    u = rng.standard_normal((m, len(center)))
    u /= cone.norm(u)[:, None]
    rad = radius * rng.random(m) ** (1.0 / len(center))
    rad[: m // 2] = radius
    return center + rad[:, None] * u


def lipschitz_estimate(f: ScalarField, cone: DirectionCone, center, r: float,
                       m: int = 10_000, stream: int = 22) -> LipschitzEstimate:
    """L = (c0 / r) osc(f, B_2r(center)) with c0 = c n max(1, c)."""
    basis = cone.spanning_basis()
    basis = basis / cone.norm(basis)[:, None]
    c = norm_equivalence_constant(cone, basis)
    c0 = c * cone.dim * max(1.0, c)
    pts = sample_ball(cone, center, 2 * r, m, stream)
    vals = f(pts)
    if not np.all(np.isfinite(vals)):
        return LipschitzEstimate(float("nan"), c, c0, float("inf"), neg_inf=True)
    osc = float(vals.max() - vals.min())
    return LipschitzEstimate(c0 * osc / r, c, c0, osc)


def empirical_lipschitz(f: ScalarField, cone: DirectionCone, center, r: float, m: int = 10_000,
                        stream: int = 23) -> float:
    """Max difference quotient over random pairs in B_r(center)."""
    x = sample_ball(cone, center, r, m, stream)
    y = sample_ball(cone, center, r, m, stream + 1)
    dist = cone.norm(x - y)
    ok = dist > 1e-12
    return float(np.max(np.abs(f(x[ok]) - f(y[ok])) / dist[ok]))


@dataclass
class RecessionResult:
    value: float
    converged: bool
    ladder: list

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {"value": self.value, "converged": self.converged, "ladder": self.ladder}


def _extrapolate(v: np.ndarray):
    """Limit of the last three ladder values (Aitken form of Richardson)."""
    v1, v2, v3 = v[..., -3], v[..., -2], v[..., -1]
    d1, d2 = v2 - v1, v3 - v2
    den = d2 - d1
    with np.errstate(divide="ignore", invalid="ignore"):
        ext = v3 - d2 * d2 / den
    bad = ~np.isfinite(ext) | (np.abs(den) < 1e-300) | (np.abs(ext - v3) > 10 * np.abs(d2))
    ext = np.where(bad, v3, ext)
    conv = np.abs(d2) < 1e-6 * np.maximum(1.0, np.abs(v3))
    return ext, conv


def recession_values(f: ScalarField, x, t_max: float = 1e8, levels: int = 30):
    """Batched radial recession f(t x)/t, t = t_max 2^-i; returns (value, converged, ladder)."""
    x = np.asarray(x, dtype=float)
    t = t_max * 2.0 ** -np.arange(levels - 1, -1, -1)
    pts = t[:, None] * x[..., None, :]
    ladder = f(pts) / t
    neg = np.any(np.isneginf(ladder), axis=-1)
    ext, conv = _extrapolate(ladder)
    ext = np.where(neg, -np.inf, ext)
    return ext, conv & ~neg, ladder


def recession(f: ScalarField, x, t_max: float = 1e8, levels: int = 30) -> RecessionResult:
    value, conv, ladder = recession_values(f, np.asarray(x, dtype=float)[None, :], t_max, levels)
    return RecessionResult(float(value[0]), bool(conv[0]), ladder[0].tolist())


def recession_field(f: ScalarField, t_max: float = 1e8, levels: int = 30) -> ScalarField:
    def g(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        return recession_values(f, flat, t_max, levels)[0].reshape(x.shape[:-1])

    return ScalarField(g, f.dim, homogeneous=True, name=f"recession({f.name})")


def keybound_check(f: ScalarField, cone: DirectionCone, x, y, **rec_kw) -> float:
    """Residual f(x + y) - (f_inf(x) + f(y)) for x in the cone; <= 0 for D-convex f."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not cone.membership(x):
        raise ValueError("x is not a member of the cone")
    return float(f(x + y) - (recession(f, x, **rec_kw).value + f(y)))


# quadratic forms ----------------------------------------------------------------

def _quadratic_rows(d: np.ndarray) -> np.ndarray:
    dim = d.shape[1]
    iu = np.triu_indices(dim)
    factor = np.where(iu[0] == iu[1], 1.0, 2.0)
    return d[:, iu[0]] * d[:, iu[1]] * factor


def _form_from_upper(c: np.ndarray, dim: int) -> np.ndarray:
    q = np.zeros((dim, dim))
    q[np.triu_indices(dim)] = c
    return q + np.triu(q, 1).T


def daffine_quadratics(cone: DirectionCone, m: Optional[int] = None, rtol: float = 1e-9,
                       stream: int = 31) -> list[np.ndarray]:
    """Basis of quadratic forms q (symmetric matrices) with q(d, d) = 0 on the cone."""
    dim = cone.dim
    nq = dim * (dim + 1) // 2
    d = cone.candidate_pool(m or 10 * nq, stream)
    rows = _quadratic_rows(d)
    _, s, vt = np.linalg.svd(rows, full_matrices=True)
    s_full = np.zeros(nq)
    s_full[: len(s)] = s
    null = vt[s_full <= rtol * s_full.max()]
    out = []
    for c in null:
        q = _form_from_upper(c, dim)
        out.append(q / np.linalg.norm(q))
    return out


@dataclass
class QDMembership:
    member: bool
    min_value: float
    worst_direction: np.ndarray

    def __bool__(self):
        return self.member


def qd_membership(q, cone: DirectionCone, m: int = 10_000, stream: int = 32) -> QDMembership:
    q = np.asarray(q, dtype=float)
    d = cone.candidate_pool(m, stream)
    vals = np.einsum("mi,ij,mj->m", d, q, d)
    i = int(np.argmin(vals))
    return QDMembership(bool(vals[i] >= -1e-12), float(vals[i]), d[i])

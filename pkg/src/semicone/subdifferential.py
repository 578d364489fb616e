"""Supporting linear functionals of 1-homogeneous D-convex functions.

The construction peels off one cone direction at a time.  At a point e in
the cone, the directional derivative

    g(y) = lim_{s -> inf} s (h(e + y/s) - h(e)) = inf_s (h(s e + y) - s h(e))

is again 1-homogeneous and D-convex, minorises h - h(e) and is linear along e.
A linear minorant of g on the remaining directions then extends to a
supporting functional of h touching at e.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cones import DirectionCone, SpanDeficiencyError
from .fields import Box, ScalarField

MAX_LEVEL = 40
STOP_RTOL = 1e-10
MONOTONE_TOL = 1e-9
MAX_BASIS_RETRIES = 50
EPS = 4 * np.finfo(float).eps


class MonotonicityError(RuntimeError):
    """The rescaled difference quotients increased along the ladder."""

    def __init__(self, s: float, s_next: float, y: np.ndarray, increase: float):
        super().__init__(f"quotient increased by {increase:.3e} between s={s:g} and s={s_next:g}")
        self.s, self.s_next, self.y, self.increase = s, s_next, y, increase


class CertificateRefused(RuntimeError):
    def __init__(self, message: str, witness=None, min_slack: float = float("nan")):
        super().__init__(message)
        self.witness = witness
        self.min_slack = min_slack


def _richardson(v: np.ndarray) -> np.ndarray:
    """Two Richardson columns for ladder values at s = 2^i (exact for a + b/s + c/s^2)."""
    r1 = 2.0 * v[:, 1:] - v[:, :-1]
    return (4.0 * r1[:, 1:] - r1[:, :-1]) / 3.0


def directional_limit(h: Callable[[np.ndarray], np.ndarray], e: np.ndarray, y: np.ndarray,
                      max_level: int = MAX_LEVEL, noise: float = EPS, log: Optional[list] = None):
    """lim_s h(s e + y) - s h(e) for a batch y of shape (m, d), s = 2^0 .. 2^max_level.

    ``noise`` is the relative accuracy of h.  Rounding in the raw quotients
    grows like noise * s, so the accelerated sequence is only trusted down to
    that floor.  Returns the limits and an absolute error estimate per row.
    """
    y = np.atleast_2d(y)
    s = 2.0 ** np.arange(max_level + 1)
    he = float(h(e[None, :])[0])
    pts = s[None, :, None] * e[None, None, :] + y[:, None, :]
    v = h(pts.reshape(-1, len(e))).reshape(len(y), len(s)) - s[None, :] * he
    size = s[None, :] * (abs(he) + np.linalg.norm(e)) + np.linalg.norm(y, axis=1)[:, None]
    raw_noise = 2.0 * noise * size
    acc = _richardson(v)
    diffs = np.abs(np.diff(acc, axis=1))
    floor = 10.0 * raw_noise[:, 3:]
    target = np.maximum(STOP_RTOL * (1.0 + np.abs(acc[:, 1:])), floor)
    hit = diffs < target
    proxy = np.maximum(diffs, floor)
    stop = np.where(hit.any(axis=1), np.argmax(hit, axis=1), np.argmin(proxy, axis=1))
    rows = np.arange(len(y))
    out = acc[rows, stop + 1]
    err = proxy[rows, stop]
    # the raw quotients must decrease up to the last level used
    last = stop + 3
    inc = np.diff(v, axis=1)
    mask = np.arange(inc.shape[1])[None, :] < last[:, None]
    tol = MONOTONE_TOL * (1.0 + np.abs(v[:, 1:])) + raw_noise[:, 1:]
    bad = mask & (inc > tol)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MonotonicityError(s[j], s[j + 1], y[i], float(inc[i, j]))
    if log is not None:
        log.append({"levels": (last + 1).tolist(), "residual": err.tolist()})
    return out, err


@dataclass
class Subcone:
    base_point: np.ndarray
    g: ScalarField
    construction_log: list = field(default_factory=list, repr=False)


def subcone_extract(f: ScalarField, cone: DirectionCone, x0, max_level: int = MAX_LEVEL) -> Subcone:
    """Directional-derivative cone of a 1-homogeneous D-convex f at x0."""
    x0 = np.asarray(x0, dtype=float)
    log: list = []

    def g(y):
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, y.shape[-1])
        return directional_limit(f, x0, flat, max_level, log=log)[0].reshape(y.shape[:-1])

    return Subcone(x0, ScalarField(g, f.dim, homogeneous=True, name=f"subcone({f.name})"), log)


def _minorant_at_origin(h, basis: np.ndarray, max_level: int, noise: float = EPS) -> np.ndarray:
    """Coefficients c with sum c_j t_j <= h(sum t_j basis_j), equality along basis_0."""
    e = basis[0]
    if len(basis) == 1:
        up, down = h(np.stack([e, -e]))
        # midpoint of the interval [-h(-e), h(e)] of admissible slopes
        return np.array([0.5 * (up - down)])
    he = float(h(e[None, :])[0])
    errs = []

    def g(y):
        val, err = directional_limit(h, e, y, max_level, noise)
        errs.append(float(np.max(err / (1.0 + np.abs(val)))))
        return val

    g(basis[1:])
    rest = _minorant_at_origin(g, basis[1:], max_level, max(errs[0], EPS))
    return np.concatenate([[he], rest])


@dataclass
class SupportCertificate:
    x0: np.ndarray
    ell: np.ndarray
    touch_residual: float
    min_slack: float
    n_samples: int
    basis: Optional[np.ndarray] = field(default=None, repr=False)
    attempts: int = 1

    def __call__(self, y):
        return np.asarray(y, dtype=float) @ self.ell

    def to_dict(self):
        return {
            "x0": self.x0,
            "ell": self.ell,
            "touch_residual": self.touch_residual,
            "min_slack": self.min_slack,
            "n_samples": self.n_samples,
            "attempts": self.attempts,
        }


def sphere_samples(cone: DirectionCone, m: int, stream: int = 41, domain: Optional[Box] = None) -> np.ndarray:
    """Uniform directions on the unit sphere of the cone norm, kept inside ``domain``."""
    rng = cone.rng(stream)
    u = rng.standard_normal((m, cone.dim))
    if cone.weights is not None:
        u /= np.sqrt(cone.weights)
    u /= cone.norm(u)[:, None]
    if domain is not None:
        u = u[domain.contains(u)]
    return u


def subgradient_at(f: ScalarField, cone: DirectionCone, x0, n_samples: int = 100_000,
                   slack_tol: float = 1e-7, max_level: int = MAX_LEVEL,
                   retries: int = MAX_BASIS_RETRIES, stream: int = 41) -> SupportCertificate:
    """A linear ell with ell(x0) = f(x0) and ell <= f, verified on sphere samples."""
    x0 = np.asarray(x0, dtype=float)
    if not cone.membership(x0):
        raise ValueError("x0 is not a member of the cone")
    nx = float(cone.norm(x0))
    if nx == 0.0:
        raise ValueError("x0 must be nonzero")
    fx = float(f(x0[None, :])[0])
    ys = sphere_samples(cone, n_samples, stream, f.domain)
    f_ys = f(ys)
    best = None
    for attempt in range(retries):
        try:
            basis = cone.spanning_basis(start=x0, stream=1000 + attempt)
        except SpanDeficiencyError:
            continue
        basis[0] = x0 / nx
        coeff = _minorant_at_origin(f, basis, max_level)
        ell = np.linalg.solve(basis, coeff)
        slack = f_ys - ys @ ell
        i = int(np.argmin(slack))
        cert = SupportCertificate(x0, ell, abs(float(x0 @ ell) - fx), float(slack[i]), len(ys),
                                  basis, attempt + 1)
        if cert.min_slack >= -slack_tol and cert.touch_residual <= 1e-9 * (1 + abs(fx)):
            return cert
        if best is None or cert.min_slack > best[0].min_slack:
            best = (cert, ys[i])
    if best is None:
        raise CertificateRefused("no spanning basis through x0 found")
    cert, witness = best
    raise CertificateRefused(f"support verification failed (min slack {cert.min_slack:.3e})",
                             witness=witness, min_slack=cert.min_slack)


@dataclass
class JensenWitness:
    points: np.ndarray
    weights: np.ndarray
    violation: float

    def to_dict(self):
        return {"points": self.points, "weights": self.weights, "violation": self.violation}


def nonconvexity_witness(f: ScalarField, region: Box, m: int = 100_000, cone: Optional[DirectionCone] = None,
                         seed: int = 0, chunk: int = 100_000, tol: float = 1e-12) -> Optional[JensenWitness]:
    """Best sampled violation of f(l x + (1-l) y) <= l f(x) + (1-l) f(y).

    With a dyadic or matrix ``cone`` only barycentres outside the cone (rank
    at least two) are counted.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 51]))
    best = None
    done = 0
    while done < m:
        b = min(chunk, m - done)
        x = region.sample(rng, b)
        y = region.sample(rng, b)
        lam = rng.uniform(0.1, 0.9, b)
        mid = lam[:, None] * x + (1 - lam[:, None]) * y
        viol = f(mid) - (lam * f(x) + (1 - lam) * f(y))
        order = np.argsort(-viol)
        for i in order[:50]:
            if viol[i] <= tol:
                break
            if cone is not None and cone.kind != "full" and cone.membership(mid[i], tol=1e-6):
                continue
            if best is None or viol[i] > best.violation:
                best = JensenWitness(np.stack([x[i], y[i]]), np.array([lam[i], 1 - lam[i]]), float(viol[i]))
            break
        done += b
    return best

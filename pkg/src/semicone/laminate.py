"""Oscillating test maps that split a k-th derivative between two rank-one connected states.

phi(x) = b psi(x) j^-k H(<x, j a>), where H is the k-th primitive of a
mollified periodic two-level step h and psi is a smooth cutoff.  On the
plateau of psi, D^k phi = b h(<x, j a>) a^k, so D^k(u + phi) takes exactly the
values xi and eta on two families of stripes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .fields import Box, ScalarField
from .tensor_core import SymTensor, multi_indices, orbit_sizes, rank_one_factor

SMOOTHSTEP = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
MAX_FREQUENCY = 2**20
CHUNK = 1 << 19


def smoothstep(u, order: int = 0):
    """Quintic smoothstep (C^2, 0 below 0, 1 above 1) and its derivatives."""
    u = np.asarray(u, dtype=float)
    p = SMOOTHSTEP.deriv(order) if order else SMOOTHSTEP
    inside = (u > 0) & (u < 1)
    out = np.where(inside, p(np.clip(u, 0, 1)), 0.0)
    if order == 0:
        out = np.where(u >= 1, 1.0, out)
    return out


def _sup_on(p: Polynomial, length: float = 1.0) -> float:
    """max |p| on [0, length] from the endpoints and the real critical points."""
    crit = [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-9 and 0 <= r.real <= length]
    return float(max(abs(p(t)) for t in [0.0, length, *crit]))


def _sup_on_unit(p: Polynomial) -> float:
    return _sup_on(p)


# profile ----------------------------------------------------------------------

@dataclass(frozen=True)
class Arc:
    """Subset {t : (t - start) mod 1 < length} of the circle R/Z."""

    start: float
    length: float

    def contains(self, t) -> np.ndarray:
        return np.mod(np.asarray(t) - self.start, 1.0) < self.length

    def cumulative(self, t) -> np.ndarray:
        """Measure of the arc inside [start, t], counted with multiplicity."""
        v = np.asarray(t) - self.start
        return np.floor(v) * self.length + np.minimum(v - np.floor(v), self.length)

    def average(self, t, width: float) -> np.ndarray:
        """Mean of the arc indicator over [t - width/2, t + width/2]."""
        if width <= 0:
            return self.contains(t).astype(float)
        # shift by whole periods first so large phases keep full precision
        t = self.start + np.mod(np.asarray(t, dtype=float) - self.start, 1.0)
        return (self.cumulative(t + width / 2) - self.cumulative(t - width / 2)) / width

    def to_dict(self):
        return {"start": self.start, "length": self.length}


@dataclass
class Profile:
    """Mollified periodic step: lambda - 1 on I_xi, lambda on I_eta, mean zero.

    The period starts in the middle of the lambda - 1 plateau, which makes the
    profile even about 1/2.  Then h_1 is odd about 1/2 and has mean zero, so
    h_2 stays bounded instead of growing linearly.
    """

    lam: float
    eps: float
    width: float
    k: int
    breaks: np.ndarray
    pieces: list  # pieces[l][p] = polynomial in (t - breaks[p]) for h_l
    drift: list  # drift[l] = polynomial in the period index P giving h_l(P)
    I_xi: Arc
    I_eta: Arc
    sup_norms: list = field(default_factory=list)

    def __call__(self, t, order: int = 0):
        """h_order(t) = order-th primitive of h with value 0 at 0."""
        return self.primitive(order, t)

    def primitive(self, level: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if level > self.k:
            raise ValueError(f"primitives computed up to order {self.k}")
        p = np.floor(t)
        r = t - p
        out = self._base(level, r)
        for m in range(level):
            if self.drift[level - m] is not None:
                out = out + self.drift[level - m](p) * r**m / math.factorial(m)
        return out

    def _base(self, level: int, r: np.ndarray) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.breaks, r, side="right") - 1, 0, len(self.breaks) - 2)
        out = np.empty_like(r)
        for i, poly in enumerate(self.pieces[level]):
            sel = idx == i
            if np.any(sel):
                out[sel] = poly(r[sel] - self.breaks[i])
        return out

    def is_periodic(self, level: int) -> bool:
        return all(self.drift[i] is None for i in range(1, level + 1))

    def sup_abs(self, level: int, t_max: float) -> float:
        """sup |h_level| over |t| <= t_max."""
        if self.is_periodic(level):
            return self.sup_norms[level]
        return self.sup_norms[1] * t_max ** (level - 1) / math.factorial(level - 1)

    def integral(self) -> float:
        """Mean over one period, exact: sum of the piecewise polynomial integrals."""
        return float(sum(poly.integ()(b - a) for poly, a, b in
                         zip(self.pieces[0], self.breaks[:-1], self.breaks[1:])))

    def to_dict(self):
        return {
            "lambda": self.lam,
            "eps": self.eps,
            "mollify_width": self.width,
            "k": self.k,
            "I_xi": self.I_xi,
            "I_eta": self.I_eta,
            "sup_norms": self.sup_norms,
        }


def composite_gauss(func: Callable, a: float, b: float, nodes: int = 10_000, order: int = 4) -> float:
    x, w = np.polynomial.legendre.leggauss(order)
    panels = max(1, nodes // order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    return float(np.sum(func(pts).reshape(panels, order) * w[None, :] * half[:, None]))


def build_profile(lam: float, eps: float, k: int = 2, mollify_width: Optional[float] = None) -> Profile:
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    small = min(lam, 1 - lam)
    w = eps * small / 4 if mollify_width is None else float(mollify_width)
    if not 0 < w < eps * small / 2:
        raise ValueError(f"mollify_width must be in (0, {eps * small / 2:.6g}) for the plateau bounds; "
                         "use a smaller width")
    up, down = lam / 2, 1 - lam / 2
    breaks = np.array([0.0, up - w / 2, up + w / 2, down - w / 2, down + w / 2, 1.0])
    rise = Polynomial(SMOOTHSTEP.coef / w ** np.arange(6))
    base = [Polynomial([lam - 1]), Polynomial([lam - 1]) + rise, Polynomial([lam]),
            Polynomial([lam]) - rise, Polynomial([lam - 1])]
    pieces = [base]
    for _ in range(k):
        prev, cur, acc = pieces[-1], [], 0.0
        for i, poly in enumerate(prev):
            integ = poly.integ() + acc
            cur.append(integ)
            acc = float(integ(breaks[i + 1] - breaks[i]))
        pieces.append(cur)
    ends = [float(pieces[l][-1](breaks[-1] - breaks[-2])) for l in range(k + 1)]
    drift = _period_drift(ends, k)
    I_xi = Arc(down + w / 2, lam - w)
    I_eta = Arc(up + w / 2, 1 - lam - w)
    prof = Profile(lam, eps, w, k, breaks, pieces, drift, I_xi, I_eta)
    prof.sup_norms = [max(_sup_on(poly, b - a) for poly, a, b in zip(pieces[l], breaks[:-1], breaks[1:]))
                      for l in range(k + 1)]
    _check_profile(prof)
    return prof


def _period_drift(ends: Sequence[float], k: int) -> list:
    """Polynomials P -> h_l(P) at integer P, from h_l(P+1) = sum_m h_{l-m}(P)/m! + h_l^base(1)."""
    vals = np.zeros((2 * k + 3, k + 1))
    ps = np.arange(-(k + 1), k + 2)
    zero = k + 1
    for i in range(zero, len(ps) - 1):
        for l in range(1, k + 1):
            vals[i + 1, l] = sum(vals[i, l - m] / math.factorial(m) for m in range(0, l)) + ends[l]
    for i in range(zero, 0, -1):
        for l in range(1, k + 1):
            # invert the forward step, lower levels first
            vals[i - 1, l] = vals[i, l] - ends[l] - sum(vals[i - 1, l - m] / math.factorial(m) for m in range(1, l))
    drift: list = [None]
    for l in range(1, k + 1):
        if np.max(np.abs(vals[:, l])) < 1e-14:
            drift.append(None)
        else:
            coef = np.polynomial.polynomial.polyfit(ps, vals[:, l], l)
            drift.append(Polynomial(np.where(np.abs(coef) < 1e-14, 0.0, coef)))
    return drift


def _check_profile(p: Profile) -> None:
    if abs(p.integral()) > 1e-10:
        raise AssertionError("profile mean is not zero")
    lam, eps = p.lam, p.eps
    if not (p.I_xi.length > (1 - eps / 2) * lam and p.I_eta.length > (1 - eps / 2) * (1 - lam)):
        raise ValueError("plateau bound failed; use a smaller mollify_width")
    t = np.linspace(0, 1, 20001)
    h = p.primitive(0, t)
    if h.min() < lam - 1 - 1e-12 or h.max() > lam + 1e-12:
        raise AssertionError("profile leaves [lambda - 1, lambda]")
    if np.any(np.abs(h[p.I_xi.contains(t)] - (lam - 1)) > 1e-12) or np.any(
            np.abs(h[p.I_eta.contains(t)] - lam) > 1e-12):
        raise AssertionError("profile is not constant on its plateaus")


def growth_bound_violations(p: Profile, k: int, ts) -> int:
    """Count t with |h_{k-l}(t)| > ||h_1|| |t|^(k-l-1)/(k-l-1)! for 0 <= l < k."""
    ts = np.asarray(ts, dtype=float)
    bad = 0
    for l in range(k):
        q = k - l
        lhs = np.abs(p.primitive(q, ts))
        rhs = p.sup_norms[1] * np.abs(ts) ** (q - 1) / math.factorial(q - 1)
        bad += int(np.sum(lhs > rhs * (1 + 1e-12) + 1e-14))
    return bad


# cutoff -----------------------------------------------------------------------

@dataclass
class Cutoff:
    """Tensor product of 1-D smoothstep ramps; 1 on the central plateau box."""

    omega: Box
    margin: float  # per side, as a fraction of each edge
    gap: float  # part of the margin where psi vanishes, same units
    sup_norms: list = field(default_factory=list)

    @property
    def plateau(self) -> Box:
        L = self.omega.hi - self.omega.lo
        return Box(self.omega.lo + self.margin * L, self.omega.hi - self.margin * L)

    @property
    def plateau_ratio(self) -> float:
        return float((1 - 2 * self.margin) ** self.omega.dim)

    def axis(self, x: np.ndarray, d: int, order: int) -> np.ndarray:
        lo, hi = self.omega.lo[d], self.omega.hi[d]
        L = hi - lo
        ramp = (self.margin - self.gap) * L
        x = np.asarray(x, dtype=float)
        inner_lo, inner_hi = lo + self.margin * L, hi - self.margin * L
        out = np.zeros_like(x)
        if order == 0:
            out[(x >= inner_lo) & (x <= inner_hi)] = 1.0
        p = SMOOTHSTEP.deriv(order) if order else SMOOTHSTEP
        left = (x > lo + self.gap * L) & (x < inner_lo)
        right = (x > inner_hi) & (x < hi - self.gap * L)
        out[left] = p((x[left] - lo - self.gap * L) / ramp) / ramp**order
        out[right] = p((hi - self.gap * L - x[right]) / ramp) * (-1.0 / ramp) ** order
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.prod([self.axis(x[..., d], d, 0) for d in range(self.omega.dim)], axis=0)

    def to_dict(self):
        return {"omega": self.omega, "margin": self.margin, "gap": self.gap,
                "plateau_ratio": self.plateau_ratio, "sup_norms": self.sup_norms}


def build_cutoff(omega: Box, eps: float, order: int = 2) -> Cutoff:
    """Cutoff with plateau volume >= (1 - eps/2)|omega|; sup-norm bounds of D^l psi, l <= order."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    n = omega.dim
    margin = 0.999 * (1 - (1 - eps / 2) ** (1 / n)) / 2
    cut = Cutoff(omega, margin, margin / 10)
    L = omega.hi - omega.lo
    ramp = (margin - margin / 10) * L
    axis_sup = [[_sup_on_unit(SMOOTHSTEP.deriv(r)) / ramp[d] ** r if r else 1.0 for d in range(n)]
                for r in range(order + 1)]
    norms = []
    for l in range(order + 1):
        total = 0.0
        for w, idx in zip(orbit_sizes(n, l) if l else [1.0], multi_indices(n, l) if l else [()]):
            counts = np.bincount(np.asarray(idx, dtype=int), minlength=n)
            total += w * np.prod([axis_sup[c][d] for d, c in enumerate(counts)]) ** 2
        norms.append(float(math.sqrt(total)))
    cut.sup_norms = norms
    return cut


def _leibniz_terms(idx: tuple, n: int, a: tuple):
    """Terms of D^idx (psi G): (order on G, product of a over it, derivative counts on psi)."""
    terms: dict = {}
    for mask in itertools.product((0, 1), repeat=len(idx)):
        # positions with mask 1 differentiate psi, the rest the oscillation
        on_osc = [i for i, m in zip(idx, mask) if not m]
        counts = tuple(np.bincount(np.asarray([i for i, m in zip(idx, mask) if m], dtype=int), minlength=n))
        key = (len(on_osc), counts)
        terms[key] = terms.get(key, 0.0) + float(np.prod([a[i] for i in on_osc]))
    return [(n_osc, coef, counts) for (n_osc, counts), coef in terms.items() if coef != 0.0]


# test maps ----------------------------------------------------------------------

@dataclass
class TestMap:
    """phi(x) = b psi(x) j^-k H(<x, j a>) on omega, plus the base polynomial C(x,..,x)/k!."""

    b: np.ndarray
    a: np.ndarray
    j: int
    profile: Profile
    cutoff: Cutoff
    base: SymTensor

    __test__ = False

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def omega(self) -> Box:
        return self.cutoff.omega

    def phase(self, x) -> np.ndarray:
        return self.j * (np.asarray(x, dtype=float) @ self.a)

    def derivative_stack(self, x, max_order: int) -> list[np.ndarray]:
        """[D^0 phi, ..., D^max_order phi] at points x (P, n); each (P, m_l, dimY)."""
        if max_order > self.k:
            raise ValueError(f"derivative order {max_order} exceeds k = {self.k}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, k, j = self.n, self.k, self.j
        t = self.phase(x)
        hs = [j ** (m - k) * self.profile.primitive(k - m, t) for m in range(max_order + 1)]
        # on the plateau psi = 1 and only the oscillation is differentiated
        ramp = np.flatnonzero(~self.cutoff.plateau.contains(x))
        xr = x[ramp]
        axis = [[self.cutoff.axis(xr[:, d], d, r) for d in range(n)] for r in range(max_order + 1)]
        out = []
        for l in range(max_order + 1):
            idxs = multi_indices(n, l) if l else [()]
            apow = np.array([np.prod([self.a[i] for i in idx]) for idx in idxs])
            res = hs[l][:, None] * apow[None, :]
            for col, idx in enumerate(idxs):
                acc = np.zeros(len(ramp))
                for n_osc, coef, counts in _leibniz_terms(tuple(idx), n, tuple(self.a)):
                    term = coef * hs[n_osc][ramp]
                    for d in range(n):
                        term = term * axis[counts[d]][d]
                    acc += term
                res[ramp, col] = acc
            out.append(res[:, :, None] * self.b[None, None, :])
        return out

    def derivative_coeffs(self, x, l: int) -> np.ndarray:
        """D^l phi at points x (shape (P, n)) as sorted-multi-index coefficients (P, m_l, dimY)."""
        return self.derivative_stack(x, l)[l]

    def __call__(self, x):
        return self.derivative_coeffs(x, 0)[:, 0, :]

    def to_dict(self):
        return {
            "b": self.b,
            "a": self.a,
            "j": self.j,
            "k": self.k,
            "profile": self.profile,
            "cutoff": self.cutoff,
            "base": self.base,
        }


def eval_derivatives(phi, x, l: int):
    """Exact D^l phi via the Leibniz rule.  A single point gives a SymTensor."""
    x = np.asarray(x, dtype=float)
    coeffs = phi.derivative_coeffs(x, l)
    if x.ndim == 1:
        if l == 0:
            return coeffs[0, 0]
        return SymTensor(phi.n, l, coeffs.shape[-1], coeffs[0])
    return coeffs


def _frequency_bounds(phi_parts, j: int):
    """Analytic sup bounds of the non-plateau part of D^k phi and of D^l phi, l < k."""
    b, prof, cut, k, t_max = phi_parts
    bn = float(np.linalg.norm(b))
    sup_h = [prof.sup_abs(q, j * t_max) for q in range(k + 1)]
    dist = bn * sum(math.comb(k, m) * cut.sup_norms[k - m] * j ** (m - k) * sup_h[k - m] for m in range(k))
    lower = [bn * sum(math.comb(l, m) * cut.sup_norms[l - m] * j ** (m - k) * sup_h[k - m]
                      for m in range(l + 1)) for l in range(k)]
    return dist, lower


@dataclass
class SplitReport:
    dist_sup: float
    lower_sups: list
    volume_xi: float
    volume_eta: float
    volume_error: float
    omega_volume: float
    lam: float
    eps: float
    grid: int
    passed: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def grid_points(omega: Box, N: int) -> np.ndarray:
    axes = [omega.lo[d] + (np.arange(N) + 0.5) * (omega.hi[d] - omega.lo[d]) / N for d in range(omega.dim)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, omega.dim)


def _iter_grid(omega: Box, N: int):
    n = omega.dim
    step = (omega.hi - omega.lo) / N
    total = N**n
    for start in range(0, total, CHUNK):
        flat = np.arange(start, min(start + CHUNK, total))
        idx = np.stack(np.unravel_index(flat, (N,) * n), axis=-1)
        yield omega.lo + (idx + 0.5) * step


def _segment_distance(P: np.ndarray, xi: SymTensor, eta: SymTensor) -> np.ndarray:
    w = orbit_sizes(xi.n, xi.k)[None, :, None]
    d = (eta.coeffs - xi.coeffs)[None]
    rel = P - xi.coeffs[None]
    s = np.clip(np.sum(w * rel * d, axis=(1, 2)) / np.sum(w * d * d), 0.0, 1.0)
    diff = rel - s[:, None, None] * d
    return np.sqrt(np.sum(w * diff * diff, axis=(1, 2)))


def _tensor_norms(c: np.ndarray, n: int, l: int) -> np.ndarray:
    w = orbit_sizes(n, l)[None, :, None] if l else np.ones((1, 1, 1))
    return np.sqrt(np.sum(w * c * c, axis=(1, 2)))


def measure_volumes(phi: TestMap, N: int) -> tuple[float, float]:
    """Volumes of the xi and eta stripes inside the plateau, from an N^n grid of cells.

    Each cell contributes its exact overlap with the plateau box times the
    exact stripe fraction along the axis where a is largest.  Plain point
    counting aliases with the stripe period and with the plateau edges.
    """
    plateau = phi.cutoff.plateau
    step = (phi.omega.hi - phi.omega.lo) / N
    cell = float(np.prod(step))
    d = int(np.argmax(np.abs(phi.a)))
    width = phi.j * abs(phi.a[d]) * step[d]
    vx = ve = 0.0
    for x in _iter_grid(phi.omega, N):
        lo = np.maximum(x - step / 2, plateau.lo)
        hi = np.minimum(x + step / 2, plateau.hi)
        frac = np.prod(np.clip(hi - lo, 0.0, None) / step, axis=1)
        keep = frac > 0
        t = phi.phase(x[keep])
        vx += float(np.sum(frac[keep] * phi.profile.I_xi.average(t, width)))
        ve += float(np.sum(frac[keep] * phi.profile.I_eta.average(t, width)))
    return vx * cell, ve * cell


def verify_split(phi: TestMap, xi: SymTensor, eta: SymTensor, lam: float, eps: float, grid: int) -> SplitReport:
    """Grid sweep of: dist(D^k(u+phi), [xi, eta]) < eps, volume fractions, |D^l phi| < eps."""
    k, n = phi.k, phi.n
    dist = 0.0
    lower = [0.0] * k
    for x in _iter_grid(phi.omega, grid):
        stack = phi.derivative_stack(x, k)
        P = phi.base.coeffs[None] + stack[k]
        dist = max(dist, float(_segment_distance(P, xi, eta).max()))
        for l in range(k):
            lower[l] = max(lower[l], float(_tensor_norms(stack[l], n, l).max()))
    fine = measure_volumes(phi, grid)
    coarse = measure_volumes(phi, grid // 2)
    vol = float(np.prod(phi.omega.hi - phi.omega.lo))
    # counting error is first order in the spacing
    vx = 2 * fine[0] - coarse[0]
    ve = 2 * fine[1] - coarse[1]
    err = max(abs(fine[0] - coarse[0]), abs(fine[1] - coarse[1]))
    rep = SplitReport(dist, lower, vx, ve, err, vol, lam, eps, grid)
    rep.passed = bool(dist < eps and max(lower, default=0.0) < eps
                      and vx > (1 - eps) * lam * vol and ve > (1 - eps) * (1 - lam) * vol)
    return rep


@dataclass
class Oscillation:
    phi: TestMap
    report: SplitReport
    j_analytic: int
    j_trials: list

    def to_dict(self):
        return {"test_map": self.phi, "report": self.report, "j_analytic": self.j_analytic,
                "j_trials": self.j_trials}


def build_oscillation(xi: SymTensor, eta: SymTensor, lam: float, eps: float, omega: Box,
                      grid: Optional[int] = None, verify: bool = True) -> Oscillation:
    """Test map splitting D^k between xi (fraction lam) and eta; j doubles until verified."""
    if xi.signature != eta.signature:
        raise ValueError("xi and eta differ in shape")
    delta = eta - xi
    fac = rank_one_factor(delta)
    if fac is None:
        raise ValueError("eta - xi is not a rank-one tensor")
    b, a = fac
    k, n = xi.k, xi.n
    if omega.dim != n:
        raise ValueError("omega has the wrong dimension")
    prof = build_profile(lam, eps, k)
    # the cutoff uses eps/2 so that the volume bounds keep a margin over grid error
    cut = build_cutoff(omega, eps / 2, order=k)
    C = xi * lam + eta * (1 - lam)
    corners = np.array(list(itertools.product(*zip(omega.lo, omega.hi))))
    t_max = float(np.abs(corners @ a).max())
    parts = (b, prof, cut, k, t_max)
    j = 1
    while True:
        dist, lower = _frequency_bounds(parts, j)
        if dist < eps and max(lower, default=0.0) < eps:
            break
        j = 2 * j - 1 if j > 1 else 3
        if j > MAX_FREQUENCY:
            raise RuntimeError("analytic frequency threshold exceeds 2^20")
    j_analytic = j
    grid = grid or (2048 if n <= 2 else 256)
    trials = []
    while True:
        phi = TestMap(np.atleast_1d(b), a, j, prof, cut, C)
        if not verify:
            return Oscillation(phi, None, j_analytic, trials)
        rep = verify_split(phi, xi, eta, lam, eps, grid)
        trials.append({"j": j, "passed": rep.passed, "dist_sup": rep.dist_sup})
        if rep.passed:
            return Oscillation(phi, rep, j_analytic, trials)
        j = 2 * j - 1
        if j > MAX_FREQUENCY:
            raise RuntimeError(f"no frequency up to 2^20 passes verification; last report {rep.to_dict()}")


# periodic rescaling -----------------------------------------------------------------

@dataclass
class RescaledMap:
    """x -> 2^(-J k) phi(2^J x), phi extended periodically from its cell omega."""

    phi: TestMap
    J: int

    @property
    def k(self):
        return self.phi.k

    @property
    def n(self):
        return self.phi.n

    @property
    def base(self):
        return self.phi.base

    @property
    def omega(self):
        return self.phi.omega

    def _to_cell(self, x):
        lo, L = self.omega.lo, self.omega.hi - self.omega.lo
        return lo + np.mod((np.asarray(x, dtype=float) - lo) * 2.0**self.J, L)

    def derivative_stack(self, x, max_order: int) -> list[np.ndarray]:
        stack = self.phi.derivative_stack(self._to_cell(np.atleast_2d(x)), max_order)
        return [2.0 ** (self.J * (l - self.k)) * c for l, c in enumerate(stack)]

    def derivative_coeffs(self, x, l: int) -> np.ndarray:
        return self.derivative_stack(x, l)[l]

    def to_dict(self):
        return {"J": self.J, "phi": self.phi}


@dataclass
class ModulusReport:
    lower_sups: list
    holder_seminorm: float
    alpha: float
    pairs: int

    def to_dict(self):
        return dict(self.__dict__)


def rescale_threshold(phi: TestMap, alpha: float, eps: float, grid: int = 256) -> int:
    """Smallest J whose interpolation bound puts the alpha-Holder seminorm of D^(k-1) below eps."""
    x = grid_points(phi.omega, grid) if phi.n <= 2 else grid_points(phi.omega, 64)
    s_top = float(_tensor_norms(phi.derivative_coeffs(x, phi.k), phi.n, phi.k).max())
    s_low = float(_tensor_norms(phi.derivative_coeffs(x, phi.k - 1), phi.n, phi.k - 1).max())
    J = 0
    while (2 * 2.0**-J * s_low) ** (1 - alpha) * s_top**alpha >= eps:
        J += 1
    return J


def rescale_periodic(phi: TestMap, J: int, alpha: float, pairs: int = 10_000, seed: int = 0,
                     grid: int = 256) -> tuple[RescaledMap, ModulusReport]:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    psi = RescaledMap(phi, J)
    k, n = phi.k, phi.n
    rng = np.random.Generator(np.random.Philox(key=[seed, 61]))
    lo, hi = phi.omega.lo, phi.omega.hi
    x = grid_points(phi.omega, grid if n <= 2 else 64)
    lower = [float(_tensor_norms(psi.derivative_coeffs(x, l), n, l).max()) for l in range(k)]
    # same-cell pairs at the cell scale and below, cross-cell pairs at all scales
    p = lo + (hi - lo) * rng.random((pairs, n))
    scale = 2.0 ** -(J + rng.random(pairs) * 12) * np.where(rng.random(pairs) < 0.5, 1.0, 2.0**J)
    q = p + scale[:, None] * rng.standard_normal((pairs, n)) * (hi - lo)
    num = _tensor_norms(psi.derivative_coeffs(p, k - 1) - psi.derivative_coeffs(q, k - 1), n, k - 1)
    den = np.linalg.norm(p - q, axis=1) ** alpha
    ok = den > 0
    return psi, ModulusReport(lower, float(np.max(num[ok] / den[ok])), alpha, int(ok.sum()))


# energies ------------------------------------------------------------------------------

@dataclass
class EnergyResult:
    value: float
    error: float
    fine: float
    grid: int

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return dict(self.__dict__)


class AdmissibilityError(ValueError):
    def __init__(self, x):
        super().__init__(f"xi + D^k phi leaves the domain of F at x = {np.asarray(x).tolist()}")
        self.x = x


def _midpoint_energy(F: ScalarField, xi: SymTensor, phi, N: int, omega: Box) -> float:
    cell = float(np.prod((omega.hi - omega.lo) / N))
    total = 0.0
    for x in _iter_grid(omega, N):
        if phi is None:
            pts = np.broadcast_to(xi.vector, (len(x), xi.vector.size))
        else:
            pts = (xi.coeffs[None] + phi.derivative_coeffs(x, xi.k)).reshape(len(x), -1)
        if F.domain is not None:
            bad = ~F.domain.contains(pts)
            if bad.any():
                raise AdmissibilityError(x[np.argmax(bad)])
        total += float(np.sum(F(pts)))
    return total * cell


def integrate_energy(F: ScalarField, xi: SymTensor, phi, grid: int, omega: Optional[Box] = None) -> EnergyResult:
    """Midpoint rule for the integral of F(xi + D^k phi) over omega, Richardson-corrected."""
    omega = omega or phi.omega
    fine = _midpoint_energy(F, xi, phi, grid, omega)
    coarse = _midpoint_energy(F, xi, phi, grid // 2, omega)
    value = (4 * fine - coarse) / 3
    return EnergyResult(value, abs(value - fine), fine, grid)


# weak-* convergence of the stripe indicators -----------------------------------------------

def weak_star_pairing(profile: Profile, j: int, test: Callable = lambda t: t, which: str = "xi",
                      order: int = 8) -> float:
    """Integral over [0, 1] of (1_I(j t) - |I|) test(t), exact up to Gauss quadrature of test."""
    arc = profile.I_xi if which == "xi" else profile.I_eta
    m = np.arange(-1, j + 1)
    cuts = np.concatenate([(m + arc.start) / j, (m + arc.start + arc.length) / j, [0.0, 1.0]])
    cuts = np.unique(np.clip(cuts, 0.0, 1.0))
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (cuts[1:] + cuts[:-1])
    half = 0.5 * (cuts[1:] - cuts[:-1])
    pts = mid[:, None] + half[:, None] * x[None, :]
    chi = arc.contains(j * mid).astype(float) - arc.length
    return float(np.sum(chi[:, None] * test(pts) * w[None, :] * half[:, None]))


def weak_star_decay(profile: Profile, js: Sequence[int], test: Callable = lambda t: t) -> tuple[list, float]:
    vals = [weak_star_pairing(profile, int(j), test) for j in js]
    slope = float(np.polyfit(np.log(js), np.log(np.abs(vals)), 1)[0])
    return vals, slope

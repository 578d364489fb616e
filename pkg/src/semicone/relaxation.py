"""Lamination envelopes on lattices: computable upper bounds for relaxed energies.

A grid function is stored as F - Delta, with Delta >= 0 the accumulated
decrease on lattice nodes.  Reads between nodes use the exact F minus the
multilinearly interpolated Delta, so an integrand that is already D-convex
never moves and is returned unchanged.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .cones import DirectionCone
from .fields import Box, ScalarField
from .laminate import Arc, TestMap, _iter_grid, build_oscillation, integrate_energy
from .tensor_core import SymTensor, rank_one_factor

MAX_REALIZE_DEPTH = 4


# lattice functions ----------------------------------------------------------------

@dataclass
class GridFunction:
    """F - Delta on the lattice lo + spacing * i, i in [0, shape)."""

    base: ScalarField
    lo: np.ndarray
    spacing: float
    delta: np.ndarray
    neg_inf: np.ndarray
    homogeneous: bool = False
    radius: float = 1.0  # homogeneous mode: reads are scaled onto this sphere

    @property
    def shape(self):
        return self.delta.shape

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def box(self) -> Box:
        return Box(self.lo, self.lo + self.spacing * (np.array(self.shape) - 1))

    def nodes(self) -> np.ndarray:
        axes = [self.lo[d] + self.spacing * np.arange(self.shape[d]) for d in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def node_values(self) -> np.ndarray:
        vals = self.base(self.nodes()).reshape(self.shape) - self.delta
        return np.where(self.neg_inf, -np.inf, vals)

    def _interp(self, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
        coords = ((pts - self.lo) / self.spacing).T
        return ndimage.map_coordinates(arr, coords, order=1, mode="nearest")

    def inside(self, pts) -> np.ndarray:
        return self.box.contains(pts)

    def decrease(self, pts) -> np.ndarray:
        """Interpolated Delta; homogeneous mode extends it 1-homogeneously."""
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.dim)
        if not self.homogeneous:
            out = self._interp(self.delta, flat)
        else:
            r = np.linalg.norm(flat, axis=1)
            safe = np.where(r > 0, r, 1.0)
            out = np.where(r > 0, r / self.radius * self._interp(self.delta, self.radius * flat / safe[:, None]), 0.0)
        return out.reshape(pts.shape[:-1])

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = self.base(pts) - self.decrease(pts)
        if self.neg_inf.any():
            flat = pts.reshape(-1, self.dim)
            if self.homogeneous:
                r = np.linalg.norm(flat, axis=1)
                flat = self.radius * flat / np.where(r > 0, r, 1.0)[:, None]
            hit = self._interp(self.neg_inf.astype(float), flat).reshape(pts.shape[:-1]) > 0
            out = np.where(hit, -np.inf, out)
        return out

    def as_field(self, name: str = "envelope") -> ScalarField:
        domain = None if self.homogeneous else self.box
        return ScalarField(self.__call__, self.dim, domain=domain, homogeneous=self.homogeneous, name=name)

    def interpolation_bound(self) -> float:
        """Multilinear interpolation error estimate of Delta: dim/8 times the largest second difference."""
        worst = 0.0
        for d in range(self.dim):
            if self.shape[d] >= 3:
                sd = np.abs(np.diff(self.delta, n=2, axis=d))
                worst = max(worst, float(sd.max()))
        return self.dim * worst / 8


def lattice_for(region: Box, spacing: float) -> tuple[np.ndarray, tuple]:
    counts = np.floor((region.hi - region.lo) / spacing + 1e-9).astype(int) + 1
    return region.lo.astype(float), tuple(int(c) for c in counts)


def direction_set(cone: DirectionCone, m: int, stream: int = 71) -> np.ndarray:
    """Deterministic unit directions: generators, an angle grid for 2x2 dyads, or cone samples."""
    if cone.kind in ("custom", "axes"):
        return cone.candidate_pool()
    if cone.kind == "symmetric_dyad" and cone.dim == 3:
        theta = np.pi * np.arange(m) / m + np.pi / 4
        a = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return np.stack([a[:, 0] ** 2, a[:, 0] * a[:, 1], a[:, 1] ** 2], axis=1)
    return cone.sample_unit(m, stream)


def step_set(reach: int) -> list[int]:
    """Lattice step counts used for each side of a split: all up to 4, then powers of two."""
    small = list(range(1, min(reach, 4) + 1))
    big = [2**i for i in range(3, 32) if 2**i <= reach]
    return sorted(set(small + big + [reach]))


@dataclass
class StepResult:
    grid: GridFunction
    max_decrease: float
    choice: np.ndarray  # per node: (direction index, r1, r2) or -1


def lamination_step(G: GridFunction, cone: DirectionCone, dirs: int = 16, reach: int = 4,
                    snap: float = 0.0, directions: Optional[np.ndarray] = None) -> StepResult:
    """One Jacobi sweep of two-point splits along cone directions; values never increase."""
    X = G.nodes()
    fX = G.base(X)
    old = G.delta.ravel()
    best_val = fX - old
    choice = -np.ones((len(X), 3), dtype=int)
    D = direction_set(cone, dirs) if directions is None else directions
    steps = step_set(reach)
    h = G.spacing
    for di, d in enumerate(D):
        reads = {}
        for r in steps:
            for sgn in (1, -1):
                p = X + sgn * r * h * d
                v = G(p)
                if not G.homogeneous:
                    v = np.where(G.inside(p), v, np.nan)
                reads[(sgn, r)] = v
        for r1, r2 in itertools.product(steps, steps):
            lam = r2 / (r1 + r2)
            cand = lam * reads[(1, r1)] + (1 - lam) * reads[(-1, r2)]
            better = cand < best_val
            if better.any():
                best_val = np.where(better, cand, best_val)
                choice[better] = (di, r1, r2)
    new_delta = np.maximum(old, fX - best_val)
    new_delta = np.where(np.isfinite(new_delta), new_delta, old)
    if snap > 0:
        new_delta = np.where(new_delta <= snap, 0.0, new_delta)
    grid = GridFunction(G.base, G.lo, G.spacing, new_delta.reshape(G.shape), G.neg_inf.copy(),
                        G.homogeneous, G.radius)
    return StepResult(grid, float(np.max(new_delta - old)), choice)


# laminate trees ------------------------------------------------------------------------

@dataclass
class LaminateNode:
    tensor: np.ndarray
    weight: float
    lam: Optional[float] = None
    plus: Optional["LaminateNode"] = None
    minus: Optional["LaminateNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.plus is None

    def to_dict(self):
        out = {"tensor": self.tensor, "weight": self.weight}
        if not self.is_leaf:
            out.update({"lambda": self.lam, "plus": self.plus, "minus": self.minus})
        return out


@dataclass
class LaminateTree:
    root: LaminateNode
    signature: tuple  # (n, k, dimY) of the tensor space

    def leaves(self) -> list[tuple[np.ndarray, float]]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append((node.tensor, node.weight))
            else:
                stack.extend([node.minus, node.plus])
        return out

    @property
    def depth(self) -> int:
        def dep(node):
            return 0 if node.is_leaf else 1 + max(dep(node.plus), dep(node.minus))

        return dep(self.root)

    def value(self, F: ScalarField) -> float:
        return float(sum(w * F(t[None, :])[0] for t, w in self.leaves()))

    def check(self, tol: float = 1e-12) -> None:
        leaves = self.leaves()
        w = np.array([lw for _, lw in leaves])
        if np.any(w <= 0) or abs(w.sum() - 1) > tol:
            raise AssertionError("laminate weights must be positive and sum to one")
        bary = sum(lw * t for t, lw in leaves)
        if np.max(np.abs(bary - self.root.tensor)) > 1e-9 * (1 + np.abs(self.root.tensor).max()):
            raise AssertionError("laminate barycentre differs from the root")
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            diff = SymTensor.from_vector(node.plus.tensor - node.minus.tensor, *self.signature)
            if rank_one_factor(diff) is None:
                raise AssertionError("split difference is not rank-one")
            stack.extend([node.plus, node.minus])

    def to_dict(self):
        n, k, dim_y = self.signature
        return {"signature": {"n": n, "k": k, "dimY": dim_y}, "depth": self.depth, "root": self.root}


def best_split(G: GridFunction, point: np.ndarray, directions: np.ndarray, steps: Sequence[int]):
    """Best two-point split of ``point`` read from G: (value, lam, plus, minus)."""
    h = G.spacing
    r = np.array(steps, dtype=float)
    plus = point[None, None, :] + r[None, :, None] * h * directions[:, None, :]
    minus = point[None, None, :] - r[None, :, None] * h * directions[:, None, :]
    vp, vm = G(plus), G(minus)
    if not G.homogeneous:
        vp = np.where(G.inside(plus), vp, np.nan)
        vm = np.where(G.inside(minus), vm, np.nan)
    lam = r[None, :] / (r[:, None] + r[None, :])  # [r1, r2] -> r2 / (r1 + r2)
    cand = lam[None] * vp[:, :, None] + (1 - lam[None]) * vm[:, None, :]
    cand = np.where(np.isnan(cand), np.inf, cand)
    di, i1, i2 = np.unravel_index(int(np.argmin(cand)), cand.shape)
    return float(cand[di, i1, i2]), float(lam[i1, i2]), plus[di, i1], minus[di, i2]


def build_tree(history: Sequence[GridFunction], root, signature: tuple, directions: np.ndarray,
               steps: Sequence[int], tol: float) -> LaminateTree:
    """Backtrack the argmin splits of the sweeps that produced ``history[-1]``.

    ``history[s]`` is the grid after s sweeps (``history[0]`` is F).  A node
    at level s splits when the best split read from level s-1 beats the
    level s-1 value by more than tol; otherwise it drops a level unsplit.
    """

    def grow(point, weight, level):
        node = LaminateNode(np.asarray(point, dtype=float), weight)
        while level > 0:
            G = history[level - 1]
            val, lam, plus, minus = best_split(G, node.tensor, directions, steps)
            if val < float(G(node.tensor[None, :])[0]) - tol:
                node.lam = lam
                node.plus = grow(plus, weight * lam, level - 1)
                node.minus = grow(minus, weight * (1 - lam), level - 1)
                break
            level -= 1
        return node

    return LaminateTree(grow(np.asarray(root, dtype=float), 1.0, len(history) - 1), signature)


# envelopes ----------------------------------------------------------------------------------

@dataclass
class EnvelopeResult:
    grid: GridFunction
    trace: list
    sweeps: int
    converged: bool
    trees: dict = field(default_factory=dict)
    neg_inf: bool = False

    @property
    def field(self) -> ScalarField:
        return self.grid.as_field()

    def to_dict(self):
        return {"sweeps": self.sweeps, "converged": self.converged, "neg_inf": self.neg_inf,
                "trace": self.trace, "trees": self.trees, "quantity": "laminate upper bound"}


def envelope(F: ScalarField, cone: DirectionCone, region: Optional[Box] = None, spacing: float = 0.1,
             max_sweeps: int = 20, tol: float = 1e-6, dirs: int = 16, reach: int = 4,
             homogeneous: bool = False, radius: float = 1.0, queries: Sequence = (),
             signature: Optional[tuple] = None) -> EnvelopeResult:
    """Iterate lamination_step to a fixed point (max decrease <= tol) or max_sweeps.

    In homogeneous mode the lattice covers the cube of half-width 1.25 radius
    and every read is rescaled onto the sphere of that radius.
    """
    if homogeneous:
        region = Box.cube(F.dim, 1.25 * radius)
    elif region is None:
        raise ValueError("region is required outside homogeneous mode")
    lo, shape = lattice_for(region, spacing)
    G = GridFunction(F, lo, spacing, np.zeros(shape), np.zeros(shape, dtype=bool), homogeneous, radius)
    directions = direction_set(cone, dirs)
    trace, converged, neg = [], False, False
    history = [G]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        res = lamination_step(G, cone, dirs, reach, snap=tol, directions=directions)
        G = res.grid
        if queries:
            history.append(G)
        trace.append({"sweep": sweeps, "max_decrease": res.max_decrease})
        vals = G.node_values()
        if np.nanmin(vals) < -1.0 / tol:
            G = _flag_components(G, vals < -1.0 / tol)
            neg = True
            break
        if res.max_decrease <= tol:
            converged = True
            break
    out = EnvelopeResult(G, trace, sweeps, converged, neg_inf=neg)
    if signature is None:
        signature = (2, 2, 1) if F.dim == 3 else (F.dim, 1, 1)
    for q in queries:
        key = ",".join(f"{v:g}" for v in np.asarray(q, dtype=float))
        out.trees[key] = build_tree(history, q, signature, directions, step_set(reach), tol)
    return out


def _flag_components(G: GridFunction, seeds: np.ndarray) -> GridFunction:
    """Mark every lattice component touched by a divergent node as -inf.

    The lattice neighbours of a box are joined by coordinate segments, and a
    spanning cone connects the box, so each labelled component is one D-connected piece.
    """
    labels, _ = ndimage.label(np.ones(G.shape, dtype=bool))
    hit = np.isin(labels, np.unique(labels[seeds]))
    return GridFunction(G.base, G.lo, G.spacing, G.delta, hit, G.homogeneous, G.radius)


# -infinity detection ---------------------------------------------------------------------------

@dataclass
class Verdict:
    status: str  # "-inf", "finite", "undetermined"
    depth: int
    witness: Optional[np.ndarray] = None
    value: Optional[float] = None
    message: str = ""

    def to_dict(self):
        return dict(self.__dict__)


def detect_neg_infinity(F: ScalarField, cone: DirectionCone, probe=None, depth: int = 1, tol: float = 1e-9,
                        dirs: int = 64, spacing: float = 0.1, reach: int = 8, m: int = 20_000) -> Verdict:
    """Decide whether the relaxation is -inf at ``probe`` (0 for homogeneous F)."""
    if F.homogeneous:
        D = direction_set(cone, dirs)
        G = F
        for level in range(1, depth + 1):
            sums = G(D) + G(-D)
            i = int(np.argmin(sums))
            if sums[i] < -tol:
                return Verdict("-inf", level, D[i], float(0.5 * sums[i]),
                               f"split of 0 along {np.round(D[i], 6).tolist()} has negative value; "
                               "scaling it by t drives the value to -inf")
            if level < depth:
                G = envelope(F, cone, spacing=spacing, max_sweeps=level, tol=tol, dirs=dirs // 4 or 1,
                             reach=reach, homogeneous=True).field
        samples = cone.rng(73).standard_normal((m, F.dim))
        if np.min(F(samples)) >= 0:
            return Verdict("finite", depth, message="F >= 0, so the relaxation is >= 0")
        return Verdict("undetermined", depth, message=f"undetermined at depth {depth}")
    region = Box.cube(F.dim, 1.0, probe)
    res = envelope(F, cone, region, spacing, max_sweeps=depth, tol=tol, dirs=dirs, reach=reach)
    if res.neg_inf:
        return Verdict("-inf", res.sweeps, np.asarray(probe, dtype=float),
                       message="values below -1/tol on the connected component of the probe")
    return Verdict("undetermined", depth, message=f"undetermined at depth {depth}")


# unbounded relaxation witness -----------------------------------------------------------------

@dataclass
class UnboundedWitness:
    t_star: float
    value: float
    M: float
    bracket: tuple

    def to_dict(self):
        return dict(self.__dict__)


def certify_unbounded(F: ScalarField, mu0: SymTensor, d: SymTensor, M: float, e=None,
                      t_samples: int = 200, rtol: float = 1e-12) -> UnboundedWitness:
    """Smallest (to bisection accuracy) t with (F(mu0 + t d) + F(mu0 - t d))/2 < M.

    ``e`` names the open cone {mu : mu(e, e) > 0}; membership of mu0 +- t d is
    checked on sampled t.  F acts on the coefficient vector of a SymTensor.
    """
    if rank_one_factor(mu0) is None:
        raise ValueError("mu0 is not rank-one")
    if d.norm() == 0:
        raise ValueError("d = 0: no drop is possible")
    if e is not None:
        e = np.asarray(e, dtype=float)
        ts = np.concatenate([[0.0], np.geomspace(1e-3, 1e9, t_samples)])
        q0 = float(mu0(e, e)[0])
        qd = float(d(e, e)[0])
        if np.any(q0 + ts * qd <= 0) or np.any(q0 - ts * qd <= 0):
            raise ValueError("mu0 +- t d leaves the cone {mu(e, e) > 0}")

    def g(t):
        pts = np.stack([(mu0 + d * t).vector, (mu0 - d * t).vector])
        return float(0.5 * np.sum(F(pts)))

    if g(0.0) < M:
        return UnboundedWitness(0.0, g(0.0), M, (0.0, 0.0))
    hi = 1.0
    while g(hi) >= M:
        hi *= 2
        if hi > 1e300:
            raise RuntimeError("no t with a value below M was found")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) < M:
            hi = mid
        else:
            lo = mid
    return UnboundedWitness(hi, g(hi), M, (lo, hi))


# realization of laminates by nested oscillations ------------------------------------------------

@dataclass
class NestedMap:
    """A root test map plus rescaled child maps planted in dyadic cells of its stripes."""

    root: TestMap
    children: dict  # "xi" / "eta" -> (NestedMap, J)
    signature: tuple

    @property
    def k(self):
        return self.root.k

    @property
    def n(self):
        return self.root.n

    @property
    def omega(self):
        return self.root.omega

    @property
    def base(self):
        return self.root.base

    def _cells_inside(self, x, arc: Arc, J: int) -> np.ndarray:
        s = 2.0**-J
        lo_cell = np.floor(x / s) * s
        centre = lo_cell + s / 2
        plateau = self.root.cutoff.plateau
        in_plateau = np.all((lo_cell >= plateau.lo) & (lo_cell + s <= plateau.hi), axis=1)
        width = self.root.j * s * np.sum(np.abs(self.root.a))
        in_stripe = arc.average(self.root.phase(centre), width) >= 1 - 1e-12
        return in_plateau & in_stripe

    def derivative_stack(self, x, max_order: int) -> list[np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.root.derivative_stack(x, max_order)
        for side, (child, J) in self.children.items():
            arc = self.root.profile.I_xi if side == "xi" else self.root.profile.I_eta
            mask = self._cells_inside(x, arc, J)
            if not mask.any():
                continue
            local = np.mod(x[mask] * 2.0**J, 1.0)
            sub = child.derivative_stack(local, max_order)
            for l in range(max_order + 1):
                out[l][mask] += 2.0 ** (J * (l - self.k)) * sub[l]
        return out

    def derivative_coeffs(self, x, l: int) -> np.ndarray:
        return self.derivative_stack(x, l)[l]

    def to_dict(self):
        return {"root": self.root, "children": {s: {"J": J, "map": c} for s, (c, J) in self.children.items()}}


@dataclass
class RealizationReport:
    energy: float
    quadrature_error: float
    tree_value: float
    gap: float
    allowed_gap: float
    passed: bool
    test_map: object = field(default=None, repr=False)

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k != "test_map"}


def _realize_node(node: LaminateNode, signature: tuple, eps: float, grid: int) -> Optional[NestedMap]:
    if node.is_leaf:
        return None
    unit = Box(np.zeros(signature[0]), np.ones(signature[0]))
    xi = SymTensor.from_vector(node.plus.tensor, *signature)
    eta = SymTensor.from_vector(node.minus.tensor, *signature)
    osc = build_oscillation(xi, eta, node.lam, eps, unit, grid=grid, verify=False)
    children = {}
    for side, child in (("xi", node.plus), ("eta", node.minus)):
        sub = _realize_node(child, signature, eps, grid)
        if sub is not None:
            arc = osc.phi.profile.I_xi if side == "xi" else osc.phi.profile.I_eta
            # cells much thinner than one stripe, so few are lost at stripe edges
            J = int(math.ceil(math.log2(osc.phi.j * np.sum(np.abs(osc.phi.a)) / (eps * arc.length) * 4)))
            children[side] = (sub, J)
    return NestedMap(osc.phi, children, signature)


def realize_laminate(tree: LaminateTree, F: ScalarField, eps: float = 0.05, grid: int = 1024,
                     seed: int = 0) -> RealizationReport:
    """Build the nested test map for ``tree`` and compare its energy with the tree value."""
    if tree.depth > MAX_REALIZE_DEPTH:
        raise ValueError(f"nesting depth {tree.depth} exceeds {MAX_REALIZE_DEPTH}")
    tree.check()
    leaves = tree.leaves()
    tree_value = float(sum(w * F(t[None, :])[0] for t, w in leaves))
    allowed = eps * (1 + sum(w * abs(F(t[None, :])[0]) for t, w in leaves))
    if tree.root.is_leaf:
        return RealizationReport(tree_value, 0.0, tree_value, 0.0, allowed, True)
    phi = _realize_node(tree.root, tree.signature, eps, grid)
    root = SymTensor.from_vector(tree.root.tensor, *tree.signature)
    if tree.depth == 1:
        res = integrate_energy(F, root, phi.root, grid)
        value, err = res.value, res.error
    else:
        value, err = jittered_energy(F, root, phi, grid, seed)
    gap = abs(value - tree_value)
    return RealizationReport(value, err, tree_value, gap, allowed, gap <= allowed, phi)


def jittered_energy(F: ScalarField, xi: SymTensor, phi, N: int, seed: int = 0) -> tuple[float, float]:
    """One uniform random point per cell of an N^n grid: unbiased for any oscillation scale.

    Nested maps oscillate far below any affordable grid spacing, where a
    regular grid aliases.  Returns the estimate and its standard error.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 81]))
    omega = phi.omega
    step = (omega.hi - omega.lo) / N
    total = total_sq = 0.0
    count = 0
    for x in _iter_grid(omega, N):
        x = x + (rng.random(x.shape) - 0.5) * step
        vals = F((xi.coeffs[None] + phi.derivative_coeffs(x, xi.k)).reshape(len(x), -1))
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        count += len(x)
    vol = float(np.prod(omega.hi - omega.lo))
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return mean * vol, vol * math.sqrt(var / count)


def hessian_demo_data() -> tuple[ScalarField, SymTensor, SymTensor, np.ndarray]:
    """F = -||.||, mu0 = tr (x) tr and d = Hessian of det, as symmetric 2-tensors over (x, z, y).

    Here (x, z, y) are the coordinates of [[x, z], [z, y]], tr = x + y and
    det = xy - z^2.  With e = (1, 0, 0), mu0(e, e) = 1 and d(e, e) = 0, so
    mu0 +- t d stays in {mu : mu(e, e) > 0} for every t.
    """
    from .tensor_core import ambient_weights

    tr = np.array([1.0, 0.0, 1.0])
    mu0 = SymTensor.from_full(np.outer(tr, tr))
    d = SymTensor.from_full(np.array([[0.0, 0.0, 1.0], [0.0, -2.0, 0.0], [1.0, 0.0, 0.0]]))
    w = ambient_weights(3, 2)
    F = ScalarField(lambda v: -np.sqrt(np.sum(w * np.asarray(v) ** 2, axis=-1)), len(w), homogeneous=True,
                    name="negative_norm")
    return F, mu0, d, np.array([1.0, 0.0, 0.0])

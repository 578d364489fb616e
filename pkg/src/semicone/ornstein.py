"""L1 domination between constant-coefficient (or piecewise-constant) k-th order operators.

An operator A = sum_{|alpha| = k} a_alpha d^alpha maps V-valued functions to
W-valued ones.  Its symbol acts on k-th derivatives stored by sorted
multi-index: the entry of D^k phi at index (i1 <= ... <= ik) is d^alpha phi
where alpha counts the repeated indices.  The domination
||A2 phi||_1 <= c ||A1 phi||_1 holds iff A2 = C A1 on symbols with ||C|| <= c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .cones import DirectionCone
from .fields import Box, ScalarField
from .laminate import _iter_grid, build_oscillation
from .relaxation import (GridFunction, LaminateNode, LaminateTree, build_tree, direction_set, lamination_step,
                         lattice_for, realize_laminate, step_set)
from .tensor_core import SymTensor, multi_indices

KERNEL_RTOL = 1e-9


def exponents(idx: Sequence[int], n: int) -> tuple[int, ...]:
    """Sorted multi-index (i1 <= ... <= ik) -> exponent vector alpha."""
    alpha = [0] * n
    for i in idx:
        alpha[i] += 1
    return tuple(alpha)


def all_alphas(n: int, k: int) -> list[tuple[int, ...]]:
    return [exponents(idx, n) for idx in multi_indices(n, k)]


@dataclass
class OperatorFamily:
    """Coefficient maps a_alpha : V -> W (shape (W, V)), optionally one set per box piece."""

    k: int
    n: int
    V: int
    W: int
    coeffs: dict  # alpha -> (W, V) array; missing alphas are zero
    pieces: Optional[list] = None  # [(Box, coeffs)], overrides ``coeffs``

    def __post_init__(self):
        for _, cf in self.piece_list():
            for alpha, a in cf.items():
                if len(alpha) != self.n or sum(alpha) != self.k:
                    raise ValueError(f"multi-index {alpha} does not have order {self.k} in {self.n} variables")
                if np.shape(a) != (self.W, self.V) or not np.all(np.isfinite(a)):
                    raise ValueError(f"coefficient for {alpha} must be a finite {self.W}x{self.V} array")

    def piece_list(self) -> list:
        if self.pieces:
            return [(box, {tuple(a): np.asarray(v, dtype=float) for a, v in cf.items()}) for box, cf in self.pieces]
        return [(None, {tuple(a): np.asarray(v, dtype=float) for a, v in self.coeffs.items()})]

    @classmethod
    def scalar(cls, terms: dict, n: int = 2, k: int = 2) -> "OperatorFamily":
        """A: R -> R^W from rows {alpha: weight} (one dict per output component)."""
        if isinstance(terms, dict):
            terms = [terms]
        coeffs: dict = {}
        for w, row in enumerate(terms):
            for alpha, val in row.items():
                coeffs.setdefault(tuple(alpha), np.zeros((len(terms), 1)))[w, 0] += val
        return cls(k, n, 1, len(terms), coeffs)

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorFamily":
        def parse(cf):
            return {tuple(int(s) for s in key.split(",")): np.asarray(v, dtype=float) for key, v in cf.items()}

        pieces = None
        if d.get("pieces"):
            pieces = [(Box(np.asarray(p["box"]["lo"], float), np.asarray(p["box"]["hi"], float)), parse(p["coeffs"]))
                      for p in d["pieces"]]
        return cls(int(d["k"]), int(d["n"]), int(d["V"]), int(d["W"]), parse(d.get("coeffs", {})), pieces)

    def to_dict(self):
        def dump(cf):
            return {",".join(map(str, a)): np.asarray(v).tolist() for a, v in cf.items()}

        out = {"k": self.k, "n": self.n, "V": self.V, "W": self.W, "coeffs": dump(self.coeffs)}
        if self.pieces:
            out["pieces"] = [{"box": {"lo": b.lo.tolist(), "hi": b.hi.tolist()}, "coeffs": dump(cf)}
                             for b, cf in self.pieces]
        return out


@dataclass
class SymbolMap:
    matrices: list  # one (W, m * V) matrix per piece
    boxes: list
    signature: tuple  # (n, k, V)

    def __call__(self, xi, piece: int = 0) -> np.ndarray:
        return np.asarray(xi, dtype=float) @ self.matrices[piece].T


def symbol_matrix(n: int, k: int, V: int, W: int, coeffs: dict) -> np.ndarray:
    idx = multi_indices(n, k)
    M = np.zeros((W, len(idx) * V))
    for i, ind in enumerate(idx):
        a = coeffs.get(exponents(ind, n))
        if a is not None:
            M[:, i * V:(i + 1) * V] = a
    return M


def _forward_difference(poly, alpha: tuple, x0: np.ndarray) -> np.ndarray:
    """Mixed forward difference with unit steps; exact for d^alpha of a degree-|alpha| polynomial."""
    total = 0.0
    for combo in np.ndindex(*[a + 1 for a in alpha]):
        sign = (-1) ** (sum(alpha) - sum(combo))
        weight = np.prod([math.comb(a, c) for a, c in zip(alpha, combo)])
        total = total + sign * weight * poly(x0 + np.asarray(combo, dtype=float))
    return total


def assemble_symbol(op: OperatorFamily, self_test: int = 20, seed: int = 0, rtol: float = 1e-10) -> SymbolMap:
    """Symbol matrices per piece, checked on random degree-k polynomials."""
    mats, boxes = [], []
    for box, cf in op.piece_list():
        mats.append(symbol_matrix(op.n, op.k, op.V, op.W, cf))
        boxes.append(box)
    sym = SymbolMap(mats, boxes, (op.n, op.k, op.V))
    rng = np.random.Generator(np.random.Philox(key=[seed, 91]))
    alphas = all_alphas(op.n, op.k)
    for _ in range(self_test):
        # phi(x) = sum_r b_r <x, a_r>^k / k!, small integer data keeps differences exact
        A = rng.integers(-3, 4, size=(3, op.n)).astype(float)
        B = rng.integers(-3, 4, size=(3, op.V)).astype(float)

        def poly(x, A=A, B=B):
            return ((x @ A.T) ** op.k / math.factorial(op.k)) @ B

        x0 = rng.integers(-2, 3, size=op.n).astype(float)
        xi = np.array([_forward_difference(poly, exponents(ind, op.n), x0) for ind in multi_indices(op.n, op.k)])
        for (box, cf), M in zip(op.piece_list(), mats):
            direct = sum((cf[a] @ _forward_difference(poly, a, x0) for a in alphas if a in cf), np.zeros(op.W))
            got = M @ xi.ravel()
            if np.max(np.abs(got - direct)) > rtol * (1 + np.max(np.abs(direct))):
                raise AssertionError("symbol matrix disagrees with direct differentiation")
    return sym


# factorization -------------------------------------------------------------------

@dataclass
class PieceFactorization:
    box: Optional[Box]
    C: Optional[np.ndarray]
    norm: Optional[float]
    witness: Optional[np.ndarray]
    witness_image: Optional[float]
    residual: Optional[float]

    def to_dict(self):
        return {"box": self.box, "C": self.C, "norm": self.norm, "witness": self.witness,
                "witness_image_norm": self.witness_image, "residual": self.residual}


@dataclass
class Factorization:
    pieces: list
    c_bound: Optional[float]
    threshold: float = KERNEL_RTOL

    @property
    def factors(self) -> bool:
        return all(p.C is not None for p in self.pieces)

    @property
    def norm(self) -> float:
        return max(p.norm for p in self.pieces) if self.factors else math.inf

    @property
    def holds(self) -> Optional[bool]:
        """Whether ||A2 phi||_1 <= c ||A1 phi||_1 holds with c = c_bound."""
        if self.c_bound is None:
            return None
        return self.factors and self.norm <= self.c_bound

    def to_dict(self):
        return {"factors": self.factors, "norm": self.norm if self.factors else None, "c": self.c_bound,
                "holds": self.holds, "kernel_threshold": self.threshold, "pieces": self.pieces}


def _common_pieces(op1: OperatorFamily, op2: OperatorFamily) -> list:
    out = []
    for b1, c1 in op1.piece_list():
        for b2, c2 in op2.piece_list():
            if b1 is None or b2 is None:
                box = b1 if b2 is None else b2
            else:
                lo, hi = np.maximum(b1.lo, b2.lo), np.minimum(b1.hi, b2.hi)
                if np.any(hi <= lo):
                    continue
                box = Box(lo, hi)
            out.append((box, c1, c2))
    return out


def factorize_matrices(M1: np.ndarray, M2: np.ndarray, rtol: float = KERNEL_RTOL):
    """C with M2 = C M1, or a kernel witness xi (M1 xi = 0, M2 xi != 0)."""
    N = M1.shape[1]
    _, s, vt = np.linalg.svd(M1, full_matrices=True)
    smax = s.max() if s.size else 0.0
    s_full = np.zeros(N)
    s_full[: len(s)] = s
    kernel = vt[s_full <= rtol * max(smax, 1e-300)]
    scale = max(np.linalg.norm(M2, 2), 1.0)
    if len(kernel):
        image = M2 @ kernel.T
        if np.linalg.norm(image, 2) > rtol * scale:
            _, _, wt = np.linalg.svd(image)
            xi = kernel.T @ wt[0]
            return None, xi, float(np.linalg.norm(M2 @ xi))
    C = M2 @ np.linalg.pinv(M1, rcond=rtol)
    return C, None, None


def factorize(A1: OperatorFamily, A2: OperatorFamily, c_bound: Optional[float] = None,
              rtol: float = KERNEL_RTOL) -> Factorization:
    if (A1.k, A1.n, A1.V) != (A2.k, A2.n, A2.V):
        raise ValueError("operators must share order, variables and input space")
    out = []
    for box, c1, c2 in _common_pieces(A1, A2):
        M1 = symbol_matrix(A1.n, A1.k, A1.V, A1.W, c1)
        M2 = symbol_matrix(A2.n, A2.k, A2.V, A2.W, c2)
        C, xi, img = factorize_matrices(M1, M2, rtol)
        if C is None:
            out.append(PieceFactorization(box, None, None, xi, img, None))
            continue
        # a^2_alpha = C a^1_alpha for every alpha is the same as M2 = C M1
        residual = float(np.max(np.abs(C @ M1 - M2))) if M2.size else 0.0
        if residual > 1e-9 * max(1.0, np.abs(M2).max(initial=0.0)):
            raise AssertionError(f"factorization residual {residual:.3e} above 1e-9")
        out.append(PieceFactorization(box, C, float(np.linalg.norm(C, 2)) if C.size else 0.0, None, None, residual))
    return Factorization(out, c_bound, rtol)


# pointwise criterion -----------------------------------------------------------------

def integrand(A1: OperatorFamily, A2: OperatorFamily, c: float, norm: str = "l2", piece: int = 0) -> ScalarField:
    """F_c(xi) = c |A1~ xi| - |A2~ xi| on the symbol coordinates of one piece."""
    _, c1 = A1.piece_list()[min(piece, len(A1.piece_list()) - 1)]
    _, c2 = A2.piece_list()[min(piece, len(A2.piece_list()) - 1)]
    M1 = symbol_matrix(A1.n, A1.k, A1.V, A1.W, c1)
    M2 = symbol_matrix(A2.n, A2.k, A2.V, A2.W, c2)
    order = 1 if norm == "l1" else 2

    def f(x):
        x = np.asarray(x, dtype=float)
        return c * np.linalg.norm(x @ M1.T, ord=order, axis=-1) - np.linalg.norm(x @ M2.T, ord=order, axis=-1)

    return ScalarField(f, M1.shape[1], homogeneous=True, name=f"F_{c:g}")


@dataclass
class PointwiseVerdict:
    nonnegative: bool
    minimum: float
    witness: np.ndarray
    starts: int

    def to_dict(self):
        return dict(self.__dict__)


def pointwise_criterion(F: ScalarField, weights=None, starts: int = 200, seed: int = 0,
                        tol: float = 1e-9) -> PointwiseVerdict:
    """Minimum of a |t|-homogeneous F over the unit sphere by multi-start local search."""
    dim = F.dim
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=[seed, 92]))
    x = rng.standard_normal((64, dim))
    base = F(x)
    for t in (-2.0, 0.5, 3.0):
        if np.any(np.abs(F(t * x) - abs(t) * base) > 1e-9 * (1 + np.abs(t * base))):
            raise ValueError("F is not |t|-homogeneous")

    def on_sphere(v):
        nv = math.sqrt(float(np.sum(w * v * v)))
        return float(F((v / nv)[None, :])[0]) if nv > 0 else 0.0

    pool = rng.standard_normal((max(starts * 50, 10_000), dim))
    pool /= np.sqrt(np.sum(w * pool * pool, axis=1))[:, None]
    vals = F(pool)
    best_i = int(np.argmin(vals))
    best_v, best_x = float(vals[best_i]), pool[best_i]
    for i in np.argsort(vals)[:starts]:
        res = optimize.minimize(on_sphere, pool[i], method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000})
        if res.fun < best_v:
            best_v = float(res.fun)
            best_x = res.x / math.sqrt(float(np.sum(w * res.x * res.x)))
    return PointwiseVerdict(bool(best_v >= -tol), best_v, best_x, starts)


# blow-up sequences -------------------------------------------------------------------------

@dataclass
class BlowupStep:
    eps: float
    j: int
    ratio: float
    numerator: float
    denominator: float
    certified: bool

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class BlowupResult:
    status: str  # "certified", "undetermined"
    c: float
    depth: int
    tree: Optional[LaminateTree]
    laminate_value: float
    steps: list = field(default_factory=list)
    maps: list = field(default_factory=list, repr=False)

    @property
    def best_ratio(self) -> float:
        return max((s.ratio for s in self.steps), default=float("nan"))

    def to_dict(self):
        return {"status": self.status, "c": self.c, "depth": self.depth, "laminate_value": self.laminate_value,
                "best_ratio": self.best_ratio, "steps": self.steps, "tree": self.tree}


def _ratio(phi, M1, M2, k: int, grid: int, norm: str, jitter: bool, seed: int = 0):
    order = 1 if norm == "l1" else 2
    num = den = 0.0
    rng = np.random.Generator(np.random.Philox(key=[seed, 93]))
    step = (phi.omega.hi - phi.omega.lo) / grid
    for x in _iter_grid(phi.omega, grid):
        if jitter:
            x = x + (rng.random(x.shape) - 0.5) * step
        d = phi.derivative_coeffs(x, k).reshape(len(x), -1)
        num += float(np.sum(np.linalg.norm(d @ M2.T, ord=order, axis=1)))
        den += float(np.sum(np.linalg.norm(d @ M1.T, ord=order, axis=1)))
    return num / den, num, den


def find_negative_laminate(F: ScalarField, cone: DirectionCone, depth: int, dirs: int = 64,
                           spacing: float = 0.1, reach: int = 8, tol: float = 1e-12):
    """Split of 0 into +-d whose laminate value is negative, searching up to ``depth`` levels."""
    D = direction_set(cone, dirs)
    best = (math.inf, None)
    n, k, dim_y = cone.params.get("n", 1), cone.params.get("k", 1), cone.params.get("dim_y", 1)
    signature = (n, k, dim_y)
    history = [None]
    for level in range(1, depth + 1):
        if level == 1:
            G = F
        else:
            history = _history(F, cone, level - 1, spacing, reach, max(dirs // 4, 1), tol)
            G = history[-1]
        vals = 0.5 * (G(D) + G(-D))
        i = int(np.argmin(vals))
        if vals[i] < best[0]:
            best = (float(vals[i]), D[i])
        if vals[i] < -tol:
            if level == 1:
                plus, minus = LaminateNode(D[i], 0.5), LaminateNode(-D[i], 0.5)
            else:
                sub = [build_tree(history, s * D[i], signature, direction_set(cone, max(dirs // 4, 1)),
                                  step_set(reach), tol).root for s in (1, -1)]
                plus, minus = sub
                _reweight(plus, 0.5)
                _reweight(minus, 0.5)
            tree = LaminateTree(LaminateNode(np.zeros(F.dim), 1.0, 0.5, plus, minus), signature)
            return tree, float(vals[i]), level
    return None, best[0], depth


def _history(F, cone, sweeps, spacing, reach, dirs, tol):
    lo, shape = lattice_for(Box.cube(F.dim, 1.25), spacing)
    G = GridFunction(F, lo, spacing, np.zeros(shape), np.zeros(shape, dtype=bool), True, 1.0)
    out = [G]
    directions = direction_set(cone, dirs)
    for _ in range(sweeps):
        G = lamination_step(G, cone, dirs, reach, snap=tol, directions=directions).grid
        out.append(G)
    return out


def _reweight(node: LaminateNode, factor: float) -> None:
    node.weight *= factor
    if not node.is_leaf:
        _reweight(node.plus, factor)
        _reweight(node.minus, factor)


def blowup_sequence(A1: OperatorFamily, A2: OperatorFamily, c: float, depth: int = 1,
                    eps_list: Sequence[float] = (0.2, 0.1, 0.05), grid: int = 4096, norm: str = "l1",
                    dirs: int = 64) -> BlowupResult:
    """Test maps whose measured L1 ratio ||A2 phi|| / ||A1 phi|| exceeds c, from a negative laminate of F_c."""
    fac = factorize(A1, A2, c)
    if fac.holds:
        raise ValueError(f"A2 = C A1 with ||C|| = {fac.norm:.6g} <= c: the inequality holds, no blow-up exists")
    if A1.pieces or A2.pieces:
        raise ValueError("blow-up synthesis works on constant-coefficient operators")
    F = integrand(A1, A2, c, norm)
    cone = DirectionCone.higher_dyad(A1.n, A1.k, A1.V) if A1.V > 1 or A1.k != 2 else \
        DirectionCone.symmetric_dyad(A1.n)
    tree, value, level = find_negative_laminate(F, cone, depth, dirs)
    if tree is None:
        return BlowupResult(f"undetermined at depth {depth}", c, depth, None, value)
    M1 = symbol_matrix(A1.n, A1.k, A1.V, A1.W, A1.piece_list()[0][1])
    M2 = symbol_matrix(A2.n, A2.k, A2.V, A2.W, A2.piece_list()[0][1])
    out = BlowupResult("certified", c, level, tree, value)
    for eps in eps_list:
        if tree.depth == 1:
            xi = SymTensor.from_vector(tree.root.plus.tensor, *tree.signature)
            eta = SymTensor.from_vector(tree.root.minus.tensor, *tree.signature)
            unit = Box(np.zeros(A1.n), np.ones(A1.n))
            phi = build_oscillation(xi, eta, tree.root.lam, eps, unit, verify=False).phi
            ratio, num, den = _ratio(phi, M1, M2, A1.k, grid, norm, jitter=False)
        else:
            phi = realize_laminate(tree, F, eps, grid=min(grid, 1024)).test_map
            ratio, num, den = _ratio(phi, M1, M2, A1.k, min(grid, 1024), norm, jitter=True)
        out.steps.append(BlowupStep(eps, int(phi.j if hasattr(phi, "j") else phi.root.j), ratio, num, den,
                                    bool(ratio > c)))
        out.maps.append(phi)
    if not any(s.certified for s in out.steps):
        out.status = "laminate found, measured ratio not above c"
    return out


def classical_pair() -> tuple[OperatorFamily, OperatorFamily]:
    """A1 = (d_xx, d_yy), A2 = d_xy on scalar functions of two variables."""
    A1 = OperatorFamily.scalar([{(2, 0): 1.0}, {(0, 2): 1.0}])
    A2 = OperatorFamily.scalar({(1, 1): 1.0})
    return A1, A2


def l1_norms(phi, A1: OperatorFamily, A2: OperatorFamily, grid: int, norm: str = "l2") -> tuple[float, float]:
    """(||A1 phi||_1, ||A2 phi||_1) by the midpoint rule on the same grid."""
    M1 = symbol_matrix(A1.n, A1.k, A1.V, A1.W, A1.piece_list()[0][1])
    M2 = symbol_matrix(A2.n, A2.k, A2.V, A2.W, A2.piece_list()[0][1])
    _, num, den = _ratio(phi, M1, M2, A1.k, grid, norm, jitter=False)
    cell = float(np.prod((phi.omega.hi - phi.omega.lo) / grid))
    return den * cell, num * cell

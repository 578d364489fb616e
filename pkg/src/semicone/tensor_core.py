"""Symmetric multilinear algebra on R^n with values in R^dimY.

A symmetric k-linear map is stored by its coefficients on sorted multi-indices
(i1 <= ... <= ik).  The canonical scalar product sums over *all* index tuples,
so each stored coefficient carries the size of its permutation orbit as a
weight.

Ambient coordinates
-------------------
Several modules treat a symmetric tensor as a flat vector: ``SymTensor.vector``
is the coefficient array flattened in (multi-index, component) order.  For
symmetric 2x2 matrices this is ``(xi_11, xi_12, xi_22)``.  The Euclidean
structure on these coordinates is the weighted one given by
:func:`ambient_weights`, never the plain dot product.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

RANK_TOL = 1e-9


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Sorted multi-indices (0-based) in lexicographic order."""
    return tuple(itertools.combinations_with_replacement(range(n), k))


@lru_cache(maxsize=None)
def _orbit_sizes(n: int, k: int) -> tuple[int, ...]:
    out = []
    for idx in multi_indices(n, k):
        counts = np.bincount(idx, minlength=n)
        out.append(math.factorial(k) // math.prod(math.factorial(int(c)) for c in counts))
    return tuple(out)


def orbit_sizes(n: int, k: int) -> np.ndarray:
    return np.array(_orbit_sizes(n, k), dtype=float)


def sym_dim(n: int, k: int, dim_y: int = 1) -> int:
    return dim_y * math.comb(n + k - 1, k)


def ambient_weights(n: int, k: int, dim_y: int = 1) -> np.ndarray:
    """Weights w with <xi, zeta> = sum(w * xi.vector * zeta.vector)."""
    return np.repeat(orbit_sizes(n, k), dim_y)


@dataclass(frozen=True, eq=False)
class SymTensor:
    """Element of the space of R^dimY-valued symmetric k-linear maps on R^n."""

    n: int
    k: int
    dim_y: int
    coeffs: np.ndarray  # shape (C(n+k-1, k), dim_y)

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.dim_y < 1:
            raise ValueError("n, k and dim_y must be positive")
        c = np.array(self.coeffs, dtype=float).reshape(len(multi_indices(self.n, self.k)), self.dim_y)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction ---------------------------------------------------------
    @classmethod
    def zeros(cls, n: int, k: int, dim_y: int = 1) -> "SymTensor":
        return cls(n, k, dim_y, np.zeros((len(multi_indices(n, k)), dim_y)))

    @classmethod
    def from_vector(cls, vec, n: int, k: int, dim_y: int = 1) -> "SymTensor":
        return cls(n, k, dim_y, np.asarray(vec, dtype=float))

    @classmethod
    def from_full(cls, full, dim_y: Optional[int] = None) -> "SymTensor":
        """From a dense array of shape (n,)*k (+ (dim_y,)); symmetrises first."""
        full = np.asarray(full, dtype=float)
        if dim_y is None:
            dim_y = 1
            full = full[..., None]
        k = full.ndim - 1
        n = full.shape[0]
        sym = np.zeros_like(full)
        perms = list(itertools.permutations(range(k)))
        for p in perms:
            sym += np.transpose(full, p + (k,))
        sym /= len(perms)
        coeffs = np.array([sym[idx] for idx in multi_indices(n, k)])
        return cls(n, k, dim_y, coeffs)

    @classmethod
    def random(cls, n: int, k: int, dim_y: int = 1, rng=None) -> "SymTensor":
        rng = np.random.default_rng(rng)
        return cls(n, k, dim_y, rng.standard_normal((len(multi_indices(n, k)), dim_y)))

    # views ------------------------------------------------------------------
    @property
    def vector(self) -> np.ndarray:
        return self.coeffs.ravel()

    @property
    def signature(self) -> tuple[int, int, int]:
        return (self.n, self.k, self.dim_y)

    def to_full(self) -> np.ndarray:
        full = np.zeros((self.n,) * self.k + (self.dim_y,))
        for idx, val in zip(multi_indices(self.n, self.k), self.coeffs):
            for p in set(itertools.permutations(idx)):
                full[p] = val
        return full

    def __add__(self, other: "SymTensor") -> "SymTensor":
        _check_same(self, other)
        return SymTensor(self.n, self.k, self.dim_y, self.coeffs + other.coeffs)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        _check_same(self, other)
        return SymTensor(self.n, self.k, self.dim_y, self.coeffs - other.coeffs)

    def __mul__(self, t: float) -> "SymTensor":
        return SymTensor(self.n, self.k, self.dim_y, float(t) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensor":
        return self * -1.0

    def norm(self) -> float:
        return math.sqrt(max(inner(self, self), 0.0))

    def __call__(self, *args) -> np.ndarray:
        return eval_tensor(self, *args)

    # serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "dimY": self.dim_y,
            "entries": [
                [[i + 1 for i in idx], [float(v) for v in val]]
                for idx, val in zip(multi_indices(self.n, self.k), self.coeffs)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SymTensor":
        n, k, dim_y = int(d["n"]), int(d["k"]), int(d["dimY"])
        lookup = {idx: i for i, idx in enumerate(multi_indices(n, k))}
        coeffs = np.zeros((len(lookup), dim_y))
        for idx, vals in d["entries"]:
            key = tuple(sorted(int(i) - 1 for i in idx))
            if key not in lookup:
                raise ValueError(f"multi-index {idx} out of range for n={n}, k={k}")
            coeffs[lookup[key]] = np.asarray(vals, dtype=float).reshape(dim_y)
        return cls(n, k, dim_y, coeffs)


def _check_same(a: SymTensor, b: SymTensor) -> None:
    if a.signature != b.signature:
        raise ValueError(f"shape mismatch: {a.signature} vs {b.signature}")


@dataclass(frozen=True)
class Dyad:
    """The tensor t * b (x) a^{(x)k}."""

    t: float
    b: np.ndarray
    a: np.ndarray
    k: int


def eval_tensor(mu: SymTensor, *args) -> np.ndarray:
    """Evaluate mu(h1, ..., hk); returns a vector in R^dimY."""
    if len(args) != mu.k:
        raise ValueError(f"expected {mu.k} arguments, got {len(args)}")
    hs = [np.asarray(h, dtype=float) for h in args]
    for h in hs:
        if h.shape != (mu.n,):
            raise ValueError(f"argument of shape {h.shape}, expected ({mu.n},)")
    out = mu.to_full()
    for h in hs:
        out = np.tensordot(h, out, axes=(0, 0))
    return out


def eval_diagonal(mu: SymTensor, x: np.ndarray) -> np.ndarray:
    """mu(x, ..., x) for a batch of points x of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (mu.dim_y,))
    for w, idx, val in zip(orbit_sizes(mu.n, mu.k), multi_indices(mu.n, mu.k), mu.coeffs):
        mono = np.prod(x[..., list(idx)], axis=-1)
        out += w * mono[..., None] * val
    return out


def dyad_to_tensor(d: Dyad) -> SymTensor:
    a = np.asarray(d.a, dtype=float)
    b = np.atleast_1d(np.asarray(d.b, dtype=float))
    n = a.shape[0]
    coeffs = np.array([d.t * np.prod(a[list(idx)]) * b for idx in multi_indices(n, d.k)])
    return SymTensor(n, d.k, b.shape[0], coeffs)


def dyad(t: float, b, a, k: int) -> SymTensor:
    return dyad_to_tensor(Dyad(t, np.atleast_1d(np.asarray(b, dtype=float)), np.asarray(a, dtype=float), k))


def inner(xi: SymTensor, zeta: SymTensor) -> float:
    """Full-index scalar product sum_{i1..ik} xi_{i..} . zeta_{i..}."""
    _check_same(xi, zeta)
    w = orbit_sizes(xi.n, xi.k)
    return float(np.sum(w[:, None] * xi.coeffs * zeta.coeffs))


def matrix_view(delta: SymTensor) -> np.ndarray:
    """delta as a linear map R^n -> (k-1)-forms, i.e. an n x (n^(k-1) dimY) matrix."""
    return delta.to_full().reshape(delta.n, -1)


def rank_one_factor(delta: SymTensor, rtol: float = RANK_TOL):
    """Factor delta = b (x) nu^{(x)k} with |nu| = 1.

    Returns ``(b, nu)`` or ``None`` when the matrix view of delta has rank > 1.
    The first nonzero coordinate of nu is made positive.
    """
    m = matrix_view(delta)
    s_all = np.linalg.svd(m, compute_uv=False)
    if s_all[0] == 0.0:
        raise ValueError("rank_one_factor needs a nonzero tensor")
    if len(s_all) > 1 and s_all[1] > rtol * s_all[0]:
        return None
    u, _, _ = np.linalg.svd(m)
    nu = u[:, 0]
    big = np.flatnonzero(np.abs(nu) > 1e-12 * np.abs(nu).max())
    if nu[big[0]] < 0:
        nu = -nu
    b = eval_tensor(delta, *([nu] * delta.k))
    return b, nu


def poly_kth_derivative_check(mu: SymTensor, step: float = 1e-3, rtol: Optional[float] = None,
                              trials: int = 3, rng=None) -> bool:
    """Self-test: the k-th difference of x -> mu(x,...,x) recovers k! mu.

    Uses the polarised central difference
    sum_{eps in {+-1}^k} (prod eps) f(x + step/2 sum eps_i h_i) / step^k,
    which is exact for homogeneous polynomials of degree k up to rounding.
    """
    if rtol is None:
        rtol = 1e-6 if mu.k <= 2 else 1e-4
    rng = np.random.default_rng(rng)
    k = mu.k
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
    weights = np.prod(signs, axis=1)
    for _ in range(trials):
        # unit probes keep cancellation error at the eps/step^k level
        x = _unit(rng.standard_normal(mu.n))
        hs = np.array([_unit(h) for h in rng.standard_normal((k, mu.n))])
        pts = x + 0.5 * step * signs @ hs
        vals = eval_diagonal(mu, pts)
        approx = (weights[:, None] * vals).sum(axis=0) / step**k
        exact = math.factorial(k) * eval_tensor(mu, *hs)
        scale = max(np.abs(exact).max(), math.factorial(k) * mu.norm() * np.prod(np.linalg.norm(hs, axis=1)))
        if np.abs(approx - exact).max() > rtol * scale:
            return False
    return True


def _unit(v):
    return v / np.linalg.norm(v)


# symmetric 2x2 matrices ------------------------------------------------------

def sym2(x: float, z: float, y: float) -> SymTensor:
    """The symmetric matrix [[x, z], [z, y]]."""
    return SymTensor(2, 2, 1, np.array([[x], [z], [y]]))


def sym2_det(v):
    """det of [[x, z], [z, y]] in ambient coordinates (x, z, y); batched."""
    v = np.asarray(v, dtype=float)
    return v[..., 0] * v[..., 2] - v[..., 1] ** 2


def sym2_trace(v):
    v = np.asarray(v, dtype=float)
    return v[..., 0] + v[..., 2]

"""Scalar fields on ambient spaces and the suite of test integrands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor_core import sym2_det, sym2_trace


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def cube(cls, dim: int, half_width: float, center=None) -> "Box":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(c - half_width, c + half_width)

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((m, self.dim))

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ScalarField:
    """A function on R^dim, vectorised over leading axes.

    ``func`` maps an array of shape (..., dim) to shape (...); it may return
    -inf.  ``domain`` of None means the whole space.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dim: int
    domain: Optional[Box] = None
    homogeneous: bool = False
    name: str = ""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.func(x), dtype=float)
        return out if out.ndim else float(out)

    def check_homogeneous(self, rng=None, m: int = 100, rtol: float = 1e-9) -> bool:
        rng = np.random.default_rng(rng)
        x = rng.standard_normal((m, self.dim))
        if self.domain is not None:
            x = self.domain.sample(rng, m)
        base = self(x)
        for t in (0.5, 2.0):
            if np.any(np.abs(self(t * x) - t * base) > rtol * (1 + np.abs(t * base))):
                return False
        return True


def linear_field(v, name: str = "linear") -> ScalarField:
    v = np.asarray(v, dtype=float)
    return ScalarField(lambda x: x @ v, len(v), homogeneous=True, name=name)


def weighted_norm_field(weights, name: str = "norm") -> ScalarField:
    w = np.asarray(weights, dtype=float)
    return ScalarField(lambda x: np.sqrt(np.sum(w * x * x, axis=-1)), len(w), homogeneous=True, name=name)


def quadratic_field(q, name: str = "quadratic") -> ScalarField:
    q = np.asarray(q, dtype=float)
    return ScalarField(lambda x: np.einsum("...i,ij,...j->...", x, q, x), q.shape[0], name=name)


# symmetric 2x2 matrices in coordinates (x, z, y) <-> [[x, z], [z, y]] --------

SYM2_WEIGHTS = np.array([1.0, 2.0, 1.0])


def _sym2_eigs(v):
    v = np.asarray(v, dtype=float)
    m = 0.5 * sym2_trace(v)
    r = np.hypot(0.5 * (v[..., 0] - v[..., 2]), v[..., 1])
    return m - r, m + r


def sym2_frobenius(v):
    return np.sqrt(np.sum(SYM2_WEIGHTS * np.asarray(v) ** 2, axis=-1))


def sym2_suite() -> list[ScalarField]:
    """Positively 1-homogeneous rank-one convex functions on symmetric 2x2 matrices."""

    def nuclear(v):
        lo, hi = _sym2_eigs(v)
        return np.abs(lo) + np.abs(hi)

    def spectral(v):
        lo, hi = _sym2_eigs(v)
        return np.maximum(np.abs(lo), np.abs(hi))

    def det_augmented(gamma):
        # |xi|^2 + 2 gamma det xi is positive semidefinite for |gamma| <= 1
        return lambda v: np.sqrt(np.maximum(sym2_frobenius(v) ** 2 + 2 * gamma * sym2_det(v), 0.0))

    return [
        ScalarField(sym2_frobenius, 3, homogeneous=True, name="frobenius"),
        ScalarField(nuclear, 3, homogeneous=True, name="nuclear"),
        ScalarField(spectral, 3, homogeneous=True, name="spectral"),
        ScalarField(lambda v: np.sum(np.abs(v), axis=-1), 3, homogeneous=True, name="coeff_l1"),
        weighted_norm_field([1.0, 5.0, 3.0], name="weighted_frobenius"),
        ScalarField(det_augmented(-0.5), 3, homogeneous=True, name="det_augmented_-0.5"),
        ScalarField(det_augmented(0.9), 3, homogeneous=True, name="det_augmented_0.9"),
        ScalarField(lambda v: np.abs(sym2_trace(v)) + sym2_frobenius(v), 3, homogeneous=True,
                    name="trace_plus_frobenius"),
    ]


def triple_product_field(beta: float = 0.98) -> ScalarField:
    """|x| + beta x1 x2 x3 / |x|^2 on R^3.

    Separately convex (convex along the coordinate axes, which is the
    rank-one cone of diagonal 3x3 matrices) but not convex for
    0.95 <= beta <= 1.
    """

    def f(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        with np.errstate(invalid="ignore", divide="ignore"):
            cub = np.where(r2 > 0, x[..., 0] * x[..., 1] * x[..., 2] / np.where(r2 > 0, r2, 1.0), 0.0)
        return r + beta * cub

    return ScalarField(f, 3, homogeneous=True, name=f"triple_product_{beta}")


# coefficients of the cubic form on monomials x_i x_j x_l (i <= j <= l) in the
# coordinates (x, z, y); 0.9 of the largest multiple keeping rank-one convexity
_CUBIC = np.array([0.1698, -0.1407, -0.1485, -0.4275, -0.1516, 0.1392, -0.0481, 0.5526, 0.054, -0.1311])
_CUBIC_MONOMIALS = [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 1, 1), (0, 1, 2), (0, 2, 2),
                    (1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 2, 2)]


def cubic_perturbed_frobenius() -> ScalarField:
    """|xi| + c(xi)/|xi|^2 on symmetric 2x2 matrices, c a fixed cubic form.

    Rank-one convex (sampled second differences along a (x) a are >= 0) but
    not convex: second differences along generic directions reach -0.13.
    """

    def f(v):
        v = np.asarray(v, dtype=float)
        n2 = np.sum(SYM2_WEIGHTS * v * v, axis=-1)
        cub = sum(c * v[..., i] * v[..., j] * v[..., l] for c, (i, j, l) in zip(_CUBIC, _CUBIC_MONOMIALS))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n2 > 0, np.sqrt(n2) + cub / np.where(n2 > 0, n2, 1.0), 0.0)

    return ScalarField(f, 3, homogeneous=True, name="cubic_perturbed_frobenius")

"""Cones of directions: membership, seeded sampling, spanning bases and
separating functionals.

Ambient vectors are flat numpy arrays.  Tensor cones (``symmetric_dyad``,
``higher_dyad``) use the sorted-coefficient coordinates of
:mod:`semicone.tensor_core` together with the orbit-weighted inner product;
matrix cones (``rank_one_matrix``, ``eps_cone``) use row-major flattening with
the Frobenius inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .tensor_core import SymTensor, ambient_weights, eval_tensor, matrix_view, multi_indices, sym_dim

KINDS = ("full", "custom", "symmetric_dyad", "higher_dyad", "rank_one_matrix", "eps_cone")
MAX_REJECTION_DRAWS = 10**6


class SpanDeficiencyError(RuntimeError):
    def __init__(self, rank: int, dim: int):
        super().__init__(f"cone samples span only rank {rank} of {dim}")
        self.rank = rank
        self.dim = dim


class ThinConeError(RuntimeError):
    pass


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class DirectionCone:
    """A balanced spanning cone given by membership and a sampler.

    Use the constructors :meth:`full`, :meth:`custom`, :meth:`symmetric_dyad`,
    :meth:`higher_dyad`, :meth:`rank_one_matrix` and :meth:`eps_cone`.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)
    seed: int = 0
    weights: Optional[np.ndarray] = None

    # constructors -------------------------------------------------------------
    @classmethod
    def full(cls, dim: int, seed: int = 0) -> "DirectionCone":
        return cls("full", dim, {}, seed)

    @classmethod
    def custom(cls, generators, seed: int = 0) -> "DirectionCone":
        gens = np.atleast_2d(np.asarray(generators, dtype=float))
        return cls("custom", gens.shape[1], {"generators": gens}, seed)

    @classmethod
    def axes(cls, dim: int, seed: int = 0) -> "DirectionCone":
        return cls.custom(np.eye(dim), seed)

    @classmethod
    def higher_dyad(cls, n: int, k: int, dim_y: int = 1, seed: int = 0) -> "DirectionCone":
        return cls("higher_dyad", sym_dim(n, k, dim_y), {"n": n, "k": k, "dim_y": dim_y}, seed,
                   ambient_weights(n, k, dim_y))

    @classmethod
    def symmetric_dyad(cls, n: int, seed: int = 0) -> "DirectionCone":
        return cls("symmetric_dyad", sym_dim(n, 2), {"n": n, "k": 2, "dim_y": 1}, seed,
                   ambient_weights(n, 2))

    @classmethod
    def rank_one_matrix(cls, rows: int, cols: int, seed: int = 0) -> "DirectionCone":
        return cls("rank_one_matrix", rows * cols, {"rows": rows, "cols": cols}, seed)

    @classmethod
    def eps_cone(cls, xi0, eps0: float, seed: int = 0) -> "DirectionCone":
        xi0 = np.asarray(xi0, dtype=float)
        if not 0 < eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        n = xi0.shape[0]
        return cls("eps_cone", n * n, {"xi0": xi0, "eps0": float(eps0), "rows": n, "cols": n}, seed)

    @classmethod
    def from_spec(cls, spec: dict) -> "DirectionCone":
        kind = spec["kind"]
        p = dict(spec.get("params", {}))
        seed = int(spec.get("seed", 0))
        if kind == "full":
            return cls.full(int(p["dim"]), seed)
        if kind == "custom":
            return cls.custom(p["generators"], seed)
        if kind == "axes":
            return cls.axes(int(p["dim"]), seed)
        if kind == "symmetric_dyad":
            return cls.symmetric_dyad(int(p["n"]), seed)
        if kind == "higher_dyad":
            return cls.higher_dyad(int(p["n"]), int(p["k"]), int(p.get("dim_y", 1)), seed)
        if kind == "rank_one_matrix":
            return cls.rank_one_matrix(int(p["rows"]), int(p["cols"]), seed)
        if kind == "eps_cone":
            return cls.eps_cone(p["xi0"], float(p["eps0"]), seed)
        raise ValueError(f"unknown cone kind {kind!r}")

    def to_dict(self) -> dict:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "seed": self.seed}

    def with_seed(self, seed: int) -> "DirectionCone":
        return DirectionCone(self.kind, self.dim, self.params, seed, self.weights)

    # geometry -----------------------------------------------------------------
    def inner(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.weights is None:
            return np.sum(u * v, axis=-1)
        return np.sum(self.weights * u * v, axis=-1)

    def norm(self, v):
        return np.sqrt(np.maximum(self.inner(v, v), 0.0))

    def rng(self, stream: int = 0) -> np.random.Generator:
        # counter-based generator; one independent stream per (seed, stream)
        return np.random.Generator(np.random.Philox(key=[self.seed, stream]))

    @property
    def is_dyadic(self) -> bool:
        return self.kind in ("symmetric_dyad", "higher_dyad")

    @property
    def is_matrix(self) -> bool:
        return self.kind in ("rank_one_matrix", "eps_cone")

    def as_tensor(self, v) -> SymTensor:
        p = self.params
        return SymTensor.from_vector(v, p["n"], p["k"], p["dim_y"])

    # parametrisation ----------------------------------------------------------
    def _draw_params(self, rng: np.random.Generator, m: int):
        """Raw parameter draws (before rejection) for the parametric kinds."""
        p = self.params
        if self.is_dyadic:
            a = _unit_rows(rng.standard_normal((m, p["n"])))
            b = _unit_rows(rng.standard_normal((m, p["dim_y"])))
            return a, b
        if self.is_matrix:
            a = _unit_rows(rng.standard_normal((m, p["rows"])))
            b = _unit_rows(rng.standard_normal((m, p["cols"])))
            return a, b
        if self.kind == "full":
            return (_unit_rows(rng.standard_normal((m, self.dim))),)
        gens = p["generators"]
        idx = rng.integers(0, len(gens), size=m)
        sign = rng.choice([-1.0, 1.0], size=m)
        return (sign[:, None] * gens[idx],)

    def _vectors(self, params) -> np.ndarray:
        """Unnormalised ambient vectors from parameters (batched)."""
        p = self.params
        if self.is_dyadic:
            a, b = params
            mono = np.stack([np.prod(a[:, list(idx)], axis=1) for idx in multi_indices(p["n"], p["k"])], axis=1)
            return (mono[:, :, None] * b[:, None, :]).reshape(len(a), -1)
        if self.is_matrix:
            a, b = params
            return (a[:, :, None] * b[:, None, :]).reshape(len(a), -1)
        return params[0]

    def _accept(self, params) -> np.ndarray:
        if self.kind != "eps_cone":
            return np.ones(len(params[0]), dtype=bool)
        a, b = params
        val = np.einsum("mi,ij,mj->m", a, self.params["xi0"], b)
        return np.abs(val) >= self.params["eps0"]

    def sample_params(self, m: int, stream: int = 0):
        if m < 1:
            raise ValueError("m must be >= 1")
        rng = self.rng(stream)
        if self.kind != "eps_cone":
            return self._draw_params(rng, m)
        kept, draws, n_kept = [], 0, 0
        chunk = 10_000
        while n_kept < m:
            if draws >= MAX_REJECTION_DRAWS:
                raise ThinConeError(
                    f"eps_cone rejection sampler accepted {n_kept}/{m} after {draws} draws; "
                    f"eps0={self.params['eps0']} is too close to 1")
            par = self._draw_params(rng, chunk)
            draws += chunk
            ok = self._accept(par)
            kept.append(tuple(x[ok] for x in par))
            n_kept += int(ok.sum())
        return tuple(np.concatenate([k[i] for k in kept])[:m] for i in range(2))

    def sample_unit(self, m: int, stream: int = 0) -> np.ndarray:
        """m unit-norm members of the cone; deterministic given the seed."""
        v = self._vectors(self.sample_params(m, stream))
        return v / self.norm(v)[:, None]

    # membership -----------------------------------------------------------------
    def best_rank_one(self, v) -> np.ndarray:
        """Nearest-looking cone member used for distance estimates."""
        v = np.asarray(v, dtype=float)
        if self.is_dyadic:
            t = self.as_tensor(v)
            m = matrix_view(t)
            u, _, _ = np.linalg.svd(m)
            nu = u[:, 0]
            b = eval_tensor(t, *([nu] * t.k))
            return self._vectors((nu[None, :], b[None, :]))[0]
        p = self.params
        u, s, vt = np.linalg.svd(v.reshape(p["rows"], p["cols"]))
        return (s[0] * np.outer(u[:, 0], vt[0])).ravel()

    def membership(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of shape {v.shape}, cone ambient dimension {self.dim}")
        nv = float(self.norm(v))
        if nv == 0.0:
            return True
        if self.kind == "full":
            return True
        if self.kind == "custom":
            g = self.params["generators"]
            gn = g / self.norm(g)[:, None]
            proj = self.inner(gn, v)[:, None] * gn
            return bool(np.min(self.norm(v - proj)) <= tol * nv)
        r1 = self.best_rank_one(v)
        if float(self.norm(v - r1)) > tol * nv:
            return False
        if self.kind == "eps_cone":
            p = self.params
            u, s, vt = np.linalg.svd(v.reshape(p["rows"], p["cols"]))
            return bool(abs(u[:, 0] @ p["xi0"] @ vt[0]) >= p["eps0"] - tol)
        return True

    # spanning -------------------------------------------------------------------
    def candidate_pool(self, m: Optional[int] = None, stream: int = 1) -> np.ndarray:
        if self.kind == "custom":
            g = self.params["generators"]
            return g / self.norm(g)[:, None]
        return self.sample_unit(m or 20 * self.dim, stream)

    def spanning_basis(self, m: Optional[int] = None, start=None, stream: int = 1) -> np.ndarray:
        """Linearly independent unit cone members of full ambient dimension.

        Picked greedily by largest residual after projecting out the vectors
        already chosen.  ``start`` (a cone member) is placed first if given.
        """
        pool = self.candidate_pool(m, stream)
        chosen, ortho = [], []
        if start is not None:
            s = np.asarray(start, dtype=float)
            s = s / self.norm(s)
            chosen.append(s)
            ortho.append(s)
        while len(chosen) < self.dim:
            res = pool.copy()
            for q in ortho:
                res -= self.inner(res, q)[:, None] * q
            rn = self.norm(res)
            i = int(np.argmax(rn))
            if rn[i] < 1e-10:
                break
            chosen.append(pool[i])
            ortho.append(res[i] / rn[i])
        basis = np.array(chosen) if chosen else np.zeros((0, self.dim))
        rank = gauss_rank(basis)
        if rank < self.dim:
            raise SpanDeficiencyError(rank, self.dim)
        return basis


def gauss_rank(a, tol: float = 1e-10) -> int:
    """Rank by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=float)
    if a.size == 0:
        return 0
    rows, cols = a.shape
    scale = max(np.abs(a).max(), 1e-300)
    rank, r = 0, 0
    for c in range(cols):
        if r >= rows:
            break
        piv = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[piv, c]) <= tol * scale:
            continue
        a[[r, piv]] = a[[piv, r]]
        a[r + 1:] -= np.outer(a[r + 1:, c] / a[r, c], a[r])
        r += 1
        rank += 1
    return rank


# separating functionals ---------------------------------------------------------

@dataclass(frozen=True)
class SeparatingFunctional:
    ell: np.ndarray
    margin: float
    n_samples: int

    def to_dict(self):
        return {"verdict": "separating", "ell": self.ell, "margin": self.margin, "n_samples": self.n_samples}


@dataclass(frozen=True)
class ConeRefutation:
    ell: np.ndarray
    witness: np.ndarray
    value: float

    def to_dict(self):
        return {"verdict": "refuted", "ell": self.ell, "witness": self.witness, "value": self.value}


def _bisect_zero(cone: DirectionCone, ell, p_pos, p_neg, iters: int = 200):
    """Bisect along the normalised linear path between two parameter sets."""

    def value(t):
        # antipodal parameters make the path pass through zero; report nan there
        with np.errstate(invalid="ignore", divide="ignore"):
            par = tuple(_unit_rows(((1 - t) * x + t * y)[None, :]) for x, y in zip(p_pos, p_neg))
            v = cone._vectors(par)[0]
            v = v / cone.norm(v)
        return float(v @ ell), v

    lo, hi = 0.0, 1.0
    v = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        val, v = value(mid)
        if val > 0:
            lo = mid
        elif val < 0:
            hi = mid
        else:
            break
    return value(0.5 * (lo + hi))


def verify_separating(cone: DirectionCone, ell, m: int = 10_000, zero_tol: float = 1e-12):
    """Check that ell stays away from zero on unit cone members.

    ``ell`` acts on ambient coordinates by the plain dot product.  Returns a
    :class:`SeparatingFunctional` with the sampled margin or, when a unit member
    with |ell(d)| <= zero_tol is found, a :class:`ConeRefutation`.
    """
    ell = np.asarray(ell, dtype=float)
    if not np.any(ell):
        raise ValueError("ell must be nonzero")
    if cone.kind == "custom":
        pool = cone.candidate_pool()
        vals = pool @ ell
        i = int(np.argmin(np.abs(vals)))
        if abs(vals[i]) <= zero_tol:
            return ConeRefutation(ell, pool[i], float(vals[i]))
        return SeparatingFunctional(ell, float(abs(vals[i])), len(pool))

    params = cone.sample_params(m)
    vecs = cone._vectors(params)
    vecs = vecs / cone.norm(vecs)[:, None]
    vals = vecs @ ell
    i = int(np.argmin(np.abs(vals)))
    if abs(vals[i]) <= zero_tol:
        return ConeRefutation(ell, vecs[i], float(vals[i]))
    ip, ineg = int(np.argmax(vals)), int(np.argmin(vals))
    if vals[ip] > 0 > vals[ineg]:
        val, v = _bisect_zero(cone, ell, tuple(p[ip] for p in params), tuple(p[ineg] for p in params))
        if abs(val) <= zero_tol and cone.membership(v):
            return ConeRefutation(ell, v, val)
    return SeparatingFunctional(ell, float(abs(vals[i])), m)

"""Dense real symmetric linear algebra.

Symmetric eigendecomposition (Householder tridiagonalization followed by
implicit-shift QL), numerically safe row softmax, and cosine similarity.
Everything operates on float64 regardless of how inputs were stored on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NumericalFailure

_SYM_TOL = 1e-12
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric n x n matrix. Asymmetry beyond 1e-12 is rejected."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidInput(f"expected square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInput("matrix entries must be finite")
        skew = np.max(np.abs(a - a.T)) if a.shape[0] > 1 else 0.0
        if skew > _SYM_TOL:
            raise InvalidInput(f"matrix is asymmetric: max |a - a.T| = {skew:.3e}")
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvalues ascending; column j of `vectors` belongs to values[j]."""

    values: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.values, dtype=np.float64)
        v = np.asarray(self.vectors, dtype=np.float64)
        n = w.shape[0]
        if v.shape != (n, n):
            raise InvalidInput(f"vectors shape {v.shape} does not match {n} values")
        if np.any(np.diff(w) < -1e-10):
            raise InvalidInput("eigenvalues must be nondecreasing")
        norms = np.linalg.norm(v, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise InvalidInput("eigenvector columns must be unit norm")
        object.__setattr__(self, "values", w)
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _tridiagonalize(a: np.ndarray):
    """Householder reduction A -> Q T Q^T with T tridiagonal.

    Returns (d, e, q): diagonal, subdiagonal (length n-1), and the accumulated
    orthogonal transform Q.
    """
    n = a.shape[0]
    t = a.copy()
    q = np.eye(n)
    for k in range(n - 2):
        x = t[k + 1:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        # reflector that maps x onto -sign(x0)*|x| e0; sign choice avoids cancellation
        alpha = -math.copysign(norm_x, x[0] if x[0] != 0.0 else 1.0)
        u = x.copy()
        u[0] -= alpha
        unorm = np.linalg.norm(u)
        if unorm == 0.0:
            continue
        w = u / unorm
        # two-sided rank-2 update of the trailing block
        block = t[k + 1:, k + 1:]
        p = block @ w
        v2 = p - (w @ p) * w
        block -= 2.0 * np.outer(w, v2)
        block -= 2.0 * np.outer(v2, w)
        t[k + 1:, k] = 0.0
        t[k, k + 1:] = 0.0
        t[k + 1, k] = alpha
        t[k, k + 1] = alpha
        # accumulate Q <- Q * H on the trailing columns
        qb = q[:, k + 1:]
        qb -= 2.0 * np.outer(qb @ w, w)
    d = np.diag(t).copy()
    e = np.diag(t, 1).copy()
    return d, e, q


def _ql_implicit_shift(dvec: np.ndarray, evec: np.ndarray, q: np.ndarray, budget: int):
    """Implicit-shift QL on a symmetric tridiagonal, rotating columns of q.

    dvec is modified into the eigenvalues; q's columns become the eigenvectors.
    Raises NumericalFailure if the total QL iteration count exceeds `budget`.
    The scalar recurrence runs on Python floats; only the eigenvector rotation
    touches numpy (rows i, i+1 of q transposed, as one 2x2 matmul).
    """
    n = dvec.shape[0]
    if n == 1:
        return
    d = dvec.tolist()
    ee = evec.tolist() + [0.0]
    qt = np.ascontiguousarray(q.T)  # row-contiguous so rotations touch whole rows
    rot = np.empty((2, 2))
    scratch = np.empty((2, n))
    eps = float(_EPS)
    total = 0
    for l in range(n):
        while True:
            # first index m >= l where the subdiagonal is negligible
            m = l
            while m < n - 1:
                if abs(ee[m]) <= eps * (abs(d[m]) + abs(d[m + 1])):
                    break
                m += 1
            if m == l:
                break
            total += 1
            if total > budget:
                raise NumericalFailure(
                    f"QL did not converge within {budget} iterations (order {n})"
                )
            g = (d[l + 1] - d[l]) / (2.0 * ee[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + ee[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * ee[i]
                b = c * ee[i]
                r = math.hypot(f, g)
                ee[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    ee[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                # rows (i, i+1) <- [[c, -s], [s, c]] @ rows (i, i+1)
                rot[0, 0] = c
                rot[0, 1] = -s
                rot[1, 0] = s
                rot[1, 1] = c
                np.matmul(rot, qt[i: i + 2], out=scratch)
                qt[i: i + 2] = scratch
            if underflow:
                continue
            d[l] -= p
            ee[l] = g
            ee[m] = 0.0
    dvec[:] = d
    q[:, :] = qt.T


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0.0] = 1.0
    return vectors * signs


def sym_eigendecompose(m: SymMatrix, method: str = "ql") -> EigenBasis:
    """Full eigendecomposition of a symmetric matrix, eigenvalues ascending.

    method="ql" runs the in-house Householder + implicit-shift QL solver with
    an iteration budget of 200*n. method="lapack" delegates to
    numpy.linalg.eigh; both apply the same deterministic sign convention and
    satisfy the same residual contract.
    """
    a = m.entries
    n = m.n
    if method == "lapack":
        w, v = np.linalg.eigh(a)
    elif method == "ql":
        if n == 1:
            w = np.array([a[0, 0]])
            v = np.array([[1.0]])
        else:
            d, e, q = _tridiagonalize(a)
            _ql_implicit_shift(d, e, q, budget=200 * n)
            w, v = d, q
    else:
        raise InvalidInput(f"unknown eigensolver method {method!r}")
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = _fix_signs(np.ascontiguousarray(v[:, order]))
    return EigenBasis(values=w, vectors=v)


def row_softmax(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction. Rows sum to 1."""
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInput("softmax input must be finite")
    shifted = a - a.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 if either norm < 1e-12."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInput(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def normalize_rows(x: np.ndarray, eps: float = 1e-12):
    """L2-normalize rows; rows with norm < eps become zero rows.

    Returns (normalized, norms). Shared by every cosine-structured loss so the
    defined-zero convention is identical across modules.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norms < eps, 1.0, norms)
    out = x / safe
    out = np.where(norms < eps, 0.0, out)
    return out, norms.squeeze(-1)


@dataclass(frozen=True)
class CosineCache:
    """Forward state needed to backpropagate through a cosine matrix."""

    a_hat: np.ndarray = field(repr=False)
    b_hat: np.ndarray = field(repr=False)
    a_norm: np.ndarray = field(repr=False)
    b_norm: np.ndarray = field(repr=False)
    sims: np.ndarray = field(repr=False)


def cosine_matrix(a: np.ndarray, b: np.ndarray):
    """All-pairs cosine similarities between rows of a and rows of b.

    Returns (sims, cache); zero-norm rows yield zero similarities and later
    receive zero gradient.
    """
    a_hat, a_norm = normalize_rows(a)
    b_hat, b_norm = normalize_rows(b)
    sims = np.clip(a_hat @ b_hat.T, -1.0, 1.0)
    return sims, CosineCache(a_hat, b_hat, a_norm, b_norm, sims)


def cosine_matrix_backward(upstream: np.ndarray, cache: CosineCache):
    """Gradients of sum(upstream * sims) w.r.t. the raw row matrices."""
    g = np.asarray(upstream, dtype=np.float64)
    row_dot = (g * cache.sims).sum(axis=1, keepdims=True)
    col_dot = (g * cache.sims).sum(axis=0)[:, None]
    a_safe = np.where(cache.a_norm < 1e-12, np.inf, cache.a_norm)[:, None]
    b_safe = np.where(cache.b_norm < 1e-12, np.inf, cache.b_norm)[:, None]
    da = (g @ cache.b_hat - row_dot * cache.a_hat) / a_safe
    db = (g.T @ cache.a_hat - col_dot * cache.b_hat) / b_safe
    return da, db

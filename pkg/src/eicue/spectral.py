"""Graph Laplacians, low-eigenvector extraction, eigengap choice, matting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DegenerateGraph, InvalidInput
from .features import SegmentMap
from .linalg import EigenBasis, SymMatrix, sym_eigendecompose


@dataclass(frozen=True)
class LaplacianBundle:
    degree: np.ndarray = field(repr=False)
    l_sym: SymMatrix = field(repr=False)
    basis: EigenBasis = field(repr=False)
    k: int
    v_hat: np.ndarray = field(repr=False)  # (n, k) rows are per-patch eigenfeatures


def build_laplacian(a: SymMatrix, eps: float = 0.0):
    """Degrees and the symmetric normalized Laplacian of adjacency a.

    eps > 0 adds eps*I to the adjacency before computing degrees, for graphs
    whose clamped affinities might otherwise isolate a patch. Any degree at
    or below 1e-12 raises DegenerateGraph naming the offending patch.
    """
    entries = a.entries
    if eps > 0.0:
        entries = entries + eps * np.eye(a.n)
    degree = entries.sum(axis=1)
    bad = np.nonzero(degree <= 1e-12)[0]
    if bad.size:
        raise DegenerateGraph(f"isolated patch {int(bad[0])}: degree {degree[bad[0]]:.3e}")
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.diag(degree) - entries
    l_sym = lap * inv_sqrt[:, None] * inv_sqrt[None, :]
    l_sym = (l_sym + l_sym.T) / 2.0
    return degree, SymMatrix(l_sym)


def smallest_k(basis: EigenBasis, k: int) -> np.ndarray:
    """The k eigenvector columns with smallest eigenvalues, as an (n, k) slab."""
    if not 1 <= k <= basis.n:
        raise InvalidInput(f"k={k} out of range 1..{basis.n}")
    return basis.vectors[:, :k].copy()


def laplacian_bundle(a: SymMatrix, k: int, eps: float = 0.0,
                     method: str = "ql") -> LaplacianBundle:
    degree, l_sym = build_laplacian(a, eps=eps)
    basis = sym_eigendecompose(l_sym, method=method)
    return LaplacianBundle(degree=degree, l_sym=l_sym, basis=basis, k=k,
                           v_hat=smallest_k(basis, k))


def eigengap_select(values: np.ndarray, k_max: int) -> int:
    """Count of eigenvectors before the largest consecutive gap.

    Scans j in [1, k_max]; returns the j maximizing values[j] - values[j-1],
    ties to the smaller j.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InvalidInput("need at least 2 eigenvalues")
    k_max = min(int(k_max), v.size - 1)
    if k_max < 1:
        raise InvalidInput("k_max must be >= 1")
    gaps = v[1: k_max + 1] - v[:k_max]
    return int(np.argmax(gaps)) + 1


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Classic between-class-variance maximizer on [0, 1] data."""
    hist, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    total = hist.sum()
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)
    w1 = total - w0
    sum0 = np.cumsum(hist * centers)
    mean0 = np.divide(sum0, w0, out=np.zeros_like(sum0), where=w0 > 0)
    mean1 = np.divide(sum0[-1] - sum0, w1, out=np.zeros_like(sum0), where=w1 > 0)
    between = w0 * w1 * (mean0 - mean1) ** 2
    # the maximum is a plateau across empty gap bins; take its midpoint
    best = np.nonzero(between == between.max())[0]
    return float(centers[(best[0] + best[-1]) // 2])


def matte(v_hat_col: np.ndarray, h: int, w: int, threshold_mode: str = "otsu",
          flip: bool = False) -> SegmentMap:
    """Binary foreground map from one eigenvector.

    Min-max normalizes to [0, 1], thresholds (Otsu by default, or a fixed
    cut like "fixed:0.5"), and labels the smaller side 1 unless flipped.
    """
    v = np.asarray(v_hat_col, dtype=np.float64).ravel()
    if v.size != h * w:
        raise InvalidInput(f"vector length {v.size} != {h}x{w}")
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-14:
        raise DegenerateInput("constant eigenvector cannot be matted")
    norm = (v - lo) / (hi - lo)
    if threshold_mode == "otsu":
        t = otsu_threshold(norm)
    elif threshold_mode.startswith("fixed:"):
        t = float(threshold_mode.split(":", 1)[1])
    else:
        raise InvalidInput(f"unknown threshold mode {threshold_mode!r}")
    fg = norm > t
    if fg.sum() > (~fg).sum():
        fg = ~fg
    if flip:
        fg = ~fg
    return SegmentMap(h=h, w=w, labels=fg.astype(np.int64))

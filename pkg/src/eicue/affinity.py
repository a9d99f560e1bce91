"""Adjacency construction: color affinity, semantic similarity, and their sum.

The color kernel is exp(-||x(p) - x(q)||_2 / (2 sigma_c^2)) with the
unsquared L2 distance in the numerator, restricted to patch pairs within a
Chebyshev radius; the semantic part is the raw Gram matrix of the learned
features, optionally clamped at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .features import FeatureGrid, PatchImage, coord_grid
from .linalg import SymMatrix


@dataclass(frozen=True)
class AffinityConfig:
    sigma_c: float = 1.0
    radius: int = 2
    clamp_negative: bool = True

    def __post_init__(self):
        if self.sigma_c <= 0:
            raise InvalidInput("sigma_c must be > 0")
        if self.radius < 0:
            raise InvalidInput("radius must be >= 0")


def color_affinity(img: PatchImage, cfg: AffinityConfig) -> SymMatrix:
    """RBF kernel on patch colors, zero outside the Chebyshev radius band."""
    coords = coord_grid(img.h, img.w)
    cheb = np.max(np.abs(coords[:, None, :] - coords[None, :, :]), axis=2)
    dist = np.linalg.norm(img.rgb[:, None, :] - img.rgb[None, :, :], axis=2)
    a = np.exp(-dist / (2.0 * cfg.sigma_c ** 2))
    a[cheb > cfg.radius] = 0.0
    np.fill_diagonal(a, 1.0)
    a = (a + a.T) / 2.0
    return SymMatrix(a)


def semantic_affinity(s: FeatureGrid, cfg: AffinityConfig) -> SymMatrix:
    """Gram matrix S S^T of the flattened features, symmetrized."""
    m = s.data @ s.data.T
    if cfg.clamp_negative:
        np.maximum(m, 0.0, out=m)
    m = (m + m.T) / 2.0
    return SymMatrix(m)


def adjacency(a_color: SymMatrix, a_seg: SymMatrix) -> SymMatrix:
    if a_color.n != a_seg.n:
        raise InvalidInput(f"order mismatch: {a_color.n} vs {a_seg.n}")
    return SymMatrix(a_color.entries + a_seg.entries)

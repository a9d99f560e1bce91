"""Correspondence distillation: align the cosine structure of learned
features with the cosine structure of the frozen backbone features.

The loss is bilinear, -sum((K_corr - b) * S_corr), with an adaptive scalar
shift b that is treated as a constant during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, SkipTerm
from .features import FeatureGrid
from .linalg import CosineCache, cosine_matrix, cosine_matrix_backward


@dataclass(frozen=True)
class CorrTensor:
    """All-pairs cosine similarities between two grids' patch rows."""

    n_a: int
    n_b: int
    entries: np.ndarray = field(repr=False)
    cache: CosineCache = field(repr=False)

    @property
    def mean(self) -> float:
        return float(self.entries.mean())


def corr_tensor(a: FeatureGrid, b: FeatureGrid) -> CorrTensor:
    sims, cache = cosine_matrix(a.data, b.data)
    return CorrTensor(n_a=a.n, n_b=b.n, entries=sims, cache=cache)


def shift_b_aug(k_corr: CorrTensor, s_corr: CorrTensor, k_shift: float) -> float:
    """b_aug = |mean(K_corr) - mean(S_corr) - k_shift|."""
    return abs(k_corr.mean - s_corr.mean - k_shift)


def shift_b_rand(k_corr: CorrTensor, s_corr: CorrTensor, k_shift: float,
                 v_shift: float) -> float:
    """b_rand = (mean(K_corr) + mean(S_corr) - k_shift) * v_shift."""
    return (k_corr.mean + s_corr.mean - k_shift) * v_shift


def corr_loss(k_corr: CorrTensor, s_corr: CorrTensor, b: float):
    """-sum((K_corr - b) * S_corr) and its gradient w.r.t. S_corr entries.

    b is a stop-gradient constant. The returned gradient is in similarity
    space; chain it through the cosine cache to reach the feature rows.
    """
    if k_corr.entries.shape != s_corr.entries.shape:
        raise InvalidInput(
            f"shape mismatch: {k_corr.entries.shape} vs {s_corr.entries.shape}")
    value = -float(((k_corr.entries - b) * s_corr.entries).sum())
    d_s_corr = -(k_corr.entries - b)
    return value, d_s_corr


def corr_loss_backward(d_s_corr: np.ndarray, s_corr: CorrTensor):
    """Gradients w.r.t. the two raw feature-row matrices behind s_corr."""
    return cosine_matrix_backward(d_s_corr, s_corr.cache)


def corr_total(k: FeatureGrid, k_aug: FeatureGrid, s: FeatureGrid,
               s_aug: FeatureGrid, k_rand: FeatureGrid, s_rand: FeatureGrid,
               k_shift: float, v_shift: float, self_partner: bool = False):
    """Augmented-pair plus random-pair distillation for one sample.

    Returns (value, pieces) where pieces carries per-term tensors, shifts,
    and similarity-space gradients for the caller to chain into S features.
    Raises SkipTerm when the random partner would be the sample itself.
    """
    if self_partner:
        raise SkipTerm("random-pair term needs a partner distinct from the sample")
    kc_aug = corr_tensor(k, k_aug)
    sc_aug = corr_tensor(s, s_aug)
    b_aug = shift_b_aug(kc_aug, sc_aug, k_shift)
    v_aug, g_aug = corr_loss(kc_aug, sc_aug, b_aug)

    kc_rand = corr_tensor(k, k_rand)
    sc_rand = corr_tensor(s, s_rand)
    b_rand = shift_b_rand(kc_rand, sc_rand, k_shift, v_shift)
    v_rand, g_rand = corr_loss(kc_rand, sc_rand, b_rand)

    pieces = {
        "aug": (sc_aug, g_aug, b_aug, v_aug),
        "rand": (sc_rand, g_rand, b_rand, v_rand),
    }
    return v_aug + v_rand, pieces

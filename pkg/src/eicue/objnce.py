"""Object-centric contrastive machinery.

Object index sets from a cue map, medoid prototypes, patch weights from
feature self-similarity, and the prototype-anchored contrastive loss with
analytic gradients for both the target rows and the prototype vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import DegenerateContrast, InvalidInput
from .features import FeatureGrid, SegmentMap
from .linalg import cosine_matrix, cosine_matrix_backward


@dataclass(frozen=True)
class ObjectMasks:
    labels: SegmentMap
    index_sets: Dict[int, np.ndarray] = field(repr=False)

    @property
    def present(self):
        return sorted(self.index_sets)


@dataclass(frozen=True)
class Prototypes:
    """One representative row of the source features per present object."""

    labels: np.ndarray         # sorted present labels, shape (L,)
    phi: np.ndarray = field(repr=False)           # (L, d) medoid rows
    medoid_index: np.ndarray = field(repr=False)  # (L,) patch index of each medoid


def object_masks(seg: SegmentMap) -> ObjectMasks:
    """Index set per distinct label; absent labels get no entry."""
    sets = {}
    for lab in np.unique(seg.labels):
        sets[int(lab)] = np.nonzero(seg.labels == lab)[0]
    return ObjectMasks(labels=seg, index_sets=sets)


def medoid_prototype(z: np.ndarray, indices: np.ndarray):
    """Row of z minimizing the summed Euclidean distance to its own set.

    Ties break to the smallest patch index; sums within 1e-9 relative of the
    minimum count as tied (mathematical ties land apart by rounding only).
    Returns (phi, medoid_index).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise InvalidInput("empty index set has no medoid")
    order = np.sort(idx)
    rows = np.asarray(z, dtype=np.float64)[order]
    diff = rows[:, None, :] - rows[None, :, :]
    sums = np.sqrt((diff ** 2).sum(axis=2)).sum(axis=1)
    smin = float(sums.min())
    thresh = smin + 1e-9 * max(1.0, smin)
    m_star = int(order[np.nonzero(sums <= thresh)[0][0]])
    return np.asarray(z, dtype=np.float64)[m_star].copy(), m_star


def build_prototypes(z: np.ndarray, masks: ObjectMasks) -> Prototypes:
    labels = masks.present
    phi = np.empty((len(labels), np.asarray(z).shape[1]))
    med = np.empty(len(labels), dtype=np.int64)
    for r, lab in enumerate(labels):
        phi[r], med[r] = medoid_prototype(z, masks.index_sets[lab])
    return Prototypes(labels=np.array(labels, dtype=np.int64), phi=phi, medoid_index=med)


def obj_weights(k: FeatureGrid, clamp_at_zero: bool = False) -> np.ndarray:
    """Mean feature self-similarity per patch: w(i) = K(i) . mean_j K(j).

    Algebraically identical to averaging the i-th row of K K^T but O(N d).
    """
    mean_row = k.data.mean(axis=0)
    w = k.data @ mean_row
    if clamp_at_zero:
        np.maximum(w, 0.0, out=w)
    return w


def objnce_loss(z_anchor_source: np.ndarray, z_target: np.ndarray,
                masks: ObjectMasks, protos: Prototypes,
                w: np.ndarray, tau: float):
    """Prototype-anchored contrastive loss over all patches.

    Per patch i with cue label l(i): pull cos(z_target(i), phi_{l(i)}),
    push the other present prototypes, which also form the (positive-free)
    denominator. Returns (value, d/dz_target, d/dphi); use
    scatter_prototype_grad to route d/dphi into the medoid source rows.
    """
    if tau <= 0:
        raise InvalidInput("tau must be > 0")
    zt = np.asarray(z_target, dtype=np.float64)
    n = zt.shape[0]
    labels = protos.labels
    n_obj = labels.size
    if n_obj < 2:
        raise DegenerateContrast(f"{n_obj} object(s) present, contrastive loss undefined")
    if masks.labels.n != n or np.asarray(w).shape[0] != n:
        raise InvalidInput("target rows, masks, and weights must agree on N")
    col_of = {int(lab): c for c, lab in enumerate(labels)}
    try:
        own = np.array([col_of[int(lab)] for lab in masks.labels.labels])
    except KeyError as exc:
        raise InvalidInput(f"mask label {exc} has no prototype") from exc

    sims, cache = cosine_matrix(zt, protos.phi)   # (n, n_obj)
    logits = sims / tau
    own_logit = logits[np.arange(n), own]
    neg = np.ones_like(logits, dtype=bool)
    neg[np.arange(n), own] = False
    neg_logits = logits.copy()
    neg_logits[~neg] = -np.inf
    m = neg_logits.max(axis=1)
    lse = m + np.log(np.exp(neg_logits - m[:, None]).sum(axis=1))
    per_patch = -own_logit + lse

    wv = np.asarray(w, dtype=np.float64)
    value = float((wv * per_patch).sum() / n)

    # d per_patch / d logits: -1 at own column, softmax over the others
    soft = np.exp(neg_logits - lse[:, None])
    soft[~neg] = 0.0
    dlogits = soft
    dlogits[np.arange(n), own] = -1.0
    upstream = dlogits * (wv[:, None] / (n * tau))
    d_target, d_phi = cosine_matrix_backward(upstream, cache)
    return value, d_target, d_phi


def scatter_prototype_grad(protos: Prototypes, d_phi: np.ndarray, n: int,
                           d: int) -> np.ndarray:
    """Route prototype gradients into the medoid rows of the anchor source."""
    out = np.zeros((n, d))
    for r in range(protos.labels.size):
        out[protos.medoid_index[r]] += d_phi[r]
    return out


def combine_objnce(l_obj_xx: float, l_sc_xxt: float, l_obj_xtxt: float,
                   l_sc_xtx: float, lambda_obj: float, lambda_sc: float) -> float:
    """Bidirectional total: both directions of the weighted obj/sc pair."""
    if not (0.0 < lambda_obj < 1.0 and 0.0 < lambda_sc < 1.0):
        raise InvalidInput("lambda_obj and lambda_sc must lie in (0, 1)")
    forward = lambda_obj * l_obj_xx + lambda_sc * l_sc_xxt
    backward = lambda_obj * l_obj_xtxt + lambda_sc * l_sc_xtx
    return forward + backward

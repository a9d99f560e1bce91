"""Differentiable cosine K-means over eigenfeatures.

Learnable cluster centers score every patch's eigenfeature row; the softmax
self-alignment loss sharpens those scores, and the per-row argmax of the
scores is the cluster cue map used downstream as object labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .features import SegmentMap
from .linalg import normalize_rows, row_softmax


@dataclass
class ClusterCenters:
    """k x c learnable center matrix, columns kept at unit L2 norm."""

    weights: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise InvalidInput("centers must be a (k, c) matrix")
        if self.grad is None:
            self.grad = np.zeros_like(self.weights)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def c_classes(self) -> int:
        return self.weights.shape[1]

    def renormalize(self) -> None:
        norms = np.linalg.norm(self.weights, axis=0)
        norms[norms < 1e-12] = 1.0
        self.weights /= norms[None, :]


def init_centers(v_hat: np.ndarray, c_classes: int, rng) -> ClusterCenters:
    """K-means++ style seeding from eigenfeature rows, columns unit-normalized."""
    rows, _ = normalize_rows(np.asarray(v_hat, dtype=np.float64))
    n = rows.shape[0]
    if n < 1 or c_classes < 1:
        raise InvalidInput("need at least one row and one class")
    chosen = [int(rng.integers(n))]
    for _ in range(1, c_classes):
        sims = rows @ rows[chosen].T  # cosine to already-picked seeds
        d2 = np.clip(1.0 - sims.max(axis=1), 0.0, None) ** 2
        total = d2.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    centers = ClusterCenters(weights=rows[chosen].T.copy())
    centers.renormalize()
    return centers


def assignment_scores(v_hat: np.ndarray, centers: ClusterCenters) -> np.ndarray:
    """P = row-normalized eigenfeatures times the center matrix."""
    v = np.asarray(v_hat, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != centers.k:
        raise InvalidInput(f"eigenfeature dim {v.shape} does not match k={centers.k}")
    rows, _ = normalize_rows(v)  # zero rows stay zero -> zero score row
    return rows @ centers.weights


def eig_loss(p: np.ndarray):
    """Softmax self-alignment clustering loss and its gradient in P.

    value = -(1/N) sum_i sum_c softmax(P)_ic * P_ic
    d/dP_ic = -(1/N) * psi_ic * (1 + P_ic - f_i) with f_i the row value.
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidInput("scores must be finite")
    n = p.shape[0]
    psi = row_softmax(p)
    f = (psi * p).sum(axis=1, keepdims=True)
    value = -float(f.sum()) / n
    grad = -(psi * (1.0 + p - f)) / n
    return value, grad


def eicue_map(p: np.ndarray, h: int, w: int) -> SegmentMap:
    """Per-patch argmax of the log-softmax scores (equals plain row argmax)."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidInput("scores must be finite")
    if p.shape[0] != h * w:
        raise InvalidInput(f"score rows {p.shape[0]} != {h}x{w}")
    return SegmentMap(h=h, w=w, labels=np.argmax(p, axis=1))


def centers_grad(v_hat: np.ndarray, dloss_dp: np.ndarray) -> np.ndarray:
    """Chain rule dL/dC = (row-normalized V_hat)^T @ dL/dP."""
    rows, _ = normalize_rows(np.asarray(v_hat, dtype=np.float64))
    return rows.T @ np.asarray(dloss_dp, dtype=np.float64)


def centers_step(centers: ClusterCenters, dloss_dp: np.ndarray,
                 v_hat: np.ndarray, lr: float) -> ClusterCenters:
    """One gradient step on the centers followed by column renormalization."""
    g = centers_grad(v_hat, dloss_dp)
    if g.shape != centers.weights.shape:
        raise InvalidInput(f"gradient shape {g.shape} != centers {centers.weights.shape}")
    centers.weights -= lr * g
    centers.renormalize()
    return centers

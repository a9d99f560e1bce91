"""Inference-time evaluation: dataset-level cosine K-means over learned
features, optimal cluster-to-class assignment, pixel accuracy and mean IoU,
an optional linear probe, and PGM/PPM label-map emission.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import DegenerateInput, InvalidInput
from .features import FeatureGrid, SegmentMap
from .linalg import normalize_rows, row_softmax

# fixed 27-color palette for colorized label maps (RGB bytes)
PALETTE_27 = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
    [0, 128, 128], [220, 190, 255], [170, 110, 40], [255, 250, 200], [128, 0, 0],
    [170, 255, 195], [128, 128, 0], [255, 215, 180], [0, 0, 128], [128, 128, 128],
    [255, 255, 255], [0, 0, 0], [233, 150, 122], [102, 205, 170], [138, 43, 226],
    [85, 107, 47], [205, 92, 92],
], dtype=np.uint8)


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[g, p] = pixels with ground truth g predicted p (square)."""

    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise InvalidInput(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise InvalidInput("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    @property
    def c(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(gt_maps: Sequence[SegmentMap], pred_maps: Sequence[SegmentMap],
                     c: int | None = None) -> ConfusionMatrix:
    """Accumulate a square confusion matrix over paired label maps."""
    if len(gt_maps) != len(pred_maps) or not gt_maps:
        raise InvalidInput("need equally many ground-truth and prediction maps")
    hi = 0
    for g, p in zip(gt_maps, pred_maps):
        if g.n != p.n:
            raise InvalidInput("paired maps must have equal patch counts")
        hi = max(hi, int(g.labels.max()), int(p.labels.max()))
    if c is None:
        c = hi + 1
    elif hi >= c:
        raise InvalidInput(f"label {hi} exceeds declared class count {c}")
    counts = np.zeros((c, c), dtype=np.int64)
    for g, p in zip(gt_maps, pred_maps):
        np.add.at(counts, (g.labels, p.labels), 1)
    return ConfusionMatrix(counts=counts)


# ---------------------------------------------------------------------------
# Cosine K-means
# ---------------------------------------------------------------------------

def kmeans_objective(rows_hat: np.ndarray, centers: np.ndarray,
                     assign: np.ndarray) -> float:
    """Sum over points of (1 - cos(point, assigned center))."""
    sims = np.einsum("ij,ij->i", rows_hat, centers[assign])
    return float((1.0 - sims).sum())


def _kmeanspp_seed(rows_hat: np.ndarray, k: int, rng) -> np.ndarray:
    n = rows_hat.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        sims = rows_hat @ rows_hat[chosen].T
        d2 = np.clip(1.0 - sims.max(axis=1), 0.0, None) ** 2
        total = d2.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return rows_hat[chosen].copy()


def cluster_features(features: List[FeatureGrid], c_classes: int, seed: int,
                     max_iters: int = 300):
    """Cosine K-means over the pooled rows of all grids.

    Returns (centers, per-grid SegmentMaps). Deterministic per seed; stops
    when assignments are stable or after max_iters Lloyd rounds.
    """
    if c_classes < 1:
        raise InvalidInput("c_classes must be >= 1")
    if not features:
        raise InvalidInput("no feature grids given")
    pooled = np.concatenate([g.data for g in features], axis=0)
    if pooled.shape[0] < c_classes:
        raise InvalidInput(f"{pooled.shape[0]} patches cannot form {c_classes} clusters")
    rows_hat, _ = normalize_rows(pooled)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    centers = _kmeanspp_seed(rows_hat, c_classes, rng)
    assign = None
    for _ in range(max_iters):
        sims = rows_hat @ centers.T
        new_assign = np.argmax(sims, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(c_classes):
            members = rows_hat[assign == j]
            if len(members):
                c = members.sum(axis=0)
                norm = np.linalg.norm(c)
                if norm > 1e-12:
                    centers[j] = c / norm
    maps = []
    offset = 0
    for g in features:
        maps.append(SegmentMap(h=g.h, w=g.w, labels=assign[offset: offset + g.n]))
        offset += g.n
    return centers, maps


# ---------------------------------------------------------------------------
# Optimal assignment (Kuhn-Munkres on exact integers)
# ---------------------------------------------------------------------------

def _km_min_assign(cost):
    """O(n^3) Hungarian on a square integer cost matrix (minimization).

    Potentials + shortest augmenting path; exact because all arithmetic stays
    in Python ints. Returns column-for-row assignment.
    """
    n = len(cost)
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    match = [0] * (n + 1)   # match[col 1..n] = row, 0 when free
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [None] * (n + 1)
        parent = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = None
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if minv[j] is None or cur < minv[j]:
                    minv[j] = cur
                    parent[j] = j0
                if delta is None or minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                elif minv[j] is not None:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = parent[j0]
            match[j0] = match[j1]
            j0 = j1
    assign = [0] * n
    for j in range(1, n + 1):
        if match[j]:
            assign[match[j] - 1] = j - 1
    return assign


def hungarian_match(cm: ConfusionMatrix) -> np.ndarray:
    """Permutation pi maximizing sum(counts[g, pi(g)]).

    Ties resolve to the lexicographically smallest permutation, enforced
    exactly by a mixed-radix preference term below the count scale.
    """
    n = cm.c
    counts = cm.counts
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    # benefit = counts * SCALE - lexicographic key; SCALE dominates any key sum
    scale = n ** n + 1
    cost = [[-(int(counts[g, p]) * scale - p * n ** (n - 1 - g)) for p in range(n)]
            for g in range(n)]
    return np.array(_km_min_assign(cost), dtype=np.int64)


def metrics(cm: ConfusionMatrix, pi: np.ndarray):
    """(accuracy, mean IoU) under the given cluster-to-class permutation.

    mean IoU averages classes that actually occur in the ground truth.
    """
    pi = np.asarray(pi, dtype=np.int64)
    if sorted(pi.tolist()) != list(range(cm.c)):
        raise InvalidInput("pi must be a permutation of 0..c-1")
    total = cm.total
    if total == 0:
        raise InvalidInput("empty confusion matrix")
    diag = cm.counts[np.arange(cm.c), pi]
    acc = float(diag.sum()) / total
    row = cm.counts.sum(axis=1)
    col = cm.counts.sum(axis=0)[pi]
    present = row > 0
    union = row + col - diag
    iou = np.divide(diag, union, out=np.zeros(cm.c, dtype=np.float64),
                    where=union > 0)
    miou = float(iou[present].mean())
    return acc, miou, iou


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------

def linear_probe(features: List[FeatureGrid], ground_truth: List[SegmentMap],
                 c_classes: int, epochs: int = 200, lr: float = 0.1):
    """Multinomial logistic regression on frozen feature rows.

    Full-batch gradient descent on softmax cross-entropy; weights start at
    zero. Metrics use the identity assignment (classes align by construction).
    Returns (weights, bias, acc, miou).
    """
    if len(features) != len(ground_truth) or not features:
        raise InvalidInput("features and ground truth must pair up")
    x = np.concatenate([g.data for g in features], axis=0)
    y = np.concatenate([s.labels for s in ground_truth], axis=0)
    if np.unique(y).size < 2:
        raise DegenerateInput("single-class ground truth cannot be probed")
    if int(y.max()) >= c_classes:
        raise InvalidInput("ground-truth label exceeds class count")
    n, d = x.shape
    w = np.zeros((d, c_classes))
    b = np.zeros(c_classes)
    onehot = np.zeros((n, c_classes))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        probs = row_softmax(x @ w + b)
        g = (probs - onehot) / n
        w -= lr * (x.T @ g)
        b -= lr * g.sum(axis=0)
    pred = np.argmax(x @ w + b, axis=1)
    pred_maps, gt_maps = [], []
    offset = 0
    for g_, s_ in zip(features, ground_truth):
        pred_maps.append(SegmentMap(h=g_.h, w=g_.w, labels=pred[offset: offset + g_.n]))
        gt_maps.append(s_)
        offset += g_.n
    cm = confusion_matrix(gt_maps, pred_maps, c=c_classes)
    acc, miou, _ = metrics(cm, np.arange(c_classes))
    return w, b, acc, miou


def probe_cross_entropy(features: List[FeatureGrid], ground_truth: List[SegmentMap],
                        w: np.ndarray, b: np.ndarray) -> float:
    x = np.concatenate([g.data for g in features], axis=0)
    y = np.concatenate([s.labels for s in ground_truth], axis=0)
    probs = row_softmax(x @ w + b)
    return float(-np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None)).mean())


# ---------------------------------------------------------------------------
# Label-map emission
# ---------------------------------------------------------------------------

def write_pgm(path, seg: SegmentMap, maxval: int) -> None:
    """Binary PGM (P5). maxval must cover every label."""
    if maxval < 1 or maxval > 255:
        raise InvalidInput("PGM maxval must be in 1..255")
    if int(seg.labels.max()) > maxval:
        raise InvalidInput("labels exceed PGM maxval")
    header = f"P5\n{seg.w} {seg.h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(seg.labels.astype(np.uint8).tobytes())


def write_ppm(path, seg: SegmentMap) -> None:
    """Binary PPM (P6) colorized with the fixed 27-color palette."""
    if int(seg.labels.max()) >= len(PALETTE_27):
        raise InvalidInput(f"palette covers {len(PALETTE_27)} classes only")
    rgb = PALETTE_27[seg.labels]
    header = f"P6\n{seg.w} {seg.h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rgb.astype(np.uint8).tobytes())


def write_grayscale_pgm(path, values: np.ndarray, h: int, w: int) -> None:
    """Min-max normalized float field as an 8-bit grayscale PGM."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size != h * w:
        raise InvalidInput(f"value count {v.size} != {h}x{w}")
    lo, hi = v.min(), v.max()
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((v - lo) / span * 255.0).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled.tobytes())

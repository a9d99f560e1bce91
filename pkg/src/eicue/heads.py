"""Trainable heads: two-branch segmentation MLP and linear projection.

Forward/backward are written out explicitly (no autodiff): the segmentation
head computes LinA(K') + LinC(ReLU(LinB(K'))) on channel-dropped input K',
the projection head is a single affine map. Gradients accumulate into the
parameter set's paired buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInput, InvalidState
from .features import FeatureGrid

_TENSOR_FIELDS = ("wa", "ba", "wb", "bb", "wc", "bc", "wp", "bp")


@dataclass
class HeadParams:
    """Weights for both heads plus paired gradient buffers.

    wa/ba: skip branch, wb/bb: pre-ReLU branch, wc/bc: post-ReLU map,
    wp/bp: projection. `version` increments on every optimizer step so stale
    backward caches can be detected.
    """

    wa: np.ndarray
    ba: np.ndarray
    wb: np.ndarray
    bb: np.ndarray
    wc: np.ndarray
    bc: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    grads: dict = field(default=None, repr=False)
    version: int = 0

    def __post_init__(self):
        for name in _TENSOR_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        dk, ds = self.wa.shape
        if self.wb.shape != (dk, ds) or self.wc.shape != (ds, ds):
            raise InvalidInput("segmentation head weight shapes are inconsistent")
        if self.wp.shape[0] != ds:
            raise InvalidInput("projection input dim must equal segmentation output dim")
        if self.grads is None:
            self.zero_grads()

    @property
    def d_key(self) -> int:
        return self.wa.shape[0]

    @property
    def d_seg(self) -> int:
        return self.wa.shape[1]

    @property
    def d_proj(self) -> int:
        return self.wp.shape[1]

    def zero_grads(self) -> None:
        self.grads = {name: np.zeros_like(getattr(self, name)) for name in _TENSOR_FIELDS}

    def tensors(self):
        return [(name, getattr(self, name)) for name in _TENSOR_FIELDS]


def init_head_params(d_key: int, d_seg: int, d_proj: int, rng) -> HeadParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    def lin(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return HeadParams(
        wa=lin(d_key, d_seg), ba=np.zeros(d_seg),
        wb=lin(d_key, d_seg), bb=np.zeros(d_seg),
        wc=lin(d_seg, d_seg), bc=np.zeros(d_seg),
        wp=lin(d_seg, d_proj), bp=np.zeros(d_proj),
    )


def channel_dropout_mask(d: int, p: float, rng) -> np.ndarray:
    """Whole-channel keep mask with inverted scaling: entries 0 or 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise InvalidInput("dropout probability must be in [0, 1)")
    if p == 0.0:
        return np.ones(d)
    keep = rng.uniform(size=d) >= p
    return keep.astype(np.float64) / (1.0 - p)


@dataclass(frozen=True)
class SegCache:
    k_dropped: np.ndarray = field(repr=False)
    pre_relu: np.ndarray = field(repr=False)
    mask: Optional[np.ndarray] = field(repr=False)
    h: int = 0
    w: int = 0
    version: int = 0


@dataclass(frozen=True)
class ProjCache:
    s_in: np.ndarray = field(repr=False)
    h: int = 0
    w: int = 0
    version: int = 0


def seg_forward(k: FeatureGrid, params: HeadParams,
                dropout_mask: Optional[np.ndarray] = None):
    """S = LinA(K') + LinC(ReLU(LinB(K'))). Returns (s_grid, cache).

    dropout_mask=None means eval mode (identity on channels).
    """
    if k.d != params.d_key:
        raise InvalidInput(f"feature dim {k.d} != head input dim {params.d_key}")
    kd = k.data if dropout_mask is None else k.data * dropout_mask[None, :]
    pre = kd @ params.wb + params.bb
    s = kd @ params.wa + params.ba + np.maximum(pre, 0.0) @ params.wc + params.bc
    cache = SegCache(k_dropped=kd, pre_relu=pre, mask=dropout_mask,
                     h=k.h, w=k.w, version=params.version)
    return FeatureGrid(k.h, k.w, params.d_seg, s), cache


def seg_backward(upstream: np.ndarray, cache: SegCache, params: HeadParams) -> np.ndarray:
    """Accumulate parameter grads; return dLoss/dK (pre-dropout)."""
    if cache.version != params.version:
        raise InvalidState("forward cache is stale: parameters have stepped since")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (cache.k_dropped.shape[0], params.d_seg):
        raise InvalidInput(f"upstream shape {g.shape} does not match cached forward")
    kd = cache.k_dropped
    params.grads["wa"] += kd.T @ g
    params.grads["ba"] += g.sum(axis=0)
    relu_out = np.maximum(cache.pre_relu, 0.0)
    params.grads["wc"] += relu_out.T @ g
    params.grads["bc"] += g.sum(axis=0)
    d_pre = (g @ params.wc.T) * (cache.pre_relu > 0.0)
    params.grads["wb"] += kd.T @ d_pre
    params.grads["bb"] += d_pre.sum(axis=0)
    d_kd = g @ params.wa.T + d_pre @ params.wb.T
    if cache.mask is not None:
        d_kd = d_kd * cache.mask[None, :]
    return d_kd


def proj_forward(s: FeatureGrid, params: HeadParams):
    """Z = S Wp + bp. Returns (z_grid, cache)."""
    if s.d != params.d_seg:
        raise InvalidInput(f"feature dim {s.d} != projection input dim {params.d_seg}")
    z = s.data @ params.wp + params.bp
    return FeatureGrid(s.h, s.w, params.d_proj, z), ProjCache(
        s_in=s.data, h=s.h, w=s.w, version=params.version)


def proj_backward(upstream: np.ndarray, cache: ProjCache, params: HeadParams) -> np.ndarray:
    """Accumulate projection grads; return dLoss/dS."""
    if cache.version != params.version:
        raise InvalidState("forward cache is stale: parameters have stepped since")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (cache.s_in.shape[0], params.d_proj):
        raise InvalidInput(f"upstream shape {g.shape} does not match cached forward")
    params.grads["wp"] += cache.s_in.T @ g
    params.grads["bp"] += g.sum(axis=0)
    return g @ params.wp.T

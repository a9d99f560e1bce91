"""End-to-end optimization loop.

Per step: channel dropout and both heads on base/augmented features, affinity
and Laplacian from the current semantic features, eigenfeature clustering
scores and cue maps, the three loss families, explicit backward through the
heads, and an Adam (or SGD) step with separate learning rates for head
parameters and cluster centers.

Checkpoint container (versioned, little-endian):
  magic "EICUECP1" | u32 format version (1) | i32 d_key, d_seg, d_proj,
  k_eigenvectors, c_classes | i64 step, seed, adam_t | u8 optimizer (0=sgd,
  1=adam) | then float64 tensors in order wa, ba, wb, bb, wc, bc, wp, bp,
  centers, followed by the Adam first and second moments for each tensor in
  the same order. Everything after the header is raw C-order float64.
"""

from __future__ import annotations

import math
import os
import struct
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, List, Optional

import numpy as np

from .affinity import AffinityConfig, adjacency, color_affinity, semantic_affinity
from .cluster import (
    ClusterCenters,
    assignment_scores,
    centers_grad,
    eicue_map,
    eig_loss,
    init_centers,
)
from .distill import corr_loss, corr_loss_backward, corr_tensor, shift_b_aug, shift_b_rand
from .errors import DegenerateContrast, FormatError, InvalidInput, NumericalFailure
from .features import SamplePair
from .heads import (
    HeadParams,
    channel_dropout_mask,
    init_head_params,
    proj_backward,
    proj_forward,
    seg_backward,
    seg_forward,
)
from .objnce import (
    build_prototypes,
    combine_objnce,
    obj_weights,
    object_masks,
    objnce_loss,
    scatter_prototype_grad,
)
from .spectral import laplacian_bundle

_CKPT_MAGIC = b"EICUECP1"
_CKPT_VERSION = 1
_TENSOR_ORDER = ("wa", "ba", "wb", "bb", "wc", "bc", "wp", "bp", "centers")


@dataclass(frozen=True)
class TrainConfig:
    lambda_obj: float = 0.3
    lambda_sc: float = 0.7
    lambda_nce_target: float = 0.9
    lambda_eig: float = 1.0
    ramp_steps: int = 200
    ramp_shape: str = "linear"        # linear | cosine | exponential
    tau: float = 0.07
    lr_heads: float = 0.0005
    lr_centers: float = 0.00005
    batch_size: int = 8
    max_steps: int = 400
    seed: int = 0
    sigma_c: float = 1.0
    radius: int = 2
    clamp_negative: bool = True
    degree_epsilon: float = 1e-6
    k_eigenvectors: int = 4
    c_classes: int = 4
    d_seg: int = 64
    d_proj: int = 64
    k_shift: float = 0.0
    v_shift: float = 3.5
    dropout_p: float = 0.1
    optimizer: str = "adam"           # adam | sgd
    eig_method: str = "lapack"        # lapack | ql
    clamp_w_obj: bool = False
    checkpoint_every: int = 0         # 0 = final checkpoint only
    timing_in_metrics: bool = False   # keep metrics byte-reproducible by default

    def __post_init__(self):
        if not 0.0 <= self.lambda_nce_target <= 1.0:
            raise InvalidInput("lambda_nce_target must lie in [0, 1]")
        if not 0.0 <= self.lambda_eig <= 1.0:
            raise InvalidInput("lambda_eig must lie in [0, 1]")
        if not (0.0 < self.lambda_obj < 1.0 and 0.0 < self.lambda_sc < 1.0):
            raise InvalidInput("lambda_obj and lambda_sc must lie in (0, 1)")
        if self.ramp_steps < 1:
            raise InvalidInput("ramp_steps must be >= 1")
        if self.tau <= 0:
            raise InvalidInput("tau must be > 0")
        if self.batch_size < 1 or self.max_steps < 0:
            raise InvalidInput("batch_size must be >= 1 and max_steps >= 0")
        if self.ramp_shape not in ("linear", "cosine", "exponential"):
            raise InvalidInput(f"unknown ramp shape {self.ramp_shape!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInput(f"unknown optimizer {self.optimizer!r}")
        if self.eig_method not in ("lapack", "ql"):
            raise InvalidInput(f"unknown eig_method {self.eig_method!r}")
        if self.k_eigenvectors < 1 or self.c_classes < 1:
            raise InvalidInput("k_eigenvectors and c_classes must be >= 1")

    def affinity(self) -> AffinityConfig:
        return AffinityConfig(sigma_c=self.sigma_c, radius=self.radius,
                              clamp_negative=self.clamp_negative)


# config files: flat key=value text, '#' comments, every field addressable
_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def parse_config_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    cfg = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise InvalidInput(f"config line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                parsed = _BOOL_WORDS[value.lower()]
            elif kind == "int":
                parsed = int(value)
            elif kind == "float":
                parsed = float(value)
            else:
                parsed = value
        except (ValueError, KeyError) as exc:
            raise InvalidInput(
                f"config line {lineno}: cannot parse {value!r} for {key}") from exc
        updates[key] = parsed
    try:
        return replace(cfg, **updates)
    except InvalidInput as exc:
        raise InvalidInput(f"config validation failed: {exc}") from exc


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def lambda_nce_at(step: int, cfg: TrainConfig) -> float:
    """Ramp from 0 to the target over ramp_steps, then clamp."""
    if step < 0:
        raise InvalidInput("step must be >= 0")
    frac = min(step / cfg.ramp_steps, 1.0)
    if cfg.ramp_shape == "linear":
        shape = frac
    elif cfg.ramp_shape == "cosine":
        shape = (1.0 - math.cos(math.pi * frac)) / 2.0
    else:  # exponential, normalized to reach 1 at the ramp end
        shape = (1.0 - math.exp(-5.0 * frac)) / (1.0 - math.exp(-5.0))
    return shape * cfg.lambda_nce_target


def total_loss(l_nce: float, l_corr: float, l_eig: float, lambda_nce: float,
               cfg: TrainConfig) -> float:
    parts = (l_nce, l_corr, l_eig)
    if not all(math.isfinite(p) for p in parts):
        raise NumericalFailure(f"non-finite loss parts {parts}")
    return lambda_nce * l_nce + (1.0 - lambda_nce) * l_corr + cfg.lambda_eig * l_eig


def _rng_for(seed: int, step: int, purpose: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), purpose]))


@dataclass
class TrainState:
    cfg: TrainConfig
    params: HeadParams
    centers: ClusterCenters
    step: int = 0
    adam_m: dict = field(default_factory=dict, repr=False)
    adam_v: dict = field(default_factory=dict, repr=False)
    adam_t: int = 0
    objnce_evaluations: int = 0

    def named_tensors(self):
        pairs = dict(self.params.tensors())
        pairs["centers"] = self.centers.weights
        return pairs


def init_state(cfg: TrainConfig, dataset: List[SamplePair]) -> TrainState:
    """Head init plus cluster-center seeding from the first batch's eigenfeatures."""
    if not dataset:
        raise InvalidInput("empty dataset")
    d_key = dataset[0].base.d
    params = init_head_params(d_key, cfg.d_seg, cfg.d_proj, _rng_for(cfg.seed, 0, 99))
    first = [dataset[i] for i in _batch_indices(cfg, len(dataset), step=0)]
    acfg = cfg.affinity()
    vhats = []
    for sample in first:
        s, _ = seg_forward(sample.base, params)
        a = adjacency(color_affinity(sample.image, acfg), semantic_affinity(s, acfg))
        bundle = laplacian_bundle(a, cfg.k_eigenvectors, eps=cfg.degree_epsilon,
                                  method=cfg.eig_method)
        vhats.append(bundle.v_hat)
    centers = init_centers(np.concatenate(vhats, axis=0), cfg.c_classes,
                           _rng_for(cfg.seed, 0, 98))
    state = TrainState(cfg=cfg, params=params, centers=centers)
    for name, tensor in state.named_tensors().items():
        state.adam_m[name] = np.zeros_like(tensor)
        state.adam_v[name] = np.zeros_like(tensor)
    return state


def _batch_indices(cfg: TrainConfig, n_samples: int, step: int):
    """Deterministic cyclic batching over a once-shuffled sample order."""
    order = _rng_for(cfg.seed, 0, 3).permutation(n_samples)
    b = min(cfg.batch_size, n_samples)
    start = (step * b) % n_samples
    return [int(order[(start + i) % n_samples]) for i in range(b)]


def _worker_count() -> int:
    raw = os.environ.get("EICUE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class _SampleWork:
    """Forward state and per-sample gradient buffers for one batch member."""

    sample: SamplePair
    s_base: object = None
    s_aug: object = None
    z_base: object = None
    z_aug: object = None
    seg_cache_base: object = None
    seg_cache_aug: object = None
    proj_cache_base: object = None
    proj_cache_aug: object = None
    ds_base: np.ndarray = None
    ds_aug: np.ndarray = None
    dz_base: np.ndarray = None
    dz_aug: np.ndarray = None


def _forward_sample(work: _SampleWork, state: TrainState, masks):
    mask_b, mask_a = masks
    work.s_base, work.seg_cache_base = seg_forward(work.sample.base, state.params, mask_b)
    work.s_aug, work.seg_cache_aug = seg_forward(work.sample.aug, state.params, mask_a)
    work.z_base, work.proj_cache_base = proj_forward(work.s_base, state.params)
    work.z_aug, work.proj_cache_aug = proj_forward(work.s_aug, state.params)
    n = work.sample.base.n
    work.ds_base = np.zeros((n, state.cfg.d_seg))
    work.ds_aug = np.zeros((n, state.cfg.d_seg))
    work.dz_base = np.zeros((n, state.cfg.d_proj))
    work.dz_aug = np.zeros((n, state.cfg.d_proj))


def _eval_sample(work: _SampleWork, state: TrainState, a_color):
    """Pure per-sample losses and raw gradients (no shared-state mutation)."""
    cfg = state.cfg
    acfg = cfg.affinity()
    sample = work.sample
    out = {}

    a_base = adjacency(a_color, semantic_affinity(work.s_base, acfg))
    a_aug = adjacency(a_color, semantic_affinity(work.s_aug, acfg))
    bundle_b = laplacian_bundle(a_base, cfg.k_eigenvectors, eps=cfg.degree_epsilon,
                                method=cfg.eig_method)
    bundle_a = laplacian_bundle(a_aug, cfg.k_eigenvectors, eps=cfg.degree_epsilon,
                                method=cfg.eig_method)
    p_base = assignment_scores(bundle_b.v_hat, state.centers)
    p_aug = assignment_scores(bundle_a.v_hat, state.centers)
    le_b, dp_b = eig_loss(p_base)
    le_a, dp_a = eig_loss(p_aug)
    out["l_eig"] = 0.5 * (le_b + le_a)
    out["d_centers"] = 0.5 * (centers_grad(bundle_b.v_hat, dp_b)
                              + centers_grad(bundle_a.v_hat, dp_a))

    cue_b = eicue_map(p_base, sample.base.h, sample.base.w)
    cue_a = eicue_map(p_aug, sample.aug.h, sample.aug.w)

    # object-centric contrast, both directions; degenerate cues skip it, and
    # a zero target disables the path outright (warm-up-only runs)
    out["nce"] = None
    if cfg.lambda_nce_target == 0.0:
        out["corr_pieces_only"] = True
        return _finish_eval(out, work, sample, cfg)
    try:
        masks_b = object_masks(cue_b)
        masks_a = object_masks(cue_a)
        w_b = obj_weights(sample.base, clamp_at_zero=cfg.clamp_w_obj)
        w_a = obj_weights(sample.aug, clamp_at_zero=cfg.clamp_w_obj)
        protos_b = build_prototypes(work.z_base.data, masks_b)
        protos_a = build_prototypes(work.z_aug.data, masks_a)
        v_obj_x, dz1, dphi1 = objnce_loss(
            work.z_base.data, work.z_base.data, masks_b, protos_b, w_b, cfg.tau)
        v_sc_xa, dz2, dphi2 = objnce_loss(
            work.z_base.data, work.z_aug.data, masks_b, protos_b, w_b, cfg.tau)
        v_obj_a, dz3, dphi3 = objnce_loss(
            work.z_aug.data, work.z_aug.data, masks_a, protos_a, w_a, cfg.tau)
        v_sc_ax, dz4, dphi4 = objnce_loss(
            work.z_aug.data, work.z_base.data, masks_a, protos_a, w_a, cfg.tau)
        n, dz_dim = work.dz_base.shape
        dz_base = (cfg.lambda_obj * (dz1 + scatter_prototype_grad(protos_b, dphi1, n, dz_dim))
                   + cfg.lambda_sc * scatter_prototype_grad(protos_b, dphi2, n, dz_dim)
                   + cfg.lambda_sc * dz4)
        dz_aug = (cfg.lambda_sc * dz2
                  + cfg.lambda_obj * (dz3 + scatter_prototype_grad(protos_a, dphi3, n, dz_dim))
                  + cfg.lambda_sc * scatter_prototype_grad(protos_a, dphi4, n, dz_dim))
        out["nce"] = {
            "value": combine_objnce(v_obj_x, v_sc_xa, v_obj_a, v_sc_ax,
                                    cfg.lambda_obj, cfg.lambda_sc),
            "l_obj": 0.5 * (v_obj_x + v_obj_a),
            "l_sc": 0.5 * (v_sc_xa + v_sc_ax),
            "dz_base": dz_base,
            "dz_aug": dz_aug,
        }
    except DegenerateContrast:
        pass
    return _finish_eval(out, work, sample, cfg)


def _finish_eval(out, work, sample, cfg):
    # augmented-pair distillation (the partner term couples samples and is
    # handled by the caller)
    kc_aug = corr_tensor(sample.base, sample.aug)
    sc_aug = corr_tensor(work.s_base, work.s_aug)
    b_aug = shift_b_aug(kc_aug, sc_aug, cfg.k_shift)
    v_aug, g_aug = corr_loss(kc_aug, sc_aug, b_aug)
    out["corr_aug_value"] = v_aug
    out["corr_aug_grads"] = corr_loss_backward(g_aug, sc_aug)
    return out


def _map_samples(fn, items):
    workers = _worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(*args) for args in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(lambda args: fn(*args), items))


def train_step(batch: List[SamplePair], state: TrainState,
               a_colors: Optional[list] = None) -> dict:
    """One optimization step over a batch. Returns the metrics record."""
    cfg = state.cfg
    t_start = time.perf_counter()
    lam = lambda_nce_at(state.step, cfg)
    bsz = len(batch)
    if bsz < 1:
        raise InvalidInput("empty batch")
    acfg = cfg.affinity()
    if a_colors is None:
        a_colors = [color_affinity(s.image, acfg) for s in batch]

    drop_rng = _rng_for(cfg.seed, state.step, 1)
    works = []
    masks = []
    for sample in batch:
        if cfg.dropout_p > 0.0:
            mask_b = channel_dropout_mask(sample.base.d, cfg.dropout_p, drop_rng)
            mask_a = channel_dropout_mask(sample.aug.d, cfg.dropout_p, drop_rng)
        else:
            mask_b = mask_a = None
        works.append(_SampleWork(sample=sample))
        masks.append((mask_b, mask_a))
    for work, mask_pair in zip(works, masks):
        _forward_sample(work, state, mask_pair)

    # pure per-sample evaluation; parallelizable under EICUE_THREADS
    results = _map_samples(_eval_sample,
                           [(work, state, a_colors[i]) for i, work in enumerate(works)])

    partner_rng = _rng_for(cfg.seed, state.step, 2)
    partner_of = []
    for i in range(bsz):
        if bsz == 1:
            partner_of.append(None)
        else:
            j = int(partner_rng.integers(bsz - 1))
            partner_of.append(j + 1 if j >= i else j)

    d_centers = np.zeros_like(state.centers.weights)
    sum_total = sum_corr = sum_eig = 0.0
    sum_obj = sum_sc = 0.0
    nce_samples = 0
    nce_scale = lam / bsz
    corr_scale = (1.0 - lam) / bsz

    for i, (work, res) in enumerate(zip(works, results)):
        d_centers += (cfg.lambda_eig / bsz) * res["d_centers"]
        l_nce = 0.0
        if res["nce"] is not None:
            state.objnce_evaluations += 4
            l_nce = res["nce"]["value"]
            if nce_scale != 0.0:
                work.dz_base += nce_scale * res["nce"]["dz_base"]
                work.dz_aug += nce_scale * res["nce"]["dz_aug"]
            sum_obj += res["nce"]["l_obj"]
            sum_sc += res["nce"]["l_sc"]
            nce_samples += 1

        l_corr = res["corr_aug_value"]
        if corr_scale != 0.0:
            da, db = res["corr_aug_grads"]
            work.ds_base += corr_scale * da
            work.ds_aug += corr_scale * db
        j = partner_of[i]
        if j is not None:
            partner = works[j]
            kc_rand = corr_tensor(work.sample.base, partner.sample.base)
            sc_rand = corr_tensor(work.s_base, partner.s_base)
            b_rand = shift_b_rand(kc_rand, sc_rand, cfg.k_shift, cfg.v_shift)
            v_rand, g_rand = corr_loss(kc_rand, sc_rand, b_rand)
            l_corr += v_rand
            if corr_scale != 0.0:
                da, db = corr_loss_backward(g_rand, sc_rand)
                work.ds_base += corr_scale * da
                partner.ds_base += corr_scale * db

        sum_total += total_loss(l_nce, l_corr, res["l_eig"], lam, cfg)
        sum_corr += l_corr
        sum_eig += res["l_eig"]

    # backward through the heads, serialized single-writer accumulation
    for work in works:
        ds_from_z = proj_backward(work.dz_base, work.proj_cache_base, state.params)
        seg_backward(work.ds_base + ds_from_z, work.seg_cache_base, state.params)
        ds_from_z = proj_backward(work.dz_aug, work.proj_cache_aug, state.params)
        seg_backward(work.ds_aug + ds_from_z, work.seg_cache_aug, state.params)

    _optimizer_step(state, d_centers)
    state.step += 1

    wall = (time.perf_counter() - t_start) * 1000.0
    return {
        "step": state.step - 1,
        "l_total": sum_total / bsz,
        "l_corr": sum_corr / bsz,
        "l_eig": sum_eig / bsz,
        "l_obj": sum_obj / nce_samples if nce_samples else 0.0,
        "l_sc": sum_sc / nce_samples if nce_samples else 0.0,
        "lambda_nce": lam,
        "wall_ms": wall if state.cfg.timing_in_metrics else 0.0,
    }


def _optimizer_step(state: TrainState, d_centers: np.ndarray) -> None:
    cfg = state.cfg
    grads = dict(state.params.grads)
    grads["centers"] = d_centers
    lrs = {name: (cfg.lr_centers if name == "centers" else cfg.lr_heads)
           for name in grads}
    tensors = state.named_tensors()
    if cfg.optimizer == "sgd":
        for name, g in grads.items():
            if lrs[name] != 0.0:
                tensors[name] -= lrs[name] * g
    else:
        state.adam_t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** state.adam_t
        c2 = 1.0 - b2 ** state.adam_t
        for name, g in grads.items():
            m = state.adam_m[name]
            v = state.adam_v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lrs[name] != 0.0:
                tensors[name] -= lrs[name] * (m / c1) / (np.sqrt(v / c2) + eps)
    if cfg.lr_centers != 0.0:
        state.centers.renormalize()
    state.params.zero_grads()
    state.params.version += 1


def train(dataset: List[SamplePair], cfg: TrainConfig,
          state: Optional[TrainState] = None,
          on_step: Optional[Callable[[dict], None]] = None) -> tuple:
    """Run up to cfg.max_steps steps. Returns (state, metric records)."""
    if state is None:
        state = init_state(cfg, dataset)
    acfg = cfg.affinity()
    a_color_cache = [color_affinity(s.image, acfg) for s in dataset]
    records = []
    while state.step < cfg.max_steps:
        idx = _batch_indices(cfg, len(dataset), state.step)
        batch = [dataset[i] for i in idx]
        rec = train_step(batch, state, a_colors=[a_color_cache[i] for i in idx])
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return state, records


METRICS_COLUMNS = ("step", "l_total", "l_corr", "l_eig", "l_obj", "l_sc",
                   "lambda_nce", "wall_ms")


def metrics_csv_line(rec: dict) -> str:
    cells = []
    for col in METRICS_COLUMNS:
        v = rec[col]
        cells.append(str(v) if isinstance(v, int) else f"{v:.12g}")
    return ",".join(cells)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    cfg = state.cfg
    tensors = state.named_tensors()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<5i", state.params.d_key, cfg.d_seg, cfg.d_proj,
                             cfg.k_eigenvectors, cfg.c_classes))
        fh.write(struct.pack("<3q", state.step, cfg.seed, state.adam_t))
        fh.write(struct.pack("<B", 1 if cfg.optimizer == "adam" else 0))
        for name in _TENSOR_ORDER:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
        for name in _TENSOR_ORDER:
            fh.write(np.ascontiguousarray(state.adam_m[name], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(state.adam_v[name], dtype="<f8").tobytes())


def load_checkpoint(path, cfg: TrainConfig) -> TrainState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:8]!r}", offset=0)
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {_CKPT_VERSION}",
                          offset=8)
    d_key, d_seg, d_proj, k_eig, c_classes = struct.unpack_from("<5i", raw, 12)
    step, seed, adam_t = struct.unpack_from("<3q", raw, 32)
    (opt_byte,) = struct.unpack_from("<B", raw, 56)
    if (d_seg, d_proj, k_eig, c_classes) != (cfg.d_seg, cfg.d_proj,
                                             cfg.k_eigenvectors, cfg.c_classes):
        raise InvalidInput(
            f"checkpoint dims (d_seg={d_seg}, d_proj={d_proj}, k={k_eig}, "
            f"c={c_classes}) do not match the config")
    shapes = {
        "wa": (d_key, d_seg), "ba": (d_seg,), "wb": (d_key, d_seg), "bb": (d_seg,),
        "wc": (d_seg, d_seg), "bc": (d_seg,), "wp": (d_seg, d_proj), "bp": (d_proj,),
        "centers": (k_eig, c_classes),
    }
    off = 57

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        need = count * 8
        if off + need > len(raw):
            raise FormatError(f"{path}: truncated checkpoint payload", offset=off)
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += need
        return arr.astype(np.float64)

    loaded = {name: take(shapes[name]) for name in _TENSOR_ORDER}
    adam_m, adam_v = {}, {}
    for name in _TENSOR_ORDER:
        adam_m[name] = take(shapes[name])
        adam_v[name] = take(shapes[name])
    params = HeadParams(wa=loaded["wa"], ba=loaded["ba"], wb=loaded["wb"],
                        bb=loaded["bb"], wc=loaded["wc"], bc=loaded["bc"],
                        wp=loaded["wp"], bp=loaded["bp"])
    centers = ClusterCenters(weights=loaded["centers"])
    state = TrainState(cfg=cfg, params=params, centers=centers, step=int(step),
                       adam_t=int(adam_t))
    state.adam_m = adam_m
    state.adam_v = adam_v
    if (opt_byte == 1) != (cfg.optimizer == "adam"):
        raise InvalidInput("checkpoint optimizer kind does not match the config")
    if int(seed) != cfg.seed:
        raise InvalidInput(f"checkpoint seed {seed} does not match config seed {cfg.seed}")
    return state

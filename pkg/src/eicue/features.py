"""Patch-grid data model, tensor-file I/O, image resizing, synthetic scenes.

The flattening convention everywhere is row-major over (h, w): patch index
i = row * w + col. `patch_index` / `patch_coords` are the single source of
truth for that mapping; no other module hand-rolls it.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidInput

NPY_MAGIC = b"\x93NUMPY"


def patch_index(row: int, col: int, w: int) -> int:
    return row * w + col


def patch_coords(i: int, w: int):
    return divmod(i, w)


def coord_grid(h: int, w: int):
    """(N, 2) array of (row, col) for every patch in index order."""
    rows, cols = np.divmod(np.arange(h * w), w)
    return np.stack([rows, cols], axis=1)


@dataclass(frozen=True)
class FeatureGrid:
    """h x w grid of d-dimensional patch features, stored float64."""

    h: int
    w: int
    d: int
    data: np.ndarray = field(repr=False)  # shape (h*w, d)

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.d < 1:
            raise InvalidInput(f"bad grid dims ({self.h}, {self.w}, {self.d})")
        a = np.asarray(self.data, dtype=np.float64).reshape(self.h * self.w, self.d)
        if not np.all(np.isfinite(a)):
            raise InvalidInput("feature grid values must be finite")
        object.__setattr__(self, "data", a)

    @property
    def n(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class PatchImage:
    """RGB image at patch resolution, channels clamped to [0, 1]."""

    h: int
    w: int
    rgb: np.ndarray = field(repr=False)  # shape (h*w, 3)

    def __post_init__(self):
        a = np.asarray(self.rgb, dtype=np.float64).reshape(self.h * self.w, 3)
        if not np.all(np.isfinite(a)):
            raise InvalidInput("image values must be finite")
        object.__setattr__(self, "rgb", np.clip(a, 0.0, 1.0))

    @property
    def n(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class SegmentMap:
    """Length h*w integer label field over the patch grid."""

    h: int
    w: int
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.labels, dtype=np.int64).reshape(self.h * self.w)
        if np.any(a < 0):
            raise InvalidInput("segment labels must be >= 0")
        object.__setattr__(self, "labels", a)

    @property
    def n(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class SamplePair:
    """Base and augmented feature grids plus the patch-resolution image."""

    base: FeatureGrid
    aug: FeatureGrid
    image: PatchImage
    ground_truth: Optional[SegmentMap] = None

    def __post_init__(self):
        b, a = self.base, self.aug
        if (b.h, b.w, b.d) != (a.h, a.w, a.d):
            raise InvalidInput("base and augmented grids must share (h, w, d)")
        if (self.image.h, self.image.w) != (b.h, b.w):
            raise InvalidInput("patch image dims must match the feature grid")
        gt = self.ground_truth
        if gt is not None and (gt.h, gt.w) != (b.h, b.w):
            raise InvalidInput("ground truth dims must match the feature grid")


# ---------------------------------------------------------------------------
# Tensor container: NPY v1.0, little-endian payload, C order.
# Feature grids are "<f4" shape (h, w, d); label maps are "<i4" shape (h, w).
# ---------------------------------------------------------------------------

def _read_npy_header(buf: bytes, path: str):
    if len(buf) < 10:
        raise FormatError(f"{path}: file too short for container header", offset=0)
    if buf[:6] != NPY_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:6]!r}", offset=0)
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported container version {major}.{minor}", offset=6)
    (hlen,) = struct.unpack("<H", buf[8:10])
    if len(buf) < 10 + hlen:
        raise FormatError(f"{path}: truncated header", offset=10)
    try:
        header = ast.literal_eval(buf[10:10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header dict: {exc}", offset=10) from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a dict", offset=10)
    return header, 10 + hlen


def _load_npy(path, expect_dtype: str, expect_ndim: int):
    with open(path, "rb") as fh:
        buf = fh.read()
    header, data_off = _read_npy_header(buf, str(path))
    dtype = header.get("descr")
    if dtype != expect_dtype:
        raise FormatError(f"{path}: dtype {dtype!r}, expected {expect_dtype!r}", offset=10)
    if header.get("fortran_order") is not False:
        raise FormatError(f"{path}: fortran_order must be False", offset=10)
    shape = header.get("shape")
    if not (isinstance(shape, tuple) and len(shape) == expect_ndim
            and all(isinstance(s, int) and s > 0 for s in shape)):
        raise FormatError(
            f"{path}: shape {shape!r} is not a positive {expect_ndim}-tuple", offset=10)
    count = int(np.prod(shape))
    itemsize = np.dtype(expect_dtype).itemsize
    need = count * itemsize
    have = len(buf) - data_off
    if have < need:
        raise FormatError(
            f"{path}: payload holds {have} bytes, header declares {need}",
            offset=data_off + have)
    flat = np.frombuffer(buf[data_off:data_off + need], dtype=expect_dtype)
    return flat.reshape(shape), shape


def _npy_header_bytes(descr: str, shape) -> bytes:
    dict_str = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr, repr(tuple(int(s) for s in shape)))
    base = len(NPY_MAGIC) + 2 + 2
    pad = (-(base + len(dict_str) + 1)) % 64
    header = dict_str + " " * pad + "\n"
    return NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode("latin1")


def load_tensor_file(path) -> FeatureGrid:
    """Read a "<f4" (h, w, d) container into a float64 FeatureGrid."""
    arr, shape = _load_npy(path, "<f4", 3)
    h, w, d = shape
    return FeatureGrid(h=h, w=w, d=d, data=arr.astype(np.float64).reshape(h * w, d))


def write_tensor_file(path, grid: FeatureGrid) -> None:
    payload = grid.data.reshape(grid.h, grid.w, grid.d).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_npy_header_bytes("<f4", (grid.h, grid.w, grid.d)))
        fh.write(payload.tobytes(order="C"))


def load_label_file(path) -> SegmentMap:
    """Read a "<i4" (h, w) container into a SegmentMap."""
    arr, shape = _load_npy(path, "<i4", 2)
    h, w = shape
    return SegmentMap(h=h, w=w, labels=arr.astype(np.int64).reshape(h * w))


def write_label_file(path, seg: SegmentMap) -> None:
    payload = seg.labels.reshape(seg.h, seg.w).astype("<i4")
    with open(path, "wb") as fh:
        fh.write(_npy_header_bytes("<i4", (seg.h, seg.w)))
        fh.write(payload.tobytes(order="C"))


def load_image_file(path) -> PatchImage:
    """Read a "<f4" (h, w, 3) container into a PatchImage."""
    arr, shape = _load_npy(path, "<f4", 3)
    h, w, c = shape
    if c != 3:
        raise FormatError(f"{path}: image container must have 3 channels, got {c}", offset=10)
    return PatchImage(h=h, w=w, rgb=arr.astype(np.float64).reshape(h * w, 3))


def write_image_file(path, img: PatchImage) -> None:
    payload = img.rgb.reshape(img.h, img.w, 3).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_npy_header_bytes("<f4", (img.h, img.w, 3)))
        fh.write(payload.tobytes(order="C"))


# ---------------------------------------------------------------------------
# Image resizing
# ---------------------------------------------------------------------------

def _box_weights(n_out: int, n_in: int) -> np.ndarray:
    """Row-normalized (n_out, n_in) overlap weights of equal output boxes."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    w = np.zeros((n_out, n_in))
    for r in range(n_out):
        lo, hi = edges[r], edges[r + 1]
        first, last = int(np.floor(lo)), int(np.ceil(hi))
        for c in range(first, min(last, n_in)):
            w[r, c] = min(hi, c + 1) - max(lo, c)
    return w / w.sum(axis=1, keepdims=True)


def resize_image_to_patches(img_pixels: np.ndarray, h: int, w: int) -> PatchImage:
    """Area-averaging downsample of an (H, W, 3) pixel array to (h, w)."""
    px = np.asarray(img_pixels, dtype=np.float64)
    if px.ndim != 3 or px.shape[2] != 3:
        raise InvalidInput(f"expected (H, W, 3) pixels, got {px.shape}")
    if h < 1 or w < 1:
        raise InvalidInput("target size must be positive")
    hi, wi = px.shape[:2]
    if hi < h or wi < w:
        raise InvalidInput(f"cannot upscale: source {hi}x{wi}, target {h}x{w}")
    wr = _box_weights(h, hi)
    wc = _box_weights(w, wi)
    out = np.einsum("ri,ijc,sj->rsc", wr, px, wc)
    return PatchImage(h=h, w=w, rgb=out.reshape(h * w, 3))


# ---------------------------------------------------------------------------
# Synthetic desk-scale scenes
# ---------------------------------------------------------------------------

_SCENE_PALETTE = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.60, 0.90], [0.95, 0.85, 0.10], [0.15, 0.75, 0.20],
    [0.70, 0.20, 0.85], [0.95, 0.55, 0.10], [0.20, 0.25, 0.80], [0.55, 0.35, 0.15],
    [0.10, 0.85, 0.75], [0.85, 0.40, 0.55], [0.45, 0.90, 0.30], [0.35, 0.10, 0.45],
])


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for the synthetic scene generator."""

    n_objects: int
    h: int = 16
    w: int = 16
    d: int = 16
    noise_sigma: float = 0.05
    aug_jitter: float = 0.05
    image_noise: float = 0.02
    feature_scale: float = 1.0

    def __post_init__(self):
        if self.n_objects < 1:
            raise InvalidInput("object count must be >= 1")
        if self.noise_sigma < 0 or self.aug_jitter < 0 or self.image_noise < 0:
            raise InvalidInput("noise levels must be >= 0")
        if self.n_objects > self.d:
            raise InvalidInput("need d >= n_objects for orthogonal object means")
        if self.n_objects > self.h * self.w:
            raise InvalidInput("more objects than patches")


def object_means(spec: SceneSpec, seed: int) -> np.ndarray:
    """Mutually orthogonal unit mean vectors, one per object, fixed by seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 77]))
    g = rng.standard_normal((spec.d, spec.d))
    q, _ = np.linalg.qr(g)
    return q[:, : spec.n_objects].T * spec.feature_scale


def _voronoi_layout(spec: SceneSpec, rng) -> np.ndarray:
    """Contiguous object regions: nearest seeded site wins each patch."""
    n = spec.h * spec.w
    sites = rng.choice(n, size=spec.n_objects, replace=False)
    coords = coord_grid(spec.h, spec.w).astype(np.float64)
    site_xy = coords[sites]
    d2 = ((coords[:, None, :] - site_xy[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def synth_scene(spec: SceneSpec, seed: int, means: Optional[np.ndarray] = None):
    """Deterministic synthetic sample: (SamplePair, SegmentMap).

    Base features are per-object means plus N(0, noise_sigma^2); augmented
    features add one seeded offset per channel (photometric analog, no
    spatial change); the patch image colors each object from a fixed palette.
    """
    if means is None:
        means = object_means(spec, seed)
    if means.shape != (spec.n_objects, spec.d):
        raise InvalidInput(f"means shape {means.shape} != ({spec.n_objects}, {spec.d})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    labels = _voronoi_layout(spec, rng)
    base = means[labels] + spec.noise_sigma * rng.standard_normal((spec.h * spec.w, spec.d))
    jitter = spec.aug_jitter * rng.standard_normal(spec.d)
    aug = base + jitter[None, :]
    colors = _SCENE_PALETTE[np.arange(spec.n_objects) % len(_SCENE_PALETTE)]
    rgb = colors[labels] + spec.image_noise * rng.standard_normal((spec.h * spec.w, 3))
    pair = SamplePair(
        base=FeatureGrid(spec.h, spec.w, spec.d, base),
        aug=FeatureGrid(spec.h, spec.w, spec.d, aug),
        image=PatchImage(spec.h, spec.w, rgb),
        ground_truth=SegmentMap(spec.h, spec.w, labels),
    )
    return pair, pair.ground_truth

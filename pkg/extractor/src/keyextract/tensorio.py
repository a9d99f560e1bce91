"""Tensor container writer matching the core's interchange format:
NPY v1.0, "<f4" payload, C order, shape (h, w, d) for feature grids and
(h, w, 3) for patch images.
"""

from __future__ import annotations

import struct

import numpy as np

NPY_MAGIC = b"\x93NUMPY"


def _header(descr: str, shape) -> bytes:
    dict_str = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr, repr(tuple(int(s) for s in shape)))
    base = len(NPY_MAGIC) + 2 + 2
    pad = (-(base + len(dict_str) + 1)) % 64
    text = dict_str + " " * pad + "\n"
    return NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(text)) + text.encode("latin1")


def write_f4(path, array: np.ndarray) -> None:
    payload = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_header("<f4", payload.shape))
        fh.write(payload.tobytes(order="C"))


def area_resize(rgb: np.ndarray, h: int, w: int) -> np.ndarray:
    """Exact box-mean downsample of (H, W, 3) to (h, w, 3)."""
    def weights(n_out, n_in):
        edges = np.linspace(0.0, n_in, n_out + 1)
        m = np.zeros((n_out, n_in))
        for r in range(n_out):
            lo, hi = edges[r], edges[r + 1]
            for c in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
                m[r, c] = min(hi, c + 1) - max(lo, c)
        return m / m.sum(axis=1, keepdims=True)

    wr = weights(h, rgb.shape[0])
    wc = weights(w, rgb.shape[1])
    return np.einsum("ri,ijc,sj->rsc", wr, np.asarray(rgb, dtype=np.float64), wc)

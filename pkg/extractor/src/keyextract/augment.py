"""Deterministic photometric jitter. No geometric transform ever: the
augmented image stays pixel-aligned with its source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class JitterSpec:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1          # fraction of a full hue revolution
    grayscale_prob: float = 0.2


def _rotate_hue(rgb: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the chroma plane (YIQ decomposition) by `angle` radians."""
    to_yiq = np.array([[0.299, 0.587, 0.114],
                       [0.596, -0.274, -0.322],
                       [0.211, -0.523, 0.312]])
    from_yiq = np.linalg.inv(to_yiq)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    return rgb @ (to_yiq.T @ rot.T @ from_yiq.T)


def photometric_jitter(rgb: np.ndarray, spec: JitterSpec, rng) -> np.ndarray:
    """Apply seeded brightness/contrast/saturation/hue jitter to an
    (H, W, 3) array in [0, 1]; occasionally collapse to grayscale."""
    out = np.asarray(rgb, dtype=np.float64).copy()

    b = 1.0 + spec.brightness * float(rng.uniform(-1.0, 1.0))
    out = out * b

    c = 1.0 + spec.contrast * float(rng.uniform(-1.0, 1.0))
    mean_gray = float((out @ _GRAY_WEIGHTS).mean())
    out = (out - mean_gray) * c + mean_gray

    s = 1.0 + spec.saturation * float(rng.uniform(-1.0, 1.0))
    gray = (out @ _GRAY_WEIGHTS)[..., None]
    out = gray + (out - gray) * s

    h = spec.hue * float(rng.uniform(-1.0, 1.0)) * 2.0 * np.pi
    out = _rotate_hue(out, h)

    if float(rng.uniform()) < spec.grayscale_prob:
        out = np.repeat((out @ _GRAY_WEIGHTS)[..., None], 3, axis=2)

    return np.clip(out, 0.0, 1.0)

"""ViT attention-key extraction into the eicue tensor-file layout."""

from .augment import JitterSpec, photometric_jitter
from .extract import ExtractSpec, build_model, extract
from .vit import BACKBONES, KeyViT

__version__ = "0.1.0"

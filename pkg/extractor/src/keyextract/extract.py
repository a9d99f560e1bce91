"""Batch extraction: images -> attention-key feature grids on disk.

Per image this writes <id>.k.npy with shape (H, W, 3*d_key) holding the
head-concatenated pre-softmax keys of the requested blocks, <id>.kaug.npy
from a photometrically jittered copy (no geometric change), and <id>.img.npy
with the area-resized RGB at patch resolution, then appends to index.txt.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from .augment import JitterSpec, photometric_jitter
from .tensorio import area_resize, write_f4
from .vit import BACKBONES, KeyViT


@dataclass(frozen=True)
class ExtractSpec:
    backbone: str = "vit_s8"
    input_size: int = 224
    blocks: tuple = ()            # empty means the last three
    weights: Optional[str] = None
    seed: int = 0
    jitter: JitterSpec = field(default_factory=JitterSpec)

    def resolved_blocks(self, depth: int):
        blocks = self.blocks or tuple(range(depth - 2, depth + 1))
        for b in blocks:
            if not 1 <= b <= depth:
                raise ValueError(f"block {b} outside 1..{depth}")
        return blocks


def build_model(spec: ExtractSpec) -> KeyViT:
    if spec.backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {spec.backbone!r}; "
                         f"choose from {sorted(BACKBONES)}")
    backbone = BACKBONES[spec.backbone]
    if spec.input_size % backbone.patch != 0:
        # contract: fail before any model construction or weight loading
        raise ValueError(f"input size {spec.input_size} is not divisible by "
                         f"the {backbone.patch}px patch")
    model = KeyViT(backbone, spec.input_size, seed=spec.seed)
    if spec.weights:
        model.load_released_weights(spec.weights)
    model.eval()
    return model


def load_image(path, size: int) -> np.ndarray:
    img = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def keys_for(model: KeyViT, rgb: np.ndarray, block_ids) -> np.ndarray:
    import torch
    pixels = torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1))[None]).float()
    per_block = model.forward_keys(pixels, block_ids)
    stacked = torch.cat(per_block, dim=-1)[0]  # (grid, grid, len(blocks)*embed)
    return stacked.numpy().astype(np.float64)


def extract(image_paths: List[Path], spec: ExtractSpec, out_dir: Path) -> List[str]:
    model = build_model(spec)
    block_ids = spec.resolved_blocks(model.spec.depth)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = model.grid
    ids = []
    for i, path in enumerate(sorted(image_paths)):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7, i]))
        rgb = load_image(path, spec.input_size)
        rgb_aug = photometric_jitter(rgb, spec.jitter, rng)
        sid = Path(path).stem
        write_f4(out_dir / f"{sid}.k.npy", keys_for(model, rgb, block_ids))
        write_f4(out_dir / f"{sid}.kaug.npy", keys_for(model, rgb_aug, block_ids))
        write_f4(out_dir / f"{sid}.img.npy", area_resize(rgb, grid, grid))
        ids.append(sid)
    index = out_dir / "index.txt"
    known = []
    if index.is_file():
        known = [l for l in index.read_text(encoding="utf-8").splitlines() if l.strip()]
    merged = list(dict.fromkeys(known + ids))
    index.write_text("\n".join(merged) + "\n", encoding="utf-8")
    return ids


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Export ViT attention-key grids into the tensor-file layout")
    parser.add_argument("--backbone", default="vit_s8", choices=sorted(BACKBONES))
    parser.add_argument("--size", type=int, default=224)
    parser.add_argument("--blocks", default="",
                        help="comma-separated 1-indexed block ids; default last three")
    parser.add_argument("--weights", default=None,
                        help="checkpoint path; omitted = seeded random backbone")
    parser.add_argument("--in", dest="in_dir", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    blocks = tuple(int(b) for b in args.blocks.split(",") if b.strip()) if args.blocks else ()
    spec = ExtractSpec(backbone=args.backbone, input_size=args.size, blocks=blocks,
                       weights=args.weights, seed=args.seed)
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        print(f"error: input directory {in_dir} does not exist", file=sys.stderr)
        return 3
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}
    paths = [p for p in sorted(in_dir.iterdir()) if p.suffix.lower() in exts]
    if not paths:
        print(f"error: no images under {in_dir}", file=sys.stderr)
        return 3
    try:
        ids = extract(paths, spec, Path(args.out))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"extracted {len(ids)} images -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

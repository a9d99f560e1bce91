"""Minimal vision transformer with attention-key capture.

Module names follow the common ViT checkpoint convention
(patch_embed.proj, blocks.N.attn.qkv, ...) so released self-supervised
weights load directly via load_state_dict. The forward pass records each
block's pre-softmax key tensor; the extractor concatenates the requested
blocks' keys per patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    patch: int
    embed: int
    depth: int
    heads: int


BACKBONES = {
    "vit_s8": BackboneSpec("vit_s8", patch=8, embed=384, depth=12, heads=6),
    "vit_s16": BackboneSpec("vit_s16", patch=16, embed=384, depth=12, heads=6),
    "vit_b8": BackboneSpec("vit_b8", patch=8, embed=768, depth=12, heads=12),
}


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        self.last_keys = None  # (B, N_tokens, dim), set on every forward

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)  # 3, B, heads, N, head_dim
        q, k, v = qkv[0], qkv[1], qkv[2]
        self.last_keys = k.transpose(1, 2).reshape(b, n, d)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class KeyViT(nn.Module):
    """ViT whose forward returns per-block key grids instead of logits."""

    def __init__(self, spec: BackboneSpec, input_size: int, seed: int = 0):
        super().__init__()
        if input_size % spec.patch != 0:
            raise ValueError(f"input size {input_size} not divisible by patch {spec.patch}")
        torch.manual_seed(seed)
        self.spec = spec
        self.grid = input_size // spec.patch
        n_tokens = self.grid * self.grid + 1
        self.patch_embed_proj = nn.Conv2d(3, spec.embed, spec.patch, stride=spec.patch)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, spec.embed))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, spec.embed))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        self.blocks = nn.ModuleList(Block(spec.embed, spec.heads)
                                    for _ in range(spec.depth))
        self.norm = nn.LayerNorm(spec.embed)

    # checkpoint-compatible parameter naming
    def state_dict_key_map(self):
        return {"patch_embed.proj.weight": "patch_embed_proj.weight",
                "patch_embed.proj.bias": "patch_embed_proj.bias"}

    def load_released_weights(self, path) -> None:
        raw = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(raw, dict) and "teacher" in raw:
            raw = raw["teacher"]
        if isinstance(raw, dict) and "state_dict" in raw:
            raw = raw["state_dict"]
        cleaned = {}
        for key, value in raw.items():
            key = key.replace("module.", "").replace("backbone.", "")
            key = self.state_dict_key_map().get(key, key)
            cleaned[key] = value
        if "pos_embed" in cleaned and cleaned["pos_embed"].shape != self.pos_embed.shape:
            cleaned["pos_embed"] = _interpolate_pos_embed(cleaned["pos_embed"], self.grid)
        missing, unexpected = self.load_state_dict(cleaned, strict=False)
        truly_missing = [m for m in missing if not m.startswith("head")]
        if truly_missing:
            raise ValueError(f"checkpoint is missing parameters: {truly_missing[:5]}")

    @torch.no_grad()
    def forward_keys(self, pixels: torch.Tensor, block_ids):
        """pixels: (B, 3, H, W) in [0, 1]. Returns list of (B, grid, grid, embed)
        key tensors, one per requested 1-indexed block id."""
        b = pixels.shape[0]
        x = self.patch_embed_proj(pixels).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        wanted = set(block_ids)
        grabbed = {}
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i in wanted:
                keys = block.attn.last_keys[:, 1:, :]  # drop the cls token
                grabbed[i] = keys.reshape(b, self.grid, self.grid, self.spec.embed)
        return [grabbed[i] for i in block_ids]


def _interpolate_pos_embed(pos: torch.Tensor, grid: int) -> torch.Tensor:
    cls_part = pos[:, :1]
    patch_part = pos[:, 1:]
    old_grid = int(math.sqrt(patch_part.shape[1]))
    dim = patch_part.shape[2]
    patch_part = patch_part.reshape(1, old_grid, old_grid, dim).permute(0, 3, 1, 2)
    patch_part = torch.nn.functional.interpolate(
        patch_part, size=(grid, grid), mode="bicubic", align_corners=False)
    patch_part = patch_part.permute(0, 2, 3, 1).reshape(1, grid * grid, dim)
    return torch.cat([cls_part, patch_part], dim=1)

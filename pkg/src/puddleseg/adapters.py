"""Lateral encoder adapter driven by the contrast-enhanced input image.

The input is histogram-equalized, high-pass filtered, and patchified into a
frequency embedding; the raw image's patch embedding is reduced and added.
The fused tensor then passes through one private two-layer MLP per encoder
block followed by a parameter-shared fusion MLP, producing one additive
correction per transformer block.

The fusion MLP's final layer is zero-initialized, so a freshly constructed
adapter is an exact no-op on the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging, nn
from .errors import ShapeMismatch


@dataclass
class HEAdaptConfig:
    num_blocks: int
    patch_size: int
    embed_dim: int
    cutoff_ratio: float = 0.25

    def validate(self, image_side: int) -> None:
        if image_side % self.patch_size != 0:
            raise ValueError("patch size must divide the image side")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even")


class HistEqAdapter(nn.Module):
    def __init__(self, cfg: HEAdaptConfig, image_side: int, rng, dtype=np.float32):
        super().__init__()
        cfg.validate(image_side)
        self.cfg = cfg
        self.image_side = image_side
        self.dtype = dtype
        d, p = cfg.embed_dim, cfg.patch_size
        self.freq_embed = self.add_module("freq_embed", nn.Linear(p * p, d // 2, rng, dtype))
        self.orig_embed = self.add_module("orig_embed", nn.Linear(p * p, d, rng, dtype))
        self.reduce = self.add_module("reduce", nn.Linear(d, d // 2, rng, dtype))
        self.block_mlps = [
            self.add_module(f"block{i}", nn.Mlp(d // 2, d // 2, d // 2, rng, dtype))
            for i in range(cfg.num_blocks)
        ]
        self.shared = self.add_module(
            "shared", nn.Mlp(d // 2, d, d, rng, dtype, zero_init_out=True))

    def forward(self, imgs: np.ndarray):
        """imgs: (B, H, W) in [0, 1]. Returns (features, cache) where
        features is a list of num_blocks arrays shaped (B, T, embed_dim)."""
        if imgs.shape[1] != self.image_side or imgs.shape[2] != self.image_side:
            raise ShapeMismatch(f"expected {self.image_side}px images, got {imgs.shape}")
        p = self.cfg.patch_size
        enhanced = np.stack([
            imaging.high_pass_filter(imaging.equalize_histogram(im), self.cfg.cutoff_ratio)
            for im in imgs
        ])
        fpatch = nn.patchify(enhanced, p).astype(self.dtype)
        opatch = nn.patchify(imgs, p).astype(self.dtype)
        f, cf = self.freq_embed.forward(fpatch)
        o, co = self.orig_embed.forward(opatch)
        r, cr = self.reduce.forward(o)
        fused = f + r
        features, caches = [], []
        for mlp in self.block_mlps:
            h, ch = mlp.forward(fused)
            out, cs = self.shared.forward(h)
            features.append(out)
            caches.append((ch, cs))
        return features, (cf, co, cr, caches)

    def backward(self, cache, dfeatures: list[np.ndarray]) -> None:
        """dfeatures: per-block gradients, same shapes as the forward output.
        The image input is not differentiated."""
        cf, co, cr, caches = cache
        dfused = None
        for mlp, (ch, cs), dout in zip(self.block_mlps, caches, dfeatures):
            dh = self.shared.backward(cs, dout)
            d = mlp.backward(ch, dh)
            dfused = d if dfused is None else dfused + d
        dr = dfused
        do = self.reduce.backward(cr, dr)
        self.orig_embed.backward(co, do)
        self.freq_embed.backward(cf, dfused)


def inject(features: list[np.ndarray], block_index: int,
           encoder_tokens: np.ndarray) -> np.ndarray:
    """Additive merge of an adapter feature map into encoder tokens."""
    if block_index >= len(features):
        raise ShapeMismatch(
            f"block index {block_index} out of range for {len(features)} features")
    feat = features[block_index]
    if feat.shape != encoder_tokens.shape:
        raise ShapeMismatch(
            f"adapter features {feat.shape} do not match tokens {encoder_tokens.shape}")
    return encoder_tokens + feat

"""Assembly of the full prompted segmentation pipeline.

The pipeline owns one module per component group and wires the training-time
forward/backward passes:

    small CNN ──(stop-grad mask)──> spatial prompt ┐
    image ──> hist-eq adapter ─┐                   ├─> combiner ─> decoder
    image ──> encoder (+inject)┴─> Z ──> semantic ─┤
    image ─────────────────────────────> style ────┘

Gradient flow from the decoder never crosses back into the small model: the
predicted mask is a stop-gradient boundary, so the small model learns only
from its own loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import HEAdaptConfig, HistEqAdapter
from .combiner import PromptCombiner
from .config import TrainConfig
from .models import (DecoderConfig, EncoderConfig, ImageEncoder, MaskDecoder,
                     SmallModelConfig, SmallSegmenter)
from .nn import Param, sigmoid
from .prompters import SemanticPrompter, SpatialPromptEncoder, StylePrompter

GROUPS = ("small", "encoder", "he", "spatial", "semantic", "style", "dpc", "decoder")

PREDICT_THRESHOLD = 0.5


@dataclass
class PipelineForward:
    """Everything produced by one training forward pass."""

    logits: np.ndarray
    small_logits: np.ndarray
    small_probs: np.ndarray
    pseudo: object | None
    sim: np.ndarray | None
    prompted: bool
    caches: dict


def downsample_labels(masks: np.ndarray, grid: int) -> np.ndarray:
    """Majority-pool binary masks to the embedding grid as class labels."""
    b, h, w = masks.shape
    ph, pw = h // grid, w // grid
    pooled = masks.reshape(b, grid, ph, grid, pw).mean(axis=(2, 4))
    return (pooled >= 0.5).astype(np.int64)


class SegmentationPipeline:
    """All component modules plus the forward/backward wiring."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.embed_dim
        self.small = SmallSegmenter(
            SmallModelConfig(widths=(cfg.small_width, 2 * cfg.small_width,
                                     4 * cfg.small_width)), rng, dtype)
        self.encoder = ImageEncoder(
            EncoderConfig(depth=cfg.encoder_depth, patch_size=cfg.patch_size,
                          embed_dim=d, num_heads=cfg.num_heads,
                          image_side=cfg.image_side), rng, dtype)
        self.he = HistEqAdapter(
            HEAdaptConfig(num_blocks=cfg.encoder_depth, patch_size=cfg.patch_size,
                          embed_dim=d, cutoff_ratio=cfg.cutoff_ratio),
            cfg.image_side, rng, dtype)
        self.spatial = SpatialPromptEncoder(
            cfg.image_side, cfg.patch_size, d, rng, grid_size=cfg.grid_size,
            tau=cfg.tau, bin_threshold=cfg.bin_threshold, dtype=dtype)
        self.semantic = SemanticPrompter(
            d, cfg.num_classes, cfg.num_prototypes_per_class, rng,
            momentum=cfg.proto_momentum, dtype=dtype)
        self.style = StylePrompter(cfg.image_side, d, rng, dtype)
        self.dpc = PromptCombiner(d, rng, adaptive_tokens=cfg.adaptive_tokens,
                                  dtype=dtype)
        self.decoder = MaskDecoder(
            DecoderConfig(num_cross_attn_layers=2, embed_dim=d,
                          upsample_factor=cfg.patch_size,
                          num_heads=cfg.num_heads), rng, dtype)
        self.groups = {
            "small": self.small, "encoder": self.encoder, "he": self.he,
            "spatial": self.spatial, "semantic": self.semantic,
            "style": self.style, "dpc": self.dpc, "decoder": self.decoder,
        }

    # -- parameter bookkeeping -------------------------------------------

    def named_params(self) -> dict[str, Param]:
        out: dict[str, Param] = {}
        for gname, mod in self.groups.items():
            out.update(mod.param_dict(gname))
        return out

    def zero_grads(self) -> None:
        for mod in self.groups.values():
            mod.zero_grads()

    def set_frozen(self, frozen_groups: set[str]) -> None:
        for gname, mod in self.groups.items():
            flag = gname in frozen_groups
            for _, p in mod.named_params():
                p.frozen = flag
        # the prototype bank is never optimizer-driven
        self.semantic.bank.frozen = True

    def group_param_counts(self) -> dict[str, int]:
        return {g: mod.num_params() for g, mod in self.groups.items()}

    # -- forward / backward ----------------------------------------------

    def forward(self, imgs: np.ndarray, prompted: bool) -> PipelineForward:
        """imgs: (B, H, W) float64 in [0, 1]."""
        cfg = self.cfg
        caches: dict = {}
        (small_logits, small_probs), caches["small"] = self.small.forward(imgs)
        features = None
        if cfg.use_he:
            features, caches["he"] = self.he.forward(imgs)
        z, caches["encoder"] = self.encoder.forward(imgs, features)
        pseudo = sim = None
        if prompted:
            e_spa = e_sem = e_sty = None
            if cfg.use_spatial:
                # the mask enters prompting as data, not as a gradient path
                e_spa, caches["spatial"] = self.spatial.forward(
                    small_probs, cfg.spatial_mode)
            if cfg.use_semantic:
                e_sem, pseudo, caches["semantic"] = self.semantic.forward(z)
                sim = pseudo.similarity
            if cfg.use_style:
                e_sty, caches["style"] = self.style.forward(imgs)
            if e_spa is None and e_sem is None and e_sty is None:
                e_p = self.dpc.default_prompt(imgs.shape[0], dtype=self.dtype)
                caches["dpc"] = None
            else:
                e_p, caches["dpc"] = self.dpc.combine(
                    e_spa, e_sem, e_sty, dynamic=cfg.use_dpc)
        else:
            e_p = self.dpc.default_prompt(imgs.shape[0], dtype=self.dtype)
            caches["dpc"] = None
        logits, caches["decoder"] = self.decoder.forward(z, e_p)
        return PipelineForward(logits=logits, small_logits=small_logits,
                               small_probs=small_probs, pseudo=pseudo,
                               sim=sim, prompted=prompted, caches=caches)

    def backward_large(self, fwd: PipelineForward, dlogits: np.ndarray,
                       dsim: np.ndarray | None = None,
                       through_encoder: bool = True) -> None:
        """Backpropagate the large-branch loss gradient.

        through_encoder=False skips the encoder/adapter backward entirely
        (used when both are frozen, e.g. in stage 2).
        """
        cfg = self.cfg
        caches = fwd.caches
        dz, dprompt = self.decoder.backward(caches["decoder"], dlogits)
        if fwd.prompted and caches["dpc"] is not None:
            d_spa, d_sem, d_sty = self.dpc.backward(caches["dpc"], dprompt)
            if d_spa is not None:
                self.spatial.backward(caches["spatial"], d_spa)
            if cfg.use_semantic:
                dz = dz + self.semantic.backward(caches["semantic"], d_sem, dsim)
            if d_sty is not None:
                self.style.backward(caches["style"], d_sty)
        if through_encoder:
            dfeatures = self.encoder.backward(caches["encoder"], dz)
            if cfg.use_he and dfeatures is not None:
                self.he.backward(caches["he"], dfeatures)

    def backward_small(self, fwd: PipelineForward, dlogits: np.ndarray) -> None:
        self.small.backward(fwd.caches["small"], dlogits)

    def proto_update(self, fwd: PipelineForward) -> None:
        if fwd.pseudo is not None:
            self.semantic.momentum_update(fwd.caches["semantic"])

    # -- inference ---------------------------------------------------------

    def predict_probs(self, imgs: np.ndarray, prompted: bool = True) -> np.ndarray:
        fwd = self.forward(imgs, prompted=prompted)
        return sigmoid(fwd.logits.astype(np.float64))

    def predict(self, imgs: np.ndarray, prompted: bool = True) -> np.ndarray:
        """Binary masks via sigmoid >= 0.5 (logit 0 classifies as foreground)."""
        probs = self.predict_probs(imgs, prompted=prompted)
        return (probs >= PREDICT_THRESHOLD).astype(np.uint8)

"""Toy-scale networks: patch-transformer encoder, prompt-conditioned mask
decoder, and the task-specific small CNN.

All forward passes are deterministic given parameters; every backward is a
hand-derived gradient checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .adapters import inject
from .errors import ShapeMismatch
from .prompters import PromptEmbedding


@dataclass
class EncoderConfig:
    depth: int = 4
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 4
    image_side: int = 64

    @property
    def grid(self) -> int:
        return self.image_side // self.patch_size

    def validate(self) -> None:
        if self.image_side % self.patch_size != 0:
            raise ValueError("image_side must be divisible by patch_size")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")


@dataclass
class DecoderConfig:
    num_cross_attn_layers: int = 2
    embed_dim: int = 32
    upsample_factor: int = 8  # matches the encoder patch size
    num_heads: int = 4


@dataclass
class SmallModelConfig:
    widths: tuple[int, int, int] = (8, 16, 32)


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, rng, dtype):
        super().__init__()
        self.ln1 = self.add_module("ln1", nn.LayerNorm(dim, dtype))
        self.attn = self.add_module("attn", nn.MultiHeadAttention(dim, heads, rng, dtype))
        self.ln2 = self.add_module("ln2", nn.LayerNorm(dim, dtype))
        self.mlp = self.add_module("mlp", nn.Mlp(dim, 2 * dim, dim, rng, dtype))

    def forward(self, x):
        n1, c1 = self.ln1.forward(x)
        a, ca = self.attn.forward(n1, n1)
        x = x + a
        n2, c2 = self.ln2.forward(x)
        m, cm = self.mlp.forward(n2)
        return x + m, (c1, ca, c2, cm)

    def backward(self, cache, dy):
        c1, ca, c2, cm = cache
        dn2 = self.mlp.backward(cm, dy)
        dx = dy + self.ln2.backward(c2, dn2)
        dq, dkv = self.attn.backward(ca, dx)
        return dx + self.ln1.backward(c1, dq + dkv)


class ImageEncoder(nn.Module):
    """Patch transformer with an additive adapter injection after each block."""

    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        p, d = cfg.patch_size, cfg.embed_dim
        t = cfg.grid * cfg.grid
        self.proj = self.add_module("proj", nn.Linear(p * p, d, rng, dtype))
        self.pos = self.add_param("pos", rng.normal(0.0, 0.02, size=(t, d)).astype(dtype))
        self.blocks = [
            self.add_module(f"block{i}", EncoderBlock(d, cfg.num_heads, rng, dtype))
            for i in range(cfg.depth)
        ]
        self.ln_f = self.add_module("ln_f", nn.LayerNorm(d, dtype))

    def forward(self, imgs: np.ndarray, adapter_features: list[np.ndarray] | None = None):
        """imgs: (B, H, W). Returns (Z, cache) with Z shaped
        (B, grid, grid, embed_dim)."""
        cfg = self.cfg
        if imgs.shape[1:] != (cfg.image_side, cfg.image_side):
            raise ShapeMismatch(f"expected {cfg.image_side}px images, got {imgs.shape}")
        if adapter_features is not None and len(adapter_features) != cfg.depth:
            raise ShapeMismatch("adapter feature count must equal encoder depth")
        patches = nn.patchify(imgs, cfg.patch_size).astype(self.dtype)
        x, cproj = self.proj.forward(patches)
        x = x + self.pos.value
        caches = []
        for i, blk in enumerate(self.blocks):
            x, cb = blk.forward(x)
            if adapter_features is not None:
                x = inject(adapter_features, i, x)
            caches.append(cb)
        z, cf = self.ln_f.forward(x)
        b = imgs.shape[0]
        g = cfg.grid
        return z.reshape(b, g, g, cfg.embed_dim), (cproj, caches, cf, adapter_features is not None)

    def backward(self, cache, dz: np.ndarray):
        """dz: (B, grid, grid, D). Returns per-block adapter-feature
        gradients (or None when no adapter was attached)."""
        cproj, caches, cf, had_adapter = cache
        b = dz.shape[0]
        d = self.cfg.embed_dim
        dx = self.ln_f.backward(cf, dz.reshape(b, -1, d))
        dfeatures = [None] * self.cfg.depth if had_adapter else None
        for i in reversed(range(self.cfg.depth)):
            if had_adapter:
                dfeatures[i] = dx
            dx = self.blocks[i].backward(caches[i], dx)
        self.pos.grad += dx.sum(axis=0)
        self.proj.backward(cproj, dx)
        return dfeatures


class DecoderBlock(nn.Module):
    """One two-way conditioning block: token self-attention, token-to-image
    cross-attention, token MLP, then image-to-token cross-attention."""

    def __init__(self, dim: int, heads: int, rng, dtype):
        super().__init__()
        self.ln_self = self.add_module("ln_self", nn.LayerNorm(dim, dtype))
        self.self_attn = self.add_module("self_attn", nn.MultiHeadAttention(dim, heads, rng, dtype))
        self.ln_t = self.add_module("ln_t", nn.LayerNorm(dim, dtype))
        self.ln_i = self.add_module("ln_i", nn.LayerNorm(dim, dtype))
        self.t2i = self.add_module("t2i", nn.MultiHeadAttention(dim, heads, rng, dtype))
        self.ln_m = self.add_module("ln_m", nn.LayerNorm(dim, dtype))
        self.mlp = self.add_module("mlp", nn.Mlp(dim, 2 * dim, dim, rng, dtype))
        self.ln_i2 = self.add_module("ln_i2", nn.LayerNorm(dim, dtype))
        self.ln_t2 = self.add_module("ln_t2", nn.LayerNorm(dim, dtype))
        self.i2t = self.add_module("i2t", nn.MultiHeadAttention(dim, heads, rng, dtype))

    def forward(self, tokens, img):
        n, c1 = self.ln_self.forward(tokens)
        a, c2 = self.self_attn.forward(n, n)
        tokens = tokens + a
        nt, c3 = self.ln_t.forward(tokens)
        ni, c4 = self.ln_i.forward(img)
        a, c5 = self.t2i.forward(nt, ni)
        tokens = tokens + a
        nm, c6 = self.ln_m.forward(tokens)
        m, c7 = self.mlp.forward(nm)
        tokens = tokens + m
        ni2, c8 = self.ln_i2.forward(img)
        nt2, c9 = self.ln_t2.forward(tokens)
        a, c10 = self.i2t.forward(ni2, nt2)
        img = img + a
        return tokens, img, (c1, c2, c3, c4, c5, c6, c7, c8, c9, c10)

    def backward(self, cache, dtokens, dimg):
        c1, c2, c3, c4, c5, c6, c7, c8, c9, c10 = cache
        dni2, dnt2 = self.i2t.backward(c10, dimg)
        dtokens = dtokens + self.ln_t2.backward(c9, dnt2)
        dimg = dimg + self.ln_i2.backward(c8, dni2)
        dnm = self.mlp.backward(c7, dtokens)
        dtokens = dtokens + self.ln_m.backward(c6, dnm)
        dnt, dni = self.t2i.backward(c5, dtokens)
        dimg = dimg + self.ln_i.backward(c4, dni)
        dtokens = dtokens + self.ln_t.backward(c3, dnt)
        dn, dkv = self.self_attn.backward(c2, dtokens)
        return dtokens + self.ln_self.backward(c1, dn + dkv), dimg


class MaskDecoder(nn.Module):
    """Cross-attends prompt tokens with image tokens, then upsamples the
    conditioned image tokens back to pixel-resolution logits.

    A combined prompt may carry a dense spatial block; those tokens are
    reshaped to the embedding grid and added to the image embedding, while
    the remaining blocks act as sparse tokens.
    """

    def __init__(self, cfg: DecoderConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.embed_dim
        stages = int(np.log2(cfg.upsample_factor))
        if 2 ** stages != cfg.upsample_factor:
            raise ValueError("upsample_factor must be a power of two")
        self.blocks = [
            self.add_module(f"block{i}", DecoderBlock(d, cfg.num_heads, rng, dtype))
            for i in range(cfg.num_cross_attn_layers)
        ]
        self.ln_out = self.add_module("ln_out", nn.LayerNorm(d, dtype))
        chans = [d] + [max(d // 2 ** (i + 1), 4) for i in range(stages)]
        self.upconvs = [
            self.add_module(f"up{i}", nn.ConvTranspose2d(chans[i], chans[i + 1], 2, rng,
                                                         stride=2, dtype=dtype))
            for i in range(stages)
        ]
        self.head = self.add_module("head", nn.Conv2d(chans[-1], 1, 1, rng, dtype=dtype))
        self._image_pe_cache: dict[tuple[int, int], np.ndarray] = {}

    def _image_pe(self, hg: int, wg: int) -> np.ndarray:
        key = (hg, wg)
        if key not in self._image_pe_cache:
            rr, cc = np.meshgrid(np.arange(hg), np.arange(wg), indexing="ij")
            coords = np.stack([rr, cc], axis=-1).reshape(-1, 2)
            self._image_pe_cache[key] = nn.sinusoidal_coord_encoding(
                coords, self.cfg.embed_dim, (hg, wg), dtype=self.dtype)
        return self._image_pe_cache[key]

    @staticmethod
    def split_prompt(e_p: PromptEmbedding):
        """Partition a combined prompt into (dense_span, sparse_spans)."""
        if e_p.kind != "combined":
            raise ValueError("decoder expects a combined prompt embedding")
        dense = None
        sparse = []
        for kind, start, stop in e_p.blocks:
            if kind == "spatial-dense":
                dense = (start, stop)
            else:
                sparse.append((start, stop))
        return dense, sparse

    def forward(self, z: np.ndarray, e_p: PromptEmbedding):
        """z: (B, Hg, Wg, D); e_p: combined prompt. Returns (logits, cache)
        with logits shaped (B, Hg*up, Wg*up)."""
        b, hg, wg, d = z.shape
        dense, sparse = self.split_prompt(e_p)
        img = z.reshape(b, hg * wg, d)
        if dense is not None:
            start, stop = dense
            if stop - start != hg * wg:
                raise ShapeMismatch("dense prompt block does not match the image grid")
            img = img + e_p.tokens[..., start:stop, :]
        tokens = np.concatenate(
            [e_p.tokens[..., s0:s1, :] for s0, s1 in sparse], axis=-2)
        img = img + self._image_pe(hg, wg)
        caches = []
        for blk in self.blocks:
            tokens, img, cb = blk.forward(tokens, img)
            caches.append(cb)
        nimg, cn = self.ln_out.forward(img)
        x = nimg.transpose(0, 2, 1).reshape(b, d, hg, wg)
        upcaches = []
        for up in self.upconvs:
            x, cu = up.forward(x)
            x, mask = nn.relu(x)
            upcaches.append((cu, mask))
        logits, chead = self.head.forward(x)
        cache = (caches, cn, upcaches, chead, (b, hg, wg, d), dense, sparse,
                 e_p.tokens.shape)
        return logits[:, 0], cache

    def backward(self, cache, dlogits: np.ndarray):
        """Returns (dZ, d_prompt_tokens)."""
        caches, cn, upcaches, chead, (b, hg, wg, d), dense, sparse, tok_shape = cache
        dx = self.head.backward(chead, dlogits[:, None])
        for up, (cu, mask) in zip(reversed(self.upconvs), reversed(upcaches)):
            dx = nn.relu_backward(mask, dx)
            dx = up.backward(cu, dx)
        dnimg = dx.reshape(b, d, hg * wg).transpose(0, 2, 1)
        dimg = self.ln_out.backward(cn, dnimg)
        # sparse tokens feed the output only through the blocks
        dsparse = np.zeros((b, sum(s1 - s0 for s0, s1 in sparse), d),
                           dtype=dlogits.dtype)
        for blk, cb in zip(reversed(self.blocks), reversed(caches)):
            dsparse, dimg = blk.backward(cb, dsparse, dimg)
        dprompt = np.zeros(tok_shape, dtype=dlogits.dtype)
        offset = 0
        for s0, s1 in sparse:
            width = s1 - s0
            dprompt[..., s0:s1, :] = dsparse[..., offset:offset + width, :]
            offset += width
        if dense is not None:
            s0, s1 = dense
            dprompt[..., s0:s1, :] = dimg
        dz = dimg.reshape(b, hg, wg, d)
        return dz, dprompt


class SmallSegmenter(nn.Module):
    """Encoder-decoder CNN with skip connections; sigmoid output at input
    resolution."""

    def __init__(self, cfg: SmallModelConfig, rng, dtype=np.float32):
        super().__init__()
        w0, w1, w2 = cfg.widths
        self.cfg = cfg
        self.dtype = dtype
        self.c_in = self.add_module("c_in", nn.Conv2d(1, w0, 3, rng, pad=1, dtype=dtype))
        self.d1 = self.add_module("d1", nn.Conv2d(w0, w1, 3, rng, stride=2, pad=1, dtype=dtype))
        self.d2 = self.add_module("d2", nn.Conv2d(w1, w2, 3, rng, stride=2, pad=1, dtype=dtype))
        # skip fusion is 1x1: the receptive field comes from the down path,
        # and full-resolution 3x3 convs dominate the step time otherwise
        self.u1 = self.add_module("u1", nn.ConvTranspose2d(w2, w1, 2, rng, stride=2, dtype=dtype))
        self.f1 = self.add_module("f1", nn.Conv2d(2 * w1, w1, 3, rng, pad=1, dtype=dtype))
        self.u2 = self.add_module("u2", nn.ConvTranspose2d(w1, w0, 2, rng, stride=2, dtype=dtype))
        self.f2 = self.add_module("f2", nn.Conv2d(2 * w0, w0, 1, rng, dtype=dtype))
        self.head = self.add_module("head", nn.Conv2d(w0, 1, 1, rng, dtype=dtype))

    def forward(self, imgs: np.ndarray):
        """imgs: (B, H, W) in [0, 1]. Returns ((logits, probs), cache); probs
        are sigmoid outputs in (0, 1) at input resolution."""
        x = imgs[:, None].astype(self.dtype)
        h0, cc = self.c_in.forward(x)
        a0, m0 = nn.relu(h0)
        h1, cd1 = self.d1.forward(a0)
        a1, m1 = nn.relu(h1)
        h2, cd2 = self.d2.forward(a1)
        a2, m2 = nn.relu(h2)
        t1, cu1 = self.u1.forward(a2)
        b1, mu1 = nn.relu(t1)
        cat1 = np.concatenate([b1, a1], axis=1)
        g1, cf1 = self.f1.forward(cat1)
        e1, mf1 = nn.relu(g1)
        t2, cu2 = self.u2.forward(e1)
        b2, mu2 = nn.relu(t2)
        cat2 = np.concatenate([b2, a0], axis=1)
        g2, cf2 = self.f2.forward(cat2)
        e2, mf2 = nn.relu(g2)
        logits, chd = self.head.forward(e2)
        logits = logits[:, 0]
        probs = nn.sigmoid(logits)
        w1 = self.cfg.widths[1]
        w0 = self.cfg.widths[0]
        cache = (cc, m0, cd1, m1, cd2, m2, cu1, mu1, cf1, mf1, cu2, mu2,
                 cf2, mf2, chd, w0, w1)
        return (logits, probs), cache

    def backward(self, cache, dlogits: np.ndarray) -> None:
        (cc, m0, cd1, m1, cd2, m2, cu1, mu1, cf1, mf1, cu2, mu2,
         cf2, mf2, chd, w0, w1) = cache
        de2 = self.head.backward(chd, dlogits[:, None])
        dg2 = nn.relu_backward(mf2, de2)
        dcat2 = self.f2.backward(cf2, dg2)
        db2, da0_skip = dcat2[:, :w0], dcat2[:, w0:]
        dt2 = nn.relu_backward(mu2, db2)
        de1 = self.u2.backward(cu2, dt2)
        dg1 = nn.relu_backward(mf1, de1)
        dcat1 = self.f1.backward(cf1, dg1)
        db1, da1_skip = dcat1[:, :w1], dcat1[:, w1:]
        dt1 = nn.relu_backward(mu1, db1)
        da2 = self.u1.backward(cu1, dt1)
        dh2 = nn.relu_backward(m2, da2)
        da1 = self.d2.backward(cd2, dh2) + da1_skip
        dh1 = nn.relu_backward(m1, da1)
        da0 = self.d1.backward(cd1, dh1) + da0_skip
        dh0 = nn.relu_backward(m0, da0)
        self.c_in.backward(cc, dh0)

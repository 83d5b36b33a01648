"""Learnable weighted concatenation of the three prompt families.

Each prompt block is scaled element-wise by its own per-channel weight
vector (shared across the block's tokens), then the blocks are concatenated
along the token axis together with a small learnable adaptive token block.
With all weights at their identity initialization and the adaptive block at
zero, the output equals a plain concatenation, so training starts from an
unbiased combination.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import WidthMismatch
from .prompters import PromptEmbedding


class PromptCombiner(nn.Module):
    """Holds the three per-channel weight vectors and the adaptive tokens."""

    EXPECTED_KINDS = (("spatial-dense", "spatial-sparse"), ("semantic",), ("style",))

    def __init__(self, dim: int, rng, adaptive_tokens: int = 1,
                 adaptive_std: float = 0.02, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.adaptive_tokens = adaptive_tokens
        self.w1 = self.add_param("w1", np.ones(dim, dtype=dtype))
        self.w2 = self.add_param("w2", np.ones(dim, dtype=dtype))
        self.w3 = self.add_param("w3", np.ones(dim, dtype=dtype))
        self.e_ada = self.add_param(
            "adaptive", rng.normal(0.0, adaptive_std,
                                   size=(adaptive_tokens, dim)).astype(dtype))

    def combine(self, e_spa: PromptEmbedding | None, e_sem: PromptEmbedding | None,
                e_sty: PromptEmbedding | None, dynamic: bool = True):
        """Weighted concat of the present blocks plus the adaptive block.

        Absent (None) prompt families are skipped. With dynamic=False the
        learnable state is bypassed: weights are all ones and the adaptive
        block is zero, the plain-concatenation default used when the
        combiner is ablated away.

        Returns (PromptEmbedding(kind="combined"), cache).
        """
        prompts = (e_spa, e_sem, e_sty)
        weights = (self.w1, self.w2, self.w3)
        present = [p for p in prompts if p is not None]
        if not present:
            raise ValueError("combine needs at least one prompt; "
                             "use default_prompt for prompt-free decoding")
        for emb, allowed, wp in zip(prompts, self.EXPECTED_KINDS, weights):
            if emb is None:
                continue
            if emb.kind not in allowed:
                raise ValueError(f"expected prompt of kind {allowed}, got {emb.kind!r}")
            if emb.width != wp.value.shape[0]:
                raise WidthMismatch(
                    f"{emb.kind} width {emb.width} != weight width {wp.value.shape[0]}")
        batch_shape = present[0].tokens.shape[:-2]
        parts, blocks, start = [], [], 0
        for emb, wp in zip(prompts, weights):
            if emb is None:
                continue
            w = wp.value if dynamic else np.ones_like(wp.value)
            parts.append(emb.tokens * w)
            blocks.append((emb.kind, start, start + emb.token_count))
            start += emb.token_count
        ada = self.e_ada.value if dynamic else np.zeros_like(self.e_ada.value)
        parts.append(np.broadcast_to(ada, batch_shape + ada.shape))
        blocks.append(("adaptive", start, start + self.adaptive_tokens))
        combined = PromptEmbedding(
            tokens=np.concatenate(parts, axis=-2),
            kind="combined",
            blocks=tuple(blocks),
        )
        cache = (prompts, tuple(blocks), dynamic)
        return combined, cache

    def default_prompt(self, batch: int, dtype=None) -> PromptEmbedding:
        """Prompt-free decoder input: only the adaptive slot, fixed at zero.

        Used for stage-1 training and the no-prompt baseline.
        """
        dt = dtype if dtype is not None else self.e_ada.value.dtype
        tok = np.zeros((batch, self.adaptive_tokens, self.dim), dtype=dt)
        return PromptEmbedding(
            tokens=tok, kind="combined",
            blocks=(("adaptive", 0, self.adaptive_tokens),))

    def backward(self, cache, dtokens: np.ndarray):
        """Routes the combined-token gradient back to each block.

        Returns (d_spa, d_sem, d_sty); entries are None for absent blocks.
        """
        prompts, blocks, dynamic = cache
        weights = (self.w1, self.w2, self.w3)
        dblocks: list[np.ndarray | None] = []
        spans = iter(blocks[:-1])
        for emb, wp in zip(prompts, weights):
            if emb is None:
                dblocks.append(None)
                continue
            _, start, stop = next(spans)
            dpart = dtokens[..., start:stop, :]
            if dynamic:
                lead = tuple(range(dpart.ndim - 1))
                wp.grad += (dpart * emb.tokens).sum(axis=lead)
                dblocks.append(dpart * wp.value)
            else:
                dblocks.append(dpart.copy())
        _, start, stop = blocks[-1]
        if dynamic:
            dada = dtokens[..., start:stop, :]
            lead = tuple(range(dada.ndim - 2))
            self.e_ada.grad += dada.sum(axis=lead)
        return tuple(dblocks)

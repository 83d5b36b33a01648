"""Prompt generation from three complementary sources.

- spatial: the small model's predicted mask, turned into a dense embedding,
  a bounding box, or grid point prompts
- semantic: class prototypes matched against the image embedding by cosine
  similarity, pooled into per-class tokens
- style: amplitude-only spectral reconstruction of the raw image, encoded by
  a small convolutional block

Prompt embeddings all share one token width so the combiner can weight and
concatenate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging, nn
from .errors import NoForeground, ShapeMismatch, ZeroNormEmbedding

ZERO_NORM_TOL = 1e-12

# label-embedding row indices for sparse spatial prompts
LABEL_NEG_POINT = 0
LABEL_POS_POINT = 1
LABEL_BOX_TOPLEFT = 2
LABEL_BOX_BOTTOMRIGHT = 3


@dataclass
class PromptEmbedding:
    """A block of prompt tokens, shaped (..., T, D)."""

    tokens: np.ndarray
    kind: str
    # for kind == "combined": ((block_kind, start, stop), ...) token spans
    blocks: tuple = ()

    @property
    def token_count(self) -> int:
        return self.tokens.shape[-2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


@dataclass
class BoxPrompt:
    top_left: tuple[int, int]
    bottom_right: tuple[int, int]


@dataclass
class PointPrompts:
    points: np.ndarray  # (g*g, 2) int (row, col)
    labels: np.ndarray  # (g*g,) int in {0, 1}
    grid_size: int


@dataclass
class PseudoMask:
    """Per-cell prototype assignment: class label, winning sub-prototype, and
    the full cosine-similarity volume."""

    labels: np.ndarray     # (..., Hg, Wg) int in [0, C)
    chosen_k: np.ndarray   # (..., Hg, Wg) int in [0, K)
    similarity: np.ndarray  # (..., Hg, Wg, C*K) in [-1, 1]


@dataclass
class Prototypes:
    """Unit-norm class prototype bank of shape (C, K, D)."""

    vectors: np.ndarray
    momentum: float = 0.999

    @property
    def classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def per_class(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def flat(self) -> np.ndarray:
        return self.vectors.reshape(-1, self.dim)

    @staticmethod
    def init_random(classes: int, per_class: int, dim: int,
                    rng: np.random.Generator, momentum: float = 0.999,
                    dtype=np.float32) -> "Prototypes":
        v = rng.normal(size=(classes, per_class, dim))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return Prototypes(vectors=v.astype(dtype), momentum=momentum)


def mask_to_box(probs: np.ndarray, bin_threshold: float = 0.5) -> BoxPrompt:
    """Tight bounding box of {(i, j) : probs(i, j) >= bin_threshold}."""
    fg = probs >= bin_threshold
    if not fg.any():
        raise NoForeground(f"no pixel reaches threshold {bin_threshold}")
    rows, cols = np.nonzero(fg)
    return BoxPrompt(
        top_left=(int(rows.min()), int(cols.min())),
        bottom_right=(int(rows.max()), int(cols.max())),
    )


def grid_cell_bounds(size: int, g: int) -> list[tuple[int, int]]:
    """Split `size` pixels into g contiguous cells; the last absorbs the
    remainder."""
    step = size // g
    return [(a * step, (a + 1) * step if a < g - 1 else size) for a in range(g)]


def mask_to_grid_points(probs: np.ndarray, g: int, tau: float) -> PointPrompts:
    """One prompt point per cell of a g x g partition of the mask.

    Within a cell, if any pixel reaches confidence tau the argmax pixel is
    emitted with label 1; otherwise the argmin pixel is emitted with label 0.
    Ties resolve to the first pixel in row-major order.
    """
    h, w = probs.shape
    if g > min(h, w):
        raise ValueError(f"grid size {g} exceeds mask extent {probs.shape}")
    points = np.empty((g * g, 2), dtype=np.int64)
    labels = np.empty(g * g, dtype=np.int64)
    out = 0
    for r0, r1 in grid_cell_bounds(h, g):
        for c0, c1 in grid_cell_bounds(w, g):
            cell = probs[r0:r1, c0:c1]
            if (cell >= tau).any():
                idx = int(np.argmax(cell))
                labels[out] = 1
            else:
                idx = int(np.argmin(cell))
                labels[out] = 0
            di, dj = divmod(idx, c1 - c0)
            points[out] = (r0 + di, c0 + dj)
            out += 1
    return PointPrompts(points=points, labels=labels, grid_size=g)


class SpatialPromptEncoder(nn.Module):
    """Turns the small model's mask into one spatial prompt embedding.

    Exactly one mode is active per forward pass:
    - "mask": strided convolutions down to the encoder token grid (dense)
    - "box" / "point": sinusoidal position encoding of the selected pixel
      coordinates plus a learned role embedding (sparse)
    """

    def __init__(self, image_side: int, patch: int, dim: int, rng,
                 grid_size: int = 4, tau: float = 0.4,
                 bin_threshold: float = 0.5, dtype=np.float32,
                 zero_init_out: bool = True):
        super().__init__()
        if patch % 2 != 0 or patch < 4:
            raise ValueError("patch size must be even and >= 4")
        self.image_side = image_side
        self.patch = patch
        self.dim = dim
        self.grid_size = grid_size
        self.tau = tau
        self.bin_threshold = bin_threshold
        self.conv1 = self.add_module(
            "conv1", nn.Conv2d(1, dim // 4, patch // 2, rng, stride=patch // 2, dtype=dtype))
        # the dense block is added onto the image embedding inside the
        # decoder; zero-init keeps it a no-op until trained
        self.conv2 = self.add_module(
            "conv2", nn.Conv2d(dim // 4, dim, 2, rng, stride=2, dtype=dtype))
        if zero_init_out:
            self.conv2.W.value[...] = 0.0
        self.labels = self.add_module("labels", nn.LabelEmbedding(4, dim, rng, dtype=dtype))
        self.dtype = dtype

    def _encode_sparse(self, coords: np.ndarray, label_idx: np.ndarray):
        pe = nn.sinusoidal_coord_encoding(
            coords, self.dim, (self.image_side, self.image_side), dtype=self.dtype)
        emb, idx_cache = self.labels.forward(label_idx)
        return pe + emb, idx_cache

    def forward(self, probs: np.ndarray, mode: str):
        """probs: (B, H, W) small-model confidences. Returns
        (PromptEmbedding, cache)."""
        if probs.ndim != 3:
            raise ShapeMismatch(f"expected (B, H, W) mask stack, got {probs.shape}")
        b = probs.shape[0]
        if mode == "mask":
            x = probs[:, None].astype(self.dtype)
            h1, c1 = self.conv1.forward(x)
            a1, m1 = nn.relu(h1)
            h2, c2 = self.conv2.forward(a1)
            grid = h2.shape[-1]
            tokens = h2.reshape(b, self.dim, grid * grid).transpose(0, 2, 1)
            return (PromptEmbedding(tokens=tokens, kind="spatial-dense"),
                    ("mask", c1, m1, c2, grid))
        if mode == "box":
            coords = np.empty((b, 2, 2), dtype=np.int64)
            for i in range(b):
                box = mask_to_box(probs[i], self.bin_threshold)
                coords[i, 0] = box.top_left
                coords[i, 1] = box.bottom_right
            idx = np.broadcast_to(
                np.array([LABEL_BOX_TOPLEFT, LABEL_BOX_BOTTOMRIGHT]), (b, 2))
            tokens, idx_cache = self._encode_sparse(coords, idx)
            return (PromptEmbedding(tokens=tokens, kind="spatial-sparse"),
                    ("sparse", idx_cache))
        if mode == "point":
            g = self.grid_size
            coords = np.empty((b, g * g, 2), dtype=np.int64)
            idx = np.empty((b, g * g), dtype=np.int64)
            for i in range(b):
                pts = mask_to_grid_points(probs[i], g, self.tau)
                coords[i] = pts.points
                idx[i] = np.where(pts.labels == 1, LABEL_POS_POINT, LABEL_NEG_POINT)
            tokens, idx_cache = self._encode_sparse(coords, idx)
            return (PromptEmbedding(tokens=tokens, kind="spatial-sparse"),
                    ("sparse", idx_cache))
        raise ValueError(f"unknown spatial mode {mode!r}")

    def backward(self, cache, dtokens: np.ndarray) -> None:
        """Accumulates parameter gradients. The mask input is a stop-gradient
        boundary, so no input gradient is returned."""
        if cache[0] == "mask":
            _, c1, m1, c2, grid = cache
            b = dtokens.shape[0]
            dh2 = dtokens.transpose(0, 2, 1).reshape(b, self.dim, grid, grid)
            da1 = self.conv2.backward(c2, dh2)
            dh1 = nn.relu_backward(m1, da1)
            self.conv1.backward(c1, dh1)
        else:
            _, idx_cache = cache
            self.labels.backward(idx_cache, dtokens)


def pseudo_mask(zbar: np.ndarray, protos: Prototypes) -> PseudoMask:
    """Assign every embedding cell to its most similar prototype.

    zbar: (..., Hg, Wg, D). Similarities are cosine; the winning (class, k)
    pair is the argmax over the flattened c-major prototype axis, which
    resolves ties to the lowest (c, k) lexicographic index.
    """
    if zbar.shape[-1] != protos.dim:
        raise ShapeMismatch(
            f"embedding dim {zbar.shape[-1]} != prototype dim {protos.dim}")
    norms = np.linalg.norm(zbar, axis=-1)
    if np.any(norms < ZERO_NORM_TOL):
        raise ZeroNormEmbedding("embedding cell with ~zero L2 norm")
    zhat = zbar / norms[..., None]
    pflat = protos.flat()
    pnorm = pflat / np.linalg.norm(pflat, axis=-1, keepdims=True)
    sims = zhat @ pnorm.T
    flat_idx = sims.argmax(axis=-1)
    return PseudoMask(
        labels=flat_idx // protos.per_class,
        chosen_k=flat_idx % protos.per_class,
        similarity=sims,
    )


def masked_average_pooling(z: np.ndarray, pseudo: PseudoMask, c: int) -> np.ndarray:
    """Mean of embedding cells whose pseudo label equals class c.

    z: (..., Hg, Wg, D). A class with no assigned cells pools to the zero
    vector.
    """
    sel = (pseudo.labels == c)[..., None]
    count = sel.sum(axis=(-3, -2))
    total = (z * sel).sum(axis=(-3, -2))
    return total / np.maximum(count, 1)


def update_prototypes(protos: Prototypes, zbar: np.ndarray,
                      pseudo: PseudoMask) -> Prototypes:
    """Momentum update of each prototype toward the mean of its assigned
    cells; prototypes with no assignments are left unchanged. The returned
    bank is unit-norm."""
    c_lab = pseudo.labels.reshape(-1)
    k_lab = pseudo.chosen_k.reshape(-1)
    cells = zbar.reshape(-1, protos.dim)
    mu = protos.momentum
    out = protos.vectors.copy()
    for c in range(protos.classes):
        for k in range(protos.per_class):
            member = (c_lab == c) & (k_lab == k)
            if not member.any():
                continue
            center = cells[member].mean(axis=0)
            blended = mu * out[c, k] + (1.0 - mu) * center
            norm = np.linalg.norm(blended)
            if norm < ZERO_NORM_TOL:
                continue
            out[c, k] = blended / norm
    return Prototypes(vectors=out, momentum=mu)


class SemanticPrompter(nn.Module):
    """Prototype-based semantic prompt: project the image embedding, match
    cells against the prototype bank, and pool one token per class."""

    def __init__(self, dim: int, classes: int, per_class: int, rng,
                 momentum: float = 0.999, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.classes = classes
        self.per_class = per_class
        self.projector = self.add_module("projector", nn.Linear(dim, dim, rng, dtype))
        bank = Prototypes.init_random(classes, per_class, dim, rng, momentum, dtype)
        self.bank = self.add_param("prototypes", bank.vectors)
        self.bank.frozen = True  # updated by momentum, never by the optimizer
        self.momentum = momentum

    def prototypes(self) -> Prototypes:
        return Prototypes(vectors=self.bank.value, momentum=self.momentum)

    def forward(self, z: np.ndarray):
        """z: (B, Hg, Wg, D) image embedding. Returns
        (PromptEmbedding, PseudoMask, cache)."""
        zbar, cproj = self.projector.forward(z)
        protos = self.prototypes()
        pseudo = pseudo_mask(zbar, protos)
        tokens = np.stack(
            [masked_average_pooling(z, pseudo, c) for c in range(self.classes)],
            axis=-2,
        )
        emb = PromptEmbedding(tokens=tokens, kind="semantic")
        counts = np.stack(
            [(pseudo.labels == c).sum(axis=(-2, -1)) for c in range(self.classes)],
            axis=-1,
        )
        zn = np.linalg.norm(zbar, axis=-1, keepdims=True)
        cache = (cproj, zbar, zn, pseudo, counts)
        return emb, pseudo, cache

    def backward(self, cache, dtokens: np.ndarray, dsim: np.ndarray | None = None) -> np.ndarray:
        """dtokens: (B, C, D) gradient on the semantic tokens; dsim: optional
        (B, Hg, Wg, J) gradient on the similarity volume (prototype loss).
        Returns dZ. Prototypes receive no gradient."""
        cproj, zbar, zn, pseudo, counts = cache
        b, hg, wg, d = zbar.shape
        # masked-average-pooling backward: each cell receives the gradient of
        # its class token scaled by 1/count
        scaled = dtokens / np.maximum(counts, 1)[..., None]
        dz = scaled[np.arange(b)[:, None, None], pseudo.labels]
        if dsim is not None:
            pflat = self.bank.value.reshape(-1, d)
            pnorm = pflat / np.linalg.norm(pflat, axis=-1, keepdims=True)
            dzhat = dsim @ pnorm
            zhat = zbar / zn
            dzbar = (dzhat - zhat * (dzhat * zhat).sum(axis=-1, keepdims=True)) / zn
            dz = dz + self.projector.backward(cproj, dzbar)
        return dz

    def momentum_update(self, cache) -> None:
        """Apply the per-iteration prototype update using the cached
        projected embedding of the last forward pass."""
        _, zbar, _, pseudo, _ = cache
        new = update_prototypes(self.prototypes(), zbar, pseudo)
        self.bank.value[...] = new.vectors


class StylePrompter(nn.Module):
    """Encodes the amplitude-only reconstruction of the input image into a
    fixed number of style tokens.

    The reconstruction is min-max normalized before the convolutional block
    (a degenerate range maps to all zeros), which keeps the unbounded
    spectral field on a stable scale.
    """

    TOKENS = 4

    def __init__(self, image_side: int, dim: int, rng, dtype=np.float32,
                 zero_init_out: bool = True):
        super().__init__()
        if image_side % 8 != 0:
            raise ValueError("image side must be divisible by 8")
        self.image_side = image_side
        self.dim = dim
        s1 = image_side // 8
        self.conv1 = self.add_module(
            "conv1", nn.Conv2d(1, dim // 2, s1, rng, stride=s1, dtype=dtype))
        # style tokens start silent so late-stage training isn't knocked off
        # the decoder it starts from
        self.conv2 = self.add_module(
            "conv2", nn.Conv2d(dim // 2, dim, 4, rng, stride=4, dtype=dtype))
        if zero_init_out:
            self.conv2.W.value[...] = 0.0
        self.dtype = dtype

    @staticmethod
    def _normalized_reconstruction(img: np.ndarray) -> np.ndarray:
        recon = imaging.amplitude_only_reconstruct(img)
        lo, hi = recon.min(), recon.max()
        if hi - lo < 1e-12:
            return np.zeros_like(recon)
        return (recon - lo) / (hi - lo)

    def forward(self, imgs: np.ndarray):
        """imgs: (B, H, W) raw images in [0, 1]."""
        fields = np.stack([self._normalized_reconstruction(im) for im in imgs])
        x = fields[:, None].astype(self.dtype)
        h1, c1 = self.conv1.forward(x)
        a1, m1 = nn.relu(h1)
        h2, c2 = self.conv2.forward(a1)
        b = imgs.shape[0]
        grid = h2.shape[-1]
        tokens = h2.reshape(b, self.dim, grid * grid).transpose(0, 2, 1)
        return PromptEmbedding(tokens=tokens, kind="style"), (c1, m1, c2, grid)

    def backward(self, cache, dtokens: np.ndarray) -> None:
        c1, m1, c2, grid = cache
        b = dtokens.shape[0]
        dh2 = dtokens.transpose(0, 2, 1).reshape(b, self.dim, grid, grid)
        da1 = self.conv2.backward(c2, dh2)
        dh1 = nn.relu_backward(m1, da1)
        self.conv1.backward(c1, dh1)

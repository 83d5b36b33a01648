"""Minimal manual-gradient layer library.

Every layer implements `forward(...) -> (out, cache)` and
`backward(cache, dout) -> din`, with parameter gradients accumulated into
`Param.grad`. There is no autodiff: each backward is the explicit gradient
formula for that layer, and the test suite checks all of them against
central finite differences.

Caches are explicit values (not stored on the module) so a module can be
applied several times per step (e.g. a parameter-shared MLP) and still
backpropagate correctly through every application.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A named trainable tensor with its gradient accumulator."""

    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.frozen = False

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape}, frozen={self.frozen})"


class Module:
    """Base class handling hierarchical parameter registration."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self._mods: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Param:
        p = Param(name, value)
        self._params[name] = p
        return p

    def add_module(self, name: str, mod: "Module") -> "Module":
        self._mods[name] = mod
        return mod

    def named_params(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}.{name}" if prefix else name), p
        for name, mod in self._mods.items():
            yield from mod.named_params(f"{prefix}.{name}" if prefix else name)

    def param_dict(self, prefix: str = "") -> dict[str, Param]:
        return dict(self.named_params(prefix))

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.grad[...] = 0.0

    def num_params(self) -> int:
        return sum(p.value.size for _, p in self.named_params())


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Linear(Module):
    """Affine map on the last axis: y = x @ W + b."""

    def __init__(self, din: int, dout: int, rng: np.random.Generator,
                 dtype=np.float32, scale: float | None = None, zero_init: bool = False,
                 bias: bool = True):
        super().__init__()
        self.din, self.dout = din, dout
        if zero_init:
            w = np.zeros((din, dout))
        else:
            std = scale if scale is not None else float(np.sqrt(2.0 / (din + dout)))
            w = rng.normal(0.0, std, size=(din, dout))
        self.W = self.add_param("W", w.astype(dtype))
        self.b = self.add_param("b", np.zeros(dout, dtype=dtype)) if bias else None

    def forward(self, x: np.ndarray):
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y, x

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        x2 = x.reshape(-1, self.din)
        g2 = dy.reshape(-1, self.dout)
        self.W.grad += x2.T @ g2
        if self.b is not None:
            self.b.grad += g2.sum(axis=0)
        return dy @ self.W.value.T


class LayerNorm(Module):
    """Normalization over the last axis with learned gain/shift."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-6):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.g = self.add_param("g", np.ones(dim, dtype=dtype))
        self.b = self.add_param("b", np.zeros(dim, dtype=dtype))

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * ivar
        y = xhat * self.g.value + self.b.value
        return y, (xhat, ivar)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        xhat, ivar = cache
        lead = tuple(range(dy.ndim - 1))
        self.g.grad += (dy * xhat).sum(axis=lead)
        self.b.grad += dy.sum(axis=lead)
        dxhat = dy * self.g.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return ivar * (dxhat - m1 - xhat * m2)


class Mlp(Module):
    """Two-layer perceptron: Linear -> ReLU -> Linear."""

    def __init__(self, din: int, dhidden: int, dout: int, rng, dtype=np.float32,
                 zero_init_out: bool = False):
        super().__init__()
        self.fc1 = self.add_module("fc1", Linear(din, dhidden, rng, dtype))
        self.fc2 = self.add_module("fc2", Linear(dhidden, dout, rng, dtype,
                                                 zero_init=zero_init_out))

    def forward(self, x: np.ndarray):
        h, c1 = self.fc1.forward(x)
        a, mask = relu(h)
        y, c2 = self.fc2.forward(a)
        return y, (c1, mask, c2)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        c1, mask, c2 = cache
        da = self.fc2.backward(c2, dy)
        dh = relu_backward(mask, da)
        return self.fc1.backward(c1, dh)


class MultiHeadAttention(Module):
    """Scaled dot-product attention; queries from one stream, keys/values
    from another (pass the same tensor twice for self-attention)."""

    def __init__(self, dim: int, num_heads: int, rng, dtype=np.float32):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError("dim must be divisible by num_heads")
        self.dim, self.h = dim, num_heads
        self.dh = dim // num_heads
        self.wq = self.add_module("wq", Linear(dim, dim, rng, dtype))
        # key bias is dropped: softmax cancels any constant added to all keys,
        # so its gradient would be identically zero
        self.wk = self.add_module("wk", Linear(dim, dim, rng, dtype, bias=False))
        self.wv = self.add_module("wv", Linear(dim, dim, rng, dtype))
        self.wo = self.add_module("wo", Linear(dim, dim, rng, dtype))

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, q_in: np.ndarray, kv_in: np.ndarray):
        q, cq = self.wq.forward(q_in)
        k, ck = self.wk.forward(kv_in)
        v, cv = self.wv.forward(kv_in)
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / float(np.sqrt(self.dh))
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        p = softmax_last(scores)
        ctx = p @ vh
        merged = self._merge(ctx)
        out, co = self.wo.forward(merged)
        return out, (cq, ck, cv, co, qh, kh, vh, p, scale)

    def backward(self, cache, dout: np.ndarray):
        cq, ck, cv, co, qh, kh, vh, p, scale = cache
        dmerged = self.wo.backward(co, dout)
        dctx = self._split(dmerged)
        dp = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = p.transpose(0, 1, 3, 2) @ dctx
        dscores = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dqh = (dscores @ kh) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale
        dq_in = self.wq.backward(cq, self._merge(dqh))
        dkv = self.wk.backward(ck, self._merge(dkh))
        dkv = dkv + self.wv.backward(cv, self._merge(dvh))
        return dq_in, dkv


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride,
                                    kj:kj + stride * ow:stride]
    return cols


def _col2im(dcols: np.ndarray, shape, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    dxp = np.zeros(shape, dtype=dcols.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride] += dcols[:, :, ki, kj]
    return dxp


class Conv2d(Module):
    """2-D convolution over NCHW tensors (im2col + matmul)."""

    def __init__(self, cin: int, cout: int, k: int, rng, stride: int = 1,
                 pad: int = 0, dtype=np.float32):
        super().__init__()
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.pad = stride, pad
        std = float(np.sqrt(2.0 / (cin * k * k)))
        self.W = self.add_param("W", rng.normal(0.0, std, size=(cout, cin * k * k)).astype(dtype))
        self.b = self.add_param("b", np.zeros(cout, dtype=dtype))

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        return oh, ow

    def forward(self, x: np.ndarray):
        b, c, h, w = x.shape
        oh, ow = self.out_size(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad,) * 2, (self.pad,) * 2)) if self.pad else x
        cols = _im2col(xp, self.k, self.stride, oh, ow)
        flat = cols.reshape(b, self.cin * self.k * self.k, oh * ow)
        y = (self.W.value @ flat).reshape(b, self.cout, oh, ow)
        y += self.b.value[None, :, None, None]
        return y, (flat, xp.shape, (h, w, oh, ow))

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        flat, xp_shape, (h, w, oh, ow) = cache
        b = dy.shape[0]
        g = dy.reshape(b, self.cout, oh * ow)
        self.W.grad += np.tensordot(g, flat, axes=([0, 2], [0, 2]))
        self.b.grad += dy.sum(axis=(0, 2, 3))
        dflat = self.W.value.T @ g
        dcols = dflat.reshape(b, self.cin, self.k, self.k, oh, ow)
        dxp = _col2im(dcols, xp_shape, self.k, self.stride, oh, ow)
        if self.pad:
            return dxp[:, :, self.pad:self.pad + h, self.pad:self.pad + w]
        return dxp


class ConvTranspose2d(Module):
    """Transposed 2-D convolution (fractionally-strided upsampling)."""

    def __init__(self, cin: int, cout: int, k: int, rng, stride: int = 1,
                 dtype=np.float32):
        super().__init__()
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        std = float(np.sqrt(2.0 / (cin * k * k)))
        self.W = self.add_param("W", rng.normal(0.0, std, size=(cin, cout, k, k)).astype(dtype))
        self.b = self.add_param("b", np.zeros(cout, dtype=dtype))

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        return (h - 1) * self.stride + self.k, (w - 1) * self.stride + self.k

    def forward(self, x: np.ndarray):
        b, c, h, w = x.shape
        oh, ow = self.out_size(h, w)
        # t[b,h,w,o,ki,kj] = sum_c x[b,c,h,w] * W[c,o,ki,kj]
        t = np.tensordot(x.transpose(0, 2, 3, 1), self.W.value, axes=([3], [0]))
        y = np.zeros((b, self.cout, oh, ow), dtype=x.dtype)
        s = self.stride
        for ki in range(self.k):
            for kj in range(self.k):
                y[:, :, ki:ki + s * h:s, kj:kj + s * w:s] += \
                    t[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        y += self.b.value[None, :, None, None]
        return y, (x, (h, w))

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x, (h, w) = cache
        b = x.shape[0]
        s = self.stride
        # dt[b,h,w,o,ki,kj] = dy[b,o,h*s+ki,w*s+kj]
        dt = np.empty((b, h, w, self.cout, self.k, self.k), dtype=dy.dtype)
        for ki in range(self.k):
            for kj in range(self.k):
                dt[:, :, :, :, ki, kj] = \
                    dy[:, :, ki:ki + s * h:s, kj:kj + s * w:s].transpose(0, 2, 3, 1)
        self.b.grad += dy.sum(axis=(0, 2, 3))
        xt = x.transpose(0, 2, 3, 1)
        self.W.grad += np.tensordot(xt, dt, axes=([0, 1, 2], [0, 1, 2]))
        dx = np.tensordot(dt, self.W.value, axes=([3, 4, 5], [1, 2, 3]))
        return dx.transpose(0, 3, 1, 2)


class LabelEmbedding(Module):
    """Learned embedding rows selected by integer index."""

    def __init__(self, n: int, dim: int, rng, dtype=np.float32, std: float = 0.02):
        super().__init__()
        self.table = self.add_param("table", rng.normal(0.0, std, size=(n, dim)).astype(dtype))

    def forward(self, idx: np.ndarray):
        return self.table.value[idx], idx

    def backward(self, idx: np.ndarray, dy: np.ndarray) -> None:
        np.add.at(self.table.grad, idx, dy)


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W) -> (B, (H/p)*(W/p), p*p) row-major patch flattening."""
    b, h, w = img.shape
    gh, gw = h // patch, w // patch
    x = img.reshape(b, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, gh * gw, patch * patch)


def unpatchify_grad(dpatches: np.ndarray, h: int, w: int, patch: int) -> np.ndarray:
    """Inverse of `patchify` for gradients: (B, T, p*p) -> (B, H, W)."""
    b = dpatches.shape[0]
    gh, gw = h // patch, w // patch
    x = dpatches.reshape(b, gh, gw, patch, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, h, w)


def sinusoidal_coord_encoding(coords: np.ndarray, dim: int, extent: tuple[int, int],
                              dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal encoding of (row, col) pixel coordinates.

    coords: (..., 2) integer array; extent: (H, W). Each axis gets dim/4
    geometric frequencies as sin/cos pairs, concatenated to width `dim`.
    """
    if dim % 4 != 0:
        raise ValueError("encoding dim must be divisible by 4")
    nfreq = dim // 4
    freqs = np.power(2.0, np.arange(nfreq)).astype(np.float64)
    rows = coords[..., 0] / max(extent[0] - 1, 1)
    cols = coords[..., 1] / max(extent[1] - 1, 1)
    parts = []
    for axis in (rows, cols):
        ang = np.pi * axis[..., None] * freqs
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    return np.concatenate(parts, axis=-1).astype(dtype)

"""Neural building blocks on top of :mod:`pgt.numerics`.

Token tensors are ``[L, d]`` or batched ``[B, L, d]``; spatial maps are
``[h, w, c]`` or ``[B, h, w, c]``. Every layer is a plain dataclass holding
its parameter tensors; ``params()`` yields ``(local_name, tensor)`` pairs in
registration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .errors import ConditioningError, ConfigError, ShapeError
from .numerics import Tensor

UPSAMPLE_FACTORS = (2, 4, 8)


@dataclass
class LinearLayer:
    weight: Tensor  # [d_in, d_out]
    bias: Tensor  # [d_out]

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def params(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def num_params(self) -> int:
        return self.d_in * self.d_out + self.d_out

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear expects last dim {self.d_in}, got {x.shape}")
        return nx.matmul(x, self.weight) + self.bias


@dataclass
class LayerNorm:
    weight: Tensor
    bias: Tensor
    eps: float = nx.LAYER_NORM_EPS

    def params(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def num_params(self) -> int:
        return 2 * self.weight.shape[0]

    def __call__(self, x):
        return nx.layer_norm(x, self.weight, self.bias, self.eps)


@dataclass
class Mlp:
    fc1: LinearLayer
    fc2: LinearLayer

    def params(self):
        for prefix, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for name, t in layer.params():
                yield f"{prefix}.{name}", t

    def num_params(self) -> int:
        return self.fc1.num_params() + self.fc2.num_params()

    def __call__(self, x):
        return self.fc2(nx.gelu(self.fc1(x)))


@dataclass
class MsaLayer:
    heads: int
    qkv: LinearLayer  # d -> 3d
    proj: LinearLayer  # d -> d

    def __post_init__(self):
        d = self.proj.d_in
        if d % self.heads:
            raise ConfigError(f"token dim {d} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.proj.d_in

    def params(self):
        for prefix, layer in (("qkv", self.qkv), ("proj", self.proj)):
            for name, t in layer.params():
                yield f"{prefix}.{name}", t

    def num_params(self) -> int:
        return self.qkv.num_params() + self.proj.num_params()


def msa_forward(tokens, prompts, msa: MsaLayer):
    """Joint self-attention over ``[prompts; tokens]``.

    Returns ``(tokens_out, prompts_out)``; ``prompts_out`` is None when no
    prompt tensor was given.
    """
    tokens = nx.as_tensor(tokens)
    d = msa.dim
    if tokens.shape[-1] != d:
        raise ShapeError(f"tokens have dim {tokens.shape[-1]}, attention expects {d}")
    batched = tokens.ndim == 3
    x = tokens if batched else nx.reshape(tokens, (1,) + tokens.shape)
    n_p = 0
    if prompts is not None:
        prompts = nx.as_tensor(prompts)
        if prompts.ndim != 2 or prompts.shape[-1] != d:
            raise ConditioningError(
                f"prompt shape {prompts.shape} does not match token dim {d}"
            )
        n_p = prompts.shape[0]
        p = nx.broadcast_to(prompts, (x.shape[0], n_p, d))
        x = nx.concat([p, x], axis=1)
    b, n, _ = x.shape
    h = msa.heads
    dh = d // h
    qkv = nx.reshape(msa.qkv(x), (b, n, 3, h, dh))
    qkv = nx.transpose(qkv, (2, 0, 3, 1, 4))  # [3, B, h, N, dh]
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = nx.matmul(q, nx.swap_last(k)) * (1.0 / math.sqrt(dh))
    attn = nx.softmax(scores, axis=-1)
    out = nx.matmul(attn, v)  # [B, h, N, dh]
    out = nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (b, n, d))
    out = msa.proj(out)
    tokens_out = out[:, n_p:, :]
    prompts_out = out[:, :n_p, :] if prompts is not None else None
    if not batched:
        tokens_out = tokens_out[0]
        prompts_out = prompts_out[0] if prompts_out is not None else None
    return tokens_out, prompts_out


def patch_embed(image, proj: LinearLayer, patch: int = 4):
    """Split ``[.., H, W, 3]`` into non-overlapping patches and project each."""
    image = nx.as_tensor(image)
    batched = image.ndim == 4
    x = image if batched else nx.reshape(image, (1,) + image.shape)
    b, hh, ww, c = x.shape
    if hh % patch or ww % patch:
        raise ShapeError(f"image {hh}x{ww} not divisible by patch size {patch}")
    gh, gw = hh // patch, ww // patch
    x = nx.reshape(x, (b, gh, patch, gw, patch, c))
    x = nx.transpose(x, (0, 1, 3, 2, 4, 5))
    x = nx.reshape(x, (b, gh * gw, patch * patch * c))
    out = proj(x)
    return out if batched else out[0]


def patch_merge(tokens, h: int, w: int, reduce: LinearLayer):
    """Concatenate each 2x2 token neighbourhood (TL, TR, BL, BR) and project."""
    tokens = nx.as_tensor(tokens)
    if h % 2 or w % 2:
        raise ShapeError(f"patch merge needs an even token grid, got {h}x{w}")
    batched = tokens.ndim == 3
    x = tokens if batched else nx.reshape(tokens, (1,) + tokens.shape)
    b, n, d = x.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens do not form a {h}x{w} grid")
    x = nx.reshape(x, (b, h // 2, 2, w // 2, 2, d))
    x = nx.transpose(x, (0, 1, 3, 2, 4, 5))
    x = nx.reshape(x, (b, (h // 2) * (w // 2), 4 * d))
    out = reduce(x)
    return out if batched else out[0]


@lru_cache(maxsize=None)
def interp_matrix(n: int, factor: int) -> np.ndarray:
    """Row-stochastic ``[n*factor, n]`` matrix for half-pixel linear resampling."""
    m = np.zeros((n * factor, n))
    for i in range(n * factor):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    m.setflags(write=False)
    return m


def upsample_bilinear(feature_map, factor: int):
    """Bilinear upsampling of ``[.., h, w, c]`` (align_corners=False)."""
    if factor not in UPSAMPLE_FACTORS:
        raise ConfigError(f"upsample factor must be one of {UPSAMPLE_FACTORS}, got {factor}")
    x = nx.as_tensor(feature_map)
    batched = x.ndim == 4
    if not batched:
        x = nx.reshape(x, (1,) + x.shape)
    _, h, w, _ = x.shape
    ry = interp_matrix(h, factor)
    rxt = interp_matrix(w, factor).T.copy()
    x = nx.transpose(x, (0, 3, 1, 2))  # [B, c, h, w]
    x = nx.matmul(nx.matmul(ry, x), rxt)
    x = nx.transpose(x, (0, 2, 3, 1))
    return x if batched else x[0]


@dataclass
class Conv2d:
    kernel: Tensor  # [k, k, c_in, c_out]
    bias: Tensor  # [c_out]

    def params(self):
        yield "weight", self.kernel
        yield "bias", self.bias

    def num_params(self) -> int:
        k, _, ci, co = self.kernel.shape
        return k * k * ci * co + co

    def __call__(self, x):
        return conv2d(x, self.kernel, self.bias)


def conv2d(feature_map, kernel, bias, padding=None):
    """Same-size cross-correlation of ``[.., h, w, c_in]`` with an odd kernel."""
    x = nx.as_tensor(feature_map)
    kernel = nx.as_tensor(kernel)
    k, k2, ci, co = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {kernel.shape}")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ShapeError(f"padding must be {(k - 1) // 2} for a {k}x{k} kernel")
    if x.shape[-1] != ci:
        raise ShapeError(f"conv expects {ci} input channels, map has {x.shape[-1]}")
    batched = x.ndim == 4
    if not batched:
        x = nx.reshape(x, (1,) + x.shape)
    _, h, w, _ = x.shape
    if k == 1:
        cols = x
    else:
        xp = nx.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        cols = nx.concat(
            [xp[:, dy:dy + h, dx:dx + w, :] for dy in range(k) for dx in range(k)], axis=-1
        )
    out = nx.matmul(cols, nx.reshape(kernel, (k * k * ci, co))) + bias
    return out if batched else out[0]

"""Parameterized building blocks shared by the backbone, prompts and decoder.

A Module owns named Tensors and child modules; ``named_parameters`` walks the
tree yielding dotted paths in registration order, which fixes checkpoint and
checksum ordering.  Initialization draws from an explicit Generator passed to
every constructor, so model assembly is deterministic per seed.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    F32,
    Tensor,
    add,
    attention,
    concat,
    fan_in_uniform,
    gelu,
    layernorm,
    linear,
    matmul,
    merge_heads,
    narrow,
    reshape,
    split_heads,
    transpose,
    zeros,
)


class Module:
    def __init__(self):
        self._params: list[tuple[str, Tensor]] = []
        self._children: list[tuple[str, "Module"]] = []

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._params.append((name, tensor))
        return tensor

    def child(self, name: str, module: "Module") -> "Module":
        self._children.append((name, module))
        return module

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params:
            yield prefix + name, t
        for name, sub in self._children:
            yield from sub.named_parameters(prefix + name + ".")

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        """Strict load: every owned parameter must appear under ``prefix``."""
        for name, t in self.named_parameters(prefix):
            if name not in state:
                raise ConfigError(f"load_state: missing parameter {name}")
            arr = state[name]
            if tuple(arr.shape) != t.shape:
                raise ShapeError(
                    f"load_state: {name} shape {arr.shape} != {t.shape}"
                )
            t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)


class LinearLayer(Module):
    """Affine map over the last dimension, optional zero init for up-projections."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        if zero_init:
            self.w = self.register("w", zeros((d_in, d_out)))
        else:
            self.w = self.register("w", fan_in_uniform(rng, (d_in, d_out), d_in))
        self.b = None
        if bias:
            if zero_init:
                self.b = self.register("b", zeros((d_out,)))
            else:
                self.b = self.register("b", fan_in_uniform(rng, (d_out,), d_in))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNormLayer(Module):
    def __init__(self, d: int):
        super().__init__()
        self.gamma = self.register("gamma", Tensor(np.ones(d, F32), requires_grad=True))
        self.beta = self.register("beta", zeros((d,)))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma, self.beta)


class TransformerBlock(Module):
    """Pre-norm block: x += MSA(LN(x)); x += MLP(LN(x)); GELU MLP, ratio 4."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        if d % heads != 0:
            raise ConfigError(f"TransformerBlock: dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.ln1 = self.child("ln1", LayerNormLayer(d))
        self.wq = self.child("wq", LinearLayer(rng, d, d))
        # No key bias: softmax is invariant to per-row score shifts, so a key
        # bias would be a dead parameter with an identically zero gradient.
        self.wk = self.child("wk", LinearLayer(rng, d, d, bias=False))
        self.wv = self.child("wv", LinearLayer(rng, d, d))
        self.wo = self.child("wo", LinearLayer(rng, d, d))
        self.ln2 = self.child("ln2", LayerNormLayer(d))
        hidden = d * mlp_ratio
        self.fc1 = self.child("fc1", LinearLayer(rng, d, hidden))
        self.fc2 = self.child("fc2", LinearLayer(rng, hidden, d))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        q = split_heads(self.wq(h), self.heads)
        k = split_heads(self.wk(h), self.heads)
        v = split_heads(self.wv(h), self.heads)
        x = add(x, self.wo(merge_heads(attention(q, k, v))))
        x = add(x, self.fc2(gelu(self.fc1(self.ln2(x)))))
        return x


def unfold_windows(image: Tensor, kernel: int, stride: int) -> Tensor:
    """Extract k x k windows at the given stride from (..., C, H, W).

    Output is (..., N, C*k*k) with the same row-major window order and
    channel-major flattening as non-overlapping patchify; for kernel == stride
    the two agree exactly.  Overlapping windows (kernel > stride) use
    symmetric zero padding of (kernel - stride + 1) // 2 so the output grid
    stays H/stride x W/stride.
    """
    if kernel < stride:
        raise ConfigError(f"unfold_windows: kernel {kernel} < stride {stride}")
    *lead, c, h, w = image.shape
    if h % stride or w % stride:
        raise ShapeError(f"unfold_windows: {h}x{w} not divisible by stride {stride}")
    pad = (kernel - stride + 1) // 2
    if pad:
        zrow = zeros(tuple(lead) + (c, pad, w), dtype=image.dtype)
        x = concat([zrow, image, zrow], axis=-2)
        zcol = zeros(tuple(lead) + (c, h + 2 * pad, pad), dtype=image.dtype)
        x = concat([zcol, x, zcol], axis=-1)
    else:
        x = image
    out_h, out_w = h // stride, w // stride
    span_h = stride * (out_h - 1) + 1
    span_w = stride * (out_w - 1) + 1
    nl = len(lead)
    cells = []
    for di in range(kernel):
        for dj in range(kernel):
            win = narrow(x, (Ellipsis,
                             slice(di, di + span_h, stride),
                             slice(dj, dj + span_w, stride)))
            cells.append(reshape(win, tuple(lead) + (c, 1, out_h, out_w)))
    stacked = concat(cells, axis=nl + 1)                     # (..., C, k*k, oh, ow)
    perm = tuple(range(nl)) + (nl + 2, nl + 3, nl, nl + 1)
    return reshape(transpose(stacked, perm), tuple(lead) + (out_h * out_w, c * kernel * kernel))


def bilinear_matrix(n_in: int, n_out: int, dtype=F32) -> np.ndarray:
    """Corner-aligned 1-D bilinear interpolation matrix (n_out x n_in).

    Rows sum to 1, so constants are reproduced exactly; n_in == 1 broadcasts.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1:
        m[:, 0] = 1.0
    elif n_out == 1:
        m[0, 0] = 1.0
    else:
        scale = (n_in - 1) / (n_out - 1)
        for i in range(n_out):
            src = i * scale
            lo = min(int(math.floor(src)), n_in - 1)
            hi = min(lo + 1, n_in - 1)
            frac = src - lo
            m[i, lo] += 1.0 - frac
            m[i, hi] += frac
    return m.astype(dtype)


def bilinear_resize(grid: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize (..., C, H, W) to (..., C, out_h, out_w) via two constant matmuls."""
    h, w = grid.shape[-2], grid.shape[-1]
    if (h, w) == (out_h, out_w):
        return grid
    ry = Tensor(bilinear_matrix(h, out_h, grid.dtype.type))
    rx = Tensor(bilinear_matrix(w, out_w, grid.dtype.type).T)
    return matmul(matmul(ry, grid), rx)

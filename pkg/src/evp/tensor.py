"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a row-major numpy array
(f32 or f64 only), ops build an implicit graph through parent links plus a
vector-Jacobian closure, and ``backward`` walks the graph once in reverse
topological order.  Every forward op validates shapes and checks the result
for NaN/Inf, so numeric trouble surfaces at the op that caused it.

Broadcasting: elementwise ops support numpy's trailing-dimension broadcast
only (shapes are aligned from the right).  Reductions and normalizations act
over the last dimension unless stated otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import NumericError, ShapeError

F32 = np.float32
F64 = np.float64
_ALLOWED = (F32, F64)

LAYERNORM_EPS = 1e-5

# Global graph-recording switch; flipped off inside no_grad() for inference
# paths so evaluation does not accumulate backward closures.
_RECORDING = True


class no_grad:
    """Context manager that disables graph recording (forward values only)."""

    def __enter__(self):
        global _RECORDING
        self._prev = _RECORDING
        _RECORDING = False
        return self

    def __exit__(self, *exc):
        global _RECORDING
        _RECORDING = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.type not in _ALLOWED:
        arr = arr.astype(F32)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")


class Tensor:
    """Shaped numeric array with an optional gradient slot.

    ``data`` is immutable by convention once the tensor has been consumed by
    an op; training code replaces parameter ``data`` wholesale between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op = "leaf"

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    # -- backward ----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor.

        Visits each recorded node exactly once.  Gradients accumulate into
        ``.grad`` of every reachable leaf with ``requires_grad``; frozen
        leaves never materialize a gradient.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward: implicit gradient requires a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"backward: gradient shape {grad.shape} != {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not (parent.requires_grad or parent._parents):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g

    def zero_grad(self) -> None:
        self.grad = None


@dataclass
class ComplexGrid:
    """Real/imaginary pair holding a (possibly shifted) Fourier spectrum."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(
                f"ComplexGrid: real {self.real.shape} != imag {self.imag.shape}"
            )


# ---------------------------------------------------------------------------
# op construction helpers


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _record(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._op = op
    if _RECORDING and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _binary_guard(a: Tensor, b: Tensor, op: str) -> None:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    _binary_guard(a, b, "add")
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(data, "add", (a, b), vjp)


def sub(a: Tensor, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    _binary_guard(a, b, "sub")
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(data, "sub", (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    _binary_guard(a, b, "mul")
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(data, "mul", (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NumericError("log: non-positive input")
    data = np.log(a.data)
    return _record(data, "log", (a,), lambda g: (g / a.data,))


def reciprocal(a: Tensor) -> Tensor:
    if (a.data == 0).any():
        raise NumericError("reciprocal: zero input")
    data = 1.0 / a.data
    return _record(data, "reciprocal", (a,), lambda g: (-g * data * data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return _record(data, "clip", (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# contractions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if not _broadcastable(a.shape[:-2], b.shape[:-2]):
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul: mixed dtypes {a.data.dtype} and {b.data.dtype}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(data, "matmul", (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last dimension: x @ w (+ b)."""
    if w.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} != ({w.shape[1]},)")
    data = np.matmul(x.data, w.data)
    if b is not None:
        data = data + b.data

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = np.matmul(g, w.data.T)
        flat_x = x.data.reshape(-1, w.shape[0])
        flat_g = g.reshape(-1, w.shape[1])
        gw = flat_x.T @ flat_g
        if b is None:
            return gx, gw
        return gx, gw, flat_g.sum(axis=0)

    return _record(data, "linear", parents, vjp)


# ---------------------------------------------------------------------------
# nonlinearities and normalization

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = (x * phi_cdf).astype(x.dtype)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi_cdf + x * pdf).astype(x.dtype),)

    return _record(data, "gelu", (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    data = expit(a.data).astype(a.data.dtype)
    return _record(data, "sigmoid", (a,), lambda g: (g * data * (1.0 - data),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last dimension with max-subtraction stabilization."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _record(data, "softmax", (a,), vjp)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last dimension (population variance) with learnable scale/shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: scale/shift must be ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def vjp(g):
        u = g * gamma.data
        gx = inv * (u - u.mean(axis=-1, keepdims=True)
                    - xhat * (u * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx.astype(x.data.dtype), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _record(data, "layernorm", (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}: {exc}") from None
    return _record(data, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
    inv = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)
    return _record(data, "transpose", (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    base = tensors[0]
    for t in tensors[1:]:
        if t.ndim != base.ndim:
            raise ShapeError(f"concat: rank mismatch {base.shape} vs {t.shape}")
        if t.data.dtype != base.data.dtype:
            raise ShapeError("concat: mixed dtypes")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(data, "concat", tuple(tensors), vjp)


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing (slices and integer indices only)."""
    data = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _record(np.ascontiguousarray(data), "slice", (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _reduce_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _record(np.asarray(data), "sum", (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _reduce_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.data.dtype),)

    return _record(np.asarray(data), "mean", (a,), vjp)


# ---------------------------------------------------------------------------
# Fourier transforms
#
# Convention: forward transform is unnormalized and shifted so the DC bin
# sits at (floor(H/2), floor(W/2)); the inverse carries the 1/(HW) factor and
# undoes the shift.  The adjoint of the forward map is therefore HW times the
# inverse, which the vjp closures below implement directly.


def fft2(a: Tensor, axes: tuple[int, int] = (-2, -1)) -> ComplexGrid:
    """Centered 2-D FFT of a real tensor along ``axes`` (other dims batched)."""
    z = np.fft.fftshift(np.fft.fft2(a.data, axes=axes), axes=axes)
    re = z.real.astype(a.data.dtype)
    im = z.imag.astype(a.data.dtype)

    def vjp_re(g):
        back = np.fft.fft2(np.fft.ifftshift(g, axes=axes), axes=axes)
        return (back.real.astype(a.data.dtype),)

    def vjp_im(g):
        # Im(Fx)_k = -sum_n x_n sin(2*pi*k*n/N), whose adjoint is +Im(F g).
        back = np.fft.fft2(np.fft.ifftshift(g, axes=axes), axes=axes)
        return (back.imag.astype(a.data.dtype),)

    real = _record(re, "fft2.re", (a,), vjp_re)
    imag = _record(im, "fft2.im", (a,), vjp_im)
    return ComplexGrid(real, imag)


def ifft2(
    grid: ComplexGrid,
    axes: tuple[int, int] = (-2, -1),
    imag_tol: float | None = 1e-5,
) -> Tensor:
    """Inverse of :func:`fft2`, returning the real part.

    ``imag_tol`` guards spectra expected to be conjugate-symmetric: if the
    imaginary residual of the inverse transform exceeds it, a NumericError is
    raised.  Pass ``None`` for spectra that are legitimately asymmetric (the
    residual is then discarded).
    """
    re, im = grid.real, grid.imag
    z = np.fft.ifftshift(re.data + 1j * im.data, axes=axes)
    out = np.fft.ifft2(z, axes=axes)
    if imag_tol is not None:
        residual = float(np.abs(out.imag).max()) if out.size else 0.0
        scale = max(1.0, float(np.abs(out.real).max())) if out.size else 1.0
        if residual > imag_tol * scale:
            raise NumericError(
                f"ifft2: imaginary residual {residual:.3e} exceeds {imag_tol:.1e}"
            )
    data = out.real.astype(re.data.dtype)
    n = 1
    for ax in axes:
        n *= data.shape[ax]

    def vjp_pair(g):
        fwd = np.fft.fftshift(np.fft.fft2(g, axes=axes), axes=axes) / n
        return fwd

    def vjp_re(g):
        return (vjp_pair(g).real.astype(re.data.dtype),)

    def vjp_im(g):
        return (vjp_pair(g).imag.astype(re.data.dtype),)

    # Two single-parent records share the forward value; gradients flow to
    # both halves of the spectrum independently.
    out_re = _record(data, "ifft2", (re,), vjp_re)
    if im.requires_grad or im._parents:
        bridge = _record(np.zeros_like(data), "ifft2.im", (im,), vjp_im)
        return add(out_re, bridge)
    return out_re


# ---------------------------------------------------------------------------
# attention


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over the last two dims (rows = tokens)."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention: Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    d_h = q.shape[-1]
    if d_h < 1:
        raise ShapeError("attention: head dim must be >= 1")
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(d_h))
    return matmul(softmax(scores), v)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, d) -> (..., heads, N, d/heads)."""
    if x.shape[-1] % heads != 0:
        raise ShapeError(f"split_heads: dim {x.shape[-1]} not divisible by {heads}")
    n, d = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    y = reshape(x, lead + (n, heads, d // heads))
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return transpose(y, perm)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, N, d_h) -> (..., N, heads*d_h)."""
    lead = x.shape[:-3]
    heads, n, dh = x.shape[-3:]
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return reshape(transpose(x, perm), lead + (n, heads * dh))


# ---------------------------------------------------------------------------
# patch folding (shared by the backbone embedding and the frequency prompts,
# so both sides agree on patch order: row-major over the patch grid,
# channel-major within a patch)


def patchify(image: Tensor, patch_h: int, patch_w: int) -> Tensor:
    """(..., C, H, W) -> (..., N, C*patch_h*patch_w) with N = (H/ph)*(W/pw)."""
    *lead, c, h, w = image.shape
    if h % patch_h or w % patch_w:
        raise ShapeError(f"patchify: {h}x{w} not divisible by {patch_h}x{patch_w}")
    gh, gw = h // patch_h, w // patch_w
    x = reshape(image, tuple(lead) + (c, gh, patch_h, gw, patch_w))
    nl = len(lead)
    x = transpose(x, tuple(range(nl)) + (nl + 1, nl + 3, nl, nl + 2, nl + 4))
    return reshape(x, tuple(lead) + (gh * gw, c * patch_h * patch_w))


def unpatchify(patches: Tensor, grid: tuple[int, int], channels: int,
               patch_h: int, patch_w: int) -> Tensor:
    """Inverse of :func:`patchify`."""
    *lead, n, dim = patches.shape
    gh, gw = grid
    if n != gh * gw or dim != channels * patch_h * patch_w:
        raise ShapeError(f"unpatchify: {patches.shape} incompatible with grid {grid}")
    nl = len(lead)
    x = reshape(patches, tuple(lead) + (gh, gw, channels, patch_h, patch_w))
    x = transpose(x, tuple(range(nl)) + (nl + 2, nl, nl + 3, nl + 1, nl + 4))
    return reshape(x, tuple(lead) + (channels, gh * patch_h, gw * patch_w))


# ---------------------------------------------------------------------------
# named primitive dispatch (used by the gradcheck harness and the CLI)


PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "linear": linear,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "layernorm": layernorm,
    "reshape": reshape,
    "concat": concat,
    "slice": narrow,
    "mean": mean,
    "sum": sum_,
}


def primitive_forward(name: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named primitives by string."""
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise ShapeError(f"unknown primitive {name!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients of a scalarized output against central
    finite differences, coordinate by coordinate.

    ``fn`` must rebuild its graph from ``inputs`` on every call and all inputs
    must be f64 (finite differences are meaningless in f32).  The output is
    scalarized by a fixed random-weighted sum so that symmetric outputs (for
    example softmax rows) still exercise every Jacobian entry.  Returns the
    worst relative error max(|a-n| / max(|a|, |n|, 1e-8)).
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"grad_check: step {h} outside [1e-7, 1e-4]")
    for t in inputs:
        if t.data.dtype != F64:
            raise NumericError("grad_check: all inputs must be f64")
        t.requires_grad = True
        t.grad = None

    rng = rng or np.random.default_rng(0)
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)

    def scalar() -> float:
        val = fn(*inputs)
        return float((val.data * weights).sum())

    loss = sum_(mul(out, Tensor(weights, dtype=F64)))
    loss.backward()

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = scalar()
            flat[idx] = orig - h
            minus = scalar()
            flat[idx] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                coord = np.unravel_index(idx, t.shape)
                raise NumericError(
                    f"grad_check: non-differentiable point at input coord {coord}"
                )
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# initialization helpers


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, dtype=F32) -> Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, the default for tunable maps."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape: tuple[int, ...], dtype=F32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value in the network is a :class:`Tensor`: a row-major contiguous
float64 ndarray plus an optional gradient buffer and a backward closure.
Primitives build the compute graph eagerly; ``backward`` on a scalar walks
it in reverse topological order and accumulates gradients additively.

Shape discipline is strict: elementwise binary ops require identical
shapes. The only sanctioned broadcasts are bias addition inside
``linear``/``conv2d``, channel gating (``gate_channels``) and constant-mask
multiplication (``mul_const``). Anything else raises ``ShapeError``.

Every primitive checks its output for NaN/Inf and raises ``NumericError``
naming the offending op, so numerical blow-ups surface immediately instead
of poisoning a training run.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "NumericError",
    "parameter",
    "concat",
    "activation",
    "sigmoid",
    "relu",
    "silu",
    "softplus",
    "texp",
    "tlog",
    "tsum",
    "tmean",
    "linear",
    "conv2d",
    "pool_channelwise",
    "softmax_channels",
    "upsample_nearest2",
    "group_norm",
    "rms_norm",
    "dwconv1d_causal",
    "gate_channels",
    "mul_const",
    "pick_class",
    "grad_check",
]


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(TensorError):
    """Operand shapes violate an operation's contract."""


class NumericError(TensorError):
    """A primitive produced NaN or Inf."""


def _as_array(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """Dense n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- gradient plumbing ---------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        Repeated calls without ``zero_grad`` accumulate, by design.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return _add_scalar(self, float(other))
        return _add(self, _expect_tensor(other, "+"))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return _add_scalar(self, -float(other))
        return _add(self, -_expect_tensor(other, "-"))

    def __rsub__(self, other):
        return _add_scalar(-self, float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _mul_scalar(self, float(other))
        return _mul(self, _expect_tensor(other, "*"))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return _mul_scalar(self, 1.0 / float(other))
        return _div(self, _expect_tensor(other, "/"))

    def __neg__(self):
        return _mul_scalar(self, -1.0)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TensorError("only scalar exponents are supported")
        return _pow_scalar(self, float(exponent))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def flatten(self) -> "Tensor":
        return _reshape(self, (self.size,))

    def transpose(self, axes) -> "Tensor":
        return _transpose(self, tuple(axes))


def parameter(data, name: str) -> Tensor:
    """A named leaf tensor that participates in optimization."""
    return Tensor(data, requires_grad=True, name=name)


def _expect_tensor(x, op: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TensorError(f"operand of {op!r} must be a Tensor, got {type(x).__name__}")
    return x


def _node(data: np.ndarray, op: str, prev: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    _check_finite(out.data, op)
    out.requires_grad = any(p.requires_grad for p in prev)
    if out.requires_grad:
        out._prev = prev
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = _node(a.data + b.data, "add", (a, b), None)

    def backward():
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad)

    out._backward = backward
    return out


def _add_scalar(a: Tensor, s: float) -> Tensor:
    out = _node(a.data + s, "add_scalar", (a,), None)

    def backward():
        a._accum(out.grad)

    out._backward = backward
    return out


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = _node(a.data * b.data, "mul", (a, b), None)

    def backward():
        if a.requires_grad:
            a._accum(out.grad * b.data)
        if b.requires_grad:
            b._accum(out.grad * a.data)

    out._backward = backward
    return out


def _mul_scalar(a: Tensor, s: float) -> Tensor:
    out = _node(a.data * s, "mul_scalar", (a,), None)

    def backward():
        a._accum(out.grad * s)

    out._backward = backward
    return out


def _div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = _node(a.data / b.data, "div", (a, b), None)

    def backward():
        if a.requires_grad:
            a._accum(out.grad / b.data)
        if b.requires_grad:
            b._accum(-out.grad * a.data / (b.data * b.data))

    out._backward = backward
    return out


def _pow_scalar(a: Tensor, p: float) -> Tensor:
    out = _node(a.data**p, "pow", (a,), None)

    def backward():
        a._accum(out.grad * p * a.data ** (p - 1.0))

    out._backward = backward
    return out


def mul_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Multiply by a fixed (non-differentiable) array, e.g. a binary mask.

    ``const`` may carry singleton leading axes; numpy broadcasting against
    ``a`` must not change the output shape.
    """
    const = np.asarray(const, dtype=np.float64)
    data = a.data * const
    if data.shape != a.shape:
        raise ShapeError(f"mul_const: mask shape {const.shape} incompatible with {a.shape}")
    out = _node(data, "mul_const", (a,), None)

    def backward():
        a._accum(out.grad * const)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def _reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    out = _node(a.data.reshape(shape), "reshape", (a,), None)

    def backward():
        a._accum(out.grad.reshape(a.shape))

    out._backward = backward
    return out


def _transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,), None)

    def backward():
        a._accum(np.ascontiguousarray(out.grad.transpose(inv)))

    out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim:
            raise ShapeError("concat: rank mismatch")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _node(data, "concat", tuple(tensors), None)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.ndim
                idx[axis] = slice(lo, hi)
                t._accum(np.ascontiguousarray(out.grad[tuple(idx)]))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor) -> Tensor:
    out = _node(np.asarray(a.data.sum()), "sum", (a,), None)

    def backward():
        a._accum(np.full_like(a.data, float(out.grad)))

    out._backward = backward
    return out


def tmean(a: Tensor) -> Tensor:
    return tsum(a) * (1.0 / a.size)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    out = _node(s, "sigmoid", (a,), None)

    def backward():
        a._accum(out.grad * s * (1.0 - s))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), "relu", (a,), None)

    def backward():
        a._accum(out.grad * (a.data > 0.0))

    out._backward = backward
    return out


def silu(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    out = _node(a.data * s, "silu", (a,), None)

    def backward():
        a._accum(out.grad * (s + a.data * s * (1.0 - s)))

    out._backward = backward
    return out


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) computed as max(x,0) + log1p(e^{-|x|}) to avoid overflow
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = _node(data, "softplus", (a,), None)
    s = _stable_sigmoid(a.data)

    def backward():
        a._accum(out.grad * s)

    out._backward = backward
    return out


_ACTIVATIONS = {"sigmoid": sigmoid, "silu": silu, "relu": relu, "softplus": softplus}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise TensorError(f"unknown activation {kind!r}") from None
    return fn(a)


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    out = _node(data, "exp", (a,), None)

    def backward():
        a._accum(out.grad * data)

    out._backward = backward
    return out


def tlog(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; ``floor`` clamps the argument away from zero.

    The clamp keeps a saturated softmax from emitting -inf; gradients use
    the clamped argument, so they stay finite as well.
    """
    arg = np.maximum(a.data, floor) if floor > 0.0 else a.data
    out = _node(np.log(arg), "log", (a,), None)

    def backward():
        a._accum(out.grad / arg)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# linear algebra primitives


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ W^T + b applied to the trailing axis of ``x``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: trailing dim {x.shape[-1]} != weight D_in {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({d_out},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    y2 = x2 @ weight.data.T
    if bias is not None:
        y2 = y2 + bias.data
    prev = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y2.reshape(lead + (d_out,)), "linear", prev, None)

    def backward():
        g2 = out.grad.reshape(-1, d_out)
        if x.requires_grad:
            x._accum((g2 @ weight.data).reshape(x.shape))
        if weight.requires_grad:
            weight._accum(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=0))

    out._backward = backward
    return out


def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols6 = np.empty((b, c, k, k, h_out, w_out), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols6[:, :, i, j] = xp[
                :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
            ]
    return cols6.reshape(b, c * k * k, h_out * w_out)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation over [C,H,W] or [B,C,H,W] input.

    Implemented as im2col + matmul; the backward pass rebuilds the column
    matrix from the saved padded input rather than retaining it.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: expected 3- or 4-D input, got {x.shape}")
    b, c_in, h, w = xd.shape
    c_out, c_in_w, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv2d: only square kernels are supported")
    k = kh
    if k % 2 != 1:
        raise ShapeError("conv2d: kernel size must be odd")
    if c_in_w != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, weight expects {c_in_w}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, h_out, w_out)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    y = np.matmul(w2, cols)
    if bias is not None:
        y = y + bias.data[:, None]
    y = y.reshape(b, c_out, h_out, w_out)
    prev = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y[0] if squeeze else y, "conv2d", prev, None)

    def backward():
        g = out.grad[None] if squeeze else out.grad
        g2 = g.reshape(b, c_out, h_out * w_out)
        if weight.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accum(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(b, c_in, k, k, h_out, w_out)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[
                        :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
                    ] += dcols[:, :, i, j]
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
            x._accum(dx[0] if squeeze else dx)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# pooling and normalization


def pool_channelwise(x: Tensor, kind: str) -> Tensor:
    """Global average (GAP) or max (GMP) pooling over the spatial extent.

    Accepts [C,H,W] -> [C] or [B,C,H,W] -> [B,C]. GMP routes its gradient
    to the first maximal element in row-major order on ties.
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"pool_channelwise: expected 3- or 4-D input, got {x.shape}")
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError("pool_channelwise: empty spatial extent")
    flat = x.data.reshape(x.shape[:-2] + (h * w,))
    if kind == "GAP":
        out = _node(flat.mean(axis=-1), "pool_gap", (x,), None)

        def backward():
            g = np.repeat(out.grad[..., None] / (h * w), h * w, axis=-1)
            x._accum(g.reshape(x.shape))

        out._backward = backward
        return out
    if kind == "GMP":
        idx = flat.argmax(axis=-1)
        out = _node(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], "pool_gmp", (x,), None)

        def backward():
            g = np.zeros_like(flat)
            np.put_along_axis(g, idx[..., None], out.grad[..., None], axis=-1)
            x._accum(g.reshape(x.shape))

        out._backward = backward
        return out
    raise TensorError(f"unknown pooling kind {kind!r}")


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis of [K,H,W] or [B,K,H,W]."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"softmax_channels: expected 3- or 4-D input, got {x.shape}")
    axis = 0 if x.ndim == 3 else 1
    if x.shape[axis] < 2:
        raise ShapeError("softmax_channels: need at least 2 channels")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _node(p, "softmax_channels", (x,), None)

    def backward():
        dot = (out.grad * p).sum(axis=axis, keepdims=True)
        x._accum(p * (out.grad - dot))

    out._backward = backward
    return out


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of [B,C,H,W]."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2: expected 4-D input, got {x.shape}")
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = _node(data, "upsample_nearest2", (x,), None)
    b, c, h, w = x.shape

    def backward():
        x._accum(out.grad.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    out._backward = backward
    return out


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization over [B,C,H,W] with per-channel affine."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm: expected 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    if c % groups != 0:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("group_norm: affine parameters must have shape (C,)")
    m = c // groups * h * w
    xg = x.data.reshape(b, groups, m)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(b, c, h, w)
    y = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    out = _node(y, "group_norm", (x, gamma, beta), None)

    def backward():
        g = out.grad
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gg = (g * gamma.data[None, :, None, None]).reshape(b, groups, m)
            xh = xhat.reshape(b, groups, m)
            mean_gg = gg.mean(axis=2, keepdims=True)
            mean_ggxh = (gg * xh).mean(axis=2, keepdims=True)
            dx = inv * (gg - mean_gg - xh * mean_ggxh)
            x._accum(dx.reshape(x.shape))

    out._backward = backward
    return out


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """RMS normalization over the trailing axis with learnable gain."""
    c = x.shape[-1]
    if gain.shape != (c,):
        raise ShapeError(f"rms_norm: gain shape {gain.shape} != ({c},)")
    ms = (x.data**2).mean(axis=-1, keepdims=True)
    r = np.sqrt(ms + eps)
    xn = x.data / r
    out = _node(xn * gain.data, "rms_norm", (x, gain), None)

    def backward():
        g = out.grad
        if gain.requires_grad:
            gain._accum((g * xn).reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            gg = g * gain.data
            dot = (gg * x.data).sum(axis=-1, keepdims=True)
            x._accum(gg / r - x.data * dot / (c * r**3))

    out._backward = backward
    return out


def dwconv1d_causal(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise causal 1D convolution along the token axis of [B,L,E].

    ``weight`` has shape [E,K]; position t sees tokens t-K+1 .. t (left
    zero padding), so no future token leaks backward.
    """
    if x.ndim != 3:
        raise ShapeError(f"dwconv1d_causal: expected [B,L,E], got {x.shape}")
    b, length, e = x.shape
    ew, k = weight.shape
    if ew != e:
        raise ShapeError(f"dwconv1d_causal: weight channels {ew} != input channels {e}")
    if bias is not None and bias.shape != (e,):
        raise ShapeError("dwconv1d_causal: bias must have shape (E,)")
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    y = np.zeros((b, length, e), dtype=np.float64)
    for j in range(k):
        y += xp[:, j : j + length, :] * weight.data[:, j]
    if bias is not None:
        y = y + bias.data
    prev = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y, "dwconv1d_causal", prev, None)

    def backward():
        g = out.grad
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            for j in range(k):
                dw[:, j] = (g * xp[:, j : j + length, :]).sum(axis=(0, 1))
            weight._accum(dw)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1)))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j : j + length, :] += g * weight.data[:, j]
            x._accum(dxp[:, k - 1 :, :])

    out._backward = backward
    return out


def gate_channels(x: Tensor, w: Tensor) -> Tensor:
    """Scale each channel of [C,H,W] / [B,C,H,W] by a per-channel weight.

    ``w`` is [C], or [B,C] for batched per-sample gates.
    """
    if x.ndim == 3:
        c = x.shape[0]
        if w.shape != (c,):
            raise ShapeError(f"gate_channels: weight shape {w.shape} != ({c},)")
        wb = w.data[:, None, None]
    elif x.ndim == 4:
        b, c = x.shape[:2]
        if w.shape == (c,):
            wb = w.data[None, :, None, None]
        elif w.shape == (b, c):
            wb = w.data[:, :, None, None]
        else:
            raise ShapeError(f"gate_channels: weight shape {w.shape} incompatible with {x.shape}")
    else:
        raise ShapeError(f"gate_channels: expected 3- or 4-D input, got {x.shape}")
    out = _node(x.data * wb, "gate_channels", (x, w), None)

    def backward():
        if x.requires_grad:
            x._accum(out.grad * wb)
        if w.requires_grad:
            gw = out.grad * x.data
            if x.ndim == 3:
                w._accum(gw.sum(axis=(1, 2)))
            elif w.shape == x.shape[:2]:
                w._accum(gw.sum(axis=(2, 3)))
            else:
                w._accum(gw.sum(axis=(0, 2, 3)))

    out._backward = backward
    return out


def pick_class(p: Tensor, labels: np.ndarray) -> Tensor:
    """Gather p[b, labels[b,h,w], h, w] -> [B,H,W] for per-pixel losses."""
    if p.ndim != 4:
        raise ShapeError(f"pick_class: expected [B,K,H,W], got {p.shape}")
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],) + p.shape[2:]:
        raise ShapeError(f"pick_class: label shape {labels.shape} does not match {p.shape}")
    k = p.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise TensorError(f"pick_class: labels outside [0,{k})")
    idx = labels[:, None, :, :]
    out = _node(np.take_along_axis(p.data, idx, axis=1)[:, 0], "pick_class", (p,), None)

    def backward():
        g = np.zeros_like(p.data)
        np.put_along_axis(g, idx, out.grad[:, None], axis=1)
        p._accum(g)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of its tensor
    argument. Error metric: |a - n| / max(1, |a|, |n|) per coordinate.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    out.backward()
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)
    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(probe.data)).item()
        flat[i] = orig - eps
        lo = f(Tensor(probe.data)).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))

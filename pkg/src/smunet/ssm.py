"""Selective state-space (Mamba-style) sequence block.

The core recurrence, per inner channel e and state n:

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   h_0 = 0
    y_t = C_t . h_t + D_e * u_t

with input-dependent delta (softplus-projected), B and C. The scan is a
single autograd primitive: the time loop runs in numba-compiled kernels
with a hand-derived backward pass, exact with respect to the recurrence
(verified against finite differences and a naive step-by-step oracle in
the test suite). Work and memory are linear in sequence length.

:class:`MambaBlock` wraps the scan in the canonical block: RMS pre-norm,
input/gate projections (expansion factor 2), depthwise causal conv of
width 4, SiLU, scan, SiLU-gated multiply, output projection, residual.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    _node,
    dwconv1d_causal,
    linear,
    parameter,
    rms_norm,
    silu,
    softplus,
    texp,
)

__all__ = ["selective_scan", "MambaBlock", "SsmParams"]


@njit(cache=True, fastmath=True)
def _scan_forward(u, delta, a, bmat, c):
    # u, delta: [B,L,E]; a: [E,N]; bmat, c: [B,L,N]
    # -> y [B,L,E], states hs [B,L,E,N], decay factors abar [B,L,E,N]
    b, length, e = u.shape
    n = a.shape[1]
    abar = np.empty((b, length, e, n))
    hs = np.empty((b, length, e, n))
    y = np.empty((b, length, e))
    for bi in range(b):
        h = np.zeros((e, n))
        for t in range(length):
            for ei in range(e):
                dt = delta[bi, t, ei]
                dtu = dt * u[bi, t, ei]
                acc = 0.0
                for ni in range(n):
                    ab = np.exp(dt * a[ei, ni])
                    hv = ab * h[ei, ni] + dtu * bmat[bi, t, ni]
                    abar[bi, t, ei, ni] = ab
                    h[ei, ni] = hv
                    hs[bi, t, ei, ni] = hv
                    acc += c[bi, t, ni] * hv
                y[bi, t, ei] = acc
    return y, hs, abar


@njit(cache=True, fastmath=True)
def _scan_backward(dy, abar, hs, u, delta, a, bmat, c):
    # Reverse sweep of the recurrence; dh carries the running adjoint.
    b, length, e, n = abar.shape
    du = np.zeros((b, length, e))
    ddelta = np.zeros((b, length, e))
    da = np.zeros((e, n))
    db = np.zeros((b, length, n))
    dc = np.zeros((b, length, n))
    for bi in range(b):
        dh = np.zeros((e, n))
        for t in range(length - 1, -1, -1):
            for ei in range(e):
                g = dy[bi, t, ei]
                for ni in range(n):
                    dh[ei, ni] += g * c[bi, t, ni]
                    dc[bi, t, ni] += g * hs[bi, t, ei, ni]
                    hprev = hs[bi, t - 1, ei, ni] if t > 0 else 0.0
                    ab = abar[bi, t, ei, ni]
                    dhv = dh[ei, ni]
                    ddelta[bi, t, ei] += dhv * (
                        a[ei, ni] * ab * hprev + bmat[bi, t, ni] * u[bi, t, ei]
                    )
                    da[ei, ni] += dhv * delta[bi, t, ei] * ab * hprev
                    db[bi, t, ni] += dhv * delta[bi, t, ei] * u[bi, t, ei]
                    du[bi, t, ei] += dhv * delta[bi, t, ei] * bmat[bi, t, ni]
                    dh[ei, ni] = ab * dhv
    return du, ddelta, da, db, dc


def selective_scan(
    u: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor
) -> Tensor:
    """Input-dependent linear recurrence over a token sequence.

    Shapes: u, delta [B,L,E]; a [E,N]; b, c [B,L,N]; d [E] -> [B,L,E].
    """
    if u.ndim != 3:
        raise ShapeError(f"selective_scan: u must be [B,L,E], got {u.shape}")
    bs, length, e = u.shape
    if delta.shape != u.shape:
        raise ShapeError(f"selective_scan: delta shape {delta.shape} != u shape {u.shape}")
    n = a.shape[1]
    if a.shape != (e, n):
        raise ShapeError(f"selective_scan: A must be [E,N], got {a.shape}")
    for name, t in (("B", b), ("C", c)):
        if t.shape != (bs, length, n):
            raise ShapeError(f"selective_scan: {name} must be [B,L,N], got {t.shape}")
    if d.shape != (e,):
        raise ShapeError(f"selective_scan: D must be [E], got {d.shape}")

    y, hs, abar = _scan_forward(u.data, delta.data, a.data, b.data, c.data)
    if not np.all(np.isfinite(y)):
        bad = np.argwhere(~np.isfinite(y.reshape(bs, length, e)))
        step = int(bad[0][1]) if len(bad) else -1
        raise NumericError(
            f"selective_scan: non-finite state at sequence step {step} "
            "(exploding step size)"
        )
    y = y + d.data * u.data
    out = _node(y, "selective_scan", (u, delta, a, b, c, d), None)

    def backward():
        du, ddelta, da, db, dc = _scan_backward(
            out.grad, abar, hs, u.data, delta.data, a.data, b.data, c.data
        )
        if u.requires_grad:
            u._accum(du + out.grad * d.data)
        if delta.requires_grad:
            delta._accum(ddelta)
        if a.requires_grad:
            a._accum(da)
        if b.requires_grad:
            b._accum(db)
        if c.requires_grad:
            c._accum(dc)
        if d.requires_grad:
            d._accum((out.grad * u.data).sum(axis=(0, 1)))

    out._backward = backward
    return out


class SsmParams:
    """Parameter bundle for one selective-SSM block.

    A is stored as A_log with A = -exp(A_log), so the continuous-time
    decay is strictly negative and the discretized factor exp(delta*A)
    stays in (0,1). The delta projection bias is set so softplus(bias)
    is about 0.01 at init, keeping early states stable on long sequences.
    """

    STATE_DIM = 16
    CONV_WIDTH = 4
    EXPAND = 2

    def __init__(self, name: str, channels: int, init):
        self.channels = channels
        e = self.EXPAND * channels
        n = self.STATE_DIM
        self.inner = e
        self.norm_gain = parameter(np.ones(channels), f"{name}.norm_gain")
        self.w_in = parameter(init.dense((e, channels)), f"{name}.w_in")
        self.b_in = parameter(np.zeros(e), f"{name}.b_in")
        self.w_gate = parameter(init.dense((e, channels)), f"{name}.w_gate")
        self.b_gate = parameter(np.zeros(e), f"{name}.b_gate")
        self.conv_w = parameter(init.dense((e, self.CONV_WIDTH)), f"{name}.conv_w")
        self.conv_b = parameter(np.zeros(e), f"{name}.conv_b")
        self.w_delta = parameter(init.dense((e, e)), f"{name}.w_delta")
        # softplus(-4.6) ~= 0.01
        self.b_delta = parameter(np.full(e, -4.6), f"{name}.b_delta")
        self.w_b = parameter(init.dense((n, e)), f"{name}.w_b")
        self.w_c = parameter(init.dense((n, e)), f"{name}.w_c")
        # S4D-real style decay: A = -(n+1) per state index
        a_log = np.log(np.tile(np.arange(1.0, n + 1.0), (e, 1)))
        self.a_log = parameter(a_log, f"{name}.a_log")
        self.d_skip = parameter(np.ones(e), f"{name}.d_skip")
        self.w_out = parameter(init.dense((channels, e)), f"{name}.w_out")
        self.b_out = parameter(np.zeros(channels), f"{name}.b_out")

    def params(self) -> list[Tensor]:
        return [
            self.norm_gain,
            self.w_in,
            self.b_in,
            self.w_gate,
            self.b_gate,
            self.conv_w,
            self.conv_b,
            self.w_delta,
            self.b_delta,
            self.w_b,
            self.w_c,
            self.a_log,
            self.d_skip,
            self.w_out,
            self.b_out,
        ]


class MambaBlock:
    """Residual selective-SSM block over token sequences [B,L,C]."""

    def __init__(self, name: str, channels: int, init):
        self.p = SsmParams(name, channels, init)

    def __call__(self, s: Tensor) -> Tensor:
        if s.ndim != 3 or s.shape[-1] != self.p.channels:
            raise ShapeError(
                f"mamba_block: expected [B,L,{self.p.channels}], got {s.shape}"
            )
        p = self.p
        xn = rms_norm(s, p.norm_gain)
        x = linear(xn, p.w_in, p.b_in)
        z = linear(xn, p.w_gate, p.b_gate)
        x = silu(dwconv1d_causal(x, p.conv_w, p.conv_b))
        delta = softplus(linear(x, p.w_delta, p.b_delta))
        bm = linear(x, p.w_b)
        cm = linear(x, p.w_c)
        a = -texp(p.a_log)
        y = selective_scan(x, delta, a, bm, cm, p.d_skip)
        y = y * silu(z)
        return s + linear(y, p.w_out, p.b_out)

    def params(self) -> list[Tensor]:
        return self.p.params()

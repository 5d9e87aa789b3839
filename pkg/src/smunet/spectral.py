"""Orthonormal 2D DCT-II / inverse, and the binary-mask band split.

The transform is applied separably (rows then columns) per channel via
cached cosine matrices. Orthonormal scaling makes the transform an
isometry: Parseval holds exactly up to rounding, and the inverse is the
transpose transform, which is also what the backward pass uses (the
transform is linear).

The low/high split multiplies the coefficient map by complementary binary
masks. ``alpha`` is a per-side linear fraction: the low band is the
top-left max(1, round(alpha*H)) x max(1, round(alpha*W)) corner, where DCT
energy compaction concentrates smooth structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, TensorError, _node, mul_const

__all__ = ["Spectrum", "SpectralPair", "dct2", "idct2", "low_mask", "mask_split"]


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: M[k, j] = s_k * cos(pi*(2j+1)*k / (2n))."""
    j = np.arange(n)
    k = np.arange(n)[:, None]
    m = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    m.setflags(write=False)
    return m


@dataclass
class Spectrum:
    """Per-channel DCT-II coefficient map, same shape as its source."""

    coeffs: Tensor

    @property
    def shape(self):
        return self.coeffs.shape


@dataclass
class SpectralPair:
    """Complementary low/high band split of a spectrum."""

    low: Spectrum
    high: Spectrum
    alpha: float
    mask_low: np.ndarray


def _spatial_transform(x: Tensor, forward: bool) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"dct2/idct2: need at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    mh = dct_matrix(h)
    mw = dct_matrix(w)
    if forward:
        data = mh @ x.data @ mw.T
    else:
        data = mh.T @ x.data @ mw
    out = _node(data, "dct2" if forward else "idct2", (x,), None)

    def backward():
        # linear map: gradient is the transpose transform
        if forward:
            x._accum(np.ascontiguousarray(mh.T @ out.grad @ mw))
        else:
            x._accum(np.ascontiguousarray(mh @ out.grad @ mw.T))

    out._backward = backward
    return out


def dct2(x: Tensor) -> Spectrum:
    """Forward orthonormal 2D DCT-II over the trailing [H,W] axes."""
    return Spectrum(_spatial_transform(x, forward=True))


def idct2(f: Spectrum | Tensor) -> Tensor:
    """Inverse of :func:`dct2` (orthonormal DCT-III)."""
    t = f.coeffs if isinstance(f, Spectrum) else f
    return _spatial_transform(t, forward=False)


@lru_cache(maxsize=None)
def low_mask(h: int, w: int, alpha: float) -> np.ndarray:
    """Binary low-band mask: top-left corner rectangle, at least 1x1."""
    if not 0.0 < alpha <= 1.0:
        raise TensorError(f"alpha must be in (0, 1], got {alpha}")
    rh = max(1, round(alpha * h))
    rw = max(1, round(alpha * w))
    mask = np.zeros((h, w), dtype=np.float64)
    mask[:rh, :rw] = 1.0
    mask.setflags(write=False)
    return mask


def mask_split(f: Spectrum | Tensor, alpha: float) -> SpectralPair:
    """Split a spectrum into complementary low/high bands.

    Both outputs keep the full [H,W] extent, zero-filled outside their
    band, so low.coeffs + high.coeffs reproduces the input bitwise.
    """
    t = f.coeffs if isinstance(f, Spectrum) else f
    h, w = t.shape[-2:]
    mask = low_mask(h, w, alpha)
    bshape = (1,) * (t.ndim - 2) + (h, w)
    low = mul_const(t, mask.reshape(bshape))
    high = mul_const(t, (1.0 - mask).reshape(bshape))
    return SpectralPair(Spectrum(low), Spectrum(high), alpha, mask)

"""Composite layers: band-wise spectral modeling, channel reweighting from
spectral statistics, and frequency-gated skip fusion.

``SdmBlock`` transforms an encoder feature map to the DCT domain, splits it
into complementary low/high bands, models each band with its own sequence
block (or a plain 3x3 conv in the spectral-conv ablation), transforms the
enhanced bands back, and fuses them with a residual 3x3 conv.

``ScrGate`` pools the enhanced band spectra (GAP and GMP), pushes both
descriptors through one shared bottleneck MLP, and produces sigmoid channel
weights per band. ``SgfFuse`` uses those weights in the decoder to gate the
concatenated upsampled/skip features, one gated copy per band, before a
fusing convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Spectrum, dct2, idct2, mask_split
from .ssm import MambaBlock
from .tensor import (
    ShapeError,
    Tensor,
    TensorError,
    concat,
    gate_channels,
    pool_channelwise,
    relu,
    sigmoid,
)
from .layers import Conv2d, Linear

__all__ = ["ChannelWeights", "SdmOutput", "SdmBlock", "ScrGate", "SgfFuse"]


@dataclass
class ChannelWeights:
    """Per-band sigmoid channel gates produced by one encoder stage."""

    w_low: Tensor
    w_high: Tensor
    stage_index: int


@dataclass
class SdmOutput:
    features: Tensor
    enhanced_low: Spectrum
    enhanced_high: Spectrum


def to_tokens(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,H*W,C] row-major token sequence."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose((0, 2, 1))


def from_tokens(t: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`to_tokens`."""
    b, length, c = t.shape
    if length != h * w:
        raise ShapeError(f"from_tokens: {length} tokens cannot fill {h}x{w}")
    return t.transpose((0, 2, 1)).reshape(b, c, h, w)


class SdmBlock:
    """Spectral split, per-band sequence modeling, residual fusion."""

    def __init__(self, name: str, channels: int, alpha: float, init, band_op: str = "mamba"):
        self.channels = channels
        self.alpha = alpha
        self.band_op = band_op
        if band_op == "mamba":
            self.band_low = MambaBlock(f"{name}.mamba_low", channels, init)
            self.band_high = MambaBlock(f"{name}.mamba_high", channels, init)
        elif band_op == "conv":
            self.band_low = Conv2d(f"{name}.conv_low", channels, channels, 3, init)
            self.band_high = Conv2d(f"{name}.conv_high", channels, channels, 3, init)
        else:
            raise TensorError(f"unknown band_op {band_op!r}")
        self.fuse = Conv2d(f"{name}.fuse", 2 * channels, channels, 3, init)

    def _enhance(self, band: Spectrum, op) -> Spectrum:
        if self.band_op == "mamba":
            b, c, h, w = band.shape
            return Spectrum(from_tokens(op(to_tokens(band.coeffs)), h, w))
        return Spectrum(op(band.coeffs))

    def __call__(self, x: Tensor) -> SdmOutput:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"sdm: expected [B,{self.channels},H,W], got {x.shape}")
        pair = mask_split(dct2(x), self.alpha)
        f_low = self._enhance(pair.low, self.band_low)
        f_high = self._enhance(pair.high, self.band_high)
        x_low = idct2(f_low)
        x_high = idct2(f_high)
        features = self.fuse(concat([x_low, x_high], axis=1)) + x
        return SdmOutput(features, f_low, f_high)

    def params(self) -> list[Tensor]:
        return self.band_low.params() + self.band_high.params() + self.fuse.params()


class SpatialMambaBlock:
    """Sequence modeling on spatial features (no spectral transform).

    Used by the spatial-only ablation variant: the feature map is
    flattened row-major, run through one residual sequence block, and
    reshaped back.
    """

    def __init__(self, name: str, channels: int, init):
        self.channels = channels
        self.block = MambaBlock(f"{name}.mamba", channels, init)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        return from_tokens(self.block(to_tokens(x)), h, w)

    def params(self) -> list[Tensor]:
        return self.block.params()


class ScrGate:
    """Sigmoid channel weights from pooled band-spectrum statistics.

    One bottleneck MLP (C -> C/r -> C, r = 4) is shared across the GAP and
    GMP descriptors and across both bands of the stage.
    """

    REDUCTION = 4

    def __init__(self, name: str, channels: int, init):
        if channels < self.REDUCTION:
            raise TensorError(
                f"scr: {channels} channels cannot be reduced by factor {self.REDUCTION}"
            )
        self.channels = channels
        hidden = channels // self.REDUCTION
        self.fc1 = Linear(f"{name}.fc1", channels, hidden, init)
        self.fc2 = Linear(f"{name}.fc2", hidden, channels, init)

    def _mlp(self, v: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(v)))

    def _band_weight(self, f: Spectrum) -> Tensor:
        gap = pool_channelwise(f.coeffs, "GAP")
        gmp = pool_channelwise(f.coeffs, "GMP")
        return sigmoid(self._mlp(gap) + self._mlp(gmp))

    def __call__(self, f_low: Spectrum, f_high: Spectrum, stage_index: int) -> ChannelWeights:
        return ChannelWeights(
            self._band_weight(f_low), self._band_weight(f_high), stage_index
        )

    def params(self) -> list[Tensor]:
        return self.fc1.params() + self.fc2.params()


class SgfFuse:
    """Frequency-gated skip fusion in the decoder.

    The C-entry band weights gate the 2C-channel concatenation by being
    repeated across both halves (decoder half and skip half); the two
    gated copies are concatenated (4C channels) and fused by a 3x3 conv.
    """

    def __init__(self, name: str, channels: int, out_channels: int, init):
        self.channels = channels
        self.fuse = Conv2d(f"{name}.fuse", 4 * channels, out_channels, 3, init)

    def gated_bands(self, x_up: Tensor, x_skip: Tensor, w: ChannelWeights):
        """The two gated 2C-channel copies, before the fusing conv."""
        if x_up.shape != x_skip.shape:
            raise ShapeError(f"sgf: shape mismatch {x_up.shape} vs {x_skip.shape}")
        if x_up.shape[1] != self.channels or w.w_low.shape[-1] != self.channels:
            raise ShapeError(
                f"sgf: channel mismatch (features {x_up.shape[1]}, "
                f"weights {w.w_low.shape[-1]}, expected {self.channels})"
            )
        x_cat = concat([x_up, x_skip], axis=1)
        axis = w.w_low.ndim - 1
        g_low = gate_channels(x_cat, concat([w.w_low, w.w_low], axis=axis))
        g_high = gate_channels(x_cat, concat([w.w_high, w.w_high], axis=axis))
        return g_low, g_high

    def __call__(self, x_up: Tensor, x_skip: Tensor, w: ChannelWeights) -> Tensor:
        g_low, g_high = self.gated_bands(x_up, x_skip, w)
        return self.fuse(concat([g_low, g_high], axis=1))

    def params(self) -> list[Tensor]:
        return self.fuse.params()

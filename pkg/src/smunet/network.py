"""U-shaped segmentation network with spectral band modeling and its
ablation variants, plus the combined Dice + cross-entropy training loss.

Encoder stage k: DoubleConv -> optional band-modeling block -> optional
channel-weight gate -> skip push -> strided-conv downsampling. Decoder
stage k: nearest-2x upsample + conv -> skip pop (strict LIFO) -> gated or
plain fusion -> DoubleConv. Head: 1x1 conv to K classes and a per-pixel
softmax, so the forward output is a probability simplex at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blocks import ChannelWeights, ScrGate, SdmBlock, SgfFuse, SpatialMambaBlock
from .layers import Conv2d, DoubleConv, Initializer
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    TensorError,
    _node,
    concat,
    pick_class,
    softmax_channels,
    tlog,
    tmean,
    tsum,
    upsample_nearest2,
)

__all__ = ["NetConfig", "VARIANTS", "SegmentationNet", "seg_loss", "variant_table"]

VARIANTS = ("baseline", "freq_conv", "spatial_mamba", "freq_scr_sgf", "sdm_only", "full")

# (band_op in the encoder block, spatial sequence block, gated skip fusion)
_VARIANT_FLAGS = {
    "baseline": (None, False, False),
    "freq_conv": ("conv", False, False),
    "spatial_mamba": (None, True, False),
    "freq_scr_sgf": ("conv", False, True),
    "sdm_only": ("mamba", False, False),
    "full": ("mamba", False, True),
}


@dataclass
class NetConfig:
    stages: int = 4
    base_channels: int = 16
    in_channels: int = 1
    num_classes: int = 3
    alpha: float = 0.125
    variant: str = "full"
    input_size: tuple[int, int] = (64, 64)
    norm_groups: int = 4
    dice_smooth: float = 1e-5

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise TensorError(f"unknown variant {self.variant!r} (choose from {VARIANTS})")
        if not 0.0 < self.alpha <= 1.0:
            raise TensorError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.num_classes < 2:
            raise TensorError("need at least 2 classes")
        h, w = self.input_size
        div = 1 << self.stages
        if h % div or w % div:
            raise ShapeError(
                f"input size {h}x{w} not divisible by 2^{self.stages}"
            )

    @property
    def stage_channels(self) -> list[int]:
        return [self.base_channels << k for k in range(self.stages)]


class SegmentationNet:
    """Builds and runs the full forward pass for any variant."""

    def __init__(self, config: NetConfig, init_seed: int):
        config.validate()
        self.config = config
        init = Initializer(init_seed)
        band_op, spatial_seq, self.gated_fusion = _VARIANT_FLAGS[config.variant]
        chans = config.stage_channels
        bottleneck = chans[-1] * 2

        self.enc_blocks = []
        self.stage_ops = []  # per stage: SdmBlock | SpatialMambaBlock | None
        self.scr_gates = []
        self.downs = []
        c_prev = config.in_channels
        for k, c in enumerate(chans):
            self.enc_blocks.append(DoubleConv(f"enc{k + 1}", c_prev, c, init, config.norm_groups))
            if band_op is not None:
                self.stage_ops.append(SdmBlock(f"enc{k + 1}.sdm", c, config.alpha, init, band_op))
            elif spatial_seq:
                self.stage_ops.append(SpatialMambaBlock(f"enc{k + 1}.spatial", c, init))
            else:
                self.stage_ops.append(None)
            if self.gated_fusion:
                self.scr_gates.append(ScrGate(f"enc{k + 1}.scr", c, init))
            down_out = bottleneck if k == config.stages - 1 else chans[k + 1]
            self.downs.append(Conv2d(f"down{k + 1}", c, down_out, 3, init, stride=2))
            c_prev = down_out

        self.bottleneck = DoubleConv("bottleneck", bottleneck, bottleneck, init, config.norm_groups)

        self.ups = []
        self.sgf_fuses = []
        self.dec_blocks = []
        for k in reversed(range(config.stages)):
            c = chans[k]
            c_deep = bottleneck if k == config.stages - 1 else chans[k + 1]
            self.ups.append(Conv2d(f"up{k + 1}", c_deep, c, 3, init))
            if self.gated_fusion:
                self.sgf_fuses.append(SgfFuse(f"dec{k + 1}.sgf", c, c, init))
                self.dec_blocks.append(DoubleConv(f"dec{k + 1}", c, c, init, config.norm_groups))
            else:
                self.sgf_fuses.append(None)
                self.dec_blocks.append(DoubleConv(f"dec{k + 1}", 2 * c, c, init, config.norm_groups))
        self.head = Conv2d("head", chans[0], config.num_classes, 1, init)

        self._params: dict[str, Tensor] = {}
        for t in self._collect_params():
            if t.name in self._params:
                raise TensorError(f"duplicate parameter name {t.name!r}")
            self._params[t.name] = t

    def _collect_params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for group in (self.enc_blocks, self.stage_ops, self.scr_gates, self.downs,
                      [self.bottleneck], self.ups, self.sgf_fuses, self.dec_blocks, [self.head]):
            for layer in group:
                if layer is not None:
                    out.extend(layer.params())
        return out

    def param_dict(self) -> dict[str, Tensor]:
        return self._params

    def num_params(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Run the full pass; ``trace`` records ('push', k) / ('pop', k)."""
        cfg = self.config
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != cfg.input_size:
            raise ShapeError(
                f"forward: expected [B,{cfg.in_channels},{cfg.input_size[0]},"
                f"{cfg.input_size[1]}], got {x.shape}"
            )
        skips: list[Tensor] = []
        weights: list[ChannelWeights | None] = []
        try:
            for k in range(cfg.stages):
                x = self.enc_blocks[k](x)
                op = self.stage_ops[k]
                if isinstance(op, SdmBlock):
                    sdm = op(x)
                    x = sdm.features
                    if self.gated_fusion:
                        weights.append(self.scr_gates[k](sdm.enhanced_low, sdm.enhanced_high, k + 1))
                    else:
                        weights.append(None)
                else:
                    if op is not None:
                        x = op(x)
                    weights.append(None)
                skips.append(x)
                if trace is not None:
                    trace.append(("push", k + 1))
                x = self.downs[k](x)
            x = self.bottleneck(x)
            for i, k in enumerate(reversed(range(cfg.stages))):
                x = self.ups[i](upsample_nearest2(x))
                skip = skips.pop()
                w = weights.pop()
                if trace is not None:
                    trace.append(("pop", k + 1))
                if self.gated_fusion:
                    x = self.sgf_fuses[i](x, skip, w)
                else:
                    x = concat([x, skip], axis=1)
                x = self.dec_blocks[i](x)
        except NumericError as err:
            raise NumericError(f"{err} (decoder depth {len(skips)} skips pending)") from err
        return softmax_channels(self.head(x))


def seg_loss(pred: Tensor, target: np.ndarray, smooth: float = 1e-5) -> Tensor:
    """Equal-weight sum of pixel cross-entropy and soft Dice loss.

    ``pred`` is a [B,K,H,W] probability map (already softmaxed); ``target``
    an integer label map [B,H,W] with values in [0,K).
    """
    if pred.ndim != 4:
        raise ShapeError(f"seg_loss: expected [B,K,H,W], got {pred.shape}")
    target = np.asarray(target)
    k = pred.shape[1]
    if target.min() < 0 or target.max() >= k:
        raise TensorError(f"seg_loss: target labels outside [0,{k})")
    # cross-entropy; probability floored to keep log finite once saturated
    ce = -tmean(tlog(pick_class(pred, target), floor=1e-300))
    # soft Dice, averaged over classes
    onehot = np.zeros(pred.shape, dtype=np.float64)
    np.put_along_axis(onehot, target[:, None], 1.0, axis=1)
    dice_sum = None
    for c in range(k):
        p_c = _class_slice(pred, c)
        g_c = onehot[:, c]
        inter = tsum(p_c * Tensor(g_c))
        denom = tsum(p_c) + float(g_c.sum())
        d = (inter * 2.0 + smooth) / (denom + smooth)
        dice_sum = d if dice_sum is None else dice_sum + d
    dice_loss = 1.0 - dice_sum * (1.0 / k)
    return ce + dice_loss


def _class_slice(pred: Tensor, c: int) -> Tensor:
    out = _node(np.ascontiguousarray(pred.data[:, c]), "class_slice", (pred,), None)

    def backward():
        g = np.zeros_like(pred.data)
        g[:, c] = out.grad
        pred._accum(g)

    out._backward = backward
    return out


def variant_table(base: NetConfig) -> list[NetConfig]:
    """The six ablation configurations, differing only in ``variant``."""
    return [replace(base, variant=v) for v in VARIANTS]

"""Adam optimizer with bias correction, plus the training-step loop.

Gradients are clipped by global L2 norm (default 5.0) before every step;
long selective-scan sequences can spike early gradients and the clip keeps
the first epochs stable. A non-finite gradient aborts the step naming the
offending parameter.
"""

from __future__ import annotations

import numpy as np

from .data import batcher
from .tensor import NumericError, Tensor

__all__ = ["Adam", "train_epoch"]


class Adam:
    """Standard Adam over a name -> Tensor parameter dict."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: float = 5.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _clip_scale(self) -> float:
        if self.grad_clip <= 0:
            return 1.0
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad**2).sum())
        norm = np.sqrt(total)
        return 1.0 if norm <= self.grad_clip else self.grad_clip / norm

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        scale = self._clip_scale()
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            else:
                g = g * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train_epoch(model, dataset, optimizer: Adam, loss_fn, batch_size: int,
                shuffle_seed: int, epoch: int) -> float:
    """One pass over the dataset; returns the mean batch loss."""
    losses = []
    for images, masks in batcher(dataset, batch_size, shuffle_seed, epoch):
        optimizer.zero_grad()
        pred = model.forward(Tensor(images))
        loss = loss_fn(pred, masks)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    if not losses:
        raise ValueError("train_epoch: empty dataset")
    return float(np.mean(losses))

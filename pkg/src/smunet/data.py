"""Synthetic segmentation data, PGM (P5) image I/O, and batching.

Synthetic images stand in for clinical datasets at desk scale. Two shape
families stress the two frequency regimes: filled ellipses (smooth,
low-frequency structure) and thin curved tubes of width 1-2 px (boundary-
dominated, high-frequency). A third family, nested rings, is available
for extra classes. Class labels map to evenly spaced gray levels
(label / (K-1)), scaled by ``contrast`` and corrupted by Gaussian noise,
then clipped to [0,1]; masks are the exact rasterization labels.

Rasterization uses only rational arithmetic on integer control points
(pixel-center inclusion tests, Bezier evaluation at rational parameters),
and all randomness comes from the portable xorshift generator, so a spec
plus seed reproduces a dataset bit-for-bit.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .rng import PortableRng, splitmix64

__all__ = [
    "SyntheticSpec",
    "Dataset",
    "DataError",
    "synth_generate",
    "load_pgm",
    "save_pgm",
    "save_label_mask",
    "batcher",
    "write_manifest",
    "load_manifest",
]

FAMILIES = ("ellipse", "tube", "rings")


class DataError(Exception):
    """Malformed image file or unsatisfiable generation spec."""


@dataclass
class SyntheticSpec:
    size: tuple[int, int] = (64, 64)
    num_classes: int = 3
    families: tuple[str, ...] = ("ellipse", "tube")
    noise_sigma: float = 0.05
    contrast: float = 1.0
    count: int = 60
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes > 1 + len(self.families):
            raise DataError(
                f"{self.num_classes} classes need at least "
                f"{self.num_classes - 1} shape families, got {len(self.families)}"
            )
        for f in self.families:
            if f not in FAMILIES:
                raise DataError(f"unknown shape family {f!r}")
        if min(self.size) < 16:
            raise DataError("images smaller than 16x16 cannot fit the shape families")


@dataclass
class Dataset:
    images: list[np.ndarray] = field(default_factory=list)  # each [1,H,W] in [0,1]
    masks: list[np.ndarray] = field(default_factory=list)  # each [H,W] int64
    split: str = "train"


# ---------------------------------------------------------------------------
# shape rasterization (integer/rational arithmetic only)


def _raster_ellipse(mask: np.ndarray, label: int, rng: PortableRng) -> None:
    h, w = mask.shape
    ry = rng.randint(max(2, h // 10), max(3, h // 4))
    rx = rng.randint(max(2, w // 10), max(3, w // 4))
    cy = rng.randint(ry, h - 1 - ry)
    cx = rng.randint(rx, w - 1 - rx)
    ys = np.arange(h)[:, None] - cy
    xs = np.arange(w)[None, :] - cx
    # pixel-center test: (dy/ry)^2 + (dx/rx)^2 <= 1, cleared of divisions
    inside = (ys * ys) * (rx * rx) + (xs * xs) * (ry * ry) <= (ry * ry) * (rx * rx)
    mask[inside] = label


def _raster_rings(mask: np.ndarray, label: int, rng: PortableRng) -> None:
    h, w = mask.shape
    r_out = rng.randint(max(4, min(h, w) // 6), max(5, min(h, w) // 3))
    r_in = max(2, r_out - rng.randint(1, max(2, r_out // 2)))
    cy = rng.randint(r_out, h - 1 - r_out)
    cx = rng.randint(r_out, w - 1 - r_out)
    ys = np.arange(h)[:, None] - cy
    xs = np.arange(w)[None, :] - cx
    d2 = ys * ys + xs * xs
    mask[(d2 <= r_out * r_out) & (d2 >= r_in * r_in)] = label


def _raster_tube(mask: np.ndarray, label: int, rng: PortableRng) -> None:
    """Quadratic Bezier curve with integer control points, width 1-2 px."""
    h, w = mask.shape
    pts = [(rng.randint(1, h - 2), rng.randint(1, w - 2)) for _ in range(3)]
    width = rng.randint(1, 2)
    steps = 4 * (h + w)
    for i in range(steps + 1):
        t = i / steps
        s = 1.0 - t
        y = s * s * pts[0][0] + 2 * s * t * pts[1][0] + t * t * pts[2][0]
        x = s * s * pts[0][1] + 2 * s * t * pts[1][1] + t * t * pts[2][1]
        yi = int(np.floor(y + 0.5))
        xi = int(np.floor(x + 0.5))
        for dy in range(width):
            for dx in range(width):
                yy, xx = yi + dy, xi + dx
                if 0 <= yy < h and 0 <= xx < w:
                    mask[yy, xx] = label


_RASTER = {"ellipse": _raster_ellipse, "tube": _raster_tube, "rings": _raster_rings}


def _render_sample(spec: SyntheticSpec, rng: PortableRng):
    h, w = spec.size
    for _ in range(32):
        mask = np.zeros((h, w), dtype=np.int64)
        for label in range(1, spec.num_classes):
            family = spec.families[(label - 1) % len(spec.families)]
            count = rng.randint(1, 2)
            for _ in range(count):
                _RASTER[family](mask, label, rng)
        if all((mask == c).any() for c in range(spec.num_classes)):
            break
    else:
        raise DataError("could not place all requested classes after 32 attempts")
    levels = mask.astype(np.float64) / (spec.num_classes - 1)
    img = levels * spec.contrast
    if spec.noise_sigma > 0.0:
        img = img + rng.normal_array((h, w), spec.noise_sigma)
    img = np.clip(img, 0.0, 1.0)
    return img[None], mask


def synth_generate(spec: SyntheticSpec, split: str = "train") -> Dataset:
    """Deterministic dataset for (spec, seed); split name salts the stream."""
    spec.validate()
    salt = {"train": 1, "test": 2}.get(split)
    if salt is None:
        salt = splitmix64(zlib.crc32(split.encode("utf-8")))
    rng = PortableRng(splitmix64(spec.seed ^ splitmix64(salt)))
    ds = Dataset(split=split)
    for _ in range(spec.count):
        img, mask = _render_sample(spec, rng)
        ds.images.append(img)
        ds.masks.append(mask)
    return ds


# ---------------------------------------------------------------------------
# PGM (P5) I/O


def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1].isspace():
            pos += 1
        elif buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("truncated PGM header")
    return buf[start:pos], pos


def load_pgm(path) -> np.ndarray:
    """Binary (P5) PGM with maxval 255 -> float tensor [1,H,W] in [0,1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pgm_token(buf, pos)
        if not tok.isdigit():
            raise DataError(f"{path}: malformed header token {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 255)")
    if w < 1 or h < 1:
        raise DataError(f"{path}: invalid dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos : pos + w * h]
    if len(payload) != w * h:
        raise DataError(
            f"{path}: truncated payload, expected {w * h} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return (arr.astype(np.float64) / 255.0)[None]


def save_pgm(image: np.ndarray, path) -> None:
    """Write [1,H,W] or [H,W] values in [0,1] as canonical P5, maxval 255."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise DataError(f"save_pgm: expected single channel, got {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise DataError(f"save_pgm: expected 2-D image, got shape {arr.shape}")
    bytes_ = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = bytes_.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes_.tobytes())


def label_gray_levels(num_classes: int) -> list[int]:
    return [round(255 * c / (num_classes - 1)) for c in range(num_classes)]


def save_label_mask(mask: np.ndarray, num_classes: int, path) -> None:
    """Labels mapped to evenly spaced gray levels, plus a sidecar legend."""
    levels = label_gray_levels(num_classes)
    gray = np.asarray(levels, dtype=np.uint8)[np.asarray(mask)]
    save_pgm(gray.astype(np.float64) / 255.0, path)
    with open(str(path) + ".legend.txt", "w") as fh:
        for c, lvl in enumerate(levels):
            fh.write(f"{c}\t{lvl}\n")


# ---------------------------------------------------------------------------
# manifests and batching


def write_manifest(path, entries) -> None:
    """Entries are (split, image_path, mask_path) triples."""
    with open(path, "w") as fh:
        for split, img, mask in entries:
            fh.write(f"{split}\t{img}\t{mask}\n")


def load_manifest(path, split: str, num_classes: int) -> Dataset:
    base = os.path.dirname(os.path.abspath(path))
    ds = Dataset(split=split)
    levels = label_gray_levels(num_classes)
    lut = np.full(256, -1, dtype=np.int64)
    for c, lvl in enumerate(levels):
        lut[lvl] = c
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            entry_split, img_path, mask_path = parts
            if entry_split != split:
                continue
            if not os.path.isabs(img_path):
                img_path = os.path.join(base, img_path)
            if not os.path.isabs(mask_path):
                mask_path = os.path.join(base, mask_path)
            ds.images.append(load_pgm(img_path))
            gray = np.rint(load_pgm(mask_path)[0] * 255.0).astype(np.int64)
            labels = lut[gray]
            if (labels < 0).any():
                raise DataError(
                    f"{mask_path}: gray levels do not match the {num_classes}-class legend"
                )
            ds.masks.append(labels)
    return ds


def batcher(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int = 0):
    """Deterministic shuffled batches; the final short batch is kept.

    The permutation depends only on (shuffle_seed, epoch).
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    n = len(dataset.images)
    rng = PortableRng(splitmix64(shuffle_seed ^ splitmix64(1000 + epoch)))
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        images = np.stack([dataset.images[i] for i in idx])
        masks = np.stack([dataset.masks[i] for i in idx])
        yield images, masks

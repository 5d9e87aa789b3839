"""Command-line surface: train, eval, predict, decompose, ablate.

Exit codes: 0 success, 2 invalid config/arguments, 3 numeric failure,
4 I/O failure, 5 corrupted checkpoint.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
import time

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, parse_config_file, render_config
from .data import (
    DataError,
    Dataset,
    load_manifest,
    load_pgm,
    save_label_mask,
    save_pgm,
    synth_generate,
)
from .metrics import evaluate_dataset
from .network import SegmentationNet, seg_loss, variant_table
from .optim import Adam, train_epoch
from .rng import derive_seed
from .spectral import dct2, idct2, mask_split
from .tensor import NumericError, Tensor, TensorError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_CORRUPT = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# shared plumbing


def _load_run_config(path, seed_override=None) -> RunConfig:
    cfg = parse_config_file(path)
    if seed_override is not None:
        cfg.seed = seed_override
        cfg.validate()
    return cfg


def _datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    data_seed = derive_seed(cfg.seed, 1)
    if cfg.source == "synthetic":
        train = synth_generate(cfg.synthetic_spec(data_seed, cfg.train_count), "train")
        test = synth_generate(cfg.synthetic_spec(data_seed, cfg.test_count), "test")
    else:
        train = load_manifest(cfg.manifest_path, "train", cfg.num_classes)
        test = load_manifest(cfg.manifest_path, "test", cfg.num_classes)
    if not train.images:
        raise DataError("training split is empty")
    return train, test


def _mean_foreground_dice(model, dataset: Dataset) -> float:
    """Grand mean of per-(image, foreground-class) Dice; matches the mean
    reported by :func:`evaluate_dataset` bit-for-bit."""
    from .metrics import dice

    k = model.config.num_classes
    grid = np.empty((len(dataset.images), k - 1))
    for i, (img, mask) in enumerate(zip(dataset.images, dataset.masks)):
        pred = model.forward(Tensor(img[None])).data[0].argmax(axis=0)
        for j, c in enumerate(range(1, k)):
            grid[i, j] = dice(pred, mask, c)
    return float(grid.mean())


def _train_run(cfg: RunConfig, out_dir: str):
    """Shared by cmd_train and cmd_ablate. Returns (model, optimizer,
    shuffle_state, csv_lines)."""
    os.makedirs(out_dir, exist_ok=True)
    config_text = render_config(cfg)
    with open(os.path.join(out_dir, "config.resolved.txt"), "w") as fh:
        fh.write(config_text)
    train, _ = _datasets(cfg)
    model = SegmentationNet(cfg.net_config(), derive_seed(cfg.seed, 2))
    opt = Adam(model.param_dict(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
               eps=cfg.eps, grad_clip=cfg.grad_clip)
    shuffle_seed = derive_seed(cfg.seed, 3)
    csv_lines = ["epoch,loss,train_dice"]
    best = (-1.0, None, None, 0)  # dice, params snapshot, adam snapshot, epoch
    for epoch in range(1, cfg.epochs + 1):
        loss = train_epoch(model, train, opt, _loss_fn(cfg), cfg.batch_size,
                           shuffle_seed, epoch)
        train_dice = _mean_foreground_dice(model, train)
        csv_lines.append(f"{epoch},{_fmt(loss)},{_fmt(train_dice)}")
        if train_dice > best[0]:
            best = (
                train_dice,
                {n: p.data.copy() for n, p in model.param_dict().items()},
                (opt.t, copy.deepcopy(opt.m), copy.deepcopy(opt.v)),
                epoch,
            )
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    ckpt.save_checkpoint(os.path.join(out_dir, "checkpoint_final.bin"), model, opt,
                         config_text, shuffle_seed, cfg.epochs)
    if best[1] is not None:
        final_params = {n: p.data.copy() for n, p in model.param_dict().items()}
        final_adam = (opt.t, opt.m, opt.v)
        for n, p in model.param_dict().items():
            p.data[...] = best[1][n]
        opt.t, opt.m, opt.v = best[2]
        ckpt.save_checkpoint(os.path.join(out_dir, "checkpoint_best.bin"), model, opt,
                             config_text, shuffle_seed, best[3])
        for n, p in model.param_dict().items():
            p.data[...] = final_params[n]
        opt.t, opt.m, opt.v = final_adam
    return model, opt, shuffle_seed, csv_lines


def _loss_fn(cfg: RunConfig):
    smooth = cfg.net_config().dice_smooth

    def fn(pred, target):
        return seg_loss(pred, target, smooth)

    return fn


def _restore(checkpoint_path):
    config_text, params, adam_state, rng_state, epoch = ckpt.load_checkpoint(checkpoint_path)
    from .config import parse_config

    cfg = parse_config(config_text)
    model = SegmentationNet(cfg.net_config(), derive_seed(cfg.seed, 2))
    ckpt.restore_model(model, params)
    return cfg, model, adam_state, rng_state, epoch


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config, args.seed)
    out_dir = args.out or cfg.out_dir
    _train_run(cfg, out_dir)
    return 0


def cmd_eval(args) -> int:
    cfg, model, _, _, _ = _restore(args.checkpoint)
    train, test = _datasets(cfg)
    dataset = test if args.split == "test" else train
    lines, summary = evaluate_dataset(model, dataset)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"eval_{args.split}.csv"), "w") as fh:
            fh.write(text)
    return 0


def cmd_predict(args) -> int:
    cfg, model, _, _, _ = _restore(args.checkpoint)
    image = load_pgm(args.image)
    if image.shape[1:] != (cfg.input_height, cfg.input_width):
        raise CliError(
            f"{args.image}: size {image.shape[2]}x{image.shape[1]} does not match "
            f"model input {cfg.input_width}x{cfg.input_height}",
            EXIT_CONFIG,
        )
    prob = model.forward(Tensor(image[None])).data[0]
    mask = prob.argmax(axis=0)
    save_label_mask(mask, cfg.num_classes, args.out_mask)
    return 0


def cmd_decompose(args) -> int:
    if not 0.0 < args.alpha <= 1.0:
        raise CliError(f"alpha must be in (0, 1], got {args.alpha}", EXIT_CONFIG)
    image = load_pgm(args.image)
    os.makedirs(args.out, exist_ok=True)
    spectrum = dct2(Tensor(image))
    pair = mask_split(spectrum, args.alpha)
    low = idct2(pair.low).data[0]
    high = idct2(pair.high).data[0]
    total = float((spectrum.coeffs.data**2).sum())
    low_energy = float((pair.low.coeffs.data**2).sum())
    high_energy = float((pair.high.coeffs.data**2).sum())
    report = [f"alpha = {_fmt(args.alpha)}", f"total_energy = {_fmt(total)}"]
    if total > 0:
        report.append(f"low_fraction = {_fmt(low_energy / total)}")
        report.append(f"high_fraction = {_fmt(high_energy / total)}")
    else:
        report.append("low_fraction = 0")
        report.append("high_fraction = 0")
    for name, band in (("low", low), ("high", high)):
        lo, hi = float(band.min()), float(band.max())
        scale = 1.0 / (hi - lo) if hi > lo else 1.0
        save_pgm((band - lo) * scale, os.path.join(args.out, f"{name}.pgm"))
        report.append(f"{name}_rescale_offset = {_fmt(lo)}")
        report.append(f"{name}_rescale_scale = {_fmt(scale)}")
    with open(os.path.join(args.out, "energy.txt"), "w") as fh:
        fh.write("\n".join(report) + "\n")
    return 0


def cmd_ablate(args) -> int:
    base = _load_run_config(args.config, args.seed)
    out_dir = args.out or base.out_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = ["variant,dice,hd95,params,seconds"]
    for cfg in variant_table(base):
        t0 = time.monotonic()
        try:
            variant_dir = os.path.join(out_dir, cfg.variant)
            model, _, _, _ = _train_run(cfg, variant_dir)
            _, test = _datasets(cfg)
            _, summary = evaluate_dataset(model, test)
            elapsed = time.monotonic() - t0
            rows.append(
                f"{cfg.variant},{_fmt(summary['mean_dice'])},"
                f"{_fmt(summary['mean_hd95'])},{model.num_params()},{elapsed:.2f}"
            )
        except (NumericError, TensorError, DataError) as err:
            elapsed = time.monotonic() - t0
            rows.append(f"{cfg.variant},ERROR,ERROR,0,{elapsed:.2f}")
            print(f"variant {cfg.variant} failed: {err}", file=sys.stderr)
    text = "\n".join(rows) + "\n"
    sys.stdout.write(text)
    with open(os.path.join(out_dir, "ablation.csv"), "w") as fh:
        fh.write(text)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smunet",
        description="Spectral band-modeling segmentation network (desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="directory for the metrics CSV")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="segment one PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image")
    p.add_argument("out_mask")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("decompose", help="write low/high band reconstructions")
    p.add_argument("image")
    p.add_argument("--alpha", type=float, default=0.125)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("ablate", help="train and compare all six variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ckpt.CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CORRUPT
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

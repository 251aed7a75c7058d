"""Command-line entry point.

Every subcommand prints a delimited ``key<TAB>value`` report on stdout and
writes its artifacts (checkpoint, CSV, PNG figures, ``.npy`` tensors) into
``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig, load_config, save_config
from .errors import VitcaeError
from .trainer import Trainer, train


def _report(pairs) -> None:
    for k, v in pairs:
        print(f"{k}\t{v}")


def _config(args) -> TrainConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**overrides)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> Trainer:
    ckpt = args.checkpoint or Path(args.out or "runs/desk") / "checkpoint.npz"
    return Trainer.from_checkpoint(ckpt)


def _input_images(args, trainer: Trainer) -> np.ndarray:
    """Images from ``--input`` (.npy or .png files) or the held-out split."""
    pc = trainer.model.pc
    if args.input:
        arrays = []
        for p in args.input:
            if p.endswith(".npy"):
                a = np.load(p)
            else:
                from PIL import Image

                a = np.asarray(Image.open(p), dtype=np.float64) / 255.0
                a = a[None] if a.ndim == 2 else a.transpose(2, 0, 1)[: pc.channels]
            arrays.append(a[None] if a.ndim == 3 else a)
        return np.concatenate(arrays).astype(trainer.model.dtype)
    return trainer.heldout.images[: args.count]


def _save(out: Path, name: str, rows: list[np.ndarray]) -> list[tuple[str, str]]:
    from .plotting import save_image_grid

    np.save(out / f"{name}.npy", rows[-1])
    png = save_image_grid(rows, out / f"{name}.png")
    return [("tensor", str(out / f"{name}.npy")), ("figure", str(png))]


# -- subcommands ------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg.out_dir)
    save_config(cfg, out / "config.cfg")
    result = train(cfg, out, figures=not args.no_figures)
    rows = [("checkpoint", result.checkpoint), ("diagnostics", result.diagnostics), ("epochs", cfg.epochs)]
    if result.epoch_logs:
        last = result.epoch_logs[-1]
        rows += [("final_heldout_mse", repr(last["heldout_mse"])), ("final_loss", repr(last["losses"]["total"])),
                 ("trainable_params", last["trainable_params"])]
    rows.append(("frozen_heads", sum(1 for r in result.records if r.frozen and r.epoch == cfg.epochs)))
    _report(rows)
    return 0


def cmd_reconstruct(args) -> int:
    from . import tasks

    trainer = _load(args)
    x = _input_images(args, trainer)
    rec = tasks.reconstruct(trainer.model, x)
    out = _out_dir(args, "runs/desk")
    _report([("images", len(x)), ("mse", repr(float(np.mean((rec - x) ** 2)))),
             *_save(out, "reconstruct", [x, rec])])
    return 0


def cmd_inpaint(args) -> int:
    from . import tasks

    trainer = _load(args)
    x = _input_images(args, trainer)
    gh, gw = trainer.model.pc.grid
    if args.mask:
        mask = np.load(args.mask).astype(bool)
    else:
        rng = np.random.default_rng(args.seed or 0)
        mask = rng.random((len(x), gh, gw)) < args.mask_ratio
    out_img = tasks.inpaint(trainer.model, x, mask)
    m = np.broadcast_to(mask, (len(x), gh, gw))
    p = trainer.model.pc.patch_size
    pixel_mask = np.repeat(np.repeat(m, p, axis=1), p, axis=2)[:, None]
    shown = np.where(pixel_mask, 0.5, x)
    hidden = np.broadcast_to(pixel_mask, x.shape)
    mse = float(np.mean((out_img - x)[hidden] ** 2)) if hidden.any() else 0.0
    out = _out_dir(args, "runs/desk")
    _report([("images", len(x)), ("masked_fraction", repr(float(m.mean()))), ("masked_mse", repr(mse)),
             *_save(out, "inpaint", [x, shown, out_img])])
    return 0


def cmd_generate(args) -> int:
    from . import tasks

    trainer = _load(args)
    seed = args.seed if args.seed is not None else 0
    imgs = tasks.generate(trainer.model, args.count, seed)
    out = _out_dir(args, "runs/desk")
    _report([("images", len(imgs)), ("seed", seed), *_save(out, "generate", [imgs])])
    return 0


def cmd_interpolate(args) -> int:
    from . import tasks

    trainer = _load(args)
    args.count = max(args.index_a, args.index_b) + 1
    x = _input_images(args, trainer)
    if args.input:
        a, b = x[0], x[-1]
    else:
        a, b = x[args.index_a], x[args.index_b]
    frames = tasks.interpolate(trainer.model, a, b, args.steps)
    out = _out_dir(args, "runs/desk")
    _report([("steps", args.steps), *_save(out, "interpolate", [frames])])
    return 0


def cmd_export_diag(args) -> int:
    trainer = _load(args)
    out = _out_dir(args, "runs/desk")
    csv_path = trainer.export(out, figures=not args.no_figures)
    _report([("diagnostics", csv_path), ("records", len(trainer.records)),
             ("frozen_params", trainer.ledger.frozen_params), ("total_params", trainer.ledger.total_params)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitcae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", help="defaults to OUT/checkpoint.npz")
    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--input", nargs="+", help=".npy tensors or PNG files; default: held-out shapes")
    source.add_argument("--count", type=int, default=8)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and export diagnostics")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common, ckpt, source])
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("inpaint", parents=[common, ckpt, source])
    p.add_argument("--mask", help=".npy boolean patch grid (gh, gw) or (B, gh, gw)")
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("generate", parents=[common, ckpt])
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("interpolate", parents=[common, ckpt, source])
    p.add_argument("--index-a", type=int, default=0)
    p.add_argument("--index-b", type=int, default=1)
    p.add_argument("--steps", type=int, default=8)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("export-diag", parents=[common, ckpt], help="re-export CSV/JSON and figures from a checkpoint")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_export_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (VitcaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

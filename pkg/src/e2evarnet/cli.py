"""Command-line entry point: ``e2evarnet <command> [options]``.

Commands: make-dataset, make-mask, simulate, train, evaluate, reconstruct,
ablation, dither. Every command accepts ``--config FILE`` (YAML/JSON); flags
given on the command line win over the file. Failures print one line
``error: <Kind>: <message>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import data as data_mod
from .cascades import VARIANTS, CascadeConfig
from .errors import ReconError
from .masking import format_mask_spec, mask_from_spec, parse_mask_spec
from .metrics import psnr, ssim
from .postprocess import dither
from .sme import SmeConfig
from .training import (
    METHODS,
    TrainConfig,
    evaluate,
    format_ablation_table,
    load_checkpoint,
    model_from_checkpoint,
    reconstruct_slice,
    run_ablation,
    train,
)

log = logging.getLogger("e2evarnet")

DEFAULT_ABLATION_MASKS = ("equispaced:r=4,l=8",)


class UsageError(ReconError):
    pass


def _default_root() -> str:
    return os.environ.get("RECON_DATA_ROOT", "data")


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    import yaml

    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return doc


# ---------------------------------------------------------------- commands


def cmd_make_dataset(args) -> int:
    n_train, n_val, n_test = args.train, args.val, args.test
    if args.cases is not None:
        n_train, n_val, n_test = args.cases, 0, 0
    manifest = data_mod.make_synthetic_dataset(
        args.root,
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        num_slices=args.slices,
        num_coils=args.coils,
        height=args.height,
        width=args.width,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    counts = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {sum(counts.values())} volumes to {args.root} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _mask_summary(mask) -> str:
    return (
        f"mask={format_mask_spec(mask)} width={mask.width} sampled={mask.num_sampled} "
        f"acs={mask.num_acs} acceleration={mask.acceleration:.4f}"
    )


def cmd_make_mask(args) -> int:
    mask = mask_from_spec(args.spec, args.width)
    if args.out:
        doc = {
            "kind": mask.kind,
            "params": mask.params,
            "width": mask.width,
            "num_acs": mask.num_acs,
            "acs_begin": mask.acs_begin,
            "columns": mask.columns.astype(int).tolist(),
        }
        Path(args.out).write_text(json.dumps(doc))
    print(_mask_summary(mask))
    return 0


def cmd_simulate(args) -> int:
    rec = data_mod.synth_volume(
        Path(args.out).stem, args.slices, args.coils, args.height, args.width, args.noise_std, args.seed
    )
    data_mod.save_volume(rec, args.out)
    mask = mask_from_spec(args.mask, args.width)
    zf = np.stack([reconstruct_slice("zero-filled", k, mask) for k in rec.kspace])
    print(f"wrote {args.out} {_mask_summary(mask)} zero_filled_ssim={ssim(zf, rec.target_rss):.4f}")
    return 0


def _train_config(args, file_cfg: Dict[str, Any]) -> TrainConfig:
    cfg = TrainConfig.from_dict(file_cfg) if file_cfg else TrainConfig()
    if getattr(args, "data_root", None):
        cfg.data_root = args.data_root
    names = ("lr", "sme_lr_scale", "lr_step_epochs", "lr_gamma", "epochs", "batch_size", "mask", "seed", "out_dir",
             "max_train_volumes")
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    model = copy.deepcopy(cfg.model)
    for flag, attr in (("variant", "variant"), ("cascades", "num_cascades"), ("chans", "chans"), ("pools", "pools")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(model, attr, value)
    cfg.model = CascadeConfig(**vars(model))
    sme = copy.deepcopy(cfg.sme)
    if getattr(args, "sme_chans", None) is not None:
        sme.chans = args.sme_chans
    if getattr(args, "sme_pools", None) is not None:
        sme.pools = args.sme_pools
    cfg.sme = SmeConfig(**vars(sme))
    return TrainConfig.from_dict(cfg.to_dict())


def cmd_train(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    resume = load_checkpoint(args.resume, expected=cfg) if args.resume else None
    result = train(cfg, resume=resume)
    for entry in result.history:
        print(" ".join(f"{k}={v}" for k, v in entry.items()))
    if cfg.out_dir:
        print(f"checkpoints in {cfg.out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    model = None
    if args.ckpt:
        model = model_from_checkpoint(load_checkpoint(args.ckpt))
    method = args.method or (model.variant if model is not None else None)
    if method is None:
        raise UsageError("evaluate needs --ckpt or --method")
    report = evaluate(model, args.data, args.mask, method=method, split=args.split)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _save_panel(path: str, target: np.ndarray, recon: np.ndarray, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vmax = float(target.max())
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, img, name in zip(axes, (target, recon, np.abs(recon - target)), ("GT", title, "|difference|")):
        ax.imshow(img, cmap="gray", vmin=0, vmax=vmax if name != "|difference|" else None)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_reconstruct(args) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; valid methods: {', '.join(METHODS)}")
    rec = data_mod.load_volume(args.input)
    model = None
    if args.method in VARIANTS:
        if not args.ckpt:
            raise UsageError(f"method {args.method!r} needs --ckpt")
        model = model_from_checkpoint(load_checkpoint(args.ckpt))
    mask = mask_from_spec(args.mask, rec.kspace.shape[-1], seed=args.seed if "random" in args.mask else None)
    recon = np.stack([reconstruct_slice(args.method, k, mask, model) for k in rec.kspace])
    score = ssim(recon, rec.target_rss, rec.max_value)
    out = recon
    if args.dither is not None:
        out = dither(recon, sigma=args.dither, seed=args.seed)
    if args.out:
        if args.out.endswith(".npy"):
            np.save(args.out, out.astype(np.float32))
        else:
            import h5py

            with h5py.File(args.out, "w") as f:
                f.create_dataset("reconstruction", data=out.astype(np.float32))
                f.attrs["method"] = args.method
                f.attrs["mask"] = format_mask_spec(mask)
                f.attrs["ssim"] = score
    if args.plot:
        _save_panel(args.plot, rec.target_rss[0], recon[0], args.method)
    print(
        f"method={args.method} {_mask_summary(mask)} ssim={score:.4f} "
        f"psnr={psnr(recon, rec.target_rss, rec.max_value):.2f}"
    )
    return 0


def cmd_ablation(args) -> int:
    base = _train_config(args, _load_config_file(args.config))
    configs = args.configs or list(DEFAULT_ABLATION_MASKS)
    for spec in configs:
        parse_mask_spec(spec)
    rows = run_ablation(base, configs, models=args.models, seeds=args.seeds, include_zero_filled=args.zero_filled)
    table = format_ablation_table(rows)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return 0


def _read_image(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    from PIL import Image

    return np.asarray(Image.open(path).convert("F"), dtype=np.float64)


def _write_image(path: str, img: np.ndarray) -> None:
    if path.endswith(".npy"):
        np.save(path, img)
        return
    from PIL import Image

    Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(path)


def cmd_dither(args) -> int:
    img = _read_image(args.input)
    out = dither(img, sigma=args.sigma, seed=args.seed)
    _write_image(args.out, out)
    print(f"wrote {args.out} sigma={args.sigma} seed={args.seed}")
    return 0


# ------------------------------------------------------------------ parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-root", dest="data_root", default=None, help="dataset root (default: $RECON_DATA_ROOT)")
    p.add_argument("--lr", type=float)
    p.add_argument("--sme-lr-scale", type=float, help="learning-rate multiplier for the SME")
    p.add_argument("--lr-step-epochs", type=int, help="decay the learning rate every this many epochs")
    p.add_argument("--lr-gamma", type=float, help="decay factor for --lr-step-epochs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--mask")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--cascades", type=int)
    p.add_argument("--chans", type=int)
    p.add_argument("--pools", type=int)
    p.add_argument("--sme-chans", dest="sme_chans", type=int)
    p.add_argument("--sme-pools", dest="sme_pools", type=int)
    p.add_argument("--max-train-volumes", dest="max_train_volumes", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="e2evarnet", description="Undersampled multi-coil MRI reconstruction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, **kw) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="YAML/JSON file with option defaults")
        p.set_defaults(func=func)
        return p

    p = add("make-dataset", cmd_make_dataset, help="generate a synthetic dataset")
    p.add_argument("--root", default=_default_root())
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=20)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--cases", type=int, help="write exactly this many (training) volumes")
    p.add_argument("--slices", type=int, default=1)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = add("make-mask", cmd_make_mask, help="build a sampling mask and print its statistics")
    p.add_argument("spec", help="e.g. equispaced:r=4,l=30 or random:a=4,f=0.08,seed=42")
    p.add_argument("--width", type=int, default=368)
    p.add_argument("--out", help="write the mask as JSON")

    p = add("simulate", cmd_simulate, help="simulate one synthetic multi-coil volume")
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default="equispaced:r=4,l=8")
    p.add_argument("--slices", type=int, default=1)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, help="train a reconstruction network")
    _add_train_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = add("evaluate", cmd_evaluate, help="score a checkpoint or classical method on a dataset")
    p.add_argument("--ckpt")
    p.add_argument("--method", choices=METHODS + ("target",))
    p.add_argument("--data", default=_default_root())
    p.add_argument("--split", default="val")
    p.add_argument("--mask", required=True)
    p.add_argument("--out")

    p = add("reconstruct", cmd_reconstruct, help="reconstruct one volume file")
    p.add_argument("--input", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--mask", default="full")
    p.add_argument("--out")
    p.add_argument("--plot", help="write a GT | recon | difference panel (PNG)")
    p.add_argument("--dither", type=float, metavar="SIGMA", help="dither the output with this sigma")
    p.add_argument("--seed", type=int, default=0)

    p = add("ablation", cmd_ablation, help="train/evaluate model variants over mask settings")
    _add_train_flags(p)
    p.add_argument("--configs", nargs="+", help="mask specs (one table block each)")
    p.add_argument("--models", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--zero-filled", dest="zero_filled", action="store_true", help="add a zero-filled row")
    p.add_argument("--out")

    p = add("dither", cmd_dither, help="add brightness-adaptive noise to an image")
    p.add_argument("--in", dest="input", required=True, help=".npy or image file")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: Sequence[str], args) -> argparse.Namespace:
    """Re-parse with the config file's values as defaults (non-training commands)."""
    if args.command in ("train", "ablation") or not args.config:
        return args
    doc = _load_config_file(args.config)
    known = set(vars(args))
    unknown = sorted(k for k in doc if k.replace("-", "_") not in known)
    if unknown:
        raise UsageError(f"unknown key(s) in {args.config}: {unknown}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = _apply_config_defaults(parser, argv, args)
        if hasattr(args, "seed") and args.seed is not None:
            import torch

            torch.manual_seed(args.seed)
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except ReconError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Training, checkpointing and evaluation of the reconstruction networks.

Training minimizes ``-SSIM`` between the network's RSS output and the
fully-sampled RSS target with Adam. One slice is one example. Masks for
random-mask specs are redrawn per (seed, volume, slice, epoch); equispaced
masks are fixed. No other augmentation is applied.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .cascades import VARIANTS, CascadeConfig, VarNet
from .data import derive_seed, list_volumes, load_volume, VolumeRecord
from .errors import CheckpointError, ConfigMismatchError, DivergenceError, InvalidInputError
from .kspace_core import cs_gradient_descent, ifft2c, mask_columns, rss, tikhonov_gradient
from .masking import SamplingMask, mask_from_spec, parse_mask_spec
from .metrics import MetricReport, VolumeMetrics, ssim_loss
from .sme import SmeConfig, classical_acs_maps

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "TrainResult",
    "SliceDataset",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "reconstruct_slice",
    "METHODS",
    "run_ablation",
    "format_ablation_table",
]

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MAGIC = b"E2EVN-CKPT"
METHODS = ("zero-filled", "cs", "vnu", "vnuk", "e2e")


@dataclass
class TrainConfig:
    """Everything needed to reproduce a training run.

    ``lr`` and ``epochs`` default to Adam at 3e-4 for 50 epochs; batch size
    and schedule are not fixed by the method and default to 1 and constant.
    ``sme_lr_scale`` multiplies the learning rate of the SME parameters.
    With ``lr_step_epochs`` set, every learning rate is multiplied by
    ``lr_gamma`` once per that many epochs (step decay).
    """

    lr: float = 3e-4
    epochs: int = 50
    batch_size: int = 1
    mask: str = "random:a=4,f=0.08"
    model: CascadeConfig = field(default_factory=CascadeConfig)
    sme: SmeConfig = field(default_factory=SmeConfig)
    sme_lr_scale: float = 1.0
    lr_step_epochs: Optional[int] = None
    lr_gamma: float = 0.1
    seed: int = 0
    data_root: str = field(default_factory=lambda: os.environ.get("RECON_DATA_ROOT", "data"))
    train_split: str = "train"
    val_split: Optional[str] = "val"
    max_train_volumes: Optional[int] = None
    shuffle: bool = True
    out_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = _from_dict(CascadeConfig, self.model, "model")
        if isinstance(self.sme, dict):
            self.sme = _from_dict(SmeConfig, self.sme, "sme")
        if not self.lr > 0:
            raise InvalidInputError(f"lr must be > 0, got {self.lr}")
        if not self.sme_lr_scale >= 0:
            raise InvalidInputError(f"sme_lr_scale must be >= 0, got {self.sme_lr_scale}")
        if self.lr_step_epochs is not None and self.lr_step_epochs < 1:
            raise InvalidInputError(f"lr_step_epochs must be >= 1, got {self.lr_step_epochs}")
        if not 0 < self.lr_gamma <= 1:
            raise InvalidInputError(f"lr_gamma must lie in (0, 1], got {self.lr_gamma}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        parse_mask_spec(self.mask)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        return _from_dict(cls, d, "config")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Read a YAML (or JSON) key-value document. Unknown keys are errors."""
        import yaml

        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise InvalidInputError(f"{path}: config must be a mapping")
        return cls.from_dict(data)


def _from_dict(cls, d: Dict[str, Any], where: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise InvalidInputError(f"unknown key(s) in {where}: {unknown}; allowed: {sorted(names)}")
    return cls(**d)


@dataclass
class Checkpoint:
    """Model weights (including step sizes), optimizer moments and run state."""

    config: TrainConfig
    model_state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)
    best_val_ssim: float = -math.inf
    format_version: int = FORMAT_VERSION

    @property
    def variant(self) -> str:
        return self.config.model.variant


@dataclass
class TrainResult:
    last: Checkpoint
    best: Checkpoint
    history: List[Dict[str, float]]


def _payload(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    torch.save(
        {
            "config": json.dumps(ckpt.config.to_dict(), sort_keys=True),
            "model_state": ckpt.model_state,
            "optimizer_state": ckpt.optimizer_state,
            "epoch": ckpt.epoch,
            "history": json.dumps(ckpt.history),
            "best_val_ssim": ckpt.best_val_ssim,
        },
        buf,
    )
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write a versioned, SHA-256 checksummed checkpoint atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload(ckpt)
    header = json.dumps(
        {"format_version": ckpt.format_version, "sha256": hashlib.sha256(payload).hexdigest(), "size": len(payload)}
    ).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_MAGIC + b"\n" + header + b"\n" + payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected: Optional[Union[TrainConfig, CascadeConfig]] = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Args:
        path: Checkpoint file.
        expected: Optional model (or training) config the checkpoint must
            match; a different variant or architecture raises
            ConfigMismatchError.
    """
    raw = Path(path).read_bytes()
    try:
        magic, header, payload = raw.split(b"\n", 2)
        meta = json.loads(header)
    except ValueError as exc:
        raise CheckpointError(f"{path}: not a checkpoint file") from exc
    if magic != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {meta.get('format_version')} is not supported (expected {FORMAT_VERSION})"
        )
    if len(payload) != meta.get("size") or hashlib.sha256(payload).hexdigest() != meta.get("sha256"):
        raise CheckpointError(f"{path}: integrity check failed (checksum mismatch)")
    state = torch.load(io.BytesIO(payload), weights_only=True)
    ckpt = Checkpoint(
        config=TrainConfig.from_dict(json.loads(state["config"])),
        model_state=state["model_state"],
        optimizer_state=state["optimizer_state"],
        epoch=int(state["epoch"]),
        history=json.loads(state["history"]),
        best_val_ssim=float(state["best_val_ssim"]),
        format_version=int(meta["format_version"]),
    )
    if expected is not None:
        want = expected.model if isinstance(expected, TrainConfig) else expected
        have = ckpt.config.model
        if want.variant != have.variant:
            raise ConfigMismatchError(
                f"checkpoint holds a {have.variant!r} model but a {want.variant!r} model was requested"
            )
        if asdict(want) != asdict(have):
            raise ConfigMismatchError(f"checkpoint architecture {asdict(have)} does not match requested {asdict(want)}")
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint) -> VarNet:
    model = VarNet(ckpt.config.model, ckpt.config.sme)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model


class SliceDataset:
    """All slices of a list of volumes, held in memory.

    Args:
        paths: Volume files.
        mask_spec: Mask spec string applied to every slice.
        seed: Global seed mixed into per-slice random-mask seeds.
        fixed_masks: Use one mask per slice independent of the epoch
            (evaluation); otherwise random masks are redrawn every epoch.
    """

    def __init__(self, paths: Sequence[Path], mask_spec: str, seed: int = 0, fixed_masks: bool = False):
        self.volumes: List[VolumeRecord] = [load_volume(p) for p in paths]
        self.mask_spec = parse_mask_spec(mask_spec)
        self.seed = seed
        self.fixed_masks = fixed_masks
        self.index: List[Tuple[int, int]] = [
            (v, s) for v, vol in enumerate(self.volumes) for s in range(vol.num_slices)
        ]

    def __len__(self) -> int:
        return len(self.index)

    def mask_for(self, i: int, epoch: int = 0) -> SamplingMask:
        v, s = self.index[i]
        vol = self.volumes[v]
        width = vol.kspace.shape[-1]
        if self.mask_spec["kind"] != "random":
            return mask_from_spec(self.mask_spec, width)
        base = self.mask_spec.get("seed", 0)
        if self.fixed_masks:
            seed = derive_seed(base, vol.id, s)
        else:
            seed = derive_seed(self.seed, base, vol.id, s, epoch)
        return mask_from_spec(self.mask_spec, width, seed=seed)

    def item(self, i: int, epoch: int = 0) -> Dict[str, Any]:
        v, s = self.index[i]
        vol = self.volumes[v]
        mask = self.mask_for(i, epoch)
        return {
            "kspace": mask_columns(vol.kspace[s], mask),
            "mask": mask,
            "target": vol.target_rss[s],
            "max_value": vol.max_value,
            "volume": vol.id,
            "slice": s,
        }

    def shape_key(self, i: int) -> Tuple[int, ...]:
        v, _ = self.index[i]
        return tuple(self.volumes[v].kspace.shape[1:])

    def batches(self, batch_size: int, epoch: int, shuffle: bool) -> List[List[int]]:
        """Batches of same-shape slices; order depends only on ``(seed, epoch)``."""
        order = np.arange(len(self))
        if shuffle:
            order = np.random.default_rng(derive_seed(self.seed, "order", epoch)).permutation(len(self))
        groups: Dict[Tuple[int, ...], List[int]] = {}
        for i in order:
            groups.setdefault(self.shape_key(int(i)), []).append(int(i))
        out = []
        for idx in groups.values():
            out.extend(idx[j : j + batch_size] for j in range(0, len(idx), batch_size))
        if shuffle:
            perm = np.random.default_rng(derive_seed(self.seed, "batches", epoch)).permutation(len(out))
            out = [out[j] for j in perm]
        return out


def collate(items: Sequence[Dict[str, Any]], dtype: torch.dtype = torch.float32) -> Dict[str, Any]:
    ctype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return {
        "kspace": torch.as_tensor(np.stack([it["kspace"] for it in items])).to(ctype),
        "mask": torch.as_tensor(np.stack([it["mask"].columns for it in items])),
        "num_acs": [it["mask"].num_acs for it in items],
        "target": torch.as_tensor(np.stack([it["target"] for it in items])).to(dtype),
        "max_value": torch.as_tensor([it["max_value"] for it in items], dtype=dtype),
        "volume": [it["volume"] for it in items],
        "slice": [it["slice"] for it in items],
    }


def _optimizer(model: VarNet, lr: float, sme_lr_scale: float = 1.0) -> torch.optim.Adam:
    if model.sens_net is None:
        return torch.optim.Adam(model.parameters(), lr=lr)
    sme = list(model.sens_net.parameters())
    ids = {id(p) for p in sme}
    rest = [p for p in model.parameters() if id(p) not in ids]
    return torch.optim.Adam([{"params": rest}, {"params": sme, "lr": lr * sme_lr_scale}], lr=lr)


def _set_lr(optim: torch.optim.Adam, cfg: TrainConfig, epoch: int) -> None:
    # a pure function of the epoch, so resuming needs no scheduler state
    decay = cfg.lr_gamma ** (epoch // cfg.lr_step_epochs) if cfg.lr_step_epochs else 1.0
    scales = [1.0, cfg.sme_lr_scale]
    for group, scale in zip(optim.param_groups, scales):
        group["lr"] = cfg.lr * scale * decay


def _train_paths(cfg: TrainConfig) -> List[Path]:
    paths = list_volumes(cfg.data_root, cfg.train_split)
    if cfg.max_train_volumes is not None:
        paths = paths[: cfg.max_train_volumes]
    if not paths:
        raise InvalidInputError(f"no training volumes in {cfg.data_root}/{cfg.train_split}")
    return paths


def train(
    cfg: TrainConfig,
    resume: Optional[Checkpoint] = None,
    on_batch: Optional[Callable[[int, int, Dict[str, Any]], None]] = None,
    stop_after_epoch: Optional[int] = None,
) -> TrainResult:
    """Train ``cfg.model`` with the SSIM loss.

    Args:
        cfg: Run configuration.
        resume: Checkpoint to continue from; its epoch counter, weights,
            optimizer moments and history are restored.
        on_batch: Called as ``on_batch(epoch, batch_index, batch)`` before
            each optimizer step.
        stop_after_epoch: Stop once this many epochs are complete (for
            interrupting and resuming a run).

    Returns:
        The last and best-validation checkpoints and the per-epoch log.
    """
    torch.manual_seed(cfg.seed)
    model = VarNet(cfg.model, cfg.sme)
    optim = _optimizer(model, cfg.lr, cfg.sme_lr_scale)
    start_epoch, history, best_val = 0, [], -math.inf
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state is not None:
            optim.load_state_dict(resume.optimizer_state)
        start_epoch, history, best_val = resume.epoch, list(resume.history), resume.best_val_ssim

    dataset = SliceDataset(_train_paths(cfg), cfg.mask, cfg.seed)
    val_paths = list_volumes(cfg.data_root, cfg.val_split) if cfg.val_split else []
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            config=copy.deepcopy(cfg),
            model_state=copy.deepcopy(model.state_dict()),
            optimizer_state=copy.deepcopy(optim.state_dict()),
            epoch=epoch,
            history=list(history),
            best_val_ssim=best_val,
        )

    best: Optional[Checkpoint] = None
    end_epoch = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)
    for epoch in range(start_epoch, end_epoch):
        model.train()
        _set_lr(optim, cfg, epoch)
        losses = []
        for b, idx in enumerate(dataset.batches(cfg.batch_size, epoch, cfg.shuffle)):
            batch = collate([dataset.item(i, epoch) for i in idx])
            if on_batch is not None:
                on_batch(epoch, b, batch)
            output = model(batch["kspace"], batch["mask"], batch["num_acs"])
            loss = ssim_loss(output, batch["target"], batch["max_value"])
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b} (volumes {batch['volume']}); "
                    f"recent losses: {losses[-5:]}"
                )
            optim.zero_grad()
            loss.backward()
            optim.step()
            losses.append(loss.item())
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)) if losses else math.nan}
        if val_paths:
            report = evaluate(model, val_paths, cfg.mask, method=cfg.model.variant)
            entry["val_ssim"] = report.ssim
        history.append(entry)
        logger.info("epoch %d %s", epoch + 1, " ".join(f"{k}={v:.5f}" for k, v in entry.items() if k != "epoch"))
        # model selection on validation SSIM, falling back to training loss
        score = entry.get("val_ssim", -entry["train_loss"])
        improved = score > best_val
        if improved:
            best_val = score
        last = snapshot(epoch + 1)
        if improved:
            best = last
        if out_dir is not None:
            save_checkpoint(last, out_dir / "last.ckpt")
            if improved:
                save_checkpoint(best, out_dir / "best.ckpt")
    last = snapshot(max(end_epoch, start_epoch))
    if best is None:
        best = last
    if out_dir is not None:
        save_checkpoint(last, out_dir / "last.ckpt")
        (out_dir / "history.json").write_text(json.dumps(history, indent=2))
    return TrainResult(last=last, best=best, history=history)


def reconstruct_slice(
    method: str,
    kspace: np.ndarray,
    mask: SamplingMask,
    model: Optional[VarNet] = None,
    cs_steps: int = 20,
    cs_lambda: float = 0.01,
) -> np.ndarray:
    """Reconstruct one masked slice ``(N, H, W)`` into a magnitude image.

    ``method`` is one of ``zero-filled``, ``cs`` (gradient descent with a
    Tikhonov penalty and classical ACS maps) or a network variant, which
    needs ``model``.
    """
    kspace = mask_columns(np.asarray(kspace), mask)
    if method == "zero-filled":
        return rss(ifft2c(kspace))
    if method == "cs":
        maps = classical_acs_maps(kspace, mask)
        x = cs_gradient_descent(kspace, maps, mask, lam=cs_lambda, step=1.0, reg_grad=tikhonov_gradient, steps=cs_steps)
        return np.abs(x)
    if method in VARIANTS:
        if model is None:
            raise InvalidInputError(f"method {method!r} needs a trained model checkpoint")
        if model.variant != method:
            raise ConfigMismatchError(f"checkpoint holds a {model.variant!r} model but {method!r} was requested")
        dtype = next(model.parameters()).dtype
        ctype = torch.complex128 if dtype == torch.float64 else torch.complex64
        with torch.no_grad():
            out = model(
                torch.as_tensor(kspace).to(ctype)[None],
                torch.tensor(mask.columns),
                mask.num_acs,
            )
        return out[0].numpy().astype(np.float64)
    raise InvalidInputError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


def evaluate(
    model: Optional[Union[VarNet, Checkpoint]],
    data: Union[str, Path, Sequence[Path]],
    mask_spec: str,
    method: Optional[str] = None,
    split: str = "val",
) -> MetricReport:
    """Score a reconstruction method on every volume of a dataset.

    Args:
        model: Network or checkpoint; None for the classical methods.
        data: Dataset root (the ``split`` subdirectory is used) or an
            explicit list of volume files.
        mask_spec: Mask applied to every slice; random masks use a fixed
            seed per (volume, slice).
        method: Reconstruction method; defaults to the model's variant.
            ``target`` scores the ground truth against itself.
    """
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    if method is None:
        if model is None:
            raise InvalidInputError("evaluate needs a model or an explicit method")
        method = model.variant
    paths = list_volumes(data, split) if isinstance(data, (str, Path)) else list(data)
    dataset = SliceDataset(paths, mask_spec, fixed_masks=True)
    was_training = model.training if model is not None else False
    if model is not None:
        model.eval()
    report = MetricReport(meta={"method": method, "mask": mask_spec})
    try:
        i = 0
        for vol in dataset.volumes:
            preds = []
            for s in range(vol.num_slices):
                item = dataset.item(i)
                if method == "target":
                    preds.append(vol.target_rss[s].astype(np.float64))
                else:
                    preds.append(reconstruct_slice(method, item["kspace"], item["mask"], model))
                i += 1
            report.add(VolumeMetrics.compute(vol.id, np.stack(preds), vol.target_rss))
    finally:
        if model is not None:
            model.train(was_training)
    return report


def run_ablation(
    base: TrainConfig,
    mask_specs: Sequence[str],
    models: Sequence[str] = VARIANTS,
    seeds: Sequence[int] = (0,),
    eval_split: str = "val",
    include_zero_filled: bool = False,
) -> List[Dict[str, Any]]:
    """Train and evaluate each model variant under each mask spec and seed.

    Returns one row per (mask, model) with the per-seed validation SSIM and
    their mean.
    """
    rows = []
    for spec in mask_specs:
        if include_zero_filled:
            report = evaluate(None, base.data_root, spec, method="zero-filled", split=eval_split)
            rows.append({"mask": spec, "model": "zero-filled", "ssim": [report.ssim], "mean_ssim": report.ssim})
        for variant in models:
            scores = []
            for seed in seeds:
                cfg = copy.deepcopy(base)
                cfg.mask = spec
                cfg.seed = seed
                cfg.model = CascadeConfig(variant, base.model.num_cascades, base.model.chans, base.model.pools)
                cfg.val_split = None
                cfg.out_dir = None
                result = train(cfg)
                model = model_from_checkpoint(result.last)
                scores.append(evaluate(model, base.data_root, spec, split=eval_split).ssim)
                logger.info("ablation %s %s seed=%d ssim=%.4f", spec, variant, seed, scores[-1])
            rows.append({"mask": spec, "model": variant, "ssim": scores, "mean_ssim": float(np.mean(scores))})
    return rows


def format_ablation_table(rows: Iterable[Dict[str, Any]]) -> str:
    """Table with one block of model rows per mask setting."""
    rows = list(rows)
    lines = [f"{'mask':<32} {'model':<12} {'SSIM':>8}  seeds"]
    last_mask = None
    for r in rows:
        mask = r["mask"] if r["mask"] != last_mask else ""
        if r["mask"] != last_mask and last_mask is not None:
            lines.append("-" * 64)
        last_mask = r["mask"]
        per_seed = ",".join(f"{s:.4f}" for s in r["ssim"])
        lines.append(f"{mask:<32} {r['model']:<12} {r['mean_ssim']:>8.4f}  {per_seed}")
    return "\n".join(lines) + "\n"

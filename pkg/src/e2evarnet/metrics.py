"""Image quality metrics and the SSIM training loss.

SSIM uses a 7x7 uniform window over valid positions only, sample
(unbiased) covariances, ``k1 = 0.01`` and ``k2 = 0.03``. Volumes
``(slices, H, W)`` are scored slice by slice and averaged, with one
``data_range`` (the target volume's maximum by default) for all slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view
from torch.nn import functional as F

from .errors import InvalidInputError

__all__ = [
    "WIN_SIZE",
    "K1",
    "K2",
    "ssim",
    "ssim_components",
    "ssim_torch",
    "ssim_loss",
    "nmse",
    "psnr",
    "VolumeMetrics",
    "MetricReport",
]

WIN_SIZE = 7
K1 = 0.01
K2 = 0.03


def _check_pair(x: np.ndarray, y: np.ndarray, data_range: Optional[float] = None) -> None:
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs {y.shape}")
    if data_range is not None and not data_range > 0:
        raise InvalidInputError(f"data_range must be positive, got {data_range}")


def _as_volume(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise InvalidInputError(f"expected an image (H, W) or volume (S, H, W), got shape {x.shape}")
    if x.shape[-1] < WIN_SIZE or x.shape[-2] < WIN_SIZE:
        raise InvalidInputError(f"images must be at least {WIN_SIZE}x{WIN_SIZE}, got {x.shape[-2:]}")
    return x


def ssim_components(x, y, data_range: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-window luminance and contrast-structure maps of a 2D pair.

    SSIM is the mean of their product.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_pair(x, y, data_range)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    np_ = WIN_SIZE * WIN_SIZE
    cov_norm = np_ / (np_ - 1)

    def mean(a):
        return sliding_window_view(a, (WIN_SIZE, WIN_SIZE)).mean(axis=(-2, -1))

    ux, uy = mean(x), mean(y)
    vx = cov_norm * (mean(x * x) - ux * ux)
    vy = cov_norm * (mean(y * y) - uy * uy)
    vxy = cov_norm * (mean(x * y) - ux * uy)
    luminance = (2 * ux * uy + c1) / (ux**2 + uy**2 + c1)
    contrast_structure = (2 * vxy + c2) / (vx + vy + c2)
    return luminance, contrast_structure


def ssim(pred, target, data_range: Optional[float] = None) -> float:
    """Mean SSIM of an image or a volume of slices.

    Args:
        pred: Reconstruction, ``(H, W)`` or ``(S, H, W)``.
        target: Ground truth of the same shape.
        data_range: Dynamic range; defaults to ``target.max()``.
    """
    pred, target = _as_volume(pred), _as_volume(target)
    _check_pair(pred, target)
    if data_range is None:
        data_range = float(target.max())
    _check_pair(pred, target, data_range)
    vals = []
    for p, t in zip(pred, target):
        lum, cs = ssim_components(p, t, data_range)
        vals.append((lum * cs).mean())
    return float(np.mean(vals))


def ssim_torch(pred: torch.Tensor, target: torch.Tensor, data_range) -> torch.Tensor:
    """Differentiable SSIM per image for batches ``(B, H, W)``; returns ``(B,)``.

    ``data_range`` is a scalar or a ``(B,)`` tensor.
    """
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    data_range = torch.as_tensor(data_range, dtype=pred.dtype, device=pred.device).reshape(-1, 1, 1, 1)
    if bool((data_range <= 0).any()):
        raise InvalidInputError("data_range must be positive")
    x, y = pred[:, None], target[:, None]
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    np_ = WIN_SIZE * WIN_SIZE
    cov_norm = np_ / (np_ - 1)

    def mean(a):
        return F.avg_pool2d(a, WIN_SIZE, stride=1)

    ux, uy = mean(x), mean(y)
    vx = cov_norm * (mean(x * x) - ux * ux)
    vy = cov_norm * (mean(y * y) - uy * uy)
    vxy = cov_norm * (mean(x * y) - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    return s.mean(dim=(1, 2, 3))


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, data_range=None) -> torch.Tensor:
    """Training loss ``-SSIM`` averaged over the batch."""
    if data_range is None:
        data_range = target.detach().reshape(target.shape[0] if target.ndim == 3 else 1, -1).amax(-1)
    return -ssim_torch(pred, target, data_range).mean()


def nmse(pred, target) -> float:
    """``||pred - target||^2 / ||target||^2``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    denom = float(np.sum(target**2))
    if denom == 0:
        raise InvalidInputError("nmse undefined for an all-zero target")
    return float(np.sum((pred - target) ** 2) / denom)


def psnr(pred, target, data_range: Optional[float] = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    if data_range is None:
        data_range = float(target.max())
    _check_pair(pred, target, data_range)
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0:
        return math.inf
    return float(10 * np.log10(data_range**2 / mse))


@dataclass
class VolumeMetrics:
    id: str
    ssim: float
    nmse: float
    psnr: float

    @classmethod
    def compute(cls, vol_id: str, pred, target) -> "VolumeMetrics":
        target = np.asarray(target, dtype=np.float64)
        data_range = float(target.max())
        return cls(vol_id, ssim(pred, target, data_range), nmse(pred, target), psnr(pred, target, data_range))


@dataclass
class MetricReport:
    """Per-volume metrics plus their means."""

    volumes: List[VolumeMetrics] = field(default_factory=list)
    meta: Dict[str, str] = field(default_factory=dict)

    def add(self, vol: VolumeMetrics) -> None:
        self.volumes.append(vol)

    def mean(self, name: str) -> float:
        vals = [getattr(v, name) for v in self.volumes]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def ssim(self) -> float:
        return self.mean("ssim")

    @property
    def nmse(self) -> float:
        return self.mean("nmse")

    @property
    def psnr(self) -> float:
        return self.mean("psnr")

    def to_text(self) -> str:
        """One ``id ssim nmse psnr`` line per volume and a ``MEAN`` footer."""
        lines = [f"{v.id}\t{v.ssim:.6f}\t{v.nmse:.6g}\t{v.psnr:.4f}" for v in self.volumes]
        lines.append(f"MEAN\t{self.ssim:.6f}\t{self.nmse:.6g}\t{self.psnr:.4f}\tn={len(self.volumes)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        report = cls()
        for line in text.strip().splitlines():
            parts = line.split("\t")
            if parts[0] == "MEAN":
                continue
            report.add(VolumeMetrics(parts[0], float(parts[1]), float(parts[2]), float(parts[3])))
        return report


def aggregate(items: Iterable[VolumeMetrics]) -> MetricReport:
    return MetricReport(list(items))

"""Sensitivity map estimation from the auto-calibration (ACS) columns.

The learned estimator keeps only the ACS block of the masked k-space, takes
each coil to image space, refines every coil image with one shared U-Net and
divides by the root-sum-of-squares so that ``sum_i |S_i|^2 = 1`` per pixel.
``classical_acs_maps`` is the fixed, non-learned counterpart used by the
baselines. Both read the ACS block through the same (optional) Hann window,
so an untrained estimator starts from the classical maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .errors import DegenerateInputError, InvalidInputError
from .kspace_core import Array, ifft2c, mask_columns, rss
from .masking import SamplingMask, acs_start
from .unet import NormUnet

__all__ = [
    "SmeConfig",
    "DSS_EPS",
    "CALIBRATION_PEAK",
    "dss_normalize",
    "acs_columns",
    "acs_kspace",
    "calibration_images",
    "classical_acs_maps",
    "SensitivityModel",
    "estimate_sensitivities",
]

DSS_EPS = 1e-12
# reference peak RSS of the raw classical maps; far above sqrt(DSS_EPS) so the
# floor only matters where the calibration image is exactly zero
CALIBRATION_PEAK = 1e12


@dataclass
class SmeConfig:
    """Size of the per-coil U-Net of the SME module and whether its ACS input is windowed."""

    chans: int = 8
    pools: int = 4
    apodize: bool = True

    def __post_init__(self):
        if self.chans < 1 or self.pools < 1:
            raise ValueError(f"SmeConfig needs chans >= 1 and pools >= 1, got {self}")


def dss_normalize(raw: Array, eps: float = DSS_EPS) -> Array:
    """Divide coil maps ``(..., N, H, W)`` by their root-sum-of-squares."""
    if isinstance(raw, torch.Tensor):
        denom = torch.sqrt((raw.abs() ** 2).sum(-3, keepdim=True) + eps)
    else:
        denom = np.sqrt((np.abs(raw) ** 2).sum(-3, keepdims=True) + eps)
    return raw / denom


def acs_columns(width: int, num_acs) -> np.ndarray:
    """Boolean ACS column mask; ``num_acs`` may be an int or a per-example sequence."""
    counts = np.atleast_1d(np.asarray(num_acs, dtype=np.int64))
    if (counts < 1).any():
        raise InvalidInputError("mask carries no ACS block; cannot estimate sensitivities")
    cols = np.zeros((len(counts), width), dtype=bool)
    for i, n in enumerate(counts):
        begin = acs_start(width, int(n))
        cols[i, begin : begin + n] = True
    return cols if np.ndim(num_acs) else cols[0]


def _num_acs(mask: Union[SamplingMask, int, np.ndarray, torch.Tensor]):
    if isinstance(mask, SamplingMask):
        if mask.num_acs < 1:
            raise InvalidInputError(f"{mask!r} carries no ACS metadata")
        return mask.num_acs
    if isinstance(mask, torch.Tensor):
        return mask.detach().cpu().numpy()
    return mask


def acs_kspace(kspace: Array, num_acs) -> Array:
    """Zero everything except the centered ACS block of ``num_acs`` columns."""
    cols = acs_columns(kspace.shape[-1], num_acs)
    out = mask_columns(kspace, cols)
    flat = (out == 0).reshape(tuple(out.shape[:-3]) + (-1,))
    if bool(flat.all(-1).any()):
        raise DegenerateInputError("ACS region of the k-space is all zero")
    return out


def _centered_hann(length: int, count: int) -> np.ndarray:
    win = np.zeros(length)
    begin = acs_start(length, count)
    # drop the zero end points so every calibration line contributes
    win[begin : begin + count] = np.hanning(count + 2)[1:-1]
    return win


def _calibration_window(num_acs, height: int, width: int) -> np.ndarray:
    """Separable Hann window over the ACS columns and a proportional row band."""
    counts = np.atleast_1d(np.asarray(num_acs, dtype=np.int64))
    win = np.zeros((len(counts), height, width))
    for i, n in enumerate(counts):
        rows = min(height, max(1, int(round(n * height / width))))
        win[i] = np.outer(_centered_hann(height, rows), _centered_hann(width, int(n)))
    return win if np.ndim(num_acs) else win[0]


def calibration_images(kspace: Array, num_acs, apodize: bool = True) -> Array:
    """Coil images ``F^-1 M_center k`` scaled to a peak RSS of 1.

    With ``apodize`` the ACS block is multiplied by a separable 2D Hann
    window (the row band has the same relative width as the ACS columns),
    which suppresses ringing from the truncated calibration data.
    """
    acs = acs_kspace(kspace, num_acs)
    if apodize:
        win = _calibration_window(num_acs, kspace.shape[-2], kspace.shape[-1])
        if np.ndim(num_acs):
            win = win[:, None]
        if isinstance(acs, torch.Tensor):
            win = torch.as_tensor(win, dtype=acs.real.dtype, device=acs.device)
        acs = acs * win
    images = ifft2c(acs, check=False)
    if isinstance(images, torch.Tensor):
        peak = rss(images).amax(dim=(-2, -1))
    else:
        peak = np.asarray(rss(images).max(axis=(-2, -1)))
    return images / peak[..., None, None, None]


def classical_acs_maps(kspace: Array, mask) -> Array:
    """Sensitivity maps from a windowed low-resolution calibration image.

    Each coil's calibration image is divided by the RSS. The images are first
    scaled to a peak RSS of ``CALIBRATION_PEAK`` so that even faint
    background leakage is normalized.

    Args:
        kspace: Masked k-space ``(N, H, W)`` or ``(B, N, H, W)``.
        mask: SamplingMask, or the ACS column count (int or per-example).
    """
    return dss_normalize(calibration_images(kspace, _num_acs(mask)) * CALIBRATION_PEAK)


class SensitivityModel(nn.Module):
    """Learned sensitivity estimator ``dSS . CNN . F^-1 . M_center``.

    The same U-Net is applied to every coil image independently, so the
    module works for any number of coils and is equivariant to coil order.
    The U-Net is residual with a zero-initialized output layer, so with
    ``apodize`` the untrained module returns ``classical_acs_maps``.
    """

    def __init__(self, chans: int = 8, num_pools: int = 4, apodize: bool = True):
        super().__init__()
        self.apodize = apodize
        self.norm_unet = NormUnet(chans, num_pools, residual=True)

    def forward(self, masked_kspace: torch.Tensor, num_acs) -> torch.Tensor:
        """
        Args:
            masked_kspace: Complex tensor ``(B, N, H, W)``.
            num_acs: ACS column count, an int or a ``(B,)`` sequence.

        Returns:
            Normalized sensitivity maps ``(B, N, H, W)``.
        """
        b, n, h, w = masked_kspace.shape
        if np.ndim(_num_acs(num_acs)) == 0:
            num_acs = [int(_num_acs(num_acs))] * b
        images = calibration_images(masked_kspace, _num_acs(num_acs), self.apodize).reshape(b * n, h, w)
        # dSS is scale invariant; a large fixed peak keeps faint background
        # leakage well above its epsilon
        images = self.norm_unet(images).reshape(b, n, h, w) * CALIBRATION_PEAK
        return dss_normalize(images)


def estimate_sensitivities(
    kspace: Array,
    mask: SamplingMask,
    cfg: Optional[SmeConfig] = None,
    model: Optional[SensitivityModel] = None,
) -> Array:
    """Estimate maps for one slice ``(N, H, W)`` with a (possibly untrained) SME module.

    Either ``model`` or ``cfg`` must be given; a fresh model is built from
    ``cfg`` otherwise. Numpy input gives numpy output.
    """
    if model is None:
        model = SensitivityModel(**_cfg_kwargs(cfg or SmeConfig()))
    if not isinstance(mask, SamplingMask) or mask.num_acs < 1:
        raise InvalidInputError("estimate_sensitivities needs a SamplingMask with ACS metadata")
    is_np = not isinstance(kspace, torch.Tensor)
    param = next(model.parameters())
    k = torch.as_tensor(kspace).to(torch.complex128 if param.dtype == torch.float64 else torch.complex64)
    with torch.no_grad():
        maps = model(k[None], mask.num_acs)[0]
    return maps.numpy() if is_np else maps


def _cfg_kwargs(cfg: SmeConfig) -> dict:
    return {"chans": cfg.chans, "num_pools": cfg.pools, "apodize": cfg.apodize}

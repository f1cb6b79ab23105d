"""Unrolled variational network: cascades, variants and full-model assembly.

Each k-space cascade refines the current multi-coil k-space estimate with

    k_next = k - eta * M (k - k_ref) + F E CNN(R F^-1 k)

where ``E``/``R`` expand/reduce with sensitivity maps and ``M`` is the column
mask. After the last cascade the coil images are combined by RSS.

Variants:
    ``e2e``  k-space cascades, maps from the learned SME module.
    ``vnuk`` k-space cascades, fixed classical ACS maps.
    ``vnu``  image-space cascades ``x - eta A^*(A x - k_ref) + CNN(x)`` with
             classical maps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError
from .kspace_core import adjoint_A, expand, fft2c, forward_A, ifft2c, mask_columns, reduce, rss
from .masking import SamplingMask, format_mask_spec
from .sme import SensitivityModel, SmeConfig, classical_acs_maps
from .unet import NormUnet, ZeroNet

__all__ = [
    "VARIANTS",
    "CascadeConfig",
    "ReconResult",
    "refinement_G",
    "dc_term",
    "cascade_step",
    "VarNetBlock",
    "ImageVarNetBlock",
    "VarNet",
    "build_model",
    "zero_regularizers",
    "count_parameters",
    "parameter_breakdown",
    "e2e_varnet_forward",
]

VARIANTS = ("vnu", "vnuk", "e2e")


@dataclass
class CascadeConfig:
    """Architecture of the unrolled network.

    With ``num_cascades=12, chans=18, pools=4`` the cascades hold about
    29.5M parameters; the default SME (``chans=8, pools=4``) adds about 0.5M.
    """

    variant: str = "e2e"
    num_cascades: int = 12
    chans: int = 18
    pools: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_cascades < 1:
            raise ValueError(f"num_cascades must be >= 1, got {self.num_cascades}")
        if self.chans < 1 or self.pools < 1:
            raise ValueError(f"chans and pools must be >= 1, got {self.chans}, {self.pools}")


@dataclass
class ReconResult:
    """Magnitude reconstruction plus where it came from."""

    image: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)


def refinement_G(kspace, maps, cnn) -> torch.Tensor:
    """``F E CNN(R F^-1 k)`` for multi-coil k-space ``(B, N, H, W)``."""
    image = reduce(ifft2c(kspace, check=False), maps)
    return fft2c(expand(cnn(image), maps), check=False)


def dc_term(kspace, ref_kspace, mask, eta):
    """``eta * M (k - k_ref)``: nonzero only on sampled columns."""
    return eta * mask_columns(kspace - ref_kspace, mask)


def cascade_step(kspace, ref_kspace, mask, maps, eta, cnn):
    """One k-space cascade: ``k - dc_term + refinement_G``."""
    return kspace - dc_term(kspace, ref_kspace, mask, eta) + refinement_G(kspace, maps, cnn)


class VarNetBlock(nn.Module):
    """k-space cascade with its own CNN and learned step size ``eta``."""

    def __init__(self, model: nn.Module, eta: float = 1.0):
        super().__init__()
        self.model = model
        self.eta = nn.Parameter(torch.tensor(float(eta)))

    def forward(self, kspace, ref_kspace, mask, maps):
        return cascade_step(kspace, ref_kspace, mask, maps, self.eta, self.model)


class ImageVarNetBlock(nn.Module):
    """Image-space cascade: ``x - eta A^*(A x - k_ref) + CNN(x)``."""

    def __init__(self, model: nn.Module, eta: float = 1.0):
        super().__init__()
        self.model = model
        self.eta = nn.Parameter(torch.tensor(float(eta)))

    def forward(self, image, ref_kspace, mask, maps):
        residual = forward_A(image, maps, mask) - ref_kspace
        return image - self.eta * adjoint_A(residual, maps, mask) + self.model(image)


class VarNet(nn.Module):
    """Full reconstruction network for one of the ``vnu``/``vnuk``/``e2e`` variants.

    Args:
        cfg: Cascade architecture and variant.
        sme_cfg: SME architecture; only used by the ``e2e`` variant.
    """

    def __init__(self, cfg: CascadeConfig, sme_cfg: Optional[SmeConfig] = None):
        super().__init__()
        self.cfg = cfg
        self.sme_cfg = sme_cfg or SmeConfig()
        block = ImageVarNetBlock if cfg.variant == "vnu" else VarNetBlock
        self.cascades = nn.ModuleList(
            [block(NormUnet(cfg.chans, cfg.pools)) for _ in range(cfg.num_cascades)]
        )
        self.sens_net = (
            SensitivityModel(self.sme_cfg.chans, self.sme_cfg.pools, self.sme_cfg.apodize)
            if cfg.variant == "e2e"
            else None
        )

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def sensitivity_maps(self, masked_kspace: torch.Tensor, num_acs) -> torch.Tensor:
        if self.sens_net is not None:
            return self.sens_net(masked_kspace, num_acs)
        with torch.no_grad():
            return classical_acs_maps(masked_kspace, num_acs)

    def forward(
        self,
        masked_kspace: torch.Tensor,
        mask: torch.Tensor,
        num_acs,
        maps: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        Args:
            masked_kspace: Complex tensor ``(B, N, H, W)``, already masked.
            mask: Boolean column masks ``(B, W)`` or ``(W,)``.
            num_acs: ACS column count, an int or one per example.
            maps: Fixed sensitivity maps ``(B, N, H, W)`` overriding the
                variant's own map source.

        Returns:
            Real RSS magnitude images ``(B, H, W)``.
        """
        if masked_kspace.ndim != 4 or not masked_kspace.is_complex():
            raise InvalidInputError(
                f"expected complex (B, N, H, W) k-space, got {masked_kspace.dtype} {tuple(masked_kspace.shape)}"
            )
        if maps is None:
            maps = self.sensitivity_maps(masked_kspace, num_acs)
        elif maps.shape != masked_kspace.shape:
            raise InvalidInputError(
                f"maps shape {tuple(maps.shape)} does not match k-space {tuple(masked_kspace.shape)}"
            )

        if self.variant == "vnu":
            image = adjoint_A(masked_kspace, maps, mask)
            for cascade in self.cascades:
                image = cascade(image, masked_kspace, mask, maps)
            return image.abs()

        kspace = masked_kspace.clone()
        for cascade in self.cascades:
            kspace = cascade(kspace, masked_kspace, mask, maps)
        return rss(ifft2c(kspace, check=False))


def build_model(cfg: CascadeConfig, sme_cfg: Optional[SmeConfig] = None) -> VarNet:
    return VarNet(cfg, sme_cfg)


def zero_regularizers(model: VarNet) -> VarNet:
    """Replace every cascade CNN with one that outputs zeros (in place)."""
    for cascade in model.cascades:
        cascade.model = ZeroNet()
    return model


def parameter_breakdown(model_or_cfg, sme_cfg: Optional[SmeConfig] = None) -> Dict[str, int]:
    """Trainable parameter counts: ``cascades`` (CNNs and step sizes), ``sme`` and ``total``."""
    model = model_or_cfg if isinstance(model_or_cfg, nn.Module) else VarNet(model_or_cfg, sme_cfg)
    cascades = sum(p.numel() for p in model.cascades.parameters())
    sme = sum(p.numel() for p in model.sens_net.parameters()) if model.sens_net is not None else 0
    return {"cascades": cascades, "sme": sme, "total": cascades + sme}


def count_parameters(model_or_cfg, sme_cfg: Optional[SmeConfig] = None) -> int:
    return parameter_breakdown(model_or_cfg, sme_cfg)["total"]


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype if any(True for _ in model.parameters()) else torch.float32


def e2e_varnet_forward(
    kspace,
    mask: SamplingMask,
    model: VarNet,
    maps=None,
) -> ReconResult:
    """Reconstruct one masked slice ``(N, H, W)`` and return a ReconResult.

    Fixed ``maps`` may be supplied for the classical-map variants; their coil
    count must match the k-space.
    """
    kspace_t = torch.as_tensor(np.asarray(kspace) if not isinstance(kspace, torch.Tensor) else kspace)
    if kspace_t.ndim != 3:
        raise InvalidInputError(f"expected one (N, H, W) slice, got shape {tuple(kspace_t.shape)}")
    if maps is not None and tuple(np.shape(maps)) != tuple(kspace_t.shape):
        raise InvalidInputError(
            f"coil count mismatch: k-space {tuple(kspace_t.shape)} vs fixed maps {tuple(np.shape(maps))}"
        )
    ctype = torch.complex128 if _model_dtype(model) == torch.float64 else torch.complex64
    kspace_t = mask_columns(kspace_t.to(ctype), mask)
    cols = torch.tensor(mask.columns)
    maps_t = None if maps is None else torch.as_tensor(maps).to(ctype)[None]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            image = model(kspace_t[None], cols, mask.num_acs, maps_t)[0]
    finally:
        model.train(was_training)
    meta = {
        "model": model.variant,
        "config": asdict(model.cfg),
        "mask": format_mask_spec(mask),
        "acceleration": mask.acceleration,
    }
    return ReconResult(image.numpy(), meta)

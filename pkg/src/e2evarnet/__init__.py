"""Multi-coil MRI reconstruction with unrolled variational networks.

Modules:
    kspace_core: centered FFTs, coil expand/reduce, the forward model and
        gradient-descent compressed sensing.
    masking: Cartesian column masks (equispaced, random, full).
    sme: learned and classical sensitivity map estimation.
    cascades: k-space and image-space cascades, the full networks.
    metrics: SSIM/NMSE/PSNR and the SSIM loss.
    data: synthetic phantoms, coil maps and HDF5 volumes.
    training: training loop, checkpoints, evaluation and ablations.
    postprocess: brightness-adaptive dithering.
    cli: the ``e2evarnet`` command.
"""

from .cascades import CascadeConfig, ReconResult, VarNet, build_model, e2e_varnet_forward, parameter_breakdown
from .errors import (
    CheckpointError,
    ConfigMismatchError,
    DegenerateInputError,
    DivergenceError,
    IngestError,
    InvalidInputError,
    InvalidParamsError,
    ReconError,
)
from .kspace_core import adjoint_A, cs_gradient_descent, fft2c, forward_A, ifft2c, rss, zero_filled
from .masking import SamplingMask, equispaced_mask, full_mask, mask_from_spec, random_mask
from .metrics import MetricReport, nmse, psnr, ssim, ssim_loss
from .postprocess import dither
from .sme import SmeConfig, classical_acs_maps, dss_normalize, estimate_sensitivities

__all__ = [
    "CascadeConfig",
    "ReconResult",
    "VarNet",
    "build_model",
    "e2e_varnet_forward",
    "parameter_breakdown",
    "CheckpointError",
    "ConfigMismatchError",
    "DegenerateInputError",
    "DivergenceError",
    "IngestError",
    "InvalidInputError",
    "InvalidParamsError",
    "ReconError",
    "adjoint_A",
    "cs_gradient_descent",
    "fft2c",
    "forward_A",
    "ifft2c",
    "rss",
    "zero_filled",
    "SamplingMask",
    "equispaced_mask",
    "full_mask",
    "mask_from_spec",
    "random_mask",
    "MetricReport",
    "nmse",
    "psnr",
    "ssim",
    "ssim_loss",
    "dither",
    "SmeConfig",
    "classical_acs_maps",
    "dss_normalize",
    "estimate_sensitivities",
]

__version__ = "0.1.0"

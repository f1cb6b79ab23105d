"""Linear operators of the multi-coil Cartesian acquisition model.

Every function accepts either numpy arrays or torch tensors and returns the
same kind it was given, so the network and the classical solvers share one
set of operators. Coil images and k-space are laid out as ``(..., N, H, W)``;
single images as ``(..., H, W)``. Masks select columns along the last axis.

FFT convention: centered (zero frequency at ``H // 2, W // 2``) and
orthonormal.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from .errors import DivergenceError, InvalidInputError

Array = Union[np.ndarray, torch.Tensor]

__all__ = [
    "fft2c",
    "ifft2c",
    "expand",
    "reduce",
    "rss",
    "complex_abs",
    "mask_columns",
    "forward_A",
    "adjoint_A",
    "zero_filled",
    "cs_gradient_descent",
    "tikhonov_gradient",
    "no_regularizer",
]


def _is_torch(x: Array) -> bool:
    return isinstance(x, torch.Tensor)


def _check_finite(x: Array, name: str) -> None:
    ok = bool(torch.isfinite(x).all()) if _is_torch(x) else bool(np.isfinite(x).all())
    if not ok:
        raise InvalidInputError(f"{name} contains non-finite values")


def _check_2d(x: Array, name: str) -> None:
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise InvalidInputError(f"{name} must have at least 2 dims, got shape {tuple(x.shape)}")


def fft2c(img: Array, check: bool = True) -> Array:
    """Centered orthonormal 2D FFT over the last two axes."""
    _check_2d(img, "image")
    if check:
        _check_finite(img, "image")
    if _is_torch(img):
        dims = (-2, -1)
        x = torch.fft.ifftshift(img, dim=dims)
        x = torch.fft.fft2(x, dim=dims, norm="ortho")
        return torch.fft.fftshift(x, dim=dims)
    axes = (-2, -1)
    x = np.fft.ifftshift(img, axes=axes)
    x = np.fft.fft2(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def ifft2c(ksp: Array, check: bool = True) -> Array:
    """Centered orthonormal 2D inverse FFT over the last two axes."""
    _check_2d(ksp, "k-space")
    if check:
        _check_finite(ksp, "k-space")
    if _is_torch(ksp):
        dims = (-2, -1)
        x = torch.fft.ifftshift(ksp, dim=dims)
        x = torch.fft.ifft2(x, dim=dims, norm="ortho")
        return torch.fft.fftshift(x, dim=dims)
    axes = (-2, -1)
    x = np.fft.ifftshift(ksp, axes=axes)
    x = np.fft.ifft2(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def _check_maps(shape: Sequence[int], maps: Array, coil_axis_present: bool) -> None:
    img_hw = tuple(shape[-2:])
    if tuple(maps.shape[-2:]) != img_hw:
        raise InvalidInputError(
            f"sensitivity maps spatial shape {tuple(maps.shape[-2:])} does not match {img_hw}"
        )
    if maps.ndim < 3:
        raise InvalidInputError("sensitivity maps must be (..., N, H, W)")
    if coil_axis_present and shape[-3] != maps.shape[-3]:
        raise InvalidInputError(
            f"coil count mismatch: data has {shape[-3]} coils, maps have {maps.shape[-3]}"
        )


def expand(x: Array, maps: Array) -> Array:
    """Per-coil images ``S_i * x`` from a single image ``x``."""
    _check_maps(x.shape, maps, coil_axis_present=False)
    return maps * x[..., None, :, :]


def reduce(coil_imgs: Array, maps: Array) -> Array:
    """Combine coil images with conjugate sensitivities: ``sum_i conj(S_i) * x_i``."""
    _check_maps(coil_imgs.shape, maps, coil_axis_present=True)
    return (maps.conj() * coil_imgs).sum(-3)


def complex_abs(x: Array) -> Array:
    return x.abs() if _is_torch(x) else np.abs(x)


def rss(coil_imgs: Array, coil_dim: int = -3) -> Array:
    """Root-sum-of-squares over the coil axis. Output is real and nonnegative."""
    if _is_torch(coil_imgs):
        return torch.sqrt((coil_imgs.abs() ** 2).sum(coil_dim))
    return np.sqrt((np.abs(coil_imgs) ** 2).sum(coil_dim))


def mask_columns(ksp: Array, columns) -> Array:
    """Zero every k-space column where ``columns`` is false.

    ``columns`` is a boolean vector of length W (one mask for all coils), a
    ``(B, W)`` batch of masks for ``(B, N, H, W)`` k-space, or a SamplingMask.
    """
    columns = getattr(columns, "columns", columns)
    if columns.shape[-1] != ksp.shape[-1]:
        raise InvalidInputError(
            f"mask width {columns.shape[-1]} does not match k-space width {ksp.shape[-1]}"
        )
    if columns.ndim > 1:
        columns = columns.reshape(tuple(columns.shape[:-1]) + (1, 1, columns.shape[-1]))
    if _is_torch(ksp):
        if not isinstance(columns, torch.Tensor):
            columns = torch.from_numpy(np.array(columns, dtype=bool))
        col = columns.to(device=ksp.device, dtype=torch.bool)
        return torch.where(col, ksp, torch.zeros((), dtype=ksp.dtype, device=ksp.device))
    return np.where(np.asarray(columns, dtype=bool), ksp, 0).astype(ksp.dtype, copy=False)


def forward_A(x: Array, maps: Array, mask) -> Array:
    """Forward operator ``M F E``: image to masked multi-coil k-space."""
    return mask_columns(fft2c(expand(x, maps)), mask)


def adjoint_A(ksp: Array, maps: Array, mask) -> Array:
    """Adjoint operator ``R F^-1 M``: masked multi-coil k-space to image."""
    return reduce(ifft2c(mask_columns(ksp, mask)), maps)


def zero_filled(ksp: Array) -> Array:
    """Zero-filled RSS image of (already masked) multi-coil k-space."""
    return rss(ifft2c(ksp))


def _l2(x: Array) -> float:
    if _is_torch(x):
        return float(torch.linalg.vector_norm(x))
    return float(np.linalg.norm(x.ravel()))


def no_regularizer(x: Array) -> Array:
    return x * 0


def tikhonov_gradient(x: Array) -> Array:
    """Gradient of ``0.5 * ||x||^2``."""
    return x


def cs_gradient_descent(
    kspace: Array,
    maps: Array,
    mask,
    lam: float = 0.0,
    step: Union[float, Sequence[float], Callable[[int], float]] = 1.0,
    reg_grad: Optional[Callable[[Array], Array]] = None,
    steps: int = 10,
    callback: Optional[Callable[[int, Array], None]] = None,
) -> Array:
    """Gradient descent on ``0.5 ||A x - k||^2 + lam * Psi(x)``.

    Starts from the adjoint (zero-filled) image and applies
    ``x <- x - step_t * (A^*(A x - k) + lam * reg_grad(x))``.

    Args:
        kspace: Masked multi-coil k-space, ``(N, H, W)``.
        maps: Sensitivity maps, ``(N, H, W)``.
        mask: Column mask (SamplingMask or boolean vector).
        lam: Regularization weight.
        step: Constant step size, a per-iteration sequence, or a callable of
            the iteration index.
        reg_grad: Gradient of the regularizer. Defaults to zero.
        steps: Number of iterations.
        callback: Called as ``callback(t, x)`` after each iteration.

    Returns:
        The complex image after ``steps`` iterations.
    """
    if steps < 0:
        raise InvalidInputError(f"steps must be >= 0, got {steps}")
    reg_grad = reg_grad or no_regularizer

    def eta(t: int) -> float:
        if callable(step):
            value = step(t)
        elif isinstance(step, (int, float)):
            value = step
        else:
            value = step[t]
        if not value > 0:
            raise InvalidInputError(f"step size must be positive, got {value} at step {t}")
        return float(value)

    x = adjoint_A(kspace, maps, mask)
    # all-zero start: any finite iterate is acceptable
    limit = 1e6 * _l2(x) or np.inf
    for t in range(steps):
        grad = adjoint_A(forward_A(x, maps, mask) - kspace, maps, mask) + lam * reg_grad(x)
        x = x - eta(t) * grad
        norm = _l2(x)
        if not np.isfinite(norm) or norm > limit:
            raise DivergenceError(f"gradient descent diverged at step {t}: |x| = {norm:.3e}")
        if callback is not None:
            callback(t, x)
    return x

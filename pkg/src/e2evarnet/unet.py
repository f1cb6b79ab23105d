"""U-Net used as the learned regularizer in every cascade and in the SME module."""

from __future__ import annotations

from typing import List, Tuple

import torch
from torch import nn
from torch.nn import functional as F


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by instance norm and LeakyReLU."""

    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.LeakyReLU(negative_slope=0.2),
            nn.Conv2d(out_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.LeakyReLU(negative_slope=0.2),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.layers(image)


class TransposeConvBlock(nn.Module):
    """2x upsampling by transposed convolution, instance norm and LeakyReLU."""

    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.ConvTranspose2d(in_chans, out_chans, kernel_size=2, stride=2, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.LeakyReLU(negative_slope=0.2),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.layers(image)


class Unet(nn.Module):
    """Encoder-decoder with skip connections and average-pool downsampling.

    Args:
        in_chans: Number of input channels.
        out_chans: Number of output channels.
        chans: Channels after the first convolution; doubled at each level.
        num_pool_layers: Number of down- and up-sampling levels.
    """

    def __init__(self, in_chans: int, out_chans: int, chans: int = 32, num_pool_layers: int = 4):
        super().__init__()
        if chans < 1 or num_pool_layers < 1:
            raise ValueError(f"invalid U-Net size chans={chans}, pools={num_pool_layers}")
        self.in_chans = in_chans
        self.out_chans = out_chans
        self.chans = chans
        self.num_pool_layers = num_pool_layers

        self.down_sample_layers = nn.ModuleList([ConvBlock(in_chans, chans)])
        ch = chans
        for _ in range(num_pool_layers - 1):
            self.down_sample_layers.append(ConvBlock(ch, ch * 2))
            ch *= 2
        self.conv = ConvBlock(ch, ch * 2)

        self.up_conv = nn.ModuleList()
        self.up_transpose_conv = nn.ModuleList()
        for _ in range(num_pool_layers):
            self.up_transpose_conv.append(TransposeConvBlock(ch * 2, ch))
            self.up_conv.append(ConvBlock(ch * 2, ch))
            ch //= 2
        self.final = nn.Conv2d(chans, out_chans, kernel_size=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Map ``(B, in_chans, H, W)`` to ``(B, out_chans, H, W)``.

        H and W must be divisible by ``2 ** num_pool_layers``.
        """
        stack = []
        output = image
        for layer in self.down_sample_layers:
            output = layer(output)
            stack.append(output)
            output = F.avg_pool2d(output, kernel_size=2, stride=2)

        output = self.conv(output)

        for transpose_conv, conv in zip(self.up_transpose_conv, self.up_conv):
            skip = stack.pop()
            output = transpose_conv(output)
            output = torch.cat([output, skip], dim=1)
            output = conv(output)
        return self.final(output)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> Tuple[torch.Tensor, Tuple[List[int], List[int], int, int]]:
    """Zero-pad the last two dims symmetrically up to a multiple of ``multiple``."""
    _, _, h, w = x.shape
    h_mult = -(-h // multiple) * multiple
    w_mult = -(-w // multiple) * multiple
    w_pad = [(w_mult - w) // 2, (w_mult - w) - (w_mult - w) // 2]
    h_pad = [(h_mult - h) // 2, (h_mult - h) - (h_mult - h) // 2]
    x = F.pad(x, w_pad + h_pad)
    return x, (h_pad, w_pad, h_mult, w_mult)


def unpad(x: torch.Tensor, h_pad: List[int], w_pad: List[int], h_mult: int, w_mult: int) -> torch.Tensor:
    return x[..., h_pad[0] : h_mult - h_pad[1], w_pad[0] : w_mult - w_pad[1]]


class NormUnet(nn.Module):
    """U-Net acting on complex images.

    The complex input is split into real/imaginary channels, shifted and
    scaled by its per-instance mean and standard deviation, padded to a size
    the U-Net accepts, and all of this is undone on the output.

    Input and output are complex tensors of shape ``(B, H, W)``.

    With ``residual=True`` the U-Net predicts a correction that is added to
    its (normalized) input, and its last layer starts at zero so the module
    is the identity at initialization.
    """

    def __init__(self, chans: int, num_pools: int, residual: bool = False):
        super().__init__()
        self.num_pools = num_pools
        self.residual = residual
        self.unet = Unet(in_chans=2, out_chans=2, chans=chans, num_pool_layers=num_pools)
        if residual:
            nn.init.zeros_(self.unet.final.weight)
            nn.init.zeros_(self.unet.final.bias)

    @staticmethod
    def complex_to_chan_dim(x: torch.Tensor) -> torch.Tensor:
        return torch.stack([x.real, x.imag], dim=1)

    @staticmethod
    def chan_dim_to_complex(x: torch.Tensor) -> torch.Tensor:
        return torch.complex(x[:, 0], x[:, 1])

    @staticmethod
    def norm(x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mean = x.mean(dim=(-2, -1), keepdim=True)
        std = x.std(dim=(-2, -1), keepdim=True) + 1e-12
        return (x - mean) / std, mean, std

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not x.is_complex() or x.ndim != 3:
            raise ValueError(f"NormUnet expects a complex (B, H, W) tensor, got {x.dtype} {tuple(x.shape)}")
        x = self.complex_to_chan_dim(x)
        x, mean, std = self.norm(x)
        x, pad_sizes = pad_to_multiple(x, 2 ** self.num_pools)
        x = self.unet(x) + x if self.residual else self.unet(x)
        x = unpad(x, *pad_sizes)
        return self.chan_dim_to_complex(x * std + mean)


class ZeroNet(nn.Module):
    """Regularizer that outputs zeros; turns a cascade into pure data consistency."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.zeros_like(x)


class IdentityNet(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x

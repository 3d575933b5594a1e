"""Standard and depthwise-separable residual blocks.

The functional forms take explicit weight tensors so they can be checked
against direct-convolution oracles and finite differences; the
``nn.Module`` wrappers own the parameters during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .costmodel import separated_weights

INIT_STD = 0.02


def _batched(x):
    return (x.unsqueeze(0), True) if x.dim() == 3 else (x, False)


def _norm(x, affine, eps=1e-5):
    if affine is None:
        return x
    gamma, beta = affine
    return F.instance_norm(x, weight=gamma, bias=beta, eps=eps)


@dataclass
class SeparatedConvUnit:
    """Depthwise ``(C, K, K)`` kernels followed by a pointwise ``(C_o, C_i)`` matrix."""

    depthwise_kernel: torch.Tensor
    pointwise_kernel: torch.Tensor
    bias: torch.Tensor | None = None
    norm: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.depthwise_kernel.dim() != 3 or self.pointwise_kernel.dim() != 2:
            raise ValueError("depthwise kernel must be (C,K,K), pointwise (C_o,C_i)")
        if self.depthwise_kernel.shape[0] != self.pointwise_kernel.shape[1]:
            raise ValueError(
                f"depthwise has {self.depthwise_kernel.shape[0]} channels, "
                f"pointwise expects {self.pointwise_kernel.shape[1]}")

    @property
    def kernel(self) -> int:
        return self.depthwise_kernel.shape[-1]

    @property
    def in_channels(self) -> int:
        return self.pointwise_kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.pointwise_kernel.shape[0]

    def num_weights(self) -> int:
        return self.depthwise_kernel.numel() + self.pointwise_kernel.numel()


def decompose_conv(kernel: int, c_in: int, c_out: int, generator=None,
                   dtype=torch.float32) -> SeparatedConvUnit:
    """Fresh separable replacement for a ``kernel x kernel`` ``c_in -> c_out`` conv.

    This re-architects the layer; no weights are carried over.
    """
    if kernel < 1 or c_in < 1 or c_out < 1:
        raise ValueError("kernel and channel counts must be >= 1")
    dw = torch.randn(c_in, kernel, kernel, generator=generator, dtype=dtype) * INIT_STD
    pw = torch.randn(c_out, c_in, generator=generator, dtype=dtype) * INIT_STD
    unit = SeparatedConvUnit(dw, pw)
    assert unit.num_weights() == separated_weights(kernel, c_in, c_out)
    return unit


def separated_conv(x, depthwise, pointwise, bias=None):
    """Depthwise KxK (zero padded, stride 1) then pointwise 1x1."""
    c, k = depthwise.shape[0], depthwise.shape[-1]
    if x.shape[-3] != c:
        raise ValueError(f"input has {x.shape[-3]} channels, unit expects {c}")
    x = F.conv2d(x, depthwise.reshape(c, 1, k, k), padding=k // 2, groups=c)
    return F.conv2d(x, pointwise[:, :, None, None], bias)


def standard_res_forward(x, w1, w2, norm1=None, norm2=None):
    """``x + IN(conv(relu(IN(conv(x)))))`` for ``(C,H,W)`` or ``(N,C,H,W)`` input.

    ``norm1``/``norm2`` are ``(gamma, beta)`` pairs; ``None`` bypasses the norm.
    """
    x, unbatched = _batched(x)
    if x.shape[1] != w1.shape[1] or w2.shape[0] != x.shape[1]:
        raise ValueError(f"block weights do not match {x.shape[1]} input channels")
    h = F.conv2d(x, w1, padding=w1.shape[-1] // 2)
    h = F.relu(_norm(h, norm1))
    h = _norm(F.conv2d(h, w2, padding=w2.shape[-1] // 2), norm2)
    out = x + h
    return out.squeeze(0) if unbatched else out


def separated_res_forward(x, unit1: SeparatedConvUnit, unit2: SeparatedConvUnit,
                          norm1=None, norm2=None):
    """Same silhouette as the standard block with each conv made separable."""
    x, unbatched = _batched(x)
    if unit1.in_channels != x.shape[1] or unit2.out_channels != x.shape[1]:
        raise ValueError(f"block units do not match {x.shape[1]} input channels")
    h = separated_conv(x, unit1.depthwise_kernel, unit1.pointwise_kernel, unit1.bias)
    h = F.relu(_norm(h, norm1))
    h = separated_conv(h, unit2.depthwise_kernel, unit2.pointwise_kernel, unit2.bias)
    out = x + _norm(h, norm2)
    return out.squeeze(0) if unbatched else out


def _affine(channels):
    return nn.Parameter(torch.ones(channels)), nn.Parameter(torch.zeros(channels))


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3, norm: bool = True):
        super().__init__()
        shape = (channels, channels, kernel, kernel)
        self.w1 = nn.Parameter(torch.randn(shape) * INIT_STD)
        self.w2 = nn.Parameter(torch.randn(shape) * INIT_STD)
        self.use_norm = norm
        if norm:
            self.g1, self.b1 = _affine(channels)
            self.g2, self.b2 = _affine(channels)

    def forward(self, x):
        norms = ((self.g1, self.b1), (self.g2, self.b2)) if self.use_norm else (None, None)
        return standard_res_forward(x, self.w1, self.w2, *norms)


class SeparatedResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3, norm: bool = True):
        super().__init__()
        self.dw1 = nn.Parameter(torch.randn(channels, kernel, kernel) * INIT_STD)
        self.pw1 = nn.Parameter(torch.randn(channels, channels) * INIT_STD)
        self.dw2 = nn.Parameter(torch.randn(channels, kernel, kernel) * INIT_STD)
        self.pw2 = nn.Parameter(torch.randn(channels, channels) * INIT_STD)
        self.use_norm = norm
        if norm:
            self.g1, self.b1 = _affine(channels)
            self.g2, self.b2 = _affine(channels)

    def units(self):
        return SeparatedConvUnit(self.dw1, self.pw1), SeparatedConvUnit(self.dw2, self.pw2)

    def forward(self, x):
        norms = ((self.g1, self.b1), (self.g2, self.b2)) if self.use_norm else (None, None)
        return separated_res_forward(x, *self.units(), *norms)

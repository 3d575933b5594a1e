"""Torch generators built from a ``GeneratorSpec``."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import INIT_STD, ResBlock, SeparatedResBlock
from .netspec import GeneratorSpec, LayerSpec


def _padding(kernel, stride):
    # output size is exactly H/stride (conv) or H*stride (deconv)
    return (kernel - stride + 1) // 2


class ConvLayer(nn.Module):
    def __init__(self, layer: LayerSpec):
        super().__init__()
        k, s = layer.kernel, layer.stride
        pad = _padding(k, s)
        mods: list[nn.Module] = []
        if layer.kind == "deconv":
            mods.append(nn.ConvTranspose2d(layer.in_channels, layer.out_channels, k, s, pad,
                                           output_padding=s - k + 2 * pad, bias=layer.has_bias))
        elif k == 7 and s == 1:
            mods += [nn.ReflectionPad2d(pad),
                     nn.Conv2d(layer.in_channels, layer.out_channels, k, s, bias=layer.has_bias)]
        else:
            mods.append(nn.Conv2d(layer.in_channels, layer.out_channels, k, s, pad,
                                  bias=layer.has_bias))
        if layer.norm == "instance":
            mods.append(nn.InstanceNorm2d(layer.out_channels, affine=True))
        if layer.activation == "relu":
            mods.append(nn.ReLU(inplace=True))
        elif layer.activation == "tanh":
            mods.append(nn.Tanh())
        self.body = nn.Sequential(*mods)

    def forward(self, x):
        return self.body(x)


def build_layer(layer: LayerSpec) -> nn.Module:
    if layer.kind == "res_block":
        return ResBlock(layer.in_channels, layer.kernel)
    if layer.kind == "separated_res_block":
        return SeparatedResBlock(layer.in_channels, layer.kernel)
    return ConvLayer(layer)


class Generator(nn.Module):
    """Dual-input, dual-output makeup generator.

    ``forward(src, ref)`` returns ``(src wearing ref's makeup, ref with makeup removed)``.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.branch_src = nn.ModuleList(build_layer(l) for l in spec.branch_src)
        self.branch_ref = nn.ModuleList(build_layer(l) for l in spec.branch_ref)
        self.trunk = nn.Sequential(*(build_layer(l) for l in spec.trunk))
        self.head_makeup = nn.Sequential(*(build_layer(l) for l in spec.head_makeup))
        self.head_demakeup = nn.Sequential(*(build_layer(l) for l in spec.head_demakeup))
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(m.weight, 0.0, INIT_STD)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.InstanceNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, (ResBlock, SeparatedResBlock)):
                for name, p in m.named_parameters():
                    if name.startswith("g"):
                        nn.init.ones_(p)
                    elif name.startswith("b"):
                        nn.init.zeros_(p)
                    else:
                        nn.init.normal_(p, 0.0, INIT_STD)

    @staticmethod
    def _run_branch(layers, x, taps):
        for layer in layers:
            x = layer(x)
            if taps is not None:
                taps.append(x)
        return x

    def encode(self, src, ref, with_features=False):
        """Merged encoder output, plus per-layer branch outputs if requested.

        Features come back as ``{"src": [...], "ref": [...]}``, one tensor
        per branch layer.
        """
        feats = {"src": [], "ref": []} if with_features else None
        a = self._run_branch(self.branch_src, src, feats and feats["src"])
        b = self._run_branch(self.branch_ref, ref, feats and feats["ref"])
        merged = torch.cat([a, b], dim=1)
        return (merged, feats) if with_features else merged

    def forward(self, src, ref, with_features=False):
        merged, feats = self.encode(src, ref, with_features=True) if with_features else (
            self.encode(src, ref), None)
        h = self.trunk(merged)
        out = self.head_makeup(h), self.head_demakeup(h)
        return (out, feats) if with_features else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

"""Training objectives: adversarial, cycle, perceptual and makeup losses.

Also holds the two patch discriminators the adversarial term needs and the
perceptual feature extractors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import _kernels

VGG_LAYER = 18


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0     # adversarial
    beta: float = 10.0     # cycle
    gamma: float = 0.005   # perceptual
    sigma: float = 1.0     # makeup

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class LossBreakdown:
    adv: float | torch.Tensor
    cyc: float | torch.Tensor
    per: float | torch.Tensor
    makeup: float | torch.Tensor
    feat: float | torch.Tensor
    total: float | torch.Tensor

    def as_floats(self) -> dict[str, float]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


def total_loss(adv, cyc, per, makeup, weights: LossWeights = LossWeights(),
               feat=0.0) -> LossBreakdown:
    terms = (adv, cyc, per, makeup, feat)
    if not all(bool(torch.isfinite(torch.as_tensor(t)).all()) for t in terms):
        raise ValueError("non-finite loss component")
    total = (feat + weights.alpha * adv + weights.beta * cyc + weights.gamma * per
             + weights.sigma * makeup)
    return LossBreakdown(adv, cyc, per, makeup, feat, total)


# -- adversarial -------------------------------------------------------------

def _as_list(x):
    if x is None:
        return []
    return list(x) if isinstance(x, (list, tuple)) else [x]


def adversarial_loss(real_outputs, fake_outputs, side: str) -> torch.Tensor:
    """Least-squares GAN objective averaged over discriminators.

    ``real_outputs``/``fake_outputs`` hold one patch-score tensor per
    discriminator. The generator side ignores ``real_outputs``.
    """
    fakes = _as_list(fake_outputs)
    if not fakes or any(t.numel() == 0 for t in fakes):
        raise ValueError("adversarial loss needs non-empty discriminator outputs")
    if side == "generator":
        return sum(((f - 1) ** 2).mean() for f in fakes) / len(fakes)
    if side == "discriminator":
        reals = _as_list(real_outputs)
        if len(reals) != len(fakes) or any(t.numel() == 0 for t in reals):
            raise ValueError("discriminator side needs one non-empty real output per fake output")
        terms = [((r - 1) ** 2).mean() + (f ** 2).mean() for r, f in zip(reals, fakes)]
        return sum(terms) / len(terms)
    raise ValueError(f"side must be 'generator' or 'discriminator', got {side!r}")


class PatchDiscriminator(nn.Module):
    """70x70 patch discriminator (three stride-2 stages at ``base`` = 64)."""

    def __init__(self, in_channels=3, base=64, n_layers=3):
        super().__init__()
        layers = [nn.Conv2d(in_channels, base, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        ch = base
        for i in range(1, n_layers + 1):
            nxt = base * min(2 ** i, 8)
            stride = 2 if i < n_layers else 1
            layers += [nn.Conv2d(ch, nxt, 4, stride, 1, bias=False),
                       nn.InstanceNorm2d(nxt, affine=True), nn.LeakyReLU(0.2, True)]
            ch = nxt
        layers.append(nn.Conv2d(ch, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, 0.0, 0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.net(x)


# -- reconstruction and identity ---------------------------------------------

def cycle_loss(reconstructed_src, src, reconstructed_ref, ref) -> torch.Tensor:
    return F.l1_loss(reconstructed_src, src) + F.l1_loss(reconstructed_ref, ref)


class IdentityExtractor(nn.Module):
    """Stub extractor: the image is its own feature map."""

    def forward(self, x):
        return x


class VGGExtractor(nn.Module):
    """First ``layer`` modules of the VGG16 feature stack, frozen.

    Expects images in [-1, 1] and applies ImageNet normalization.
    ``pretrained=False`` gives a seeded random network of the same shape.
    """

    def __init__(self, layer: int = VGG_LAYER, pretrained: bool = True, seed: int = 0):
        super().__init__()
        from torchvision.models import VGG16_Weights, vgg16

        if pretrained:
            try:
                net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
            except Exception as exc:  # download or cache failure
                raise RuntimeError(
                    "pretrained VGG16 weights unavailable; place them in the torch hub "
                    "cache or use extractor 'vgg16-random' / 'identity'") from exc
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                net = vgg16(weights=None)
        self.features = net.features[:layer].eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def train(self, mode=True):
        super().train(mode)
        self.features.eval()
        return self

    def forward(self, x):
        x = ((x + 1) / 2 - self.mean) / self.std
        return self.features(x)


def make_extractor(name: str) -> nn.Module:
    if name == "identity":
        return IdentityExtractor()
    if name == "vgg16":
        return VGGExtractor(pretrained=True)
    if name == "vgg16-random":
        return VGGExtractor(pretrained=False)
    raise ValueError(f"unknown extractor {name!r} (identity, vgg16, vgg16-random)")


def perceptual_loss(generated, source, feature_extractor) -> torch.Tensor:
    return F.mse_loss(feature_extractor(generated), feature_extractor(source))


# -- makeup (histogram) loss ---------------------------------------------------

def _region_masks(masks, like):
    """Normalize masks to a bool tensor (N, R, H, W); None means whole image.

    Accepted layouts: (H, W) one region, (R, H, W) shared by the batch,
    (N, R, H, W) per sample.
    """
    n, _, h, w = like.shape
    if masks is None:
        return torch.ones(n, 1, h, w, dtype=torch.bool)
    masks = torch.as_tensor(masks).bool()
    if masks.dim() == 2:
        masks = masks[None, None]
    elif masks.dim() == 3:
        masks = masks[None]
    if masks.dim() != 4 or masks.shape[-2:] != (h, w):
        raise ValueError(f"masks of shape {tuple(masks.shape)} do not fit images {tuple(like.shape)}")
    if masks.shape[0] == 1 and n > 1:
        masks = masks.expand(n, -1, -1, -1)
    return masks


def _batched(x):
    return x[None] if x.dim() == 3 else x


def histogram_targets(generated, reference, gen_masks=None, ref_masks=None,
                      skip_empty=False):
    """Histogram-matched targets for every (sample, region) of ``generated``.

    Returns a nested list ``targets[sample][region]`` of ``(3, k)`` tensors
    (``None`` for regions skipped because a mask is empty).
    """
    generated, reference = _batched(generated), _batched(reference)
    gm = _region_masks(gen_masks, generated)
    rm = _region_masks(ref_masks, reference)
    if gm.shape[:2] != rm.shape[:2]:
        raise ValueError("generated and reference masks must list the same regions")
    gen_np = generated.detach().cpu().double().numpy()
    ref_np = reference.detach().cpu().double().numpy()
    if not (np.isfinite(gen_np).all() and np.isfinite(ref_np).all()):
        raise ValueError("non-finite pixel values")
    out = []
    for i in range(gm.shape[0]):
        row = []
        for r in range(gm.shape[1]):
            g_sel, r_sel = gm[i, r].numpy(), rm[i, r].numpy()
            if not g_sel.any() or not r_sel.any():
                if skip_empty:
                    row.append(None)
                    continue
                raise ValueError(f"empty mask for sample {i}, region {r}")
            target = _kernels.match_histogram(gen_np[i][:, g_sel], ref_np[i][:, r_sel])
            row.append(torch.from_numpy(target).to(generated.dtype))
        out.append(row)
    return out


def makeup_loss(generated, reference, gen_masks=None, ref_masks=None, targets=None,
                skip_empty=False) -> torch.Tensor:
    """Per-region MSE to the histogram-matched target, summed over regions.

    The target is a constant (no gradient); pass precomputed ``targets``
    to hold it fixed explicitly. Averaged over the batch.
    """
    generated = _batched(generated)
    gm = _region_masks(gen_masks, generated)
    if targets is None:
        targets = histogram_targets(generated, reference, gen_masks, ref_masks, skip_empty)
    total = generated.new_zeros(())
    for i in range(generated.shape[0]):
        for r, target in enumerate(targets[i]):
            if target is None:
                continue
            pixels = generated[i][:, gm[i, r]]
            total = total + F.mse_loss(pixels, target)
    return total / generated.shape[0]


def matched_image(generated, reference, gen_masks=None, ref_masks=None) -> np.ndarray:
    """Image-shaped view of the matched targets (unmasked pixels copied through)."""
    generated = _batched(generated)
    gm = _region_masks(gen_masks, generated)
    targets = histogram_targets(generated, reference, gen_masks, ref_masks)
    out = generated.detach().clone()
    for i, row in enumerate(targets):
        for r, t in enumerate(row):
            out[i][:, gm[i, r]] = t
    return out.numpy()

"""Collaborative distillation of the encoder branches.

Each student tap feature ``F'`` (C' channels) is mapped through a learnable
``C' x C`` matrix ``Q`` (a bias-free linear 1x1 conv) and compared with the
homologous teacher feature ``F`` (C channels). The feature loss sums the
Frobenius norms of ``F' Q - F`` over all taps. Adapters exist only for
this loss and never run at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import INIT_STD
from .netspec import GeneratorSpec, student_generator_spec, teacher_generator_spec


@dataclass(frozen=True)
class TapPoint:
    branch: str  # "src" or "ref"
    layer_index: int
    teacher_channels: int
    student_channels: int

    def __post_init__(self):
        if self.branch not in ("src", "ref"):
            raise ValueError(f"branch must be 'src' or 'ref', got {self.branch!r}")
        if self.student_channels >= self.teacher_channels:
            raise ValueError("a tap must compress: student_channels < teacher_channels")


def default_tap_points(teacher: GeneratorSpec | None = None,
                       student: GeneratorSpec | None = None,
                       n_layers: int = 2) -> list[TapPoint]:
    """First ``n_layers`` encoder layers of both branches, layer-major order."""
    teacher = teacher or teacher_generator_spec()
    student = student or student_generator_spec()
    taps = []
    for i in range(n_layers):
        for branch in ("src", "ref"):
            t = getattr(teacher, f"branch_{branch}")[i]
            s = getattr(student, f"branch_{branch}")[i]
            if (t.kernel, t.stride) != (s.kernel, s.stride):
                raise ValueError(f"layer {i} of branch {branch} is not homologous: "
                                 f"{t.label} vs {s.label}")
            taps.append(TapPoint(branch, i, t.out_channels, s.out_channels))
    return taps


class AdapterSet(nn.Module):
    """One ``(student_channels, teacher_channels)`` matrix per tap point."""

    def __init__(self, taps: list[TapPoint], generator: torch.Generator | None = None):
        super().__init__()
        self.taps = list(taps)
        self.adapters = nn.ParameterList(
            nn.Parameter(torch.randn(t.student_channels, t.teacher_channels,
                                     generator=generator) * INIT_STD)
            for t in self.taps)

    def __len__(self):
        return len(self.adapters)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(q.shape) for q in self.adapters]


def apply_adapter(f_student: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """``out[:, h, w] = q.T @ f_student[:, h, w]``; works on (C',H,W) or (N,C',H,W)."""
    if f_student.shape[-3] != q.shape[0]:
        raise ValueError(f"feature has {f_student.shape[-3]} channels, adapter expects {q.shape[0]}")
    return torch.einsum("...chw,cd->...dhw", f_student, q)


def _frobenius(residual):
    # batched residuals: per-sample norm, averaged over the batch
    if residual.dim() == 4:
        return torch.linalg.vector_norm(residual.flatten(1), dim=1).mean()
    return torch.linalg.vector_norm(residual)


def feature_loss(student_feats, adapters, teacher_feats) -> torch.Tensor:
    qs = list(adapters.adapters if isinstance(adapters, AdapterSet) else adapters)
    if not (len(student_feats) == len(qs) == len(teacher_feats)):
        raise ValueError(f"got {len(student_feats)} student feats, {len(qs)} adapters, "
                         f"{len(teacher_feats)} teacher feats")
    total = student_feats[0].new_zeros(())
    for fs, q, ft in zip(student_feats, qs, teacher_feats):
        mapped = apply_adapter(fs, q)
        if mapped.shape != ft.shape:
            raise ValueError(f"adapted student feature {tuple(mapped.shape)} does not match "
                             f"teacher feature {tuple(ft.shape)}")
        total = total + _frobenius(mapped - ft.detach())
    return total


def select_taps(feats: dict, taps: list[TapPoint]) -> list[torch.Tensor]:
    """Pick tap tensors from ``Generator.encode(..., with_features=True)`` output."""
    return [feats[t.branch][t.layer_index] for t in taps]


def fit_adapters_lstsq(student_feats, teacher_feats) -> list[torch.Tensor]:
    """Closed-form ``Q`` minimizing each tap's residual on a fixed batch."""
    qs = []
    for fs, ft in zip(student_feats, teacher_feats):
        a = fs.detach().movedim(-3, -1).reshape(-1, fs.shape[-3]).double()
        b = ft.detach().movedim(-3, -1).reshape(-1, ft.shape[-3]).double()
        qs.append(torch.linalg.lstsq(a, b).solution.to(fs.dtype))
    return qs

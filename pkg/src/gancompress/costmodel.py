"""Analytic parameter and MAC accounting for generator specs.

One MAC is one multiply plus one accumulate. Norm and activation
arithmetic is excluded from MACs, norm affine parameters are included in
parameter counts. Transposed convolutions are charged at their output
spatial size.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .netspec import GeneratorSpec, LayerSpec, SpecError, TensorShape, infer_shapes

BYTES_PER_PARAM = 4


def conv_weights(kernel: int, c_in: int, c_out: int) -> int:
    return kernel * kernel * c_in * c_out


def separated_weights(kernel: int, c_in: int, c_out: int) -> int:
    """Depthwise (one KxK filter per input channel) plus pointwise 1x1."""
    return kernel * kernel * c_in + c_in * c_out


def layer_params(layer: LayerSpec) -> int:
    c_in, c_out, k = layer.in_channels, layer.out_channels, layer.kernel
    norm = 2 * c_out if layer.norm == "instance" else 0
    bias = c_out if layer.has_bias else 0
    if layer.kind in ("conv", "deconv"):
        return conv_weights(k, c_in, c_out) + bias + norm
    if layer.kind == "res_block":
        return 2 * (conv_weights(k, c_in, c_out) + bias + norm)
    if layer.kind == "separated_res_block":
        return 2 * (separated_weights(k, c_in, c_out) + bias + norm)
    raise SpecError(f"unknown layer kind {layer.kind!r}")


def layer_macs(layer: LayerSpec, in_shape: TensorShape) -> int:
    if in_shape.channels != layer.in_channels:
        raise SpecError(
            f"{layer.label} expects {layer.in_channels} input channels, got {in_shape.channels}")
    h, w, s = in_shape.height, in_shape.width, layer.stride
    c_in, c_out, k = layer.in_channels, layer.out_channels, layer.kernel
    if layer.kind == "deconv":
        return conv_weights(k, c_in, c_out) * (h * s) * (w * s)
    if h % s or w % s:
        raise SpecError(f"{layer.label}: input {h}x{w} not divisible by stride {s}")
    pixels = (h // s) * (w // s)
    if layer.kind == "conv":
        return conv_weights(k, c_in, c_out) * pixels
    if layer.kind == "res_block":
        return 2 * conv_weights(k, c_in, c_out) * pixels
    if layer.kind == "separated_res_block":
        return 2 * separated_weights(k, c_in, c_out) * pixels
    raise SpecError(f"unknown layer kind {layer.kind!r}")


@dataclass
class LayerCost:
    index: int
    section: str
    label: str
    kind: str
    params: int
    macs: int


@dataclass
class CostReport:
    per_layer: list[LayerCost] = field(default_factory=list)
    input: TensorShape | None = None
    name: str = ""

    @property
    def total_params(self) -> int:
        return sum(row.params for row in self.per_layer)

    @property
    def total_macs(self) -> int:
        return sum(row.macs for row in self.per_layer)

    @property
    def model_size_bytes(self) -> int:
        return self.total_params * BYTES_PER_PARAM

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "params", "macs"])
        for row in self.per_layer:
            writer.writerow([row.index, row.kind, row.params, row.macs])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'#':>3}  {'section':<14} {'layer':<28} {'params':>12} {'MACs':>16}"
        lines = [f"{self.name} @ {self.input}", head, "-" * len(head)]
        for row in self.per_layer:
            lines.append(f"{row.index:>3}  {row.section:<14} {row.label:<28} "
                         f"{row.params:>12,} {row.macs:>16,}")
        lines.append("-" * len(head))
        lines.append(f"{'':>3}  {'total':<14} {'':<28} {self.total_params:>12,} "
                     f"{self.total_macs:>16,}")
        lines.append(f"params {self.total_params / 1e6:.2f}M | "
                     f"size {self.model_size_bytes / 1024:.0f}KB | "
                     f"MACs {self.total_macs / 1e9:.3f}G")
        return "\n".join(lines)


def network_cost(spec: GeneratorSpec, input: TensorShape) -> CostReport:
    report = CostReport(input=input, name=spec.name)
    for i, row in enumerate(infer_shapes(spec, input)):
        report.per_layer.append(LayerCost(
            index=i, section=row.section, label=row.layer.label, kind=row.layer.kind,
            params=layer_params(row.layer), macs=layer_macs(row.layer, row.input)))
    return report


@dataclass(frozen=True)
class ReductionInputs:
    kernel: int
    out_channels: int
    n_stand: int
    n_decom: int

    def __post_init__(self):
        for name in ("kernel", "out_channels", "n_stand", "n_decom"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise SpecError(f"ReductionInputs.{name} must be a positive int, got {value!r}")


def decomposition_reduction(r: ReductionInputs) -> float:
    """Cost of ``n_decom`` separated blocks relative to ``n_stand`` standard ones."""
    return (r.n_decom / r.n_stand) * (1.0 / r.kernel ** 2 + 1.0 / r.out_channels)

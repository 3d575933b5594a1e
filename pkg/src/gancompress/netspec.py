"""Declarative generator architectures and shape inference.

A generator has two encoder branches (non-makeup source and makeup
reference), a shared trunk that starts on the channel concatenation of
both branches, and two output heads (makeup transfer and makeup removal).
Layer listings use the ``kind-kernel-in-out(stride)`` notation, e.g.
``conv7-3-64(1)``.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, replace
from typing import Iterator

import yaml

LAYER_KINDS = ("conv", "deconv", "res_block", "separated_res_block")
NORMS = ("instance", "none")
ACTIVATIONS = ("relu", "tanh", "none")
RESIDUAL_KINDS = ("res_block", "separated_res_block")
SECTIONS = ("branch_src", "branch_ref", "trunk", "head_makeup", "head_demakeup")

_SHORT_KIND = {
    "conv": "conv",
    "deconv": "deconv",
    "res_block": "res",
    "separated_res_block": "separated_res",
}


class SpecError(ValueError):
    """Raised for malformed architectures or incompatible input shapes."""


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("channels", "height", "width"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise SpecError(f"TensorShape.{name} must be a positive int, got {value!r}")

    @classmethod
    def parse(cls, text: str) -> "TensorShape":
        """Parse ``CxHxW`` (e.g. ``3x256x256``)."""
        parts = text.lower().split("x")
        if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
            raise SpecError(f"expected CxHxW, got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self) -> str:
        return f"{self.channels}x{self.height}x{self.width}"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    has_bias: bool = False
    norm: str = "instance"
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.norm not in NORMS:
            raise SpecError(f"unknown norm {self.norm!r}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        for name in ("kernel", "in_channels", "out_channels", "stride"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise SpecError(f"LayerSpec.{name} must be a positive int, got {value!r}")
        if self.kind in RESIDUAL_KINDS:
            if self.in_channels != self.out_channels or self.stride != 1:
                raise SpecError(f"{self.kind} must keep channels and use stride 1")
        if self.stride == 1 and self.kind != "deconv" and self.kernel % 2 == 0:
            raise SpecError(f"stride-1 {self.kind} needs an odd kernel, got {self.kernel}")

    @property
    def is_residual(self) -> bool:
        return self.kind in RESIDUAL_KINDS

    @property
    def label(self) -> str:
        return (f"{_SHORT_KIND[self.kind]}{self.kernel}-{self.in_channels}-"
                f"{self.out_channels}({self.stride})")


def conv(k, cin, cout, stride=1, *, norm="instance", activation="relu", bias=None):
    if bias is None:
        bias = norm == "none"
    return LayerSpec("conv", k, cin, cout, stride, bias, norm, activation)


def deconv(k, cin, cout, stride=2):
    return LayerSpec("deconv", k, cin, cout, stride, False, "instance", "relu")


def res_block(k, channels, *, separated=False):
    kind = "separated_res_block" if separated else "res_block"
    # the block ends on a norm, the residual sum is not activated
    return LayerSpec(kind, k, channels, channels, 1, False, "instance", "none")


@dataclass(frozen=True)
class GeneratorSpec:
    branch_src: tuple[LayerSpec, ...]
    branch_ref: tuple[LayerSpec, ...]
    trunk: tuple[LayerSpec, ...]
    head_makeup: tuple[LayerSpec, ...]
    head_demakeup: tuple[LayerSpec, ...]
    n_res: int
    name: str = "generator"

    def __post_init__(self):
        for section in SECTIONS:
            layers = tuple(getattr(self, section))
            if not layers:
                raise SpecError(f"{section} is empty")
            object.__setattr__(self, section, layers)
        counted = sum(layer.is_residual for layer in self.trunk)
        if counted != self.n_res:
            raise SpecError(f"n_res={self.n_res} but trunk holds {counted} residual layers")
        for section in SECTIONS:
            _check_chain(section, getattr(self, section))
        merged = self.branch_src[-1].out_channels + self.branch_ref[-1].out_channels
        if self.trunk[0].in_channels != merged:
            raise SpecError(
                f"trunk expects {self.trunk[0].in_channels} channels, merge yields {merged}")
        for head in ("head_makeup", "head_demakeup"):
            if getattr(self, head)[0].in_channels != self.trunk[-1].out_channels:
                raise SpecError(f"{head} does not consume the trunk output channels")

    def sections(self) -> Iterator[tuple[str, tuple[LayerSpec, ...]]]:
        for section in SECTIONS:
            yield section, getattr(self, section)

    def layers(self) -> Iterator[tuple[str, int, LayerSpec]]:
        """Yield ``(section, index_in_section, layer)`` in forward order."""
        for section, layers in self.sections():
            for i, layer in enumerate(layers):
                yield section, i, layer


def _check_chain(section, layers):
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_channels != nxt.in_channels:
            raise SpecError(
                f"{section}: {prev.label} feeds {prev.out_channels} channels "
                f"into {nxt.label}")


def _decoder_trunk(n_res, separated):
    return (
        (conv(4, 256, 256, 2),)
        + tuple(res_block(3, 256, separated=separated) for _ in range(n_res))
        + (deconv(4, 256, 128), deconv(4, 128, 64))
    )


def _head():
    return (
        conv(3, 64, 64, norm="none"),
        conv(3, 64, 64, norm="none"),
        conv(3, 64, 3, norm="none", activation="tanh"),
    )


def teacher_generator_spec(n_res: int = 6) -> GeneratorSpec:
    """The uncompressed teacher generator (6 standard residual blocks)."""
    if n_res < 1:
        raise SpecError(f"n_res must be >= 1, got {n_res}")
    branch = (conv(7, 3, 64), conv(4, 64, 128, 2))
    return GeneratorSpec(branch, branch, _decoder_trunk(n_res, False), _head(), _head(),
                         n_res, name="teacher")


def student_generator_spec(n_decom: int = 9, compact_encoder: bool = True) -> GeneratorSpec:
    """Student generator with ``n_decom`` depthwise-separable residual blocks.

    With ``compact_encoder=False`` the branches keep the teacher's widths;
    that variant is the not-distilled arm of the distillation ablation.
    """
    if not isinstance(n_decom, int) or n_decom < 1:
        raise SpecError(f"n_decom must be >= 1, got {n_decom!r}")
    if compact_encoder:
        branch = (conv(7, 3, 16), conv(4, 16, 32, 2), conv(1, 32, 128))
        name = "student"
    else:
        branch = (conv(7, 3, 64), conv(4, 64, 128, 2))
        name = "student-wide"
    return GeneratorSpec(branch, branch, _decoder_trunk(n_decom, True), _head(), _head(),
                         n_decom, name=name)


def spec_for_arch(arch: str, n_decom: int = 9) -> GeneratorSpec:
    if arch == "teacher":
        return teacher_generator_spec()
    if arch == "student":
        return student_generator_spec(n_decom)
    if arch == "student-wide":
        return student_generator_spec(n_decom, compact_encoder=False)
    raise SpecError(f"unknown arch {arch!r} (teacher, student, student-wide)")


def _out_shape(layer: LayerSpec, shape: TensorShape) -> TensorShape:
    if shape.channels != layer.in_channels:
        raise SpecError(f"{layer.label} expects {layer.in_channels} channels, got {shape.channels}")
    h, w, s = shape.height, shape.width, layer.stride
    if layer.kind == "deconv":
        return TensorShape(layer.out_channels, h * s, w * s)
    if h % s or w % s:
        raise SpecError(f"{layer.label}: spatial size {h}x{w} not divisible by stride {s}")
    return TensorShape(layer.out_channels, h // s, w // s)


@dataclass
class LayerShape:
    section: str
    index: int
    layer: LayerSpec
    input: TensorShape
    output: TensorShape


def infer_shapes(spec: GeneratorSpec, input: TensorShape) -> list[LayerShape]:
    """Per-layer input/output shapes in forward order.

    Both branches see the same input shape. Heads are listed after the
    trunk, makeup head first.
    """
    if input.channels != 3:
        raise SpecError(f"generator input must have 3 channels, got {input.channels}")
    if input.height % 4 or input.width % 4:
        raise SpecError(f"input size {input.height}x{input.width} must be divisible by 4")
    rows: list[LayerShape] = []

    def run(section, layers, shape):
        for i, layer in enumerate(layers):
            out = _out_shape(layer, shape)
            rows.append(LayerShape(section, i, layer, shape, out))
            shape = out
        return shape

    src = run("branch_src", spec.branch_src, input)
    ref = run("branch_ref", spec.branch_ref, input)
    if (src.height, src.width) != (ref.height, ref.width):
        raise SpecError("branch outputs differ in spatial size")
    merged = TensorShape(src.channels + ref.channels, src.height, src.width)
    trunk = run("trunk", spec.trunk, merged)
    for head in ("head_makeup", "head_demakeup"):
        out = run(head, getattr(spec, head), trunk)
        if out != input:
            raise SpecError(f"{head} produces {out}, expected {input}")
    return rows


def format_layers(spec: GeneratorSpec) -> str:
    """Table-style listing: one layer label per line, repeats collapsed."""
    lines = [f"# {spec.name}"]
    for section, layers in spec.sections():
        lines.append(f"[{section}]")
        i = 0
        while i < len(layers):
            j = i
            while j + 1 < len(layers) and layers[j + 1] == layers[i]:
                j += 1
            count = j - i + 1
            lines.append(f"  {count} x {layers[i].label}" if count > 1 else f"  {layers[i].label}")
            i = j + 1
    return "\n".join(lines)


# -- plain-text (YAML) serialization ---------------------------------------

_LABEL_RE = re.compile(r"^(separated_res|res|deconv|conv)(\d+)-(\d+)-(\d+)\((\d+)\)$")
_LONG_KIND = {v: k for k, v in _SHORT_KIND.items()}


def spec_to_dict(spec: GeneratorSpec) -> dict:
    out = {"name": spec.name, "n_res": spec.n_res}
    for section, layers in spec.sections():
        out[section] = [asdict(layer) for layer in layers]
    return out


def spec_from_dict(data: dict) -> GeneratorSpec:
    try:
        sections = {s: tuple(_layer_from_obj(o) for o in data[s]) for s in SECTIONS}
        return GeneratorSpec(**sections, n_res=int(data["n_res"]),
                             name=str(data.get("name", "generator")))
    except KeyError as exc:
        raise SpecError(f"missing field {exc.args[0]!r}") from None


def _layer_from_obj(obj) -> LayerSpec:
    if isinstance(obj, str):
        m = _LABEL_RE.match(obj.strip())
        if not m:
            raise SpecError(f"cannot parse layer label {obj!r}")
        kind = _LONG_KIND[m.group(1)]
        k, cin, cout, stride = (int(g) for g in m.groups()[1:])
        if kind == "conv":
            return conv(k, cin, cout, stride)
        if kind == "deconv":
            return deconv(k, cin, cout, stride)
        return res_block(k, cin, separated=kind == "separated_res_block")
    return LayerSpec(**obj)


def dump_spec(spec: GeneratorSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


def load_spec(text: str) -> GeneratorSpec:
    return spec_from_dict(yaml.safe_load(text))


def with_n_res(spec: GeneratorSpec, n_res: int) -> GeneratorSpec:
    """Same spec with the residual stack resized to ``n_res`` blocks."""
    res = [layer for layer in spec.trunk if layer.is_residual]
    if not res:
        raise SpecError("spec has no residual blocks")
    first = next(i for i, layer in enumerate(spec.trunk) if layer.is_residual)
    trunk = spec.trunk[:first] + (res[0],) * n_res + spec.trunk[first + len(res):]
    return replace(spec, trunk=trunk, n_res=n_res)

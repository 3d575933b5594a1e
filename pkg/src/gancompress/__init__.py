"""Compression of encoder-resnet-decoder makeup-transfer generators.

Collaborative distillation shrinks the encoder branches, depthwise
separable residual blocks shrink the trunk, and an analytic cost model
accounts for parameters and MACs.
"""

from .costmodel import CostReport, ReductionInputs, decomposition_reduction, network_cost
from .netspec import (GeneratorSpec, LayerSpec, TensorShape, infer_shapes,
                      student_generator_spec, teacher_generator_spec)

__version__ = "0.1.0"

__all__ = [
    "CostReport", "GeneratorSpec", "LayerSpec", "ReductionInputs", "TensorShape",
    "decomposition_reduction", "infer_shapes", "network_cost", "student_generator_spec",
    "teacher_generator_spec",
]

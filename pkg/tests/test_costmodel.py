import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gancompress.costmodel import (ReductionInputs, decomposition_reduction, layer_macs,
                                   layer_params, network_cost)
from gancompress.netspec import (LayerSpec, SpecError, TensorShape, conv, res_block,
                                 student_generator_spec, teacher_generator_spec)

from oracles import (MacCounter, direct_conv, direct_conv_transpose, direct_depthwise,
                     direct_pointwise)


def bare(kind, k, cin, cout, stride=1):
    return LayerSpec(kind, k, cin, cout, stride, False, "none", "none")


def test_layer_params_examples():
    assert layer_params(bare("conv", 1, 1, 1)) == 1
    std = res_block(3, 256)
    assert layer_params(bare("res_block", 3, 256, 256)) == 1_179_648
    assert layer_params(std) == 1_179_648 + 2 * 2 * 256
    assert layer_params(bare("separated_res_block", 3, 256, 256)) == 135_680
    assert layer_params(res_block(3, 256, separated=True)) == 135_680 + 2 * 2 * 256


def test_layer_params_bias_and_norm():
    head = conv(3, 64, 3, norm="none", activation="tanh")
    assert head.has_bias
    assert layer_params(head) == 9 * 64 * 3 + 3
    assert layer_params(conv(7, 3, 64)) == 49 * 3 * 64 + 128


def test_layer_macs_examples():
    assert layer_macs(bare("conv", 1, 1, 1), TensorShape(1, 1, 1)) == 1
    assert layer_macs(bare("conv", 3, 256, 256), TensorShape(256, 64, 64)) == 2_415_919_104
    sep = bare("separated_res_block", 3, 256, 256)
    # one separated unit; the block holds two
    assert layer_macs(sep, TensorShape(256, 64, 64)) == 2 * 277_872_640


def test_layer_macs_shape_mismatch():
    with pytest.raises(SpecError):
        layer_macs(bare("conv", 3, 8, 8), TensorShape(4, 8, 8))


def _oracle_macs(layer, shape, rng):
    """Run the layer with nested loops and count every multiply-accumulate."""
    x = rng.normal(size=(shape.channels, shape.height, shape.width))
    k, cin, cout, s = layer.kernel, layer.in_channels, layer.out_channels, layer.stride
    counter = MacCounter()
    pad = (k - s + 1) // 2
    if layer.kind == "conv":
        direct_conv(x, rng.normal(size=(cout, cin, k, k)), s, pad, counter)
    elif layer.kind == "deconv":
        direct_conv_transpose(x, rng.normal(size=(cin, cout, k, k)), s, pad, counter)
    elif layer.kind == "res_block":
        h = direct_conv(x, rng.normal(size=(cout, cin, k, k)), 1, k // 2, counter)
        direct_conv(h, rng.normal(size=(cout, cin, k, k)), 1, k // 2, counter)
    else:
        h = x
        for _ in range(2):
            h = direct_depthwise(h, rng.normal(size=(cin, k, k)), k // 2, counter)
            h = direct_pointwise(h, rng.normal(size=(cout, cin)), counter)
    return counter.count


def random_layer(draw_kind, k, cin, cout, stride):
    if draw_kind in ("res_block", "separated_res_block"):
        return bare(draw_kind, k, cin, cin, 1)
    if draw_kind == "deconv":
        return bare("deconv", k + 1 if k % 2 else k, cin, cout, 2)
    if stride == 2:
        return bare("conv", 4 if k > 1 else 2, cin, cout, 2)
    return bare("conv", k, cin, cout, 1)


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(["conv", "deconv", "res_block", "separated_res_block"]),
       k=st.sampled_from([1, 3]), cin=st.integers(1, 4), cout=st.integers(1, 4),
       stride=st.sampled_from([1, 2]), hw=st.sampled_from([2, 4]), seed=st.integers(0, 99))
def test_layer_macs_matches_loop_oracle(kind, k, cin, cout, stride, hw, seed):
    layer = random_layer(kind, k, cin, cout, stride)
    shape = TensorShape(layer.in_channels, hw, hw)
    assert layer_macs(layer, shape) == _oracle_macs(layer, shape, np.random.default_rng(seed))


def test_loop_oracles_compute_real_convolutions():
    """The MAC-counting oracles must agree with torch numerically too."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 3))
    w = rng.normal(size=(4, 2, 3, 3))
    ref = torch.nn.functional.conv2d(torch.tensor(x)[None], torch.tensor(w), padding=1)[0]
    counter = MacCounter()
    np.testing.assert_allclose(direct_conv(x, w, 1, 1, counter), ref.numpy(), atol=1e-12)
    assert counter.count == 9 * 2 * 4 * 3 * 3

    x = rng.normal(size=(2, 3, 3))
    w = rng.normal(size=(2, 3, 4, 4))
    ref = torch.nn.functional.conv_transpose2d(torch.tensor(x)[None], torch.tensor(w),
                                               stride=2, padding=1)[0]
    np.testing.assert_allclose(direct_conv_transpose(x, w, 2, 1), ref.numpy(), atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
@pytest.mark.parametrize("c", [1, 16, 256, 512])
def test_separated_over_standard_ratio(k, c):
    shape = TensorShape(c, 8, 8)
    ratio = (layer_macs(bare("separated_res_block", k, c, c), shape)
             / layer_macs(bare("res_block", k, c, c), shape))
    assert ratio == pytest.approx(1 / k ** 2 + 1 / c, rel=1e-15)
    r = decomposition_reduction(ReductionInputs(k, c, 4, 4))
    assert r == pytest.approx(ratio, rel=1e-15)


def test_decomposition_reduction_examples():
    assert decomposition_reduction(ReductionInputs(3, 256, 6, 9)) == pytest.approx(0.1725, abs=5e-5)
    assert round(decomposition_reduction(ReductionInputs(3, 256, 6, 9)), 3) == 0.173
    assert decomposition_reduction(ReductionInputs(1, 1, 1, 1)) == 2.0
    assert decomposition_reduction(ReductionInputs(3, 256, 6, 6)) == pytest.approx(0.11502, abs=1e-5)


def test_reduction_inputs_validate():
    with pytest.raises(SpecError):
        ReductionInputs(0, 256, 6, 9)


def test_network_cost_table_numbers():
    shape = TensorShape(3, 256, 256)
    t = network_cost(teacher_generator_spec(), shape)
    s = network_cost(student_generator_spec(9), shape)
    assert t.total_params == pytest.approx(9.23e6, rel=0.03)
    assert s.total_params == pytest.approx(3.13e6, rel=0.03)
    assert t.total_macs == pytest.approx(66.891e9, rel=0.05)
    assert s.total_macs == pytest.approx(38.269e9, rel=0.05)
    assert s.total_macs / t.total_macs == pytest.approx(0.572, abs=0.03)
    assert t.model_size_bytes == 4 * t.total_params


def test_cost_report_totals_and_csv():
    r = network_cost(student_generator_spec(9), TensorShape(3, 64, 64))
    assert r.total_params == sum(row.params for row in r.per_layer)
    assert all(row.params >= 0 and row.macs >= 0 for row in r.per_layer)
    lines = r.to_csv().strip().splitlines()
    assert lines[0] == "layer,kind,params,macs"
    assert len(lines) == len(r.per_layer) + 1
    assert sum(int(l.split(",")[3]) for l in lines[1:]) == r.total_macs


def test_cost_monotone_in_n_res():
    shape = TensorShape(3, 64, 64)
    costs = [network_cost(student_generator_spec(n), shape) for n in range(1, 12)]
    for a, b in zip(costs, costs[1:]):
        assert b.total_macs > a.total_macs and b.total_params > a.total_params


@pytest.mark.parametrize("widen", [lambda l: l.out_channels + 8])
def test_cost_monotone_in_width(widen):
    base = conv(3, 8, 8)
    wider = conv(3, 8, widen(base))
    shape = TensorShape(8, 8, 8)
    assert layer_macs(wider, shape) > layer_macs(base, shape)
    assert layer_params(wider) > layer_params(base)

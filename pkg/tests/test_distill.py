import numpy as np
import pytest
import torch

from gancompress.distill import (AdapterSet, TapPoint, apply_adapter, default_tap_points,
                                 feature_loss, fit_adapters_lstsq, select_taps)
from gancompress.generator import Generator
from gancompress.netspec import spec_for_arch

from oracles import central_fd, direct_pointwise, rel_err


def test_default_taps():
    taps = default_tap_points()
    assert len(taps) == 4
    shapes = AdapterSet(taps).shapes
    assert shapes == [(16, 64), (16, 64), (32, 128), (32, 128)]
    assert {t.branch for t in taps} == {"src", "ref"}


def test_tap_must_compress():
    with pytest.raises(ValueError):
        TapPoint("src", 0, 16, 16)
    with pytest.raises(ValueError):
        TapPoint("mid", 0, 64, 16)


def test_apply_adapter_examples():
    q = torch.eye(3)
    x = torch.randn(3, 4, 4)
    assert torch.equal(apply_adapter(x, q), x)
    out = apply_adapter(torch.tensor([[[2.0]]]), torch.tensor([[1.0, 0.5]]))
    assert out.flatten().tolist() == [2.0, 1.0]


def test_apply_adapter_matches_pointwise_oracle():
    rng = np.random.default_rng(0)
    x, q = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 5))
    got = apply_adapter(torch.tensor(x), torch.tensor(q)).numpy()
    np.testing.assert_allclose(got, direct_pointwise(x, q.T), atol=1e-12)
    with pytest.raises(ValueError):
        apply_adapter(torch.zeros(4, 2, 2), torch.tensor(q))


def test_feature_loss_examples():
    # one tap, single position: mapped (2, 1) against teacher (3, 1)
    fs = torch.tensor([2.0, 1.0]).reshape(2, 1, 1)
    ft = torch.tensor([3.0, 1.0]).reshape(2, 1, 1)
    loss = feature_loss([fs], [torch.eye(2)], [ft])
    assert float(loss) == pytest.approx(1.0)


def test_feature_loss_zero_at_match_and_homogeneous():
    torch.manual_seed(0)
    fs = [torch.randn(2, 4, 4), torch.randn(3, 2, 2)]
    qs = [torch.randn(2, 5), torch.randn(3, 6)]
    ft = [apply_adapter(f, q) for f, q in zip(fs, qs)]
    assert float(feature_loss(fs, qs, ft)) == 0.0
    base = [t + torch.randn_like(t) for t in ft]
    doubled = [a + 2 * (b - a) for a, b in zip(ft, base)]
    assert float(feature_loss(fs, qs, doubled)) == pytest.approx(
        2 * float(feature_loss(fs, qs, base)), rel=1e-6)
    assert float(feature_loss(fs, qs, base)) > 0


def test_feature_loss_batched_is_mean_of_samples():
    torch.manual_seed(1)
    fs, q, ft = torch.randn(3, 2, 4, 4), torch.randn(2, 5), torch.randn(3, 5, 4, 4)
    batched = float(feature_loss([fs], [q], [ft]))
    single = np.mean([float(feature_loss([fs[i]], [q], [ft[i]])) for i in range(3)])
    assert batched == pytest.approx(single, rel=1e-6)


def test_feature_loss_rejects_mismatch():
    with pytest.raises(ValueError):
        feature_loss([torch.zeros(2, 2, 2)], [], [torch.zeros(3, 2, 2)])
    with pytest.raises(ValueError):
        feature_loss([torch.zeros(2, 2, 2)], [torch.zeros(2, 3)], [torch.zeros(4, 2, 2)])


def test_feature_loss_gradient():
    rng = np.random.default_rng(3)
    fs = [rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 2, 2))]
    qs = [rng.normal(size=(2, 4)), rng.normal(size=(3, 5))]
    ft = [rng.normal(size=(4, 3, 3)), rng.normal(size=(5, 2, 2))]

    def value():
        return float(feature_loss([torch.tensor(f) for f in fs], [torch.tensor(q) for q in qs],
                                  [torch.tensor(t) for t in ft]))

    tf = [torch.tensor(f, requires_grad=True) for f in fs]
    tq = [torch.tensor(q, requires_grad=True) for q in qs]
    feature_loss(tf, tq, [torch.tensor(t) for t in ft]).backward()
    for arrs, tensors in ((fs, tf), (qs, tq)):
        for a, t in zip(arrs, tensors):
            assert rel_err(t.grad.numpy(), central_fd(value, a)) <= 1e-4


def test_teacher_receives_no_gradient():
    torch.manual_seed(0)
    teacher = Generator(spec_for_arch("teacher", 1))
    student = Generator(spec_for_arch("student", 1))
    taps = default_tap_points(teacher.spec, student.spec)
    adapters = AdapterSet(taps)
    src, ref = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
    _, tf = teacher.encode(src, ref, with_features=True)
    _, sf = student.encode(src, ref, with_features=True)
    feature_loss(select_taps(sf, taps), adapters, select_taps(tf, taps)).backward()
    assert all(p.grad is None for p in teacher.parameters())
    assert all(q.grad is not None for q in adapters.adapters)


def test_adapters_do_not_touch_student_forward():
    torch.manual_seed(0)
    student = Generator(spec_for_arch("student", 1)).eval()
    src, ref = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
    before = student(src, ref)
    AdapterSet(default_tap_points())
    after = student(src, ref)
    assert all(torch.equal(a, b) for a, b in zip(before, after))


def test_lstsq_adapter_recovers_exact_map():
    torch.manual_seed(2)
    fs = torch.randn(4, 6, 6, dtype=torch.float64)
    q = torch.randn(4, 7, dtype=torch.float64)
    (fitted,) = fit_adapters_lstsq([fs], [apply_adapter(fs, q)])
    assert torch.allclose(fitted, q, atol=1e-9)

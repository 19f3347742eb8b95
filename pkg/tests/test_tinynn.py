from __future__ import annotations

import numpy as np
import pytest

from vesselnav import tinynn
from vesselnav.tinynn import (
    Adam,
    CheckpointError,
    Conv2D,
    Dense,
    Flatten,
    Network,
    ReLU,
    SGD,
    copy_parameters,
    huber_loss,
    load_checkpoint,
    network_from_descriptor,
    save_checkpoint,
)


# -- forward -------------------------------------------------------------------


def test_dense_identity_forward():
    layer = Dense(2, 2)
    layer.weight = np.eye(2)
    layer.bias = np.zeros(2)
    out = Network([layer]).forward(np.array([[3.0, 4.0]]))
    assert np.array_equal(out, [[3.0, 4.0]])


def test_relu_forward():
    out = Network([ReLU()]).forward(np.array([[-1.0, 2.0, 0.0]]))
    assert np.array_equal(out, [[0.0, 2.0, 0.0]])


def test_conv_all_ones_hand_convolution():
    layer = Conv2D(1, 1, 3, 1)
    layer.weight = np.ones((1, 1, 3, 3))
    layer.bias = np.zeros(1)
    out = Network([layer]).forward(np.ones((1, 1, 5, 5)))
    assert out.shape == (1, 1, 3, 3)
    assert np.array_equal(out[0, 0], np.full((3, 3), 9.0))


@pytest.mark.parametrize("h,w,k,s", [(7, 9, 3, 1), (8, 8, 3, 2), (10, 6, 5, 2), (5, 5, 5, 1), (9, 9, 2, 3)])
def test_conv_output_spatial_size(h, w, k, s):
    net = network_from_descriptor(f"conv:2:3:{k}:{s}", seed=0)
    out = net.forward(np.random.default_rng(0).normal(size=(2, 2, h, w)))
    assert out.shape == (2, 3, (h - k) // s + 1, (w - k) // s + 1)


def test_forward_shape_mismatch():
    net = network_from_descriptor("dense:4:8", seed=0)
    with pytest.raises(ValueError, match="dense layer expects"):
        net.forward(np.zeros((1, 5)))
    conv = network_from_descriptor("conv:3:4:3:1", seed=0)
    with pytest.raises(ValueError, match="conv layer expects"):
        conv.forward(np.zeros((1, 2, 8, 8)))


def test_forward_deterministic_and_seeded_init():
    a = network_from_descriptor("dense:4:16|relu|dense:16:8", seed=5)
    b = network_from_descriptor("dense:4:16|relu|dense:16:8", seed=5)
    c = network_from_descriptor("dense:4:16|relu|dense:16:8", seed=6)
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(a.forward(x), b.forward(x))
    assert not np.array_equal(a.forward(x), c.forward(x))


# -- backward ------------------------------------------------------------------


def test_single_dense_chain_rule_by_hand():
    layer = Dense(1, 1)
    layer.weight = np.array([[2.0]])
    layer.bias = np.zeros(1)
    net = Network([layer])
    net.forward(np.array([[3.0]]))
    grads = net.backward(np.array([[1.0]]))  # loss = output
    assert grads[0] == pytest.approx(np.array([[3.0]]))  # dL/dw = x
    assert grads[1] == pytest.approx(np.array([1.0]))  # dL/db = 1


def test_zero_loss_gradient_gives_zero_param_grads():
    net = network_from_descriptor("dense:3:5|relu|dense:5:2", seed=1)
    out = net.forward(np.random.default_rng(0).normal(size=(4, 3)))
    grads = net.backward(np.zeros_like(out))
    assert all(np.all(g == 0.0) for g in grads)


def test_backward_before_forward_raises():
    net = network_from_descriptor("dense:3:2", seed=0)
    with pytest.raises(RuntimeError, match="backward"):
        net.backward(np.zeros((1, 2)))


def numeric_param_grads(net: Network, x: np.ndarray, probe: np.ndarray, h: float = 1e-5):
    """Central finite differences of loss = sum(forward(x) * probe)."""
    grads = []
    for param in net.parameters():
        g = np.zeros_like(param)
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float((net.forward(x) * probe).sum())
            flat[i] = orig - h
            down = float((net.forward(x) * probe).sum())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


GRAD_CHECK_DESCRIPTORS = [
    "dense:3:4",
    "dense:4:6|relu|dense:6:2",
    "conv:1:2:3:1|flatten|dense:32:3",
    "conv:2:3:3:2|relu|flatten|dense:12:4",
    "conv:1:2:2:1|relu|conv:2:3:2:2|relu|flatten|dense:12:5|relu|dense:5:2",
    "flatten|dense:9:3",
]


@pytest.mark.parametrize("desc", GRAD_CHECK_DESCRIPTORS)
def test_gradients_match_finite_differences(desc):
    rng = np.random.default_rng(hash(desc) % 2**32)
    net = network_from_descriptor(desc, seed=int(rng.integers(1000)))
    first = net.layers[0]
    if isinstance(first, Dense):
        x = rng.normal(size=(3, first.in_features))
    elif isinstance(first, Conv2D):
        x = rng.normal(size=(2, first.in_channels, 6, 6))
    else:
        x = rng.normal(size=(2, 3, 3)) if desc.startswith("flatten") else None
    out = net.forward(x)
    probe = rng.normal(size=out.shape)
    analytic = net.backward(probe)
    numeric = numeric_param_grads(net, x, probe)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_relu_gradient_masks_negatives():
    relu = ReLU()
    x = np.array([[-2.0, 0.0, 3.0]])
    out = relu.forward(x)
    assert np.all(out >= 0.0)
    grad = relu.backward(np.ones_like(x))
    assert np.array_equal(grad, [[0.0, 0.0, 1.0]])


# -- optimizers ------------------------------------------------------------------


def test_lr_zero_leaves_parameters_unchanged():
    net = network_from_descriptor("dense:3:2", seed=2)
    before = [p.copy() for p in net.parameters()]
    grads = [np.ones_like(p) for p in net.parameters()]
    for opt in (SGD(0.0), Adam(0.0)):
        opt.step(net.parameters(), grads)
    assert all(np.array_equal(p, b) for p, b in zip(net.parameters(), before))


def test_sgd_arithmetic():
    w = np.array([1.0])
    SGD(0.1).step([w], [np.array([0.5])])
    assert w[0] == pytest.approx(0.95)


def test_adam_first_step_closed_form():
    # first bias-corrected step: update = lr * g / (|g| + eps)
    for g in (0.5, -3.0, 1e-4):
        w = np.array([1.0])
        lr = 0.01
        Adam(lr).step([w], [np.array([g])])
        expected = 1.0 - lr * g / (abs(g) + 1e-8)
        assert w[0] == pytest.approx(expected, rel=1e-12)


def test_optimizer_step_wrapper():
    net = network_from_descriptor("dense:2:2", seed=0)
    before = [p.copy() for p in net.parameters()]
    grads = [np.ones_like(p) for p in net.parameters()]
    tinynn.optimizer_step(net, grads, SGD(0.1))
    assert all(np.allclose(p, b - 0.1) for p, b in zip(net.parameters(), before))


# -- huber loss -------------------------------------------------------------------


def test_huber_zero_error():
    loss, grad = huber_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert loss == 0.0
    assert np.array_equal(grad, [0.0, 0.0])


def test_huber_quadratic_branch():
    loss, _ = huber_loss(np.array([0.5]), np.array([0.0]), delta=1.0)
    assert loss == pytest.approx(0.125)


def test_huber_linear_branch():
    # per-element loss delta*(|e| - delta/2) = 2.5; gradient clipped to +-1
    loss, grad = huber_loss(np.array([3.0]), np.array([0.0]), delta=1.0)
    assert loss == pytest.approx(1.0 * (3.0 - 0.5))
    assert grad[0] == pytest.approx(1.0)
    _, grad_neg = huber_loss(np.array([-3.0]), np.array([0.0]), delta=1.0)
    assert grad_neg[0] == pytest.approx(-1.0)


def test_huber_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        huber_loss(np.zeros(3), np.zeros(4))


def test_huber_gradient_is_finite_difference_of_mean_loss():
    rng = np.random.default_rng(9)
    pred = rng.normal(size=8) * 3
    target = rng.normal(size=8)
    _, grad = huber_loss(pred, target, delta=1.0)
    h = 1e-6
    for i in range(len(pred)):
        up = pred.copy()
        up[i] += h
        down = pred.copy()
        down[i] -= h
        num = (huber_loss(up, target)[0] - huber_loss(down, target)[0]) / (2 * h)
        assert grad[i] == pytest.approx(num, rel=1e-4, abs=1e-8)


# -- parameter copying ---------------------------------------------------------------


def test_copy_parameters_matches_forward():
    src = network_from_descriptor("dense:3:8|relu|dense:8:2", seed=1)
    dst = network_from_descriptor("dense:3:8|relu|dense:8:2", seed=99)
    copy_parameters(src, dst)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(src.forward(x), dst.forward(x))


def test_copy_isolation():
    src = network_from_descriptor("dense:2:2", seed=1)
    dst = network_from_descriptor("dense:2:2", seed=2)
    copy_parameters(src, dst)
    src.parameters()[0][0, 0] += 123.0
    assert dst.parameters()[0][0, 0] != src.parameters()[0][0, 0]


def test_copy_architecture_mismatch():
    a = network_from_descriptor("dense:2:2", seed=0)
    b = network_from_descriptor("dense:2:3", seed=0)
    with pytest.raises(ValueError, match="architecture mismatch"):
        copy_parameters(a, b)


# -- checkpoints -----------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    net = network_from_descriptor("conv:3:4:3:2|relu|flatten|dense:64:8", seed=7)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.descriptor() == net.descriptor()
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    x = np.random.default_rng(0).normal(size=(2, 3, 9, 9))
    assert np.array_equal(net.forward(x), loaded.forward(x))


def test_checkpoint_truncated(tmp_path):
    net = network_from_descriptor("dense:3:2", seed=0)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "net.ckpt"
    path.write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_checkpoint_descriptor_mismatch(tmp_path):
    net = network_from_descriptor("dense:3:2", seed=0)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    with pytest.raises(CheckpointError, match="descriptor mismatch"):
        load_checkpoint(path, expected_descriptor="dense:3:4")


def test_checkpoint_trailing_bytes(tmp_path):
    net = network_from_descriptor("dense:3:2", seed=0)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_descriptor_parsing_errors():
    with pytest.raises(ValueError):
        network_from_descriptor("dense:3", seed=0)
    with pytest.raises(ValueError):
        network_from_descriptor("mystery:1:2", seed=0)
    with pytest.raises(ValueError):
        network_from_descriptor("", seed=0)


def test_all_values_finite_after_forward_backward():
    net = network_from_descriptor("conv:3:8:3:2|relu|flatten|dense:72:16|relu|dense:16:8", seed=3)
    x = np.random.default_rng(2).normal(size=(4, 3, 7, 7)) * 10
    out = net.forward(x)
    grads = net.backward(np.ones_like(out))
    assert np.isfinite(out).all()
    assert all(np.isfinite(g).all() for g in grads)

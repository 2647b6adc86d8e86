import numpy as np
import pytest

from caelab import autodiff as ad
from caelab.errors import AutodiffError


def test_square_sum_gradient():
    w = ad.parameter([1.0, 2.0, 3.0])
    ad.backward(ad.sum(ad.mul(w, w)), [w])
    assert np.allclose(w.grad, [2.0, 4.0, 6.0])


def test_constant_loss_gives_zero_gradients():
    w = ad.parameter(np.ones(3))
    ad.backward(ad.constant(5.0), [w])
    assert np.array_equal(w.grad, np.zeros(3))


def test_non_scalar_loss_rejected():
    w = ad.parameter(np.ones(3))
    with pytest.raises(AutodiffError):
        ad.backward(ad.mul(w, 2.0))


def test_shared_subexpression_accumulates():
    w = ad.parameter(np.array([1.5, -2.0]))
    y = ad.mul(w, 3.0)
    ad.backward(ad.sum(ad.add(y, ad.mul(y, y))), [w])
    assert np.allclose(w.grad, 3.0 + 18.0 * w.values)


def test_broadcast_gradient_is_reduced():
    x = ad.parameter(np.ones((4, 3)))
    b = ad.parameter(np.zeros(3))
    ad.backward(ad.sum(ad.add(x, b)), [x, b])
    assert np.allclose(b.grad, [4.0, 4.0, 4.0])


def test_operator_overloads():
    a = ad.parameter(np.array(2.0))
    loss = (a * a - a / 4.0 + 1.0) * 2.0
    ad.backward(loss, [a])
    assert float(a.grad) == pytest.approx(2.0 * (2.0 * 2.0 - 0.25))


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 4, 6))
    w = rng.standard_normal((5, 3, 3, 3))
    b = rng.standard_normal(5)
    out = ad.conv2d(ad.constant(x), ad.constant(w), ad.constant(b), (1, 1)).values
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((2, 5, 4, 6))
    for n in range(2):
        for o in range(5):
            for i in range(4):
                for j in range(6):
                    expected[n, o, i, j] = np.sum(padded[n, :, i:i + 3, j:j + 3] * w[o]) + b[o]
    assert np.allclose(out, expected)


def test_conv2d_unbatched_input(rng):
    x = rng.standard_normal((1, 2, 5))
    w = rng.standard_normal((2, 1, 1, 3))
    batched = ad.conv2d(ad.constant(x[None]), ad.constant(w), padding=(0, 1)).values
    assert np.allclose(ad.conv2d(ad.constant(x), ad.constant(w), padding=(0, 1)).values, batched[0])


def test_conv2d_shape_errors(rng):
    with pytest.raises(AutodiffError):
        ad.conv2d(ad.constant(np.ones((1, 2, 4, 4))), ad.constant(np.ones((1, 3, 3, 3))))
    with pytest.raises(AutodiffError):
        ad.conv2d(ad.constant(np.ones((1, 1, 2, 2))), ad.constant(np.ones((1, 1, 3, 3))))


def test_batch_norm_train_and_eval(rng):
    layer = ad.BatchNorm(3)
    x = ad.constant(rng.standard_normal((8, 3, 2, 5)) * 4.0 + 1.0)
    out = layer(x).values
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    assert not np.allclose(layer.state.running_mean, 0.0)
    layer.eval()
    frozen = layer(x).values
    expected = (x.values - layer.state.running_mean[None, :, None, None]) / np.sqrt(
        layer.state.running_var[None, :, None, None] + layer.state.eps)
    assert np.allclose(frozen, expected)


def test_batch_norm_needs_two_samples_in_train_mode():
    layer = ad.BatchNorm(2)
    with pytest.raises(AutodiffError):
        layer(ad.constant(np.ones((1, 2))))
    layer.eval()
    assert layer(ad.constant(np.ones((1, 2)))).shape == (1, 2)


def test_softmax_nll_value_and_target_check():
    logits = np.array([[2.0, 0.0, -1.0], [0.5, 0.5, 0.5]])
    targets = np.array([0, 2])
    expected = -(logits[0, 0] - np.log(np.exp(logits[0]).sum())) - (logits[1, 2] - np.log(np.exp(logits[1]).sum()))
    assert float(ad.softmax_nll(ad.constant(logits), targets).values) == pytest.approx(expected)
    with pytest.raises(AutodiffError):
        ad.softmax_nll(ad.constant(logits), np.array([0, 3]))
    with pytest.raises(AutodiffError):
        ad.softmax_nll(ad.constant(logits), np.array([0]))


def test_softmax_values_rows_sum_to_one(rng):
    probs = ad.softmax_values(rng.standard_normal((4, 5)) * 50)
    assert np.allclose(probs.sum(axis=-1), 1.0)


def test_selu_and_gelu_values():
    x = ad.constant(np.array([-1.0, 0.0, 2.0]))
    selu = ad.selu(x).values
    assert selu[2] == pytest.approx(ad.SELU_LAMBDA * 2.0)
    assert selu[0] == pytest.approx(ad.SELU_LAMBDA * ad.SELU_ALPHA * (np.exp(-1.0) - 1.0))
    gelu = ad.gelu(x).values
    assert gelu[1] == 0.0
    assert gelu[2] == pytest.approx(2.0 * 0.9772498680518208)


def test_fully_connected_shape_check():
    with pytest.raises(AutodiffError):
        ad.fully_connected(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 5))))


def test_complex_linear_backward_uses_adjoint(rng):
    m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    x = ad.parameter(rng.standard_normal(6))
    y = ad.complex_linear(x, lambda z: z @ m.T, lambda g: g @ np.conj(m))
    r = rng.standard_normal(6)
    ad.backward(ad.sum(ad.mul(y, r)), [x])
    dense = np.block([[m.real, -m.imag], [m.imag, m.real]])
    assert np.allclose(x.grad, dense.T @ r)


def test_take_and_concat_gradients():
    x = ad.parameter(np.arange(4.0))
    picked = ad.take(x, np.array([0, 0, 3]), axis=0)
    joined = ad.concat([picked, x], axis=0)
    ad.backward(ad.sum(joined), [x])
    assert np.allclose(x.grad, [3.0, 1.0, 1.0, 2.0])


def test_max_along_routes_to_first_argmax():
    x = ad.parameter(np.array([[1.0, 3.0, 3.0], [0.0, -1.0, 2.0]]))
    ad.backward(ad.sum(ad.max_along(x, axis=1)), [x])
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def test_mean_over_axis_tuple():
    x = ad.parameter(np.ones((2, 3, 4)))
    out = ad.mean(x, axis=(1, 2), keepdims=True)
    assert out.shape == (2, 1, 1)
    ad.backward(ad.sum(out), [x])
    assert np.allclose(x.grad, 1.0 / 12.0)


def test_adamw_first_step_moves_by_learning_rate():
    w = ad.parameter(np.array([1.0, -2.0]))
    opt = ad.AdamW({"w": w}, lr=0.01, weight_decay=0.1)
    ad.backward(ad.sum(ad.mul(w, np.array([3.0, -0.5]))), [w])
    opt.step()
    decayed = np.array([1.0, -2.0]) * (1 - 0.01 * 0.1)
    assert np.allclose(w.values, decayed - 0.01 * np.sign([3.0, -0.5]), atol=1e-8)
    opt.zero_grad()
    assert w.grad is None


def test_adamw_minimizes_quadratic():
    w = ad.parameter(np.array([4.0, -3.0]))
    opt = ad.AdamW({"w": w}, lr=0.05, weight_decay=0.0)
    for _ in range(2000):
        ad.backward(ad.sum(ad.mul(ad.sub(w, 1.0), ad.sub(w, 1.0))), [w])
        opt.step()
    assert np.allclose(w.values, 1.0, atol=5e-2)


def test_adamw_rejects_gradient_shape_mismatch():
    w = ad.parameter(np.ones(2))
    with pytest.raises(AutodiffError):
        ad.adamw_step({"w": w}, {"w": np.ones(3)}, ad.OptimizerState())


def test_module_naming_and_modes(rng):
    class Block(ad.Module):
        def __init__(self):
            super().__init__()
            self.conv = ad.Conv2d(rng, 1, 2, (1, 3))
            self.norm = ad.BatchNorm(2)
            self.heads = [ad.Linear(rng, 2, 1), ad.Linear(rng, 2, 1, zero_init=True)]

    block = Block()
    names = set(block.named_parameters())
    assert {"conv.weight", "conv.bias", "norm.gamma", "norm.beta", "heads0.weight", "heads1.bias"} <= names
    assert set(block.named_buffers()) == {"norm.running_mean", "norm.running_var"}
    assert ad.parameter_count(block) == 2 * 3 + 2 + 2 + 2 + 3 + 3
    block.eval()
    assert not block.norm.training and not block.heads[0].training
    assert np.array_equal(block.heads[1].weight.values, np.zeros((1, 2)))

"""Tape and gradient tests.

Every differentiable op gets a central-finite-difference check.  The
checker builds a scalar by weighting the op output with fixed random
coefficients, so each output element contributes to the gradient.
"""

import numpy as np
import pytest

from tfsep import autodiff as ad


def numeric_grad(fn, x, eps=1e-6):
    """Central differences of a scalar-valued fn at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        g[idx] = (fn(xp) - fn(xm)) / (2 * eps)
        it.iternext()
    return g


def check_grads(build, inputs, rtol=1e-6, atol=1e-8, eps=1e-6):
    """build(tensors...) -> scalar Tensor; inputs: list of arrays."""
    tensors = [ad.Tensor(x, requires_grad=True, name=f"x{i}")
               for i, x in enumerate(inputs)]
    params = {t.name: t for t in tensors}
    with ad.Tape():
        loss = build(*tensors)
        grads = ad.backward(loss, params)
    for i, x in enumerate(inputs):
        def scalar_fn(xv, i=i):
            alt = [ad.Tensor(xv if j == i else v) for j, v in enumerate(inputs)]
            return float(build(*alt).data)
        num = numeric_grad(scalar_fn, x, eps=eps)
        got = grads[f"x{i}"]
        denom = np.maximum(np.abs(num), np.abs(got))
        err = np.abs(got - num)
        ok = err <= atol + rtol * denom
        assert ok.all(), f"input {i}: max err {err.max():.3e} vs grad {num[~ok]}, got {got[~ok]}"


def weighted_sum(t, seed=0):
    w = np.random.default_rng(seed).normal(size=t.data.shape)
    return ad.sum_(t * ad.Tensor(w))


RNG = np.random.default_rng(42)


def test_add_sub_mul_div_broadcasting():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(1, 4))
    c = RNG.uniform(1.0, 2.0, size=(3, 1))
    check_grads(lambda x, y, z: weighted_sum((x + y) * z - y / z), [a, b, c])


def test_scalar_operand_broadcast():
    a = RNG.normal(size=(2, 3))
    check_grads(lambda x: weighted_sum(2.0 * x + (1.0 - x) / 3.0), [a])


def test_reflected_operators():
    t = ad.Tensor(np.array([2.0, 4.0]))
    assert np.allclose((2.0 - t).data, [0.0, -2.0])
    assert np.allclose((1.0 / t).data, [0.5, 0.25])
    assert np.allclose((3.0 + t).data, [5.0, 7.0])
    assert np.allclose((2.0 * t).data, [4.0, 8.0])


def test_neg_square_sqrt():
    a = RNG.uniform(0.5, 2.0, size=(4,))
    check_grads(lambda x: weighted_sum(ad.sqrt(ad.square(-x))), [a])


def test_sqrt_at_zero_produces_zero_grad():
    # The guarded VJP must not emit NaN where the input is exactly zero.
    x = ad.Tensor(np.array([0.0, 4.0]), requires_grad=True, name="x")
    with ad.Tape():
        y = ad.sum_(ad.sqrt(x))
        grads = ad.backward(y, {"x": x})
    assert np.isfinite(grads["x"]).all()
    assert grads["x"][1] == pytest.approx(0.25)


def test_absval_relu_away_from_kink():
    a = np.array([-2.0, -0.5, 0.7, 1.5])
    check_grads(lambda x: weighted_sum(ad.absval(x)), [a])
    check_grads(lambda x: weighted_sum(ad.relu(x)), [a])


def test_relu_values():
    y = ad.relu(ad.Tensor(np.array([-1.0, 0.0, 2.0])))
    assert np.array_equal(y.data, [0.0, 0.0, 2.0])


def test_softplus_sigmoid_values_and_grads():
    assert ad.softplus(ad.Tensor(0.0)).data == pytest.approx(np.log(2.0))
    assert ad.sigmoid(ad.Tensor(0.0)).data == pytest.approx(0.5)
    x = ad.Tensor(np.array(0.0), requires_grad=True, name="x")
    with ad.Tape():
        grads = ad.backward(ad.softplus(x), {"x": x})
    assert grads["x"] == pytest.approx(0.5)
    a = RNG.normal(size=(5,)) * 3
    check_grads(lambda t: weighted_sum(ad.softplus(t)), [a])
    check_grads(lambda t: weighted_sum(ad.sigmoid(t)), [a])


def test_softplus_large_inputs_stable():
    y = ad.softplus(ad.Tensor(np.array([-800.0, 800.0])))
    assert np.isfinite(y.data).all()
    assert y.data[0] == pytest.approx(0.0, abs=1e-12)
    assert y.data[1] == pytest.approx(800.0)


def test_matmul():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4, 2))
    check_grads(lambda x, y: weighted_sum(ad.matmul(x, y)), [a, b])


def test_transpose_reshape_flip_broadcast():
    a = RNG.normal(size=(2, 3, 4))
    check_grads(lambda x: weighted_sum(ad.transpose(x, (2, 0, 1))), [a])
    check_grads(lambda x: weighted_sum(ad.reshape(x, (6, 4))), [a])
    check_grads(lambda x: weighted_sum(ad.flip(x, axis=1)), [a])
    b = RNG.normal(size=(1, 3, 1))
    check_grads(lambda x: weighted_sum(ad.broadcast_to(x, (2, 3, 4))), [b])


def test_concat_split_slice():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(4, 3))
    check_grads(lambda x, y: weighted_sum(ad.concat([x, y], axis=0)), [a, b])
    c = RNG.normal(size=(6, 2))
    def split_use(x):
        parts = ad.split(x, 3, axis=0)
        return weighted_sum(parts[0], 1) + weighted_sum(parts[2], 2)
    check_grads(split_use, [c])
    check_grads(lambda x: weighted_sum(ad.slice_axis(x, 0, 1, 5)), [c])


def test_take_rows_with_repeats():
    # A row picked twice must accumulate both output gradients.
    a = RNG.normal(size=(4, 3))
    idx = np.array([0, 2, 2, 3])
    check_grads(lambda x: weighted_sum(ad.take_rows(x, idx)), [a])


def test_sum_axes_and_mean():
    a = RNG.normal(size=(3, 4, 2))
    check_grads(lambda x: weighted_sum(ad.sum_(x, axis=1)), [a])
    check_grads(lambda x: weighted_sum(ad.sum_(x, axis=(0, 2), keepdims=True)), [a])
    check_grads(lambda x: ad.sum_(x), [a])
    check_grads(lambda x: ad.mean_(x), [a])


def test_frob2_value_and_grad():
    a = RNG.normal(size=(3, 3))
    t = ad.Tensor(a)
    assert float(ad.frob2(t).data) == pytest.approx(np.sum(a * a))
    check_grads(lambda x: ad.frob2(x), [a])


def test_frob2_permutation_bit_invariance():
    # The accumulation must be exactly rounded so element order is
    # irrelevant at the bit level, not just approximately.
    rng = np.random.default_rng(5)
    a = rng.normal(size=(40, 7))
    base = float(ad.frob2(ad.Tensor(a)).data)
    for trial in range(20):
        perm = rng.permutation(a.shape[0])
        cols = rng.permutation(a.shape[1])
        shuffled = a[perm][:, cols]
        assert float(ad.frob2(ad.Tensor(shuffled)).data) == base


def test_conv1d_grads():
    x = RNG.normal(size=(2, 3, 8))
    w = RNG.normal(size=(4, 3, 3))
    check_grads(lambda a, b: weighted_sum(ad.conv1d(a, b, 2, 1)), [x, w])


def test_chained_expression_grads():
    a = RNG.uniform(0.5, 1.5, size=(3, 4))
    b = RNG.normal(size=(4, 4))

    def model(x, y):
        h = ad.sigmoid(ad.matmul(x, y))
        return ad.frob2(h) + ad.mean_(ad.softplus(x))

    check_grads(model, [a, b])


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True, name="x")
    with ad.Tape():
        y = ad.square(x)
        with pytest.raises(ValueError):
            ad.backward(y, {"x": x})


def test_backward_without_tape_raises():
    x = ad.Tensor(np.ones(3), requires_grad=True, name="x")
    y = ad.sum_(ad.square(x))
    with pytest.raises(RuntimeError):
        ad.backward(y, {"x": x})


def test_unreachable_param_gets_zero_grad():
    x = ad.Tensor(np.ones(3), requires_grad=True, name="x")
    dead = ad.Tensor(np.ones(2), requires_grad=True, name="dead")
    with ad.Tape():
        y = ad.sum_(ad.square(x))
        grads = ad.backward(y, {"x": x, "dead": dead})
    assert np.array_equal(grads["dead"], np.zeros(2))
    assert np.array_equal(grads["x"], 2.0 * np.ones(3))


def test_repeated_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 3))

    def once():
        xt = ad.Tensor(x, requires_grad=True, name="x")
        wt = ad.Tensor(w, requires_grad=True, name="w")
        with ad.Tape():
            loss = ad.frob2(ad.sigmoid(ad.matmul(xt, wt)))
            grads = ad.backward(loss, {"x": xt, "w": wt})
        return float(loss.data), grads

    l1, g1 = once()
    l2, g2 = once()
    assert l1 == l2
    assert np.array_equal(g1["x"], g2["x"])
    assert np.array_equal(g1["w"], g2["w"])

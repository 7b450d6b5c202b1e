"""Tensor engine: forward values against naive oracles, gradients against
central finite differences, and the documented contracts."""

import numpy as np
import pytest

from lmn import tensor as T
from lmn.tensor import (
    ALLOC,
    ContractError,
    ShapeError,
    Tensor,
    add,
    affine_masked,
    concat,
    einsum_pair,
    conv1d_depthwise_k2s2,
    conv1d_k2s2,
    conv_transpose1d,
    cross_entropy,
    embedding,
    gelu,
    grad_check,
    index_select,
    layer_norm,
    make_rng,
    masked_fill,
    matmul,
    mul,
    narrow,
    no_grad,
    reshape,
    scale,
    softmax_last,
    sub,
    sum_axis,
    transpose,
)

from conftest import fd_grad, naive_matmul

RNG = make_rng(0)


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=rg)


def test_matmul_hand_example():
    out = matmul(t([[1, 2], [3, 4]]), t([[1], [1]]))
    assert np.array_equal(out.data, np.array([[3], [7]], dtype=np.float32))


def test_matmul_matches_naive():
    a = RNG.standard_normal((5, 7)).astype(np.float32)
    b = RNG.standard_normal((7, 3)).astype(np.float32)
    got = matmul(t(a), t(b)).data
    assert np.allclose(got, naive_matmul(a, b), atol=1e-5)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(t(np.zeros((2, 3))), t(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_softmax_symmetry_and_masking():
    assert np.allclose(softmax_last(t([0.0, 0.0])).data, [0.5, 0.5])
    out = softmax_last(t([0.0, -np.inf])).data
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_sums_to_one_and_masks_exactly():
    x = RNG.standard_normal((4, 9)).astype(np.float32)
    mask = RNG.random((4, 9)) < 0.4
    mask[:, 0] = False  # keep one live entry per row
    y = softmax_last(masked_fill(t(x), mask, -np.inf)).data
    assert np.all(np.abs(y.sum(-1) - 1.0) <= 1e-6)
    assert np.all(y[mask] == 0.0)


def test_concat_then_split_is_identity():
    a = RNG.standard_normal((2, 3, 4)).astype(np.float32)
    b = RNG.standard_normal((2, 5, 4)).astype(np.float32)
    cat = concat([t(a), t(b)], axis=1)
    back_a = narrow(cat, 1, 0, 3).data
    back_b = narrow(cat, 1, 3, 5).data
    assert np.array_equal(back_a, a) and np.array_equal(back_b, b)


def test_backward_linear_function():
    w = t([1.0, 2.0], rg=True)
    x = t([3.0, 4.0])
    loss = sum_axis(mul(w, x))
    loss.backward()
    assert np.allclose(w.grad, [3.0, 4.0])


def test_backward_requires_scalar():
    w = t([1.0, 2.0], rg=True)
    with pytest.raises(ContractError):
        mul(w, w).backward()


def test_backward_accumulates_for_shared_parameter():
    w = t([2.0], rg=True)
    loss = sum_axis(add(mul(w, w), w))  # w^2 + w -> grad 2w + 1 = 5
    loss.backward()
    assert np.allclose(w.grad, [5.0])


def test_cross_entropy_closed_form_grad():
    logits = t([[0.0, 0.0]], rg=True)
    loss = cross_entropy(logits, np.array([0]))
    loss.backward()
    assert np.allclose(logits.grad, [[-0.5, 0.5]], atol=1e-7)
    assert np.isclose(loss.item(), np.log(2.0), atol=1e-6)


@pytest.mark.parametrize("op_name", [
    "add", "sub", "mul", "matmul2d", "matmul_batched_weight", "matmul_batched_pair",
    "concat", "narrow", "index_select", "reshape", "transpose", "softmax",
    "layernorm", "gelu", "embedding", "cross_entropy", "conv_full",
    "conv_depthwise", "conv_transpose", "masked_fill", "sum_axis",
    "einsum_pair", "affine_masked", "affine_masked_nobias",
])
def test_op_gradients_match_finite_differences(op_name):
    # float64 inputs: the engine in 64-bit mode must agree with central
    # differences to 1e-4; float32 per-op checks below use the same builders
    rng = make_rng(hash(op_name) % 2**32)

    def mk(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    builders = {
        "add": lambda: ((mk(3, 4), mk(3, 4)), lambda a, b: add(a, b)),
        "sub": lambda: ((mk(3, 4), mk(4)), lambda a, b: sub(a, b)),
        "mul": lambda: ((mk(3, 4), mk(4)), lambda a, b: mul(a, b)),
        "matmul2d": lambda: ((mk(3, 4), mk(4, 2)), lambda a, b: matmul(a, b)),
        "matmul_batched_weight": lambda: ((mk(2, 3, 4), mk(4, 5)), lambda a, b: matmul(a, b)),
        "matmul_batched_pair": lambda: ((mk(2, 3, 4), mk(2, 4, 3)), lambda a, b: matmul(a, b)),
        "concat": lambda: ((mk(2, 3), mk(2, 2)), lambda a, b: concat([a, b], axis=1)),
        "narrow": lambda: ((mk(4, 6),), lambda a: narrow(a, 1, 2, 3)),
        "index_select": lambda: ((mk(5, 3),),
                                 lambda a: index_select(a, 0, np.array([0, 2, 2, 4]))),
        "reshape": lambda: ((mk(4, 6),), lambda a: reshape(a, (2, 12))),
        "transpose": lambda: ((mk(2, 3, 4),), lambda a: transpose(a, (2, 0, 1))),
        "softmax": lambda: ((mk(3, 5),), lambda a: softmax_last(a)),
        "layernorm": lambda: ((mk(3, 4), mk(4), mk(4)), lambda a, g, b: layer_norm(a, g, b)),
        "gelu": lambda: ((mk(3, 4),), lambda a: gelu(a)),
        "embedding": lambda: ((mk(6, 3),),
                              lambda w: embedding(w, np.array([[0, 5], [2, 2]]))),
        "cross_entropy": lambda: ((mk(4, 5),),
                                  lambda a: cross_entropy(a, np.array([0, 1, 4, 2]))),
        "conv_full": lambda: ((mk(2, 6, 3), mk(2, 3, 4)), lambda x, w: conv1d_k2s2(x, w)),
        "conv_depthwise": lambda: ((mk(2, 6, 3), mk(3, 2)),
                                   lambda x, w: conv1d_depthwise_k2s2(x, w)),
        "conv_transpose": lambda: ((mk(2, 4, 3), mk(2, 3, 5)),
                                   lambda x, w: conv_transpose1d(x, w)),
        "masked_fill": lambda: ((mk(3, 4),),
                                lambda a: masked_fill(a, np.eye(3, 4, dtype=bool), -np.inf)),
        "sum_axis": lambda: ((mk(3, 4),), lambda a: sum_axis(a, axis=0)),
        "einsum_pair": lambda: ((mk(2, 3, 4, 5), mk(2, 3, 5)),
                                lambda a, b: einsum_pair("blde,ble->bld", a, b)),
        "affine_masked": lambda: ((mk(2, 3, 4), mk(4, 6), mk(6)),
                                  lambda x, w, b: affine_masked(
                                      x, w, b, np.array([[True, False, True]] * 2))),
        "affine_masked_nobias": lambda: ((mk(2, 3, 4), mk(4, 6)),
                                         lambda x, w: affine_masked(
                                             x, w, None, np.array([[True, False, True]] * 2))),
    }
    inputs, fn = builders[op_name]()

    def loss_of(*args):
        out = fn(*args)
        if np.isinf(out.data).any():  # masked_fill case: softmax it first
            out = softmax_last(out)
        return sum_axis(mul(out, out))

    loss = loss_of(*inputs)
    loss.backward()
    for x in inputs:
        def f():
            with no_grad():
                return loss_of(*inputs).item()
        numeric = fd_grad(f, x.data, eps=1e-5)
        denom = np.maximum(1e-8, np.abs(x.grad) + np.abs(numeric))
        rel = np.abs(x.grad - numeric) / denom
        assert rel.max() <= 1e-4, f"{op_name}: rel err {rel.max():.2e}"


def test_op_gradients_float32_tolerance():
    # 32-bit per-op spot check at the looser documented tolerance
    rng = make_rng(77)
    a = Tensor(rng.standard_normal((4, 6)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal((6, 3)).astype(np.float32), requires_grad=True)

    def loss_of():
        y = gelu(matmul(a, w))
        return sum_axis(mul(y, y))

    loss = loss_of()
    loss.backward()
    for x in (a, w):
        def f():
            with no_grad():
                return loss_of().item()
        numeric = fd_grad(f, x.data, eps=1e-3)
        rel = np.abs(x.grad - numeric) / np.maximum(1e-8, np.abs(x.grad) + np.abs(numeric))
        assert rel.max() <= 1e-2


def test_grad_check_quadratic():
    x = Tensor(np.array([3.0]), requires_grad=True)

    def f(params):
        return sum_axis(mul(params[0], params[0]))

    assert grad_check(f, [x], eps=1e-3) <= 1e-5


def test_grad_check_constant_function():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = Tensor(np.array([5.0]))

    def f(params):
        return sum_axis(mul(c, c))

    # constant in params: analytic grad absent -> zeros, numeric zero
    assert grad_check(f, [x], eps=1e-3) == 0.0


def test_grad_check_rejects_bad_eps():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda p: sum_axis(p[0]), [x], eps=0.0)


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert y._backward is None and not y.requires_grad


def test_scale_and_neg():
    x = t([1.0, -2.0])
    assert np.allclose(scale(x, 2.5).data, [2.5, -5.0])
    assert np.allclose((-x).data, [-1.0, 2.0])


def test_broadcast_bias_add():
    x = t(np.ones((2, 3, 4)))
    b = t(np.arange(4))
    out = add(x, b)
    assert out.shape == (2, 3, 4)
    assert np.allclose(out.data[0, 0], 1 + np.arange(4))


def test_broadcast_rejects_misaligned():
    with pytest.raises(ShapeError):
        add(t(np.zeros((2, 3))), t(np.zeros((4,))))


def test_conv1d_k2s2_matches_pair_linear():
    # the kernel-2 stride-2 conv is a [2C -> Co] linear map on each pair
    rng = make_rng(5)
    x = rng.standard_normal((2, 8, 3)).astype(np.float32)
    w = rng.standard_normal((2, 3, 4)).astype(np.float32)
    got = conv1d_k2s2(t(x), t(w)).data
    lin = np.concatenate([w[0], w[1]], axis=0)  # [2C, Co]
    pairs = x.reshape(2, 4, 6)
    assert np.allclose(got, pairs @ lin, atol=1e-5)


def test_conv_transpose_shape_and_values():
    x = np.ones((1, 2, 1), dtype=np.float32)
    w = np.ones((3, 1, 1), dtype=np.float32)
    out = conv_transpose1d(t(x), t(w)).data[0, :, 0]
    # stride-1 kernel-3 over length 2: overlap counts are 1,2,2,1
    assert out.size == 2 + 3 - 1
    assert np.allclose(out, [1.0, 2.0, 2.0, 1.0])


def test_alloc_counter_tracks_live_tensors():
    ALLOC.reset_peak()
    base = ALLOC.live_bytes
    big = Tensor(np.zeros(1024, dtype=np.float32))
    assert ALLOC.live_bytes == base + 4096
    assert ALLOC.peak_bytes >= base + 4096
    del big
    assert ALLOC.live_bytes == base


def test_embedding_out_of_range_errors():
    w = t(np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        embedding(w, np.array([[5]]))


def test_layer_norm_normalizes_last_axis():
    x = t(RNG.standard_normal((5, 8)).astype(np.float32) * 3 + 1)
    y = layer_norm(x, t(np.ones(8)), t(np.zeros(8))).data
    assert np.allclose(y.mean(-1), 0.0, atol=1e-5)
    assert np.allclose(y.std(-1), 1.0, atol=1e-2)


def test_uniform_logits_cross_entropy_is_log_vocab():
    logits = t(np.zeros((3, 65)))
    loss = cross_entropy(logits, np.array([1, 2, 3]))
    assert np.isclose(loss.item(), np.log(65.0), atol=1e-6)

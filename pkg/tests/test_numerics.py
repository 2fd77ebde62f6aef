import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manlab.numerics import (
    Adam, AdamState, NonFiniteError, ShapeError, Tensor, adam_step, checkpoint, no_grad, ops,
    precision,
)

from gradcheck import check_op, numeric_grad
from op_cases import build_cases

CASES = build_cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_float64(name):
    op, arrays = CASES[name]
    with precision(np.float64):
        assert check_op(op, arrays, dtype=np.float64) <= 1e-5


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_float32(name):
    op, arrays = CASES[name]
    assert check_op(op, arrays, dtype=np.float32) <= 1e-2


def test_channel_scale_example():
    m = Tensor(np.ones((2, 2, 2)))
    out = ops.channel_scale(m, Tensor([0.5, 2.0]))
    np.testing.assert_array_equal(out.data[0], np.full((2, 2), 0.5))
    np.testing.assert_array_equal(out.data[1], np.full((2, 2), 2.0))


def test_channel_scale_rejects_mismatch():
    with pytest.raises(ShapeError, match=r"\(2, 2, 2\)"):
        ops.channel_scale(Tensor(np.ones((2, 2, 2))), Tensor([1.0, 2.0, 3.0]))


def test_cross_entropy_uniform_is_log_k():
    for cls in range(10):
        loss = ops.cross_entropy(Tensor(np.zeros(10)), cls)
        assert loss.item() == pytest.approx(math.log(10), abs=1e-6)
    assert math.log(10) == pytest.approx(2.302585, abs=1e-6)


def test_conv_of_ones_is_nine():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), stride=1, pad=0)
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_non_finite_output_faults():
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
        ops.log(Tensor([-1.0, 1.0]))


def test_sum_backward_is_ones():
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_l2_norm_gradient_matches_finite_differences():
    x = Tensor([3.0, 4.0], requires_grad=True)
    ops.l2_norm(x).backward()
    num = numeric_grad(lambda a: float(np.sqrt((a[0].astype(np.float64) ** 2).sum())),
                       [np.array([3.0, 4.0])], 0, 1e-3)
    np.testing.assert_allclose(num, [0.6, 0.8], atol=1e-6)
    np.testing.assert_allclose(x.grad, num, atol=1e-6)


def test_cross_entropy_gradient_is_probs_minus_onehot():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(7)
    t = 4
    logits = Tensor(z, requires_grad=True, dtype=np.float64)
    ops.cross_entropy(logits, t).backward()

    def f(a):
        v = a[0]
        return float(np.log(np.exp(v - v.max()).sum()) + v.max() - v[t])

    num = numeric_grad(f, [z.copy()], 0, 1e-5)
    probs = np.exp(z) / np.exp(z).sum()
    onehot = np.eye(7)[t]
    np.testing.assert_allclose(logits.grad, probs - onehot, atol=1e-9)
    np.testing.assert_allclose(num, probs - onehot, atol=1e-7)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_tape_is_released_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * x).sum()
    y.backward()
    assert y.is_leaf
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    a = x * 3.0
    (a * a + a).sum().backward()
    # d/dx (9x^2 + 3x) = 18x + 3
    assert x.grad[0] == pytest.approx(39.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_frozen_weights_receive_no_grad_but_pass_it_through():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((2, 1, 3, 3)))
    x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    ops.conv2d(x, w, pad=1).sum().backward()
    assert w.grad is None
    assert x.grad is not None and np.abs(x.grad).sum() > 0


# -- invariants ---------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 4), min_size=2, max_size=4),
    axis=st.integers(0, 2),
    seed=st.integers(0, 2**16),
)
def test_concat_then_slice_is_identity(sizes, axis, seed):
    rng = np.random.default_rng(seed)
    parts = []
    for s in sizes:
        shape = [2, 3, 2]
        shape[axis] = s
        parts.append(Tensor(rng.standard_normal(shape)))
    joined = ops.concat(parts, axis=axis)
    start = 0
    for p, s in zip(parts, sizes):
        index = [slice(None)] * 3
        index[axis] = slice(start, start + s)
        np.testing.assert_array_equal(joined[tuple(index)].data, p.data)
        start += s


@settings(max_examples=30, deadline=None)
@given(
    stride=st.integers(1, 2),
    pad=st.integers(0, 1),
    k=st.sampled_from([1, 3]),
    seed=st.integers(0, 2**16),
)
def test_conv_transpose_is_adjoint_of_conv(stride, pad, k, seed):
    rng = np.random.default_rng(seed)
    h = k + stride * 2 - 2 * pad + (0 if k > 2 * pad else 2 * pad)
    # choose h so that (h + 2p - k) is divisible by the stride
    h += (-(h + 2 * pad - k)) % stride
    with precision(np.float64):
        x = Tensor(rng.standard_normal((2, 3, h, h)))
        w = Tensor(rng.standard_normal((4, 3, k, k)))
        cx = ops.conv2d(x, w, stride=stride, pad=pad)
        y = Tensor(rng.standard_normal(cx.shape))
        ty = ops.conv_transpose2d(y, w, stride=stride, pad=pad)
        assert ty.shape == x.shape
        lhs = float((cx.data * y.data).sum())
        rhs = float((x.data * ty.data).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 6), cols=st.integers(1, 6), axis=st.integers(0, 1),
    scale=st.floats(0.1, 50.0), seed=st.integers(0, 2**16),
)
def test_softmax_is_a_distribution(rows, cols, axis, scale, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * scale
    p = ops.softmax(Tensor(x), axis=axis).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=axis), 1.0, atol=1e-5)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    p = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    before = p.copy()
    state = AdamState(learning_rate=0.1)
    for _ in range(5):
        adam_step([p], [np.zeros_like(p)], state)
    np.testing.assert_array_equal(p, before)
    assert state.step == 5


def test_adam_first_step_moves_by_learning_rate():
    # m = 0.5 * 1, v = 0.001 * 1; m_hat = m / (1 - 0.5) = 1, v_hat = v / (1 - 0.999) = 1
    p = np.array([0.0])
    state = AdamState(learning_rate=0.1)
    adam_step([p], [np.array([1.0])], state)
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-9)


def test_adam_elementwise_independence():
    rng = np.random.default_rng(5)
    grads = rng.standard_normal((6, 2))
    joint = np.array([0.3, -0.7])
    sep = [np.array([0.3]), np.array([-0.7])]
    sj, s0, s1 = AdamState(0.05), AdamState(0.05), AdamState(0.05)
    for g in grads:
        adam_step([joint], [g], sj)
        adam_step([sep[0]], [g[:1]], s0)
        adam_step([sep[1]], [g[1:]], s1)
    np.testing.assert_array_equal(joint, np.concatenate(sep))


def test_adam_defaults_and_shape_drift():
    state = AdamState(learning_rate=1e-3)
    assert (state.beta1, state.beta2, state.epsilon_hat) == (0.5, 0.999, 1e-8)
    adam_step([np.zeros(3)], [np.ones(3)], state)
    with pytest.raises(ValueError, match="drift"):
        adam_step([np.zeros(4)], [np.ones(4)], state)


def test_adam_class_uses_tensor_grads():
    w = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    (w * w).sum().backward()
    opt.step()
    np.testing.assert_allclose(w.data, [0.9, 0.9], atol=1e-6)
    opt.zero_grad()
    assert w.grad is None


# -- checkpoint format --------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a/weight": rng.standard_normal((3, 2, 2)).astype(np.float32),
        "meta/variant": np.array(1.0, dtype=np.float32),
        "ünïcode": np.arange(5, dtype=np.float32),
    }
    path = tmp_path / "x.ckpt"
    checkpoint.save(path, tensors)
    back = checkpoint.load(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_byte_layout():
    raw = checkpoint.dumps({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
    expected = (
        b"MANCKPT1" + (1).to_bytes(4, "little") + (1).to_bytes(2, "little") + b"w"
        + bytes([2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        + np.array([1.0, 2.0], dtype="<f4").tobytes()
    )
    assert raw == expected


def test_checkpoint_rejects_bad_magic_and_truncation():
    raw = checkpoint.dumps({"w": np.ones((4, 4), dtype=np.float32)})
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.loads(b"NOTACKPT" + raw[8:])
    for cut in (4, 12, 15, len(raw) - 1):
        with pytest.raises(checkpoint.CheckpointError, match="truncated"):
            checkpoint.loads(raw[:cut])


def test_open_interval_sigmoid_never_reaches_the_ends():
    x = Tensor(np.array([-200.0, -30.0, 0.0, 30.0, 200.0], dtype=np.float32))
    plain = ops.sigmoid(x).data
    assert plain[-1] == 1.0 and plain[0] == 0.0
    opened = ops.sigmoid(x, open_interval=True).data
    assert (opened > 0).all() and (opened < 1).all()
    assert opened[2] == 0.5

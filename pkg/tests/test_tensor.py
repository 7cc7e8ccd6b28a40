import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hagnet import tensor as T
from hagnet.gradcheck import check_gradients
from hagnet.tensor import BatchNormStats, Tape, Tensor
from support import op_cases


def param(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def grads_of(f, *params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [p.grad for p in params]


# -- matmul ------------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor([[5], [7]])).data, [[5], [7]])


def test_matmul_dot_product():
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_backward_rules():
    rng = np.random.default_rng(0)
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
    ga, gb = grads_of(lambda: T.sum_all(T.matmul(a, b)), a, b)
    ones = np.ones((3, 2))
    np.testing.assert_allclose(ga, ones @ b.data.T)
    np.testing.assert_allclose(gb, a.data.T @ ones)


# -- elementwise ---------------------------------------------------------------


def test_elementwise_examples():
    assert T.elementwise("relu", Tensor([-1, 0, 2])).data.tolist() == [0, 0, 2]
    assert T.elementwise("add", Tensor([1, 2]), Tensor([3, 4])).data.tolist() == [4, 6]
    assert T.elementwise("sigmoid", Tensor([0.0])).data.tolist() == [0.5]


def test_elementwise_errors():
    with pytest.raises(T.DimensionError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))
    with pytest.raises(ValueError):
        T.elementwise("cube", Tensor([1.0]))
    with pytest.raises(TypeError):
        T.elementwise("mul", Tensor([1.0]))


def test_row_broadcast_gradient_sums_over_rows():
    x = param(np.arange(6.0).reshape(3, 2))
    b = param([1.0, -1.0])
    _, gb = grads_of(lambda: T.sum_all(T.add(x, b)), x, b)
    np.testing.assert_array_equal(gb, [3.0, 3.0])


def test_relu_subgradient_at_zero_is_zero():
    x = param([0.0, 1.0, -1.0])
    (g,) = grads_of(lambda: T.sum_all(T.relu(x)), x)
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_sigmoid_is_finite_for_large_inputs():
    s = T.sigmoid(Tensor([-1e6, 1e6])).data
    assert np.all(np.isfinite(s))
    np.testing.assert_array_equal(s, [0.0, 1.0])


# -- concat / lookup -------------------------------------------------------------


def test_concat_examples():
    out = T.concat([Tensor([[1, 2]]), Tensor([[3, 4]])], axis=1)
    assert out.data.tolist() == [[1, 2, 3, 4]]
    t = Tensor([[1.0]])
    assert T.concat([t], axis=0) is t


def test_concat_errors():
    with pytest.raises(T.DimensionError):
        T.concat([], axis=0)
    with pytest.raises(T.DimensionError):
        T.concat([Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2)))], axis=1)


def test_concat_sum_gradient_is_ones():
    a, b = param(np.ones((2, 2))), param(np.ones((2, 3)))
    ga, gb = grads_of(lambda: T.sum_all(T.concat([a, b], axis=1)), a, b)
    np.testing.assert_array_equal(ga, np.ones((2, 2)))
    np.testing.assert_array_equal(gb, np.ones((2, 3)))


def test_embedding_lookup_examples():
    table = Tensor([[1, 1], [2, 2]])
    assert T.embedding_lookup(table, [1, 0, 1]).data.tolist() == [[2, 2], [1, 1], [2, 2]]
    assert T.embedding_lookup(table, []).shape == (0, 2)


def test_embedding_lookup_out_of_range_names_id():
    with pytest.raises(IndexError, match="7"):
        T.embedding_lookup(Tensor(np.ones((3, 2))), [0, 7])


def test_embedding_backward_scatter_adds():
    table = param([[1.0, 1.0], [2.0, 2.0]])
    (g,) = grads_of(lambda: T.sum_all(T.embedding_lookup(table, [0, 0])), table)
    np.testing.assert_array_equal(g, [[2, 2], [0, 0]])


# -- batch norm ------------------------------------------------------------------


def test_batch_norm_train_population_variance():
    out = T.batch_norm_1d(Tensor([[1.0], [3.0]]), BatchNormStats(1), "train")
    # mean 2, biased variance 1: (x - 2) / sqrt(1 + 1e-5)
    np.testing.assert_allclose(out.data, [[-1.0], [1.0]], atol=1e-5)


def test_batch_norm_eval_identity_with_unit_stats():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    st = BatchNormStats(3, eps=0.0)
    np.testing.assert_array_equal(T.batch_norm_1d(x, st, "eval").data, x.data)


def test_batch_norm_constant_batch_is_zero():
    out = T.batch_norm_1d(Tensor(np.full((5, 2), 3.0)), BatchNormStats(2), "train")
    np.testing.assert_array_equal(out.data, np.zeros((5, 2)))


def test_batch_norm_updates_running_stats():
    st = BatchNormStats(1)
    T.batch_norm_1d(Tensor([[1.0], [3.0]]), st, "train")
    np.testing.assert_allclose(st.mean, [0.2])
    np.testing.assert_allclose(st.var, [0.9 + 0.1 * 2.0])


def test_batch_norm_empty_batch():
    with pytest.raises(ValueError, match="empty"):
        T.batch_norm_1d(Tensor(np.zeros((0, 2))), BatchNormStats(2), "train")


# -- backward --------------------------------------------------------------------


def test_backward_sum_and_dot():
    x = param([1.0, 2.0, 3.0])
    (g,) = grads_of(lambda: T.sum_all(x), x)
    np.testing.assert_array_equal(g, [1, 1, 1])
    w = param([[0.5, -1.0, 2.0]])
    xc = Tensor([[4.0], [5.0], [6.0]])
    (gw,) = grads_of(lambda: T.matmul(w, xc), w)
    np.testing.assert_array_equal(gw, [[4, 5, 6]])


def test_backward_rejects_non_scalar():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = T.relu(x)
    with pytest.raises(T.DimensionError):
        tape.backward(y)


def test_tape_replay_is_identical():
    rng = np.random.default_rng(1)
    w = param(rng.normal(size=(3, 3)))
    x = Tensor(rng.normal(size=(4, 3)))
    with Tape() as tape:
        loss = T.sum_all(T.tanh(T.matmul(x, w)))
    tape.backward(loss)
    first = w.grad.copy()
    w.grad = None
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, first)


def test_tape_is_topological():
    a = param([1.0])
    with Tape() as tape:
        b = T.relu(a)
        c = T.add(b, a)
        T.sum_all(c)
    produced = set()
    for out, inputs, _ in tape.nodes:
        for i in inputs:
            assert i is a or id(i) in produced
        produced.add(id(out))


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    x, w = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(4, 4)))
    idx = np.array([0, 0, 1, 3, 3])
    a = T.segment_sum(T.matmul(x, w), idx, 4).data
    b = T.segment_sum(T.matmul(x, w), idx, 4).data
    assert a.tobytes() == b.tobytes()


# -- finite-difference checks for every differentiable op --------------------------


OP_NAMES = list(op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OP_NAMES)
@pytest.mark.parametrize("seed", range(3))
def test_op_gradients_match_finite_differences(name, seed):
    f, params = op_cases(np.random.default_rng(seed))[name]
    res = check_gradients(f, params)
    assert res.ok, res.failures


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_forward_ops_finite_on_bounded_inputs(vals):
    x = Tensor(np.array(vals).reshape(1, -1))
    for out in (T.relu(x), T.sigmoid(x), T.tanh(x), T.add(x, x), T.mul(x, x),
                T.batch_norm_1d(x, BatchNormStats(x.shape[1]), "train")):
        assert np.all(np.isfinite(out.data))

import gc
import threading
import weakref
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpnn import tensor as T
from dmpnn.tensor import DetachedNode, InvalidSegmentId, NotScalar, ShapeMismatch, Tape, Tensor
from helpers import analytic_grads, numeric_grad, rel_error


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_relu_example():
    x = Tensor(np.array([[-1.0, 0.0, 2.0]]), requires_grad=True)
    with Tape():
        y = T.relu(x)
        T.backward(T.sum_all(y))
    assert y.data.tolist() == [[0.0, 0.0, 2.0]]
    assert x.grad.tolist() == [[0.0, 0.0, 1.0]]


def test_segment_sum_example():
    out = T.segment_sum(Tensor(np.array([[1.0], [2.0], [3.0]])), np.array([0, 0, 1]), 2)
    assert out.data.ravel().tolist() == [3.0, 3.0]


def test_sum_grad_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape():
        T.backward(T.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_twice_doubles():
    rng = np.random.default_rng(0)
    W, x = _leaf(rng, 3, 4), Tensor(rng.normal(size=(4, 2)))
    with Tape():
        loss = T.sum_all(T.relu(T.matmul(W, x)))
        T.backward(loss)
        first = W.grad.copy()
        T.backward(loss)
    np.testing.assert_array_equal(W.grad, 2 * first)


def test_errors():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        with pytest.raises(NotScalar):
            T.backward(T.relu(x))
    with pytest.raises(DetachedNode):
        T.backward(T.sum_all(Tensor(np.ones((2, 2)))))
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(InvalidSegmentId):
        T.segment_sum(Tensor(np.ones((3, 1))), np.array([0, 2, 1]), 2)
    with pytest.raises(InvalidSegmentId):
        T.gather_rows(Tensor(np.ones((3, 1))), np.array([-1]))
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 2, 2)))


def test_matmul_gradient_tight():
    rng = np.random.default_rng(1)
    A, B = _leaf(rng, 4, 3), _leaf(rng, 3, 2)
    f = lambda: T.sum_all(T.square(T.matmul(A, B)))
    gA, gB = analytic_grads(f, [A, B])
    assert rel_error(gA, numeric_grad(lambda: f().item(), A.data)) < 1e-6
    assert rel_error(gB, numeric_grad(lambda: f().item(), B.data)) < 1e-6


# every differentiable op, wrapped so the output is reduced to a scalar through a
# fixed random projection (avoids symmetric cancellations a plain sum would allow)
def _ops(rng):
    ids = np.array([0, 2, 2, 1, 0])
    gather_ids = np.array([4, 0, 0, 3, 1, 2])
    labels = (rng.random((3, 4)) > 0.5).astype(float)
    return {
        "add": (lambda a, b: T.add(a, b), [(3, 4), (1, 4)]),
        "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 1)]),
        "mul": (lambda a, b: T.mul(a, b), [(3, 4), (3, 4)]),
        "scale": (lambda a: T.scale(a, -1.7), [(3, 4)]),
        "matmul": (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)]),
        "transpose": (lambda a: T.transpose(a), [(3, 4)]),
        "relu": (lambda a: T.relu(a), [(3, 4)]),
        "sigmoid": (lambda a: T.sigmoid(a), [(3, 4)]),
        "square": (lambda a: T.square(a), [(3, 4)]),
        "bce": (lambda a: T.bce_with_logits(a, labels), [(3, 4)]),
        "concat0": (lambda a, b: T.concat([a, b], axis=0), [(2, 3), (4, 3)]),
        "concat1": (lambda a, b: T.concat([a, b], axis=1), [(3, 2), (3, 4)]),
        "segment_sum": (lambda a: T.segment_sum(a, ids, 3), [(5, 3)]),
        "segment_sum_csr": (lambda a: T.segment_sum(a, ids, 3, matrix=T.segment_matrix(ids, 3)), [(5, 3)]),
        "gather": (lambda a: T.gather_rows(a, gather_ids), [(5, 3)]),
        "gather_csr": (lambda a: T.gather_rows(a, gather_ids, matrix=T.segment_matrix(gather_ids, 5)), [(5, 3)]),
        "dropout": (lambda a: T.dropout(a, 0.3, True, np.random.default_rng(7)), [(3, 4)]),
    }


@pytest.mark.parametrize("name", list(_ops(np.random.default_rng(0))))
@pytest.mark.parametrize("instance", range(20))
def test_op_gradients(name, instance):
    rng = np.random.default_rng(1000 * instance + zlib.crc32(name.encode()) % 997)
    fn, shapes = _ops(rng)[name]
    leaves = [_leaf(rng, *s) for s in shapes]
    if name == "relu":
        for t in leaves:  # keep finite differences away from the kink
            t.data[np.abs(t.data) < 1e-3] += 0.01
    out_shape = fn(*[Tensor(t.data) for t in leaves]).shape
    proj = Tensor(rng.normal(size=out_shape))
    f = lambda: T.sum_all(T.mul(fn(*leaves), proj))
    grads = analytic_grads(f, leaves)
    for t, g in zip(leaves, grads):
        assert rel_error(g, numeric_grad(lambda: f().item(), t.data)) < 1e-4, name


def test_full_pipeline_gradient():
    rng = np.random.default_rng(5)
    W, x = _leaf(rng, 6, 4), Tensor(rng.normal(size=(4, 3)))
    f = lambda: T.sum_all(T.relu(T.matmul(W, x)))
    (g,) = analytic_grads(f, [W])
    assert rel_error(g, numeric_grad(lambda: f().item(), W.data)) < 1e-4


def test_segment_gather_adjoints_exact():
    rng = np.random.default_rng(2)
    ids = rng.integers(0, 4, size=9)
    v = _leaf(rng, 9, 3)
    up = rng.normal(size=(4, 3))
    with Tape():
        T.backward(T.sum_all(T.mul(T.segment_sum(v, ids, 4), Tensor(up))))
    # adjoint of a segment sum is a gather
    np.testing.assert_array_equal(v.grad, up[ids])
    u = _leaf(rng, 4, 3)
    down = rng.normal(size=(9, 3))
    with Tape():
        T.backward(T.sum_all(T.mul(T.gather_rows(u, ids), Tensor(down))))
    expected = np.zeros((4, 3))
    for i, s in enumerate(ids):
        expected[s] += down[i]
    np.testing.assert_allclose(u.grad, expected, rtol=0, atol=1e-15)


def test_dropout_modes():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(200, 50)))
    assert T.dropout(x, 0.0, True, rng) is x
    assert T.dropout(x, 0.5, False, rng) is x
    ones = Tensor(np.ones((400, 250)))
    y = T.dropout(ones, 0.25, True, np.random.default_rng(1)).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
    assert abs(y.mean() - 1.0) < 0.01
    a = T.dropout(ones, 0.25, True, np.random.default_rng(9)).data
    b = T.dropout(ones, 0.25, True, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


def test_untracked_without_tape():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = T.relu(x)
    assert not y.tracked


def test_finished_graph_freed_without_cycle_collector():
    x = _leaf(np.random.default_rng(0), 30, 30)
    gc.disable()
    try:
        tape = Tape()
        with tape:
            h = T.relu(T.matmul(x, x))
            loss = T.sum_all(h)
            T.backward(loss)
        probe = weakref.ref(tape)
        del tape
        assert probe() is None and not h.tracked
        assert probe() is None
    finally:
        gc.enable()
    assert x.grad is not None


def test_independent_tapes_on_threads():
    results = {}

    def work(k):
        rng = np.random.default_rng(k)
        W = _leaf(rng, 5, 5)
        x = Tensor(rng.normal(size=(5, 3)))
        for _ in range(50):
            W.grad = None
            with Tape():
                T.backward(T.sum_all(T.square(T.matmul(W, x))))
        results[k] = (W.grad.copy(), 2 * (W.data @ x.data) @ x.data.T)

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for got, want in results.values():
        np.testing.assert_allclose(got, want, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 12),
    k=st.integers(1, 5),
    seed=st.integers(0, 2**31),
)
def test_segment_sum_matches_loop(n, k, seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, k, size=n)
    vals = rng.normal(size=(n, 2))
    out = T.segment_sum(Tensor(vals), ids, k).data
    want = np.zeros((k, 2))
    for i, s in enumerate(ids):
        want[s] += vals[i]
    np.testing.assert_allclose(out, want, atol=1e-14)


def test_untracked_matmul_rows_independent_of_position():
    rng = np.random.default_rng(3)
    for n in (1, 5, 37, 1001):
        x, w = rng.normal(size=(n, 139)), rng.normal(size=(139, 300))
        perm = rng.permutation(n)
        full = T.matmul(Tensor(x), Tensor(w)).data
        np.testing.assert_array_equal(T.matmul(Tensor(x[perm]), Tensor(w)).data, full[perm])
        np.testing.assert_array_equal(T.matmul(Tensor(x[-1:]), Tensor(w)).data, full[-1:])
        np.testing.assert_allclose(full, x @ w, rtol=1e-13, atol=1e-12)

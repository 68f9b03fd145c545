import math
import zlib

import numpy as np
import pytest

from mmfusion.core import (Graph, ParameterStore, ShapeError, Tensor, backward, grad_check,
                           ops, relative_error)
from mmfusion.training import AdamState, TrainConfig, adam_step


def run_backward(loss_fn):
    with Graph() as g:
        loss = loss_fn()
    backward(g, loss)
    return loss


# --- forward values -------------------------------------------------------------

def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(ops.matmul(np.eye(3), a).data, a)


def test_sigmoid_zero_is_half():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_is_stable_at_extremes():
    out = ops.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_conv1d_matches_sliding_dot_product():
    out = ops.conv1d(Tensor([1.0, 2.0, 3.0, 4.0]), Tensor([1.0, -1.0])).data
    np.testing.assert_array_equal(out, [-1.0, -1.0, -1.0])


def test_conv1d_multichannel_matches_loops():
    rng = np.random.default_rng(1)
    x, k = rng.normal(size=(2, 7, 3)), rng.normal(size=(3, 3, 4))
    out = ops.conv1d(Tensor(x), Tensor(k)).data
    ref = np.zeros((2, 5, 4))
    for b in range(2):
        for i in range(5):
            for f in range(4):
                ref[b, i, f] = sum(x[b, i + j, e] * k[j, e, f] for j in range(3) for e in range(3))
    np.testing.assert_allclose(out, ref, rtol=1e-13)


def test_softmax_rows_sum_to_one():
    out = ops.softmax(Tensor(np.random.default_rng(2).normal(size=(4, 6)) * 50)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


def test_shape_error_names_primitive_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_apply_is_pure():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    first = ops.tanh(ops.matmul(a, b)).data
    second = ops.tanh(ops.matmul(a, b)).data
    assert first.tobytes() == second.tobytes()


# --- backward -------------------------------------------------------------------

def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    run_backward(lambda: ops.square(x))
    assert x.grad == 6.0


def test_sigmoid_gradient_at_zero():
    w = Tensor(np.zeros(5), requires_grad=True)
    run_backward(lambda: ops.sum(ops.sigmoid(w)))
    np.testing.assert_array_equal(w.grad, 0.25)


def test_backward_requires_scalar_loss():
    w = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        out = ops.scale(w, 2.0)
    with pytest.raises(ShapeError):
        backward(g, out)


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = rng.normal(size=(5, 3))
    with Graph() as g:
        loss = ops.sum(ops.tanh(ops.matmul(x, w)))
    backward(g, loss)
    once = w.grad.copy()
    backward(g, loss)
    np.testing.assert_allclose(w.grad, 2 * once, rtol=0, atol=0)


def test_shared_input_accumulates():
    x = Tensor(2.0, requires_grad=True)
    run_backward(lambda: ops.mul(x, x) + x)
    assert x.grad == 5.0


def test_two_layer_bce_matches_finite_differences():
    rng = np.random.default_rng(5)
    store = ParameterStore()
    store.add("W1", rng.normal(size=(4, 3)))
    store.add("b1", rng.normal(size=3))
    store.add("W2", rng.normal(size=(3, 1)))
    x, y = rng.normal(size=(1, 4)), 1.0

    def loss():
        h = ops.tanh(ops.add(ops.matmul(x, store["W1"]), store["b1"]))
        p = ops.sigmoid(ops.matmul(h, store["W2"]))[0, 0]
        return ops.scale(ops.log(p), -y)

    report = grad_check(loss, store, step=1e-5, tolerance=1e-4)
    assert report.passed, str(report)


# --- every primitive against finite differences ----------------------------------

PRIMITIVE_CASES = {
    "matmul": ([(3, 4), (4, 2)], lambda a, b: ops.matmul(a, b)),
    "matmul_batched": ([(2, 3, 4), (4, 2)], lambda a, b: ops.matmul(a, b)),
    "add_broadcast": ([(3, 4), (4,)], lambda a, b: ops.add(a, b)),
    "sub": ([(3, 4), (3, 4)], lambda a, b: ops.sub(a, b)),
    "mul_broadcast": ([(2, 3), (1, 3)], lambda a, b: ops.mul(a, b)),
    "scale": ([(5,)], lambda a: ops.scale(a, -1.7)),
    "safe_div": ([(4,), (4,)], lambda a, b: ops.safe_div(a, ops.add(ops.square(b), 0.5))),
    "concat": ([(2, 3), (2, 2)], lambda a, b: ops.concat([a, b], axis=1)),
    "slice": ([(4, 5)], lambda a: a[1:3, ::2]),
    "reshape": ([(2, 6)], lambda a: ops.reshape(a, (3, 4))),
    "transpose": ([(2, 3, 4)], lambda a: ops.transpose(a, (2, 0, 1))),
    "sum_axis": ([(3, 4)], lambda a: ops.sum(a, axis=0)),
    "mean": ([(3, 4)], lambda a: ops.mean(a, axis=1)),
    "sigmoid": ([(6,)], ops.sigmoid),
    "tanh": ([(6,)], ops.tanh),
    "relu": ([(6,)], ops.relu),
    "exp": ([(6,)], ops.exp),
    "log": ([(6,)], lambda a: ops.log(ops.add(ops.square(a), 0.5))),
    "square": ([(6,)], ops.square),
    "clip": ([(6,)], lambda a: ops.clip(a, -1.0, 1.0)),
    "conv1d": ([(7, 3), (2, 3, 4)], lambda a, b: ops.conv1d(a, b)),
    "maxpool_time": ([(2, 5, 3)], ops.maxpool_time),
    "softmax": ([(3, 5)], ops.softmax),
    "gru_scan": ([(2, 4, 9), (3, 9)], lambda x, u: ops.gru_scan(x, u)),
    "gru_scan_masked": ([(3, 4, 6), (2, 6)],
                        lambda x, u: ops.gru_scan(x, u, mask=np.array([[1, 1, 0, 0], [1, 1, 1, 1],
                                                                      [0, 0, 0, 0.0]]))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    shapes, fn = PRIMITIVE_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for trial in range(100):
        store = ParameterStore()
        for i, shape in enumerate(shapes):
            store.add(f"x{i}", rng.uniform(-2, 2, size=shape))
        weights = rng.normal(size=fn(*[store[f"x{i}"] for i in range(len(shapes))]).shape)

        def loss():
            out = fn(*[store[f"x{i}"] for i in range(len(shapes))])
            return ops.sum(ops.mul(out, weights))

        report = grad_check(loss, store, step=1e-5, tolerance=1e-4)
        assert report.passed, f"trial {trial}: {report}"


# --- grad_check -----------------------------------------------------------------

def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_grad_check_quadratic_is_exact():
    rng = np.random.default_rng(6)
    store = ParameterStore()
    store.add("a", rng.normal(size=(3, 3)))
    store.add("b", rng.normal(size=4))
    report = grad_check(lambda: ops.add(ops.sum(ops.square(store["a"])),
                                        ops.sum(ops.square(store["b"]))), store)
    assert report.worst < 1e-8


def test_grad_check_reports_frozen_gradient_as_zero():
    store = ParameterStore()
    store.add("w", [1.0, 2.0])
    store.add("f", [3.0], frozen=True)
    report = grad_check(lambda: ops.sum(ops.square(ops.concat([store["w"], store["f"]]))), store)
    assert report.passed
    np.testing.assert_array_equal(report.analytic["f"], 0.0)


def test_grad_check_flags_wrong_gradient():
    from mmfusion.core.tensor import apply, primitive

    @primitive("_test_bad_square")
    def _bad(x):
        return x * x, lambda g: (g * x,)  # missing factor 2

    store = ParameterStore()
    store.add("w", [1.0, -2.0])
    report = grad_check(lambda: ops.sum(apply("_test_bad_square", store["w"])), store)
    assert not report.passed
    assert report.flagged["w"] == [(0,), (1,)]


def test_grad_check_rejects_nonpositive_step():
    store = ParameterStore()
    store.add("w", [1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: ops.sum(store["w"]), store, step=0.0)


# --- parameter store ------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    store = ParameterStore()
    store.add("a.w", rng.normal(size=(3, 4)) * 1e-7)
    store.add("a.b", np.array([math.pi, -0.0, 1e300, 5e-324]))
    store.add("c", rng.normal(size=()), frozen=True)
    path = tmp_path / "ckpt.json"
    store.save(path)
    back = ParameterStore.load(path)
    assert back.names() == store.names()
    for n in store.names():
        assert back[n].data.tobytes() == store[n].data.tobytes()
        assert back[n].shape == store[n].shape
        assert back.is_frozen(n) == store.is_frozen(n)


def test_checkpoint_rejects_other_formats():
    with pytest.raises(ValueError):
        ParameterStore.from_dict({"format": "something-else", "params": {}})


def test_frozen_entry_gets_no_gradient_and_no_update():
    store = ParameterStore()
    store.add("text.w", [1.0, 2.0])
    store.add("pred.w", [3.0])
    store.freeze("text.")
    before = store["text.w"].data.copy()
    state = AdamState()
    for _ in range(5):
        store.zero_grad()
        run_backward(lambda: ops.add(ops.sum(ops.square(store["text.w"])),
                                     ops.sum(ops.square(store["pred.w"]))))
        np.testing.assert_array_equal(store.grad("text.w"), 0.0)
        adam_step(store, state, TrainConfig(lr=0.1))
    assert store["text.w"].data.tobytes() == before.tobytes()
    assert store["pred.w"].data[0] < 3.0


def test_freeze_is_prefix_based_and_reversible():
    store = ParameterStore()
    for n in ("text.a", "text.b", "textual", "pred.a"):
        store.add(n, [0.0])
    store.freeze("text.")
    assert [n for n in store.names() if store.is_frozen(n)] == ["text.a", "text.b"]
    store.unfreeze("text.")
    assert not any(store.is_frozen(n) for n in store.names())


def test_duplicate_names_rejected():
    store = ParameterStore()
    store.add("w", [0.0])
    with pytest.raises(KeyError):
        store.add("w", [1.0])


def test_snapshot_restore_and_update():
    store = ParameterStore()
    store.add("interp.a", [1.0])
    store.add("pred.b", [2.0])
    snap = store.snapshot()
    store["interp.a"].data[...] = 9.0
    store.restore(snap)
    assert store["interp.a"].data[0] == 1.0
    other = ParameterStore()
    other.update(store, "interp.")
    assert other.names() == ["interp.a"]
    other["interp.a"].data[...] = 5.0
    assert store["interp.a"].data[0] == 1.0  # update copies

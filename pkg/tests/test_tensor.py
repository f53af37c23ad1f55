import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from emopolar import tensor as T
from emopolar.tensor import Tensor


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def run(f):
    with T.Graph() as g:
        out = f()
    g.backward(out)
    return out


# --- forward values ---------------------------------------------------------

def test_matmul_identity_and_hand_value():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    m = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(T.matmul(eye, m).data, m.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_values():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3)
    big = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(big).all() and big[0] == pytest.approx(1.0) and big[1] < 1e-300 + 1e-30
    e = np.exp([1.0, 2.0, 3.0])
    expected = e / e.sum()
    assert np.allclose(T.softmax(Tensor([1.0, 2.0, 3.0])).data, [0.09003, 0.24473, 0.66524], atol=1e-4)
    assert np.allclose(T.softmax(Tensor([1.0, 2.0, 3.0])).data, expected, atol=1e-15)


def test_softmax_nan_raises():
    with pytest.raises(T.NumericError):
        T.softmax(Tensor([0.0, np.nan]))


def test_layer_norm_values():
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    assert np.array_equal(T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), g, b).data, [[0.0, 0.0, 0.0]])
    out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    assert np.allclose(out, [[-1.0, 1.0]], atol=1e-3)
    with pytest.raises(T.DimensionError):
        T.layer_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_scalar_ops():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.bce_loss(Tensor([0.0]), [1.0]).item() == pytest.approx(np.log(2.0), abs=1e-12)
    table = Tensor(np.arange(12.0).reshape(4, 3))
    assert np.array_equal(T.embed(table, [2]).data, [table.data[2]])
    with pytest.raises(IndexError):
        T.embed(table, [4])
    with pytest.raises(ValueError):
        T.bce_loss(Tensor([0.0]), [0.5])


def test_gelu_known_points():
    out = T.gelu(Tensor([0.0, 1.0, -1.0])).data
    # x * Phi(x); Phi(1) = 0.841344746...
    assert np.allclose(out, [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-15)


# --- backward contract ------------------------------------------------------

def test_sum_gives_unit_grads_and_disconnected_gets_zero():
    rng = np.random.default_rng(0)
    a, unused = param(rng, 3, 2), param(rng, 2)
    run(lambda: T.sum_(a))
    assert np.array_equal(a.grad, np.ones((3, 2)))
    assert np.array_equal(unused.grad, np.zeros(2))


def test_backward_accumulates_without_reset():
    a = Tensor(np.ones(3), requires_grad=True)
    run(lambda: T.sum_(a))
    run(lambda: T.sum_(a))
    assert np.array_equal(a.grad, np.full(3, 2.0))


def test_non_scalar_root_rejected():
    a = Tensor(np.ones(3), requires_grad=True)
    with T.Graph() as g:
        out = T.mul(a, 2.0)
    with pytest.raises(T.GraphContractError):
        g.backward(out)


def test_nothing_recorded_outside_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    out = T.sum_(a)
    assert not out.requires_grad
    assert T.active_graph() is None


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    w, x = param(rng, 4, 4), param(rng, 5, 4)
    grads = []
    for _ in range(2):
        w.zero_grad()
        run(lambda: T.sum_(T.softmax(T.matmul(T.gelu(x), w))))
        grads.append(w.grad.copy())
    assert np.array_equal(grads[0].tobytes(), grads[1].tobytes())


def test_graphs_are_thread_local():
    errors = []

    def worker(seed):
        try:
            rng = np.random.default_rng(seed)
            a = param(rng, 3, 3)
            for _ in range(20):
                a.zero_grad()
                with T.Graph() as g:
                    out = T.sum_(T.matmul(a, a))
                g.backward(out)
                expected = np.ones((3, 3)) @ a.data.T + a.data.T @ np.ones((3, 3))
                assert np.allclose(a.grad, expected)
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


# --- finite-difference oracle -----------------------------------------------

OP_CASES = {
    "add": lambda r: ((a := param(r, 3, 4)), (b := param(r, 4)), lambda: T.sum_(T.mul(T.add(a, b), T.add(a, b)))),
    "sub": lambda r: ((a := param(r, 2, 3)), (b := param(r, 2, 3)), lambda: T.sum_(T.mul(T.sub(a, b), a))),
    "mul": lambda r: ((a := param(r, 3, 2)), (b := param(r, 3, 2)), lambda: T.sum_(T.mul(T.mul(a, b), a))),
    "matmul": lambda r: ((a := param(r, 3, 4)), (b := param(r, 4, 2)), lambda: T.sum_(T.matmul(a, b))),
    "matmul_batched": lambda r: ((a := param(r, 2, 3, 4)), (b := param(r, 2, 4, 2)),
                                 lambda: T.sum_(T.mul(T.matmul(a, b), T.matmul(a, b)))),
    "matmul_3d_2d": lambda r: ((a := param(r, 2, 3, 4)), (b := param(r, 4, 2)),
                               lambda: T.sum_(T.mul(T.matmul(a, b), T.matmul(a, b)))),
    "softmax": lambda r: ((a := param(r, 3, 5)), (c := param(r, 3, 5)), lambda: T.sum_(T.mul(T.softmax(a), c))),
    "layer_norm": lambda r: ((a := param(r, 3, 5)), (g := param(r, 5)), (b := param(r, 5)), (c := param(r, 3, 5)),
                             lambda: T.sum_(T.mul(T.layer_norm(a, g, b), c))),
    "gelu": lambda r: ((a := param(r, 4, 3)), lambda: T.sum_(T.mul(T.gelu(a), T.gelu(a)))),
    "sigmoid": lambda r: ((a := param(r, 4, 3)), lambda: T.sum_(T.mul(T.sigmoid(a), a))),
    "embed": lambda r: ((t := param(r, 5, 3)), (c := param(r, 4, 3)),
                        lambda: T.sum_(T.mul(T.embed(t, [1, 3, 1, 0]), c))),
    "bce_loss": lambda r: ((z := param(r, 6)), lambda: T.bce_loss(z, (np.arange(6) % 2).astype(float))),
    "reshape_transpose": lambda r: ((a := param(r, 2, 3, 4)), (c := param(r, 4, 6)),
                                    lambda: T.sum_(T.mul(T.reshape(T.transpose(a, (2, 0, 1)), (4, 6)), c))),
    "concat": lambda r: ((a := param(r, 2, 3)), (b := param(r, 2, 2)), (c := param(r, 2, 5)),
                         lambda: T.sum_(T.mul(T.concat([a, b], axis=-1), c))),
    "mean_sum_axis": lambda r: ((a := param(r, 3, 4)), (c := param(r, 3)),
                                lambda: T.mean(T.mul(T.sum_(a, axis=1), c))),
    "two_layer": lambda r: ((w1 := param(r, 4, 5)), (w2 := param(r, 5, 1)), (x := param(r, 3, 4)),
                            lambda: T.bce_loss(T.reshape(T.matmul(T.gelu(T.matmul(x, w1)), w2), (3,)),
                                               [1.0, 0.0, 1.0])),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", range(20))
def test_every_op_passes_grad_check(name, seed):
    *params, f = OP_CASES[name](np.random.default_rng(seed))
    assert T.grad_check(f, params) < 1e-4


def test_grad_check_exact_for_linear():
    rng = np.random.default_rng(1)
    a = param(rng, 3, 3)
    c = rng.normal(size=(3, 3))
    assert T.grad_check(lambda: T.sum_(T.mul(a, c)), [a]) < 1e-9


def test_grad_check_catches_corrupted_rule(monkeypatch):
    orig = T.gelu

    def bad_gelu(x):
        out = orig(x)
        node = T.active_graph().nodes[-1] if T.active_graph() else None
        if node is not None:
            good = node.backward
            node.backward = lambda g: (good(g)[0] * 1.5,)
        return out

    rng = np.random.default_rng(2)
    a = param(rng, 3, 3)
    assert T.grad_check(lambda: T.sum_(bad_gelu(a)), [a]) > 1e-2


# --- properties ---------------------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x)).data
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-9)


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)), st.data())
def test_bce_nonnegative(z, data):
    y = data.draw(hnp.arrays(np.float64, z.shape, elements=st.sampled_from([0.0, 1.0])))
    assert T.bce_loss(Tensor(z), y).item() >= 0.0


def test_bce_vanishes_only_in_the_limit():
    assert T.bce_loss(Tensor([40.0]), [1.0]).item() < 1e-15
    assert T.bce_loss(Tensor([5.0]), [1.0]).item() > 0.0


# --- checkpoint format ------------------------------------------------------

def test_checkpoint_roundtrip_and_layout(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(2, 3)), "bias": rng.normal(size=4), "scalar": np.array(1.5)}
    path = tmp_path / "p.patn"
    T.save_tensors(path, tensors)
    raw = path.read_bytes()
    assert raw[:4] == b"PATN"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    back = T.load_tensors(path)
    assert list(back) == ["a", "bias", "scalar"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_rejects_bad_files(tmp_path):
    p = tmp_path / "x.patn"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(T.CheckpointError):
        T.load_tensors(p)
    T.save_tensors(p, {"w": np.ones((4, 4))})
    p.write_bytes(p.read_bytes()[:-9])
    with pytest.raises(T.CheckpointError):
        T.load_tensors(p)


def test_tensor_invariants():
    t = Tensor(np.zeros((2, 3)), requires_grad=True)
    assert t.size == 6 and t.grad.shape == t.shape
    assert not T.parameters_finite([Tensor([np.inf])])

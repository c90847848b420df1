import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hazeforge import engine as E
from hazeforge.engine import AdamState, Tensor, adam_step, backward, grad_check
from hazeforge.errors import ContractError, DimensionError, PreconditionError


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def grad_of(fn, *xs):
    ts = [leaf(x) for x in xs]
    backward(fn(*ts))
    return [t.grad for t in ts]


# --- conv2d ---------------------------------------------------------------

def test_conv_all_ones_3x3():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = E.conv2d(x, w, Tensor(np.zeros(1)), padding=1).data[0]
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_1x1_identity_sums_channels(rng):
    x = rng.standard_normal((3, 5, 4))
    out = E.conv2d(Tensor(x), Tensor(np.ones((1, 3, 1, 1)))).data
    np.testing.assert_allclose(out[0], x.sum(axis=0), rtol=0, atol=1e-14)
    single = E.conv2d(Tensor(x[:1]), Tensor(np.ones((1, 1, 1, 1)))).data
    np.testing.assert_array_equal(single, x[:1])


def test_conv_centre_tap_is_identity(rng):
    x = rng.standard_normal((1, 6, 7))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(E.conv2d(Tensor(x), Tensor(k), padding=1).data, x)


def test_conv_output_size():
    out = E.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((5, 2, 3, 3))), padding=1)
    assert out.shape == (5, 4, 4)


def test_conv_is_cross_correlation():
    x = np.zeros((1, 3, 3))
    x[0, 1, 1] = 1.0
    k = np.arange(9.0).reshape(1, 1, 3, 3)
    out = E.conv2d(Tensor(x), Tensor(k), padding=1).data[0]
    # an impulse picks up the kernel flipped, because nothing flips it first
    np.testing.assert_array_equal(out, k[0, 0, ::-1, ::-1])


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((2, 7, 7))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = E.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                ref[o, i, j] = np.sum(xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_batched_equals_per_sample(rng):
    x = rng.standard_normal((3, 2, 5, 5))
    w, b = Tensor(rng.standard_normal((4, 2, 3, 3))), Tensor(rng.standard_normal(4))
    batched = E.conv2d(Tensor(x), w, b, padding=1).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], E.conv2d(Tensor(x[i]), w, b, padding=1).data,
                                   rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("xs, ws, kw", [
    ((2, 5, 5), (1, 3, 3, 3), {}),            # channel mismatch
    ((2, 5, 5), (1, 2, 2, 2), {}),            # even kernel
    ((2, 6, 6), (1, 2, 3, 3), {"stride": 2}),  # (6-3)/2 is not exact
])
def test_conv_rejects_bad_shapes(xs, ws, kw):
    with pytest.raises(DimensionError):
        E.conv2d(Tensor(np.zeros(xs)), Tensor(np.zeros(ws)), **kw)


def test_conv_grad_check_relu():
    rng = np.random.default_rng(3)
    x = leaf(rng.standard_normal((1, 6, 6)))
    w = leaf(rng.standard_normal((2, 1, 3, 3)))
    rep = grad_check(lambda: E.sum(E.relu(E.conv2d(x, w, padding=1))), [x, w], tol=1e-4)
    assert rep.passed, rep


# --- pointwise ops ----------------------------------------------------------

def test_relu_values_and_grad():
    np.testing.assert_array_equal(E.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    (g,) = grad_of(lambda x: E.sum(E.relu(x)), [-1.0, 2.0])
    np.testing.assert_array_equal(g, [0, 1])
    (g0,) = grad_of(lambda x: E.sum(E.relu(x)), [0.0])
    assert g0[0] == 0.0


def test_sigmoid_points():
    assert E.sigmoid(Tensor(0.0)).item() == 0.5
    v = E.sigmoid(Tensor(-40.0)).item()
    assert 0.0 < v < 1e-6
    (g,) = grad_of(lambda x: E.sum(E.sigmoid(x)), [0.0])
    assert g[0] == pytest.approx(0.25, abs=1e-15)


def test_sigmoid_extreme_inputs_stay_finite():
    out = E.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_abs_and_sqrt_subgradient_at_zero():
    (ga,) = grad_of(lambda x: E.sum(E.abs(x)), [0.0, -2.0, 3.0])
    np.testing.assert_array_equal(ga, [0, -1, 1])
    (gs,) = grad_of(lambda x: E.sum(E.sqrt(x)), [0.0, 4.0])
    np.testing.assert_array_equal(gs, [0.0, 0.25])


def test_mean_and_identity_cases(rng):
    assert E.mean(Tensor([0.2, 0.4])).item() == pytest.approx(0.3, abs=1e-15)
    I = rng.random((3, 4, 4))
    np.testing.assert_array_equal(E.mul(Tensor(np.ones_like(I)), Tensor(I)).data, I)
    np.testing.assert_array_equal((Tensor(np.zeros_like(I)) + Tensor(I)).data, I)


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        E.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(DimensionError):
        E.mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


def test_concat_channels():
    a, b = Tensor(np.ones((16, 8, 8))), Tensor(np.zeros((16, 8, 8)))
    assert E.concat_channels([a, b]).shape == (32, 8, 8)
    assert E.concat_channels([a]) is a
    with pytest.raises(DimensionError):
        E.concat_channels([a, Tensor(np.zeros((16, 4, 8)))])
    ga, gb = grad_of(lambda x, y: E.sum(E.concat_channels([x, y])),
                     np.ones((2, 3, 3)), np.ones((1, 3, 3)))
    np.testing.assert_array_equal(ga, np.ones((2, 3, 3)))
    np.testing.assert_array_equal(gb, np.ones((1, 3, 3)))


def test_concat_then_split_via_masked_sums(rng):
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((3, 3, 3))
    ta, tb = leaf(a), leaf(b)
    cat = E.concat_channels([ta, tb])
    mask = np.zeros(cat.shape)
    mask[:2] = 1.0
    backward(E.sum(cat * Tensor(cat.data * mask)))
    # d/da sum(a * a_frozen) = a_frozen: recovers a exactly, and zero for b
    np.testing.assert_array_equal(ta.grad, a)
    np.testing.assert_array_equal(tb.grad, np.zeros_like(b))


def test_avg_pool2():
    np.testing.assert_array_equal(E.avg_pool2(Tensor(np.full((2, 4, 6), 0.7))).data,
                                  np.full((2, 2, 3), 0.7))
    assert E.avg_pool2(Tensor([[[1.0, 3.0], [5.0, 7.0]]])).data[0, 0, 0] == 4.0
    (g,) = grad_of(lambda x: E.sum(E.avg_pool2(x)), np.ones((1, 4, 4)))
    np.testing.assert_array_equal(g, np.full((1, 4, 4), 0.25))
    with pytest.raises(DimensionError):
        E.avg_pool2(Tensor(np.zeros((1, 3, 4))))


# --- backward ---------------------------------------------------------------

def test_backward_basics():
    (g,) = grad_of(E.sum, np.zeros(4))
    np.testing.assert_array_equal(g, [1, 1, 1, 1])
    (g,) = grad_of(lambda x: E.sum(x * x), [1.0, 2.0])
    np.testing.assert_array_equal(g, [2, 4])


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        backward(leaf(np.ones(3)) * 2.0)


def test_shared_subexpression_accumulates():
    x = leaf([3.0])
    y = x * x
    backward(E.sum(y + y * x))  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad[0] == 2 * 3 + 3 * 9


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with E.no_grad():
        y = E.sum(x * x)
    assert not y.requires_grad


def test_backward_is_deterministic(rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    runs = []
    for _ in range(2):
        tx, tw = leaf(x), leaf(w)
        backward(E.sum(E.square(E.relu(E.conv2d(tx, tw, padding=1)))))
        runs.append((tx.grad.tobytes(), tw.grad.tobytes()))
    assert runs[0] == runs[1]


# --- grad_check harness -------------------------------------------------------

def test_grad_check_linear_is_exact(rng):
    p = leaf(rng.standard_normal(10))
    c = Tensor(rng.standard_normal(10))
    rep = grad_check(lambda: E.sum(p * c), [p])
    assert rep.max_rel_error < 1e-10


def test_grad_check_flags_corrupted_gradient(rng):
    x = leaf(rng.standard_normal((1, 6, 6)))
    w = leaf(rng.standard_normal((2, 1, 3, 3)))

    def f():
        return E.sum(E.square(E.conv2d(x, w, padding=1)))

    backward(f())
    bad = [x.grad * 1.1, w.grad * 1.1]
    rep = grad_check(f, [x, w], analytic=bad)
    assert not rep.passed
    assert rep.max_rel_error > 0.05


@given(hnp.arrays(np.float64, st.integers(1, 6),
                  elements=st.floats(-3, 3).filter(lambda v: abs(v) > 1e-2)))
def test_square_abs_gradients_property(x):
    (g,) = grad_of(lambda t: E.sum(E.square(t) + E.abs(t)), x)
    np.testing.assert_allclose(g, 2 * x + np.sign(x), rtol=1e-15, atol=0)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                  elements=st.floats(-1e3, 1e3)))
def test_forward_ops_stay_finite(x):
    t = Tensor(x)
    for out in (E.relu(t), E.sigmoid(t), E.abs(t), E.square(t), E.sqrt(E.abs(t)),
                E.mean(t), E.clip(t, -1, 1)):
        assert np.all(np.isfinite(out.data))


# --- Adam -------------------------------------------------------------------

def test_adam_first_step():
    w = leaf([0.0])
    state = AdamState.for_params([w])
    adam_step([w], [np.array([1.0])], state, 1e-3)
    assert w.data[0] == pytest.approx(-1e-3, rel=1e-7)
    assert state.t == 1


def test_adam_zero_grad_is_noop(rng):
    w0 = rng.standard_normal(5)
    w = leaf(w0.copy())
    state = AdamState.for_params([w])
    for _ in range(5):
        adam_step([w], [np.zeros(5)], state, 1e-2)
    np.testing.assert_array_equal(w.data, w0)
    assert np.all(state.v[0] >= 0)


def test_adam_errors():
    w = leaf([0.0, 1.0])
    state = AdamState.for_params([w])
    with pytest.raises(DimensionError):
        adam_step([w], [np.zeros(3)], state, 1e-3)
    with pytest.raises(PreconditionError):
        adam_step([w], [np.zeros(2)], state, 0.0)


def test_adam_minimises_quadratic():
    w = leaf([5.0, -3.0])
    state = AdamState.for_params([w])
    for _ in range(2000):
        backward(E.sum(E.square(w)))
        adam_step([w], [w.grad], state, 0.05)
    assert np.all(np.abs(w.data) < 1e-2)

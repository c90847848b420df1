import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from hazeforge.engine import Tensor
from hazeforge.errors import DimensionError, PreconditionError
from hazeforge.losses import (LossWeights, color_loss, color_terms, gaussian_taps, l1_loss,
                              perceptual_loss, ssim_loss, ssim_map, total_loss)


def _img(rng, shape=(3, 16, 16)):
    return rng.uniform(0.0, 1.0, size=shape)


def test_l1_example_and_gradient():
    J = Tensor(np.full((3, 4, 4), 0.2), requires_grad=True)
    Y = Tensor(np.full((3, 4, 4), 0.5))
    loss = l1_loss(J, Y)
    assert loss.item() == pytest.approx(0.3, abs=1e-15)
    loss.backward()
    assert np.allclose(J.grad, -1.0 / J.size)


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        l1_loss(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 4, 5))))


def test_perceptual_zero_and_symmetric(rng):
    a, b = _img(rng), _img(rng)
    assert perceptual_loss(Tensor(a), Tensor(a)).item() == 0.0
    ab = perceptual_loss(Tensor(a), Tensor(b)).item()
    ba = perceptual_loss(Tensor(b), Tensor(a)).item()
    assert ab > 0
    assert ab == pytest.approx(ba, rel=1e-12)


def test_perceptual_needs_divisible_dims(rng):
    with pytest.raises(DimensionError):
        perceptual_loss(Tensor(_img(rng, (3, 24, 24))), Tensor(_img(rng, (3, 24, 24))))


def test_gaussian_taps_normalised():
    t = gaussian_taps()
    assert t.shape == (11,)
    assert t.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(t, t[::-1])
    assert t.argmax() == 5


def test_ssim_identity(rng):
    x = Tensor(_img(rng))
    assert ssim_map(x, x)[1].item() == pytest.approx(1.0, abs=1e-9)
    assert abs(ssim_loss(x, x).item()) < 1e-9


def test_ssim_constant_images_closed_form():
    a, b = Tensor(np.full((3, 16, 16), 0.5)), Tensor(np.full((3, 16, 16), 0.7))
    c1 = 0.01 ** 2
    expected = (2 * 0.35 + c1) / (0.74 + c1)
    assert ssim_map(a, b)[1].item() == pytest.approx(expected, abs=1e-6)
    assert expected == pytest.approx(0.94595, abs=1e-5)


def test_ssim_inverted_below_one(rng):
    x = _img(rng)
    assert ssim_map(Tensor(x), Tensor(1.0 - x))[1].item() < 1.0


def test_ssim_matches_scipy_window_oracle(rng):
    J, Y = _img(rng, (3, 20, 18)), _img(rng, (3, 20, 18))
    win = np.outer(gaussian_taps(), gaussian_taps())

    def f(x):
        return signal.correlate2d(x, win, mode="valid")

    c1, c2 = 0.01 ** 2, 0.03 ** 2
    maps = []
    for ch in range(3):
        x, y = J[ch], Y[ch]
        m1, m2 = f(x), f(y)
        s11, s22, s12 = f(x * x) - m1 ** 2, f(y * y) - m2 ** 2, f(x * y) - m1 * m2
        maps.append((2 * m1 * m2 + c1) * (2 * s12 + c2) / ((m1 ** 2 + m2 ** 2 + c1) * (s11 + s22 + c2)))
    oracle = np.stack(maps)
    smap, mean = ssim_map(Tensor(J), Tensor(Y))
    assert smap.shape == (3, 10, 8)
    assert np.allclose(smap.data, oracle, atol=1e-12)
    assert mean.item() == pytest.approx(oracle.mean(), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(DimensionError):
        ssim_map(Tensor(np.zeros((3, 10, 10))), Tensor(np.zeros((3, 10, 10))))


def test_color_examples():
    red = np.zeros((3, 2, 2)); red[0] = 1.0
    green = np.zeros((3, 2, 2)); green[1] = 1.0
    assert color_loss(Tensor(red), Tensor(green)).item() == pytest.approx(1.0, abs=1e-15)
    assert color_loss(Tensor(2 * red), Tensor(red)).item() == pytest.approx(0.0, abs=1e-15)


def test_color_zero_vectors_contribute_nothing():
    J = np.zeros((3, 2, 2)); J[0, 0, 0] = 1.0
    Y = np.zeros((3, 2, 2)); Y[1] = 1.0
    t = color_terms(Tensor(J), Tensor(Y)).data
    assert t[0, 0] == pytest.approx(1.0)
    assert np.all(t.ravel()[1:] == 0.0)


@given(st.integers(0, 2**31 - 1))
def test_color_terms_in_unit_interval(seed):
    r = np.random.default_rng(seed)
    t = color_terms(Tensor(r.uniform(0, 1, (3, 5, 5))), Tensor(r.uniform(0, 1, (3, 5, 5)))).data
    assert np.all(t >= 0.0) and np.all(t <= 1.0 + 1e-12)


def test_total_is_sum_of_parts(rng):
    J, Y = Tensor(_img(rng)), Tensor(_img(rng))
    total, parts = total_loss(J, Y)
    s = parts["l1"] + parts["perceptual"] + parts["ssim"] + parts["color"]
    assert total.item() == pytest.approx(s, abs=1e-12)
    assert parts["total"] == total.item()


def test_total_linear_in_weights(rng):
    J, Y = Tensor(_img(rng)), Tensor(_img(rng))
    _, parts = total_loss(J, Y)
    w = LossWeights(0.5, 2.0, 0.0, 3.0)
    total, parts_w = total_loss(J, Y, w)
    expect = 0.5 * parts["l1"] + 2.0 * parts["perceptual"] + 3.0 * parts["color"]
    assert total.item() == pytest.approx(expect, abs=1e-12)
    # a zero weight still reports its term
    assert parts_w["ssim"] == pytest.approx(parts["ssim"], abs=1e-15)


def test_total_positive_on_perturbed_pairs(rng):
    for _ in range(100):
        Y = _img(rng)
        J = np.clip(Y + rng.normal(0, 0.05, Y.shape), 0, 1)
        assert total_loss(Tensor(J), Tensor(Y))[0].item() > 0


def test_batch_loss_is_mean_of_samples(rng):
    J, Y = _img(rng, (3, 3, 16, 16)), _img(rng, (3, 3, 16, 16))
    batch = total_loss(Tensor(J), Tensor(Y))[1]
    singles = [total_loss(Tensor(J[i]), Tensor(Y[i]))[1] for i in range(3)]
    for k in batch:
        assert batch[k] == pytest.approx(np.mean([s[k] for s in singles]), abs=1e-12)


def test_batch_gradient_is_mean_of_sample_gradients(rng):
    J, Y = _img(rng, (2, 3, 16, 16)), _img(rng, (2, 3, 16, 16))
    Jb = Tensor(J, requires_grad=True)
    total_loss(Jb, Tensor(Y))[0].backward()
    for i in range(2):
        Ji = Tensor(J[i], requires_grad=True)
        total_loss(Ji, Tensor(Y[i]))[0].backward()
        assert np.allclose(Jb.grad[i], Ji.grad / 2, atol=1e-13)


def test_negative_weight_rejected():
    with pytest.raises(PreconditionError):
        LossWeights(l1=-1.0)


def test_losses_differentiable_through_engine(rng):
    J = Tensor(_img(rng), requires_grad=True)
    loss = total_loss(J, Tensor(_img(rng)))[0]
    loss.backward()
    assert J.grad.shape == J.shape and np.all(np.isfinite(J.grad))

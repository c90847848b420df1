"""Finite-difference checks for every differentiable op and both networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as E
from .engine import GradCheckReport, Tensor, grad_check
from .losses import color_loss, l1_loss, perceptual_loss, ssim_loss, total_loss
from .models import IENet, IENetConfig, IFNet, IFNetConfig

DEFAULT_TOL = 1e-4
SSIM_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    report: GradCheckReport


def _away_from(rng, shape, kinks=(0.0,), gap=0.1, lo=-1.0, hi=1.0):
    """Uniform samples kept at least ``gap`` from every kink."""
    x = rng.uniform(lo, hi, size=shape)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] = k + np.where(x[near] >= k, gap, -gap) * rng.uniform(1.0, 2.0, size=near.sum())
    return x


def _suite(rng: np.random.Generator) -> list[tuple[str, Callable, list, float]]:
    def leaf(arr, name):
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True, name=name)

    def proj(shape):
        # fixed random projection turns any output into a scalar
        return Tensor(rng.standard_normal(shape))

    cases = []

    def unary(name, op, x):
        a = leaf(x, "x")
        r = proj(op(Tensor(a.data)).shape)
        cases.append((name, lambda: E.sum(op(a) * r), [a], DEFAULT_TOL))

    def binary(name, op, x, y):
        a, b = leaf(x, "a"), leaf(y, "b")
        r = proj(op(Tensor(a.data), Tensor(b.data)).shape)
        cases.append((name, lambda: E.sum(op(a, b) * r), [a, b], DEFAULT_TOL))

    shape = (2, 3, 4)
    binary("add", E.add, rng.standard_normal(shape), rng.standard_normal(shape))
    binary("sub", E.sub, rng.standard_normal(shape), rng.standard_normal(shape))
    binary("mul", E.mul, rng.standard_normal(shape), rng.standard_normal(shape))
    binary("div", E.div, rng.standard_normal(shape), _away_from(rng, shape, gap=0.5, lo=-2, hi=2))
    unary("neg", E.neg, rng.standard_normal(shape))
    unary("square", E.square, rng.standard_normal(shape))
    unary("sqrt", E.sqrt, rng.uniform(0.2, 2.0, size=shape))
    unary("abs", E.abs, _away_from(rng, shape))
    unary("relu", E.relu, _away_from(rng, shape))
    unary("sigmoid", E.sigmoid, rng.standard_normal(shape) * 3)
    unary("exp", E.exp, rng.standard_normal(shape))
    unary("sum", lambda t: E.sum(t, axis=1), rng.standard_normal(shape))
    unary("mean", lambda t: E.mean(t, axis=(0, 2), keepdims=True), rng.standard_normal(shape))
    unary("reshape", lambda t: E.reshape(t, (6, 4)), rng.standard_normal(shape))
    unary("expand", lambda t: E.expand(t, (2, 3, 4)), rng.standard_normal((2, 1, 4)))
    binary("concat", lambda a, b: E.concat([a, b], axis=1), rng.standard_normal(shape),
           rng.standard_normal((2, 2, 4)))
    unary("take", lambda t: E.take(t, 1, 3, axis=-1), rng.standard_normal(shape))
    unary("clip", lambda t: E.clip(t, -0.5, 0.5),
          _away_from(rng, shape, kinks=(-0.5, 0.5), gap=0.05))

    x = rng.standard_normal((2, 3, 6, 6))
    w, b = rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    for name, kw in (("conv2d", {"padding": 1}), ("conv2d_strided", {"stride": 3, "padding": 0})):
        xt, wt, bt = leaf(x, "x"), leaf(w, "w"), leaf(b, "b")
        r = proj(E.conv2d(Tensor(x), Tensor(w), Tensor(b), **kw).shape)
        cases.append((name, lambda xt=xt, wt=wt, bt=bt, kw=kw, r=r:
                      E.sum(E.conv2d(xt, wt, bt, **kw) * r), [xt, wt, bt], DEFAULT_TOL))
    unary("avg_pool2", E.avg_pool2, rng.standard_normal((2, 3, 4, 6)))
    taps = rng.uniform(0.1, 1.0, size=5)
    unary("separable_filter", lambda t: E.separable_filter(t, taps), rng.standard_normal((2, 9, 8)))

    def img(size=16):
        return rng.uniform(0.1, 0.9, size=(3, size, size))

    Y = Tensor(img())
    j_l1 = Y.data + _away_from(rng, Y.shape, gap=0.02, lo=-0.2, hi=0.2)
    for name, fn, start, tol in (
        ("l1_loss", l1_loss, j_l1, DEFAULT_TOL),
        ("perceptual_loss", perceptual_loss, img(), DEFAULT_TOL),
        ("ssim_loss", ssim_loss, img(), SSIM_TOL),
        ("color_loss", color_loss, img(), DEFAULT_TOL),
        ("total_loss", lambda J, Y: total_loss(J, Y)[0], j_l1, SSIM_TOL),
    ):
        J = leaf(start, "J")
        cases.append((name, lambda fn=fn, J=J: fn(J, Y), [J], tol))

    x8 = Tensor(rng.uniform(0.05, 0.95, size=(3, 8, 8)))
    ienet = IENet(IENetConfig("res", seed=int(rng.integers(2**31))))
    cases.append(("ienet_res", lambda: E.mean(ienet(x8)[1]), ienet.parameters(), DEFAULT_TOL))
    branches = [Tensor(rng.uniform(0.05, 0.95, size=(3, 8, 8))) for _ in range(2)]
    for mode in ("stacking", "weighted"):
        net = IFNet(IFNetConfig(2, mode, seed=int(rng.integers(2**31))))
        cases.append((f"ifnet_{mode}", lambda net=net: E.mean(net(branches)),
                      net.parameters(), DEFAULT_TOL))
    return cases


def run_suite(seed: int = 0, only=None) -> list[CheckResult]:
    """Check every case; ``only`` restricts to the named cases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    results = []
    for name, f, params, tol in _suite(rng):
        if only is not None and name not in only:
            continue
        results.append(CheckResult(name, grad_check(f, params, tol=tol, seed=seed)))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results) if results else 4
    lines = [f"{'op':<{width}}  {'max_rel_err':>11}  {'tol':>7}  status"]
    for r in results:
        rep = r.report
        lines.append(f"{r.name:<{width}}  {rep.max_rel_error:11.3e}  {rep.tol:7.0e}  "
                     f"{'PASS' if rep.passed else 'FAIL'}")
    return "\n".join(lines)

import math

import numpy as np
import pytest

from metamarl.backend import TapeDomainError, TapeError
from metamarl.backend.tape import GradRequest, Tape, grad


def test_forward_values_and_overloads():
    tape = Tape()
    x = tape.param(2.0)
    y = tape.param(3.0)
    z = (x * y + 1.0) / x - y ** 2
    assert z.value == pytest.approx((2 * 3 + 1) / 2 - 9)
    assert float(1.0 - x) == pytest.approx(-1.0)
    assert float(6.0 / y) == pytest.approx(2.0)


def test_first_order_gradients():
    tape = Tape()
    x = tape.param(0.5)
    y = tape.param(-1.5)
    out = tape.mul(tape.exp(x), tape.log(tape.sum([y], bias=3.0)))
    gx, gy = grad(out, [x, y])
    assert gx == pytest.approx(math.exp(0.5) * math.log(1.5))
    assert gy == pytest.approx(math.exp(0.5) / 1.5)


def test_second_order_through_create_graph():
    tape = Tape()
    x = tape.param(1.3)
    out = tape.pow(x, 3.0)
    (g,) = grad(out, [x], create_graph=True)
    assert g.value == pytest.approx(3 * 1.3**2)
    (h,) = grad(g, [x])
    assert h == pytest.approx(6 * 1.3)


def test_stop_gradient_blocks_backward():
    tape = Tape()
    x = tape.param(2.0)
    out = tape.mul(x, tape.stop_gradient(x))
    (g,) = grad(out, [x])
    assert g == pytest.approx(2.0)


def test_magic_box_value_and_derivatives():
    tape = Tape()
    w = tape.param(0.7)
    box = tape.magic_box([tape.mul(w, w)])
    assert box.value == 1.0
    (g,) = grad(box, [w], create_graph=True)
    assert g.value == pytest.approx(2 * 0.7)
    (h,) = grad(g, [w])
    # d/dw (2w · box) = 2 + (2w)^2
    assert h == pytest.approx(2.0 + (2 * 0.7) ** 2)


def test_unrelated_param_gets_zero():
    tape = Tape()
    x = tape.param(1.0)
    y = tape.param(4.0)
    out = tape.exp(x)
    assert grad(out, [y]) == [0.0]
    (g,) = grad(out, [y], create_graph=True)
    assert g.value == 0.0


def test_request_object_matches_shorthand():
    tape = Tape()
    x = tape.param(0.3)
    out = tape.sum([tape.exp(x), x], [2.0, -1.0])
    assert tape.gradient(GradRequest(output=out, wrt=[x])) == grad(out, [x])


def test_non_param_wrt_rejected():
    tape = Tape()
    x = tape.param(1.0)
    y = tape.exp(x)
    with pytest.raises(TapeError):
        grad(tape.exp(y), [y])


def test_foreign_tape_rejected():
    a, b = Tape(), Tape()
    x = a.param(1.0)
    with pytest.raises(TapeError):
        b.add(x, 1.0)
    with pytest.raises(TapeError):
        b.node(5)


def test_sum_weight_count_mismatch():
    tape = Tape()
    with pytest.raises(TapeError):
        tape.sum([tape.param(1.0)], [1.0, 2.0])


def test_softmax_hessian_matches_closed_form():
    theta = np.array([0.2, -0.4, 0.9])
    tape = Tape()
    params = [tape.param(v) for v in theta]
    lse = tape.log(tape.sum([tape.exp(p) for p in params]))
    first = grad(lse, params, create_graph=True)
    hessian = np.array([[grad(g, params)[k] for k in range(3)] for g in first])
    pi = np.exp(theta) / np.exp(theta).sum()
    np.testing.assert_allclose([g.value for g in first], pi, rtol=1e-12)
    np.testing.assert_allclose(hessian, np.diag(pi) - np.outer(pi, pi), atol=1e-12)


def test_domain_errors():
    tape = Tape()
    with pytest.raises(TapeDomainError):
        tape.log(tape.param(-1.0))
    with pytest.raises(TapeDomainError):
        tape.exp(tape.param(1000.0))


def _random_expression(tape, xs, rng, n_nodes):
    pool = list(xs)
    for _ in range(n_nodes):
        a, b = (pool[int(i)] for i in rng.integers(len(pool), size=2))
        kind = rng.integers(5)
        if kind == 0:
            node = tape.sum([a, b], [0.5, 0.5])
        elif kind == 1:
            node = tape.mul(a, b)
        elif kind == 2:
            node = tape.sum([tape.exp(tape.sum([a], [0.1]))], bias=-1.0)
        elif kind == 3:
            node = tape.log(tape.sum([tape.mul(a, a)], bias=1.0))
        else:
            node = tape.sum([a, b], rng.uniform(-0.5, 0.5, size=2))
        pool.append(node)
    return pool[-1]


def _evaluate(values, seed, n_nodes):
    tape = Tape()
    xs = [tape.param(v) for v in values]
    return _random_expression(tape, xs, np.random.default_rng(seed), n_nodes)


@pytest.mark.parametrize("seed", range(5))
def test_random_expressions_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    values = rng.uniform(-0.5, 0.5, size=3)
    out = _evaluate(values, seed, 20)
    xs = [out.tape.var(i) for i in range(3)]
    first = grad(out, xs, create_graph=True)
    h = 1e-6
    for k in range(3):
        up, down = values.copy(), values.copy()
        up[k] += h
        down[k] -= h
        fd = (_evaluate(up, seed, 20).value - _evaluate(down, seed, 20).value) / (2 * h)
        assert first[k].value == pytest.approx(fd, rel=1e-6, abs=1e-8)

    # second pass against differences of the first-pass gradient
    h2 = 1e-5
    second = grad(first[0], xs)
    for k in range(3):
        up, down = values.copy(), values.copy()
        up[k] += h2
        down[k] -= h2
        g_up = _evaluate(up, seed, 20)
        g_down = _evaluate(down, seed, 20)
        g_up = grad(g_up, [g_up.tape.var(0)])[0]
        g_down = grad(g_down, [g_down.tape.var(0)])[0]
        assert second[k] == pytest.approx((g_up - g_down) / (2 * h2), rel=1e-4, abs=1e-6)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from a2tune.autodiff import Adam, Graph, ShapeError, backward, evaluate

from conftest import rel_error


def fd_grad(build, params, name, h=1e-5):
    """Central differences of the scalar built by ``build(g)`` w.r.t. one parameter."""
    base = params[name]
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sgn in (1, -1):
            p = {k: v.copy() for k, v in params.items()}
            p[name][idx] += sgn * h
            g = Graph()
            root = build(g, {k: g.param(k, v) for k, v in p.items()})
            vals.append(evaluate(g, root)[0, 0])
        out[idx] = (vals[0] - vals[1]) / (2 * h)
    return out


def test_matmul_example():
    g = Graph()
    out = g.matmul(g.const([[1, 2], [3, 4]]), g.const([[1], [1]]))
    assert evaluate(g, out).tolist() == [[3.0], [7.0]]


def test_tanh_of_zero():
    g = Graph()
    assert np.all(evaluate(g, g.tanh(g.const(np.zeros((2, 3))))) == 0)


def test_mean_rows_example():
    g = Graph()
    out = g.mean_rows(g.const([[2, 4], [4, 8]]), [[0, 1]])
    assert evaluate(g, out).tolist() == [[3.0, 6.0]]


def test_mean_rows_empty_set_is_zero_row():
    g = Graph()
    out = g.mean_rows(g.const([[2, 4], [4, 8]]), [[], [1]])
    assert evaluate(g, out).tolist() == [[0.0, 0.0], [4.0, 8.0]]


def test_sumsq_adjoint():
    g = Graph()
    p = g.param("p", [[1.0, 2.0]])
    root = g.sumsq(p)
    evaluate(g, root)
    assert backward(g, root)["p"].tolist() == [[2.0, 4.0]]


def test_tanh_adjoint_at_zero():
    g = Graph()
    p = g.param("p", [[0.0]])
    root = g.tanh(p)
    evaluate(g, root)
    assert backward(g, root)["p"][0, 0] == 1.0


def test_consts_get_no_adjoint_and_unused_params_get_zeros():
    g = Graph()
    c = g.const([[3.0]])
    p = g.param("p", [[2.0]])
    g.param("unused", [[1.0, 1.0]])
    root = g.mul(p, c)
    evaluate(g, root)
    grads = backward(g, root)
    assert c.adjoint is None
    assert grads["p"][0, 0] == 3.0
    assert grads["unused"].tolist() == [[0.0, 0.0]]


def test_backward_requires_scalar_root():
    g = Graph()
    p = g.param("p", np.ones((2, 2)))
    evaluate(g, p)
    with pytest.raises(ShapeError, match="not scalar"):
        backward(g, p)


@pytest.mark.parametrize("build", [
    lambda g: g.matmul(g.const(np.ones((2, 3))), g.const(np.ones((2, 3)))),
    lambda g: g.add(g.const(np.ones((2, 3))), g.const(np.ones((3, 2)))),
    lambda g: g.mul(g.const(np.ones((1, 3))), g.const(np.ones((3, 1)))),
    lambda g: g.concat([g.const(np.ones((2, 1))), g.const(np.ones((3, 1)))]),
    lambda g: g.mse(g.const(np.ones((2, 1))), g.const(np.ones((1, 2)))),
])
def test_shape_errors_raised_at_construction(build):
    with pytest.raises(ShapeError, match="shape|row counts"):
        build(Graph())


def test_shape_error_names_both_operands():
    g = Graph()
    a, b = g.const(np.ones((2, 3)), name="a"), g.const(np.ones((2, 3)), name="b")
    with pytest.raises(ShapeError) as err:
        g.matmul(a, b)
    msg = str(err.value)
    assert "'a'" in msg and "'b'" in msg and "(2, 3)" in msg


def three_layer(g, p, x, y):
    h = g.tanh(g.affine(g.const(x), p["w1"]))
    h = g.sigmoid(g.matmul(h, p["w2"]))
    out = g.softplus(g.matmul(g.concat([h, g.const(x)]), p["w3"]))
    pooled = g.mean_rows(out, [range(x.shape[0]), [0]])
    return g.add(g.mse(pooled, g.const(y)), g.scale(g.sumsq(p["w2"]), 0.1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))
def test_gradients_match_finite_differences(seed, rows, d_in, hidden):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, d_in))
    y = rng.standard_normal((2, 1))
    params = {
        "w1": rng.standard_normal((d_in + 1, hidden)) * 0.5,
        "w2": rng.standard_normal((hidden, hidden)) * 0.5,
        "w3": rng.standard_normal((hidden + d_in, 1)) * 0.5,
    }

    def build(g, p):
        return three_layer(g, p, x, y)

    g = Graph()
    root = build(g, {k: g.param(k, v) for k, v in params.items()})
    evaluate(g, root)
    grads = backward(g, root)
    for name in params:
        assert rel_error(grads[name], fd_grad(build, params, name)) < 1e-4


def test_sqrt_abs_gradient_is_clipped():
    g = Graph()
    p = g.param("p", [[1e-8], [-1e-8], [4.0]])
    root = g.mean_rows(g.sqrt_abs(p), [[0, 1, 2]])
    root = g.matmul(root, g.const([[1.0]]))
    evaluate(g, root)
    d = backward(g, root)["p"][:, 0] * 3
    assert d[0] == 10.0 and d[1] == -10.0
    assert d[2] == pytest.approx(0.25)


def test_evaluate_is_deterministic():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((2, 1))
    params = {"w1": rng.standard_normal((4, 5)), "w2": rng.standard_normal((5, 5)), "w3": rng.standard_normal((8, 1))}
    runs = []
    for _ in range(2):
        g = Graph()
        root = three_layer(g, {k: g.param(k, v) for k, v in params.items()}, x, y)
        evaluate(g, root)
        runs.append(backward(g, root))
    for k in params:
        assert np.array_equal(runs[0][k], runs[1][k])


def test_adam_zero_adjoint_is_fixed_point():
    p = {"w": np.array([[1.5, -2.0]])}
    Adam(lr=0.1).step(p, {"w": np.zeros((1, 2))})
    assert p["w"].tolist() == [[1.5, -2.0]]


def test_adam_first_step_descends():
    p = {"w": np.array([[0.0]])}
    Adam(lr=0.1).step(p, {"w": np.array([[3.0]])})
    assert p["w"][0, 0] < 0


def test_adam_quadratic_bowl():
    g = Graph()
    p = g.param("p", [[0.0]])
    root = g.sumsq(g.add(p, g.const([[-3.0]])))
    opt = Adam(lr=0.05)
    for _ in range(500):
        evaluate(g, root)
        opt.step(g.params, backward(g, root))
    assert abs(g.params["p"][0, 0] - 3.0) < 0.05


def test_adam_rejects_non_finite_adjoint():
    p = {"layer.w": np.zeros((1, 1))}
    with pytest.raises(FloatingPointError, match="layer.w"):
        Adam().step(p, {"layer.w": np.array([[np.nan]])})


def test_adam_l2_option_matches_explicit_penalty():
    rng = np.random.default_rng(3)
    w0 = rng.standard_normal((3, 2))
    target = rng.standard_normal((3, 2))

    def run(explicit):
        g = Graph()
        p = g.param("w", w0)
        fit = g.sumsq(g.add(p, g.const(-target)))
        root = g.add(fit, g.scale(g.sumsq(p), 0.3)) if explicit else fit
        opt = Adam(lr=0.01, l2=0.0 if explicit else 0.3)
        for _ in range(20):
            evaluate(g, root)
            opt.step(g.params, backward(g, root))
        return g.params["w"]

    np.testing.assert_allclose(run(True), run(False), rtol=1e-12, atol=1e-14)

"""Finite-difference and closed-form checks for the autodiff engine."""
import numpy as np
import pytest

from susa import tensor as T
from susa.gradcheck import op_grad_check_suite


def test_every_op_matches_central_differences():
    report = op_grad_check_suite(seeds=5, tol=1e-4)
    assert report["passed"], report["failures"]
    assert max(report["worst_rel_err_per_op"].values()) < 1e-4


def test_broadcast_gradients_sum_down():
    a = T.param(np.ones((3, 4)))
    b = T.param(np.arange(4.0))
    with T.Tape():
        out = T.sum_(T.mul(T.add(a, b), T.constant(np.arange(12.0).reshape(3, 4))))
        T.backward(out)
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, np.arange(12.0).reshape(3, 4).sum(axis=0))


def test_cross_entropy_closed_form():
    logits = np.array([1.0, 2.0, 0.5])
    x = T.param(logits)
    with T.Tape():
        loss = T.cross_entropy(x, 1)
        T.backward(loss)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    assert loss.data == pytest.approx(-np.log(p[1]), abs=1e-12)
    expected = p.copy()
    expected[1] -= 1.0
    np.testing.assert_allclose(x.grad, expected, atol=1e-12)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 6))
    s1 = T.softmax(T.constant(x), axis=1).data
    s2 = T.softmax(T.constant(x + 100.0), axis=1).data
    np.testing.assert_allclose(s1.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(s1, s2, atol=1e-12)


def test_max_routes_gradient_to_first_argmax_on_ties():
    x = T.param(np.array([[1.0, 3.0, 3.0, 0.0]]))
    with T.Tape():
        out = T.sum_(T.max_(x, axis=1))
        T.backward(out)
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 0.0]])


def test_cosine_zero_row_convention():
    a = T.param(np.array([[0.0, 0.0], [1.0, 0.0]]))
    b = T.param(np.array([[1.0, 0.0]]))
    with T.Tape():
        m = T.cosine_matrix(a, b)
        T.backward(T.sum_(m))
    assert m.data[0, 0] == 0.0
    assert m.data[1, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(a.grad[0], [0.0, 0.0])


def test_layer_norm_output_statistics():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 16)) * 3 + 2
    out = T.layer_norm(T.constant(x), T.constant(np.ones(16)),
                       T.constant(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-2)


def test_fused_ops_match_primitive_chains():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4))
    w1, b1 = rng.standard_normal((4, 5)), rng.standard_normal(5)
    w2, b2 = rng.standard_normal((5, 4)), rng.standard_normal(4)
    gamma, beta = 1 + 0.1 * rng.standard_normal(4), 0.1 * rng.standard_normal(4)

    fused = T.ffn(T.constant(x), T.constant(w1), T.constant(b1),
                  T.constant(w2), T.constant(b2)).data
    chain = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
    np.testing.assert_allclose(fused, chain, atol=1e-14)

    fused = T.add_layer_norm(T.constant(x), T.constant(chain),
                             T.constant(gamma), T.constant(beta)).data
    chain2 = T.layer_norm(T.constant(x + chain), T.constant(gamma),
                          T.constant(beta)).data
    np.testing.assert_allclose(fused, chain2, atol=1e-14)


def test_attention_core_equals_explicit_softmax():
    rng = np.random.default_rng(3)
    q, k, v = rng.standard_normal((2, 4)), rng.standard_normal((3, 4)), \
        rng.standard_normal((3, 4))
    scale = 0.5
    out = T.attention_core(T.constant(q), T.constant(k), T.constant(v),
                           scale=scale).data
    logits = q @ k.T * scale
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    attn = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out, attn @ v, atol=1e-14)


def test_gradient_accumulates_over_reuse():
    x = T.param(np.array([2.0]))
    with T.Tape():
        out = T.add(T.mul(x, x), x)   # x^2 + x -> 2x + 1 = 5
        T.backward(T.sum_(out))
    assert x.grad[0] == pytest.approx(5.0)


def test_backward_requires_scalar_loss():
    x = T.param(np.ones((2, 2)))
    with T.Tape():
        y = T.mul(x, x)
        with pytest.raises(T.ShapeError):
            T.backward(y)


def test_shape_errors():
    with pytest.raises(T.ShapeError):
        T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))
    with pytest.raises(T.ShapeError):
        T.linear(T.constant(np.ones((2, 3))), T.constant(np.ones((4, 2))),
                 T.constant(np.ones(2)))
    with pytest.raises(T.ShapeError):
        T.cross_entropy(T.constant(np.ones(3)), 5)


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = T.param(rng.standard_normal((4, 4)))
        w = T.param(rng.standard_normal((4, 4)))
        with T.Tape():
            out = T.sum_(T.tanh(T.matmul(x, w)))
            T.backward(out)
        return out.data.copy(), x.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes()
    assert g1.tobytes() == g2.tobytes()

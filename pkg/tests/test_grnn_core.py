import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faultchain.grnn_core import (
    Adam,
    ForwardTape,
    GrnnParameters,
    backward,
    graph_filter,
    graph_shift,
    grnn_step,
    load_params,
    q_head,
    save_params,
    unroll,
)

from gradcheck import numeric_grads, max_rel_error, unroll_check

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)


def test_graph_shift_examples():
    np.testing.assert_array_equal(graph_shift(np.zeros((3, 3)), np.ones((3, 2))), 0)
    np.testing.assert_array_equal(graph_shift(PATH3, np.array([[1.0], [0], [0]])), [[0], [1], [0]])
    np.testing.assert_array_equal(graph_shift(PATH3, np.zeros((3, 1))), 0)


def test_graph_filter_k1_and_zero(rng):
    x = rng.normal(size=(3, 2))
    h = rng.normal(size=(1, 2, 4))
    np.testing.assert_allclose(graph_filter(PATH3, x, h), x @ h[0])
    assert not graph_filter(PATH3, x, np.zeros((3, 2, 4))).any()


def test_graph_filter_matches_matrix_powers(rng):
    adj = (rng.random((4, 4)) < 0.6).astype(float)
    adj = np.triu(adj, 1) + np.triu(adj, 1).T
    x = rng.normal(size=(4, 3))
    h = rng.normal(size=(3, 3, 2))
    direct = sum(np.linalg.matrix_power(adj, k) @ x @ h[k] for k in range(3))
    np.testing.assert_allclose(graph_filter(adj, x, h), direct, rtol=1e-12, atol=1e-12)


def test_graph_filter_rejects_bad_coeffs():
    with pytest.raises(ValueError):
        graph_filter(PATH3, np.ones((3, 1)), np.ones((1, 1)))


def test_grnn_step_zero_cases(rng):
    params = GrnnParameters.init(rng, 3, 2, H=4, G=3)
    zero = params.zeros_like()
    x = rng.normal(size=(3, 1))
    z, y = grnn_step(PATH3, PATH3, x, rng.normal(size=(3, 4)), zero)
    assert not z.any() and not y.any()
    z, _ = grnn_step(PATH3, PATH3, np.zeros((3, 1)), np.zeros((3, 4)), params)
    assert not z.any()


@given(seed=st.integers(0, 2**32 - 1))
def test_hidden_state_bounded(seed):
    rng = np.random.default_rng(seed)
    params = GrnnParameters.init(rng, 5, 3, H=4, G=2)
    for a in params.arrays():
        a *= 10  # push towards saturation
    adj = (rng.random((5, 5)) < 0.5).astype(float)
    adj = np.triu(adj, 1) + np.triu(adj, 1).T
    z, y = grnn_step(adj, adj, rng.normal(size=(5, 1)) * 10, rng.uniform(-1, 1, (5, 4)), params)
    assert np.abs(z).max() <= 1 and np.abs(y).max() <= 1


def test_q_head_examples(rng):
    params = GrnnParameters.init(rng, 3, 4, H=2, G=2)
    params.head_w[:] = 0
    params.head_b[:] = 2.5
    np.testing.assert_array_equal(q_head(rng.normal(size=(3, 2)), params), 2.5)
    params = GrnnParameters.init(rng, 3, 4, H=2, G=2)
    np.testing.assert_array_equal(q_head(np.zeros((3, 2)), params), params.head_b)
    y = rng.normal(size=(3, 2))
    expected = np.array([max(v, 0.0) for v in y.ravel()]) @ params.head_w + params.head_b
    np.testing.assert_allclose(q_head(y, params), expected)


def test_grnn_size_independent_of_nodes(rng):
    a = GrnnParameters.init(rng, 5, 7, H=12, G=12, K=3)
    b = GrnnParameters.init(rng, 118, 179, H=12, G=12, K=3)
    assert a.grnn_size() == b.grnn_size() == 3 * (1 * 12 + 12 * 12 + 12 * 12)


def test_zero_loss_gradient(rng):
    params = GrnnParameters.init(rng, 4, 3, H=3, G=2)
    adj = np.ones((2, 4, 4)) - np.eye(4)
    tape = ForwardTape()
    unroll(params, adj, rng.normal(size=(2, 4, 1)), tape=tape)
    grads = backward(tape, [np.zeros(3), None], params)
    assert all(not g.any() for g in grads.arrays())


def test_head_only_single_stage(rng):
    params = GrnnParameters.init(rng, 4, 3, H=3, G=2)
    adj = np.ones((1, 4, 4)) - np.eye(4)
    xs = rng.normal(size=(1, 4, 1))
    w = rng.normal(size=3)

    def loss(p):
        q, _ = unroll(p, adj, xs)
        return float(q[0] @ w)

    tape = ForwardTape()
    unroll(params, adj, xs, tape=tape)
    g = backward(tape, [w], params)
    num = numeric_grads(loss, params)
    err = max_rel_error(g, num)
    assert err["head_w"] < 1e-4 and err["head_b"] < 1e-4


def test_three_stage_all_tensors(rng):
    errs = unroll_check(rng, N=5, H=4, G=3, K=3, P=3, U=4)
    assert max(errs.values()) < 1e-4, errs


def test_backward_shape_mismatch(rng):
    params = GrnnParameters.init(rng, 3, 2, H=2, G=2)
    tape = ForwardTape()
    unroll(params, np.ones((2, 3, 3)), np.ones((2, 3, 1)), tape=tape)
    with pytest.raises(ValueError):
        backward(tape, [np.zeros(2)], params)


def _scalar_params(value):
    p = GrnnParameters(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1)), np.array([value]))
    return p


def test_adam_zero_grad_no_change():
    p = _scalar_params(1.0)
    Adam(0.1).update(p, p.zeros_like())
    assert p.head_b[0] == 1.0


def test_adam_first_and_second_step():
    p = _scalar_params(1.0)
    g = p.zeros_like()
    g.head_b[0] = 3.7
    opt = Adam(0.01)
    opt.update(p, g)
    assert 1.0 - p.head_b[0] == pytest.approx(0.01, rel=1e-6)
    before = p.head_b[0]
    opt.update(p, g)
    # m_hat = g and v_hat = g^2 again after bias correction
    assert before - p.head_b[0] == pytest.approx(0.01, rel=1e-6)


def test_adam_rejects_bad_lr():
    with pytest.raises(ValueError):
        Adam(0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    params = GrnnParameters.init(rng, 6, 5, H=4, G=3, K=2)
    path = tmp_path / "p.npz"
    save_params(path, params)
    again = load_params(path)
    for a, b in zip(params.arrays(), again.arrays()):
        assert a.tobytes() == b.tobytes() and a.shape == b.shape


def test_checkpoint_rejects_other_format(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, format=np.array("something-else/9"), order=np.array(GrnnParameters.names()))
    with pytest.raises(ValueError):
        load_params(path)


def test_init_bounds_and_determinism():
    a = GrnnParameters.init(np.random.default_rng(0), 39, 46)
    b = GrnnParameters.init(np.random.default_rng(0), 39, 46)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))
    assert np.abs(a.H2).max() <= 1 / np.sqrt(3 * 12)
    assert np.abs(a.head_w).max() <= 1 / np.sqrt(39 * 12)

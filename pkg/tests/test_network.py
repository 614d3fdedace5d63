import numpy as np
import pytest

from oracles import numpy_mlp
from rpinn import _kernels
from rpinn.autodiff import eval_jet, value_and_grad
from rpinn.network import (
    MlpSpec,
    ParamLayout,
    forward,
    forward_jet,
    forward_jet_reference,
    forward_values,
    init_params,
    load_params,
    save_params,
    unpack,
)


def test_init_is_deterministic():
    spec = MlpSpec()
    a = init_params(spec, 7).values
    b = init_params(spec, 7).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(spec, 8).values)


def test_biases_zero_and_weights_bounded():
    spec = MlpSpec(2, 3, 16)
    p = init_params(spec, 0)
    for name, shape, offset in p.layout.blocks:
        block = p.values[offset : offset + int(np.prod(shape))]
        if name.startswith("b"):
            assert np.all(block == 0.0)
        else:
            n_out, n_in = shape
            assert np.max(np.abs(block)) <= np.sqrt(6.0 / (n_in + n_out))


def test_layout_is_bijection():
    layout = ParamLayout(MlpSpec(2, 2, 3), n_lambda=2)
    seen = set()
    for name, shape, offset in layout.blocks:
        for pos in np.ndindex(*shape):
            seen.add(layout.index(name, *pos))
    assert seen == set(range(layout.size))
    assert layout.n_network == layout.size - 2


def test_default_sizes():
    assert init_params(MlpSpec(), 0).values.size == 2 * 20 + 20 + 6 * (20 * 20 + 20) + 21
    assert MlpSpec(2, 5, 64).sizes == [2, 64, 64, 64, 64, 64, 1]


def test_zero_params_give_zero_output():
    spec = MlpSpec()
    theta = np.zeros(init_params(spec, 0).values.size)
    x = np.random.default_rng(0).normal(size=(7, 2))
    assert np.all(forward(spec, theta, x) == 0.0)


def test_single_neuron_is_tanh():
    spec = MlpSpec(1, 1, 1)
    theta = np.array([1.0, 0.0, 1.0, 0.0])
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(forward(spec, theta, x), np.tanh(x[:, 0]), atol=1e-15)


def test_forward_matches_generic_jet_value():
    spec = MlpSpec()
    p = init_params(spec, 1)
    x = np.random.default_rng(1).uniform(-1, 1, size=(4, 2))
    jet = eval_jet(lambda q: forward(spec, p, q), x)
    np.testing.assert_array_equal(forward(spec, p, x), jet.value)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_fused_jet_matches_generic_path(order):
    spec = MlpSpec(2, 4, 9)
    p = init_params(spec, 2)
    x = np.random.default_rng(2).uniform(-1, 1, size=(13, 2))
    ref = forward_jet_reference(spec, p, x)
    fast = forward_jet(spec, p, x, order=order)
    np.testing.assert_allclose(fast.value, ref.value, atol=1e-14)
    if order >= 1:
        np.testing.assert_allclose(fast.gradient, ref.gradient, atol=1e-13)
    if order == 2:
        np.testing.assert_allclose(fast.hessian, ref.hessian, atol=1e-12)


def test_fused_parameter_gradient_matches_generic_path():
    spec = MlpSpec(2, 3, 7)
    theta = init_params(spec, 4).values
    x = np.random.default_rng(4).uniform(-1, 1, size=(11, 2))

    def lap_loss(jet):
        r = jet.second[0][0] + jet.second[1][1] + jet.first[0] * jet.value
        return (r * r).mean()

    f1, g1 = value_and_grad(lambda t: lap_loss(forward_jet(spec, t, x)), theta)
    f2, g2 = value_and_grad(lambda t: lap_loss(eval_jet(lambda q: forward(spec, t, q), x)), theta)
    assert f1 == pytest.approx(f2, rel=1e-13)
    np.testing.assert_allclose(g1, g2, rtol=1e-11, atol=1e-13)


def test_kernels_match_numpy_reference():
    rng = np.random.default_rng(5)
    d, order = 2, 2
    Z = rng.normal(size=(6, 6, 17))
    b = rng.normal(size=6)
    G = rng.normal(size=(6, 6, 17))
    out_ref, s_ref = _kernels.tanh_forward_np(Z.copy(), b, d, order)
    out, s = _kernels.tanh_forward(Z.copy(), b, d, order)
    np.testing.assert_allclose(out, out_ref, atol=1e-14)
    Zb = Z.copy()
    Zb[:, 0, :] += b[:, None]
    gz_ref, gb_ref = _kernels.tanh_backward_np(G, Zb, s_ref, d, order)
    gz, gb = _kernels.tanh_backward(G, Zb, s_ref, d, order)
    np.testing.assert_allclose(gz, gz_ref, atol=1e-13)
    np.testing.assert_allclose(gb, gb_ref, atol=1e-13)


def test_hidden_neuron_permutation_invariance():
    spec = MlpSpec(2, 2, 5)
    theta = init_params(spec, 6).values.copy()
    theta += np.random.default_rng(6).normal(scale=0.1, size=theta.size)  # nonzero biases
    (W1, b1), (W2, b2), (W3, b3) = [(W.copy(), b.copy()) for W, b in unpack(spec, theta)]
    perm = np.array([3, 0, 4, 1, 2])
    permuted = np.concatenate([W1[perm].ravel(), b1[perm], W2[:, perm].ravel(), b2, W3.ravel(), b3])
    x = np.random.default_rng(7).normal(size=(8, 2))
    np.testing.assert_allclose(forward(spec, permuted, x), forward(spec, theta, x), atol=1e-14)


def test_dimension_mismatch():
    spec = MlpSpec()
    p = init_params(spec, 0)
    with pytest.raises(ValueError):
        forward(spec, p, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        forward_jet(spec, p, np.zeros((3, 1)))


def test_invalid_spec():
    with pytest.raises(ValueError):
        MlpSpec(activation="relu")
    with pytest.raises(ValueError):
        MlpSpec(hidden_layers=0)


def test_chunked_values():
    spec = MlpSpec(2, 2, 4)
    theta = init_params(spec, 0).values
    x = np.random.default_rng(0).random((1000, 2))
    np.testing.assert_array_equal(forward_values(spec, theta, x, chunk=64), forward_values(spec, theta, x))
    np.testing.assert_allclose(forward_values(spec, theta, x), numpy_mlp(spec.sizes, theta, x), atol=1e-14)


def test_checkpoint_round_trip(tmp_path):
    spec = MlpSpec(2, 3, 5)
    p = init_params(spec, 9, n_lambda=1, lam0=[1.25])
    p.values[3] = 1 / 3
    save_params(tmp_path / "p.ckpt", p)
    q = load_params(tmp_path / "p.ckpt")
    assert q.spec == spec
    assert q.layout.n_lambda == 1
    assert np.array_equal(q.values, p.values)
    assert q.lam[0] == 1.25


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_text("hello\n1\n")
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.ckpt")

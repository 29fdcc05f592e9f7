import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpifilter.approx import (
    AdamState,
    GainNet,
    LinearNoiseNet,
    Mlp,
    QuadraticValueNet,
    adam_step,
    gd_step,
    load_checkpoint,
    save_checkpoint,
    selu,
    selu_d1,
    selu_d2,
)
from tpifilter.errors import ConfigError, NotScalarOutput

H = 1e-6


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def fd_params(net, fun):
    f0 = net.flat.copy()
    out = np.zeros_like(f0)
    for i in range(f0.size):
        e = np.zeros_like(f0)
        e[i] = H
        net.set_flat(f0 + e)
        hi = fun()
        net.set_flat(f0 - e)
        lo = fun()
        out[i] = (hi - lo) / (2 * H)
    net.set_flat(f0)
    return out


def fd_input(fun, x):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = H
        out[i] = (fun(x + e) - fun(x - e)) / (2 * H)
    return out


def away_from_kink(net, x):
    return all(np.min(np.abs(a)) > 1e-6 for a in net._forward_cache(np.atleast_2d(x))[0][:-1])


def test_selu_derivatives(rng):
    a = rng.normal(size=50) * 3
    a = a[np.abs(a) > 1e-3]
    np.testing.assert_allclose(selu_d1(a), (selu(a + H) - selu(a - H)) / (2 * H), rtol=1e-6)
    np.testing.assert_allclose(selu_d2(a), (selu_d1(a + H) - selu_d1(a - H)) / (2 * H), rtol=1e-5, atol=1e-8)


def test_mlp_gradients_match_fd(rng):
    net = Mlp([2, 8, 8, 1], 100.0, rng)
    for _ in range(5):
        x = rng.normal(size=(3, 2))
        up = rng.normal(size=3)
        c = rng.normal(size=(3, 2))
        if not away_from_kink(net, x):
            continue
        g = net.param_gradient(x, up)
        assert rel_err(g, fd_params(net, lambda: up @ net.forward(x))) < 1e-5
        gx = net.input_gradient(x[0])
        assert rel_err(gx, fd_input(net.forward, x[0])) < 1e-5
        gm = net.mixed_gradient(x, c)
        ref = fd_params(net, lambda: np.sum(net.input_gradient(x) * c))
        assert rel_err(gm, ref) < 1e-5


def test_mlp_vector_output_bounded(rng):
    net = Mlp([2, 8, 2], [0.01, 0.05], rng)
    x = rng.normal(size=(1000, 2)) * 1e3
    y = net.forward(x)
    assert np.all(np.abs(y) <= [0.01, 0.05])
    with pytest.raises(NotScalarOutput):
        net.input_gradient(x[0])


def test_mlp_param_gradient_pre(rng):
    net = Mlp([2, 6, 2], 1.0, rng)
    x = rng.normal(size=(4, 2))
    up = rng.normal(size=(4, 2))
    ref = fd_params(net, lambda: np.sum(up * net.preactivation(x)))
    assert rel_err(net.param_gradient_pre(x, up), ref) < 1e-6


def test_mlp_init_statistics():
    net = Mlp([64, 64, 1], 1.0, np.random.default_rng(0))
    W = net.params[0]
    assert W.std() == pytest.approx(1 / 8, rel=0.05)
    assert np.all(net.params[1] == 0)


def test_quadratic_value_net(rng):
    net = QuadraticValueNet(3, rng.normal(size=6))
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=4)
    c = rng.normal(size=(4, 3))
    assert rel_err(net.param_gradient(x, up), fd_params(net, lambda: up @ net.forward(x))) < 1e-8
    assert rel_err(net.input_gradient(x[0]), fd_input(net.forward, x[0])) < 1e-8
    ref = fd_params(net, lambda: np.sum(net.input_gradient(x) * c))
    assert rel_err(net.mixed_gradient(x, c), ref) < 1e-8


def test_quadratic_from_matrix(rng):
    X = rng.normal(size=(2, 2))
    X = X @ X.T
    net = QuadraticValueNet.from_matrix(X)
    x = rng.normal(size=2)
    assert net.forward(x) == pytest.approx(x @ X @ x, rel=1e-12)
    np.testing.assert_allclose(net.input_gradient(x), 2 * X @ x, rtol=1e-12)


def test_default_value_init_psd():
    net = QuadraticValueNet(2)
    np.testing.assert_array_equal(net.omega, [0.1, 0.0, 0.1])


def test_linear_and_gain_nets(rng):
    lin = LinearNoiseNet(2, eta=rng.normal(size=(2, 2)))
    x = rng.normal(size=(5, 2))
    up = rng.normal(size=(5, 2))
    assert rel_err(lin.param_gradient(x, up), fd_params(lin, lambda: np.sum(up * lin.forward(x)))) < 1e-8
    gain = GainNet(2, 2, rng.normal(size=(2, 2)))
    up = rng.normal(size=(2, 2))
    assert rel_err(gain.param_gradient(None, up), fd_params(gain, lambda: np.sum(up * gain.forward()))) < 1e-8


def test_adam_first_step_is_signed_lr(rng):
    p = rng.normal(size=10)
    g = rng.normal(size=10)
    new, state = adam_step(p, g, AdamState.zeros(10), 0.01)
    np.testing.assert_allclose(new - p, -0.01 * np.sign(g), rtol=1e-6)
    assert state.step == 1


def test_adam_matches_reference_recurrence(rng):
    p = rng.normal(size=4)
    state = AdamState.zeros(4)
    m = v = np.zeros(4)
    ref = p.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        p, state = adam_step(p, g, state, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_gd_step():
    np.testing.assert_allclose(gd_step(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.1), [0.95, 2.1])


def test_checkpoint_roundtrip(tmp_path, rng):
    nets = {
        "value": Mlp([2, 4, 1], 100.0, rng),
        "noise": Mlp([2, 4, 2], [0.01, 0.05], rng),
        "gain": GainNet(2, 2, rng.normal(size=(2, 2))),
        "qvalue": QuadraticValueNet(2, rng.normal(size=3)),
        "lin": LinearNoiseNet(2, eta=rng.normal(size=(2, 2))),
    }
    path = tmp_path / "ck.json"
    save_checkpoint(path, nets, {"seed": 3})
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": 3}
    x = rng.normal(size=(3, 2))
    for name, net in nets.items():
        np.testing.assert_array_equal(loaded[name].flat, net.flat)
        if name != "gain":
            np.testing.assert_array_equal(loaded[name].forward(x), net.forward(x))


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "other"}')
    with pytest.raises(ConfigError):
        load_checkpoint(bad)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mixed_gradient_linear_in_direction(seed):
    r = np.random.default_rng(seed)
    net = Mlp([2, 5, 1], 10.0, r)
    x = r.normal(size=(3, 2))
    c1, c2 = r.normal(size=(3, 2)), r.normal(size=(3, 2))
    lhs = net.mixed_gradient(x, c1 + 2 * c2)
    rhs = net.mixed_gradient(x, c1) + 2 * net.mixed_gradient(x, c2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

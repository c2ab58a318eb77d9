import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innstab import nn, uq
from innstab.errors import ConfigError, ContractError


def unit_with_dropout(rate, w=1.5):
    spec = nn.NetworkSpec([nn.Dropout(rate), nn.Dense(1, 1)])
    return spec, {"1.weight": np.array([[w]]), "1.bias": np.zeros(1)}


def test_rate_zero_gives_zero_heatmap():
    spec = nn.NetworkSpec([nn.Conv(1, 3), nn.ReLU(), nn.Dropout(0.0), nn.Conv(3, 1)])
    p = nn.init_params(spec, np.random.default_rng(0))
    _, var = uq.mcdrop_uncertainty(spec, p, np.random.default_rng(1).random((6, 6, 1)), uq.McDropConfig(T=8))
    assert not var.any()


def test_bernoulli_variance_oracle():
    rate, w, x = 0.3, 1.5, 0.8
    spec, p = unit_with_dropout(rate, w)
    T = 20000
    samples = uq.mcdrop_samples(spec, p, np.array([x]), uq.McDropConfig(T=T, seed=3, chunk=4096))
    keep = 1 - rate
    expected = w**2 * x**2 * (1 - keep) / keep
    var = uq.sample_variance(samples)[0]
    # standard error of a sample variance: sqrt((m4 - s^4 (T-3)/(T-1)) / T)
    m = samples[:, 0]
    m4 = np.mean((m - m.mean()) ** 4)
    se = np.sqrt((m4 - var**2 * (T - 3) / (T - 1)) / T)
    assert abs(var - expected) < 3 * se


def test_variance_formula_matches_textbook():
    s = np.random.default_rng(0).normal(size=(7, 3, 4))
    T = len(s)
    printed = (np.sum(s**2, 0) - np.sum(s, 0) ** 2 / T) / (T - 1)
    np.testing.assert_allclose(uq.sample_variance(s), printed, rtol=1e-12)
    np.testing.assert_allclose(uq.sample_variance(s), np.var(s, axis=0, ddof=1), rtol=1e-10)


def test_mcdrop_determinism_and_config():
    spec = nn.denoising_net(depth=4, channels=4, dropout=0.2)
    p = nn.init_params(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).random((8, 8, 1))
    a = uq.mcdrop_uncertainty(spec, p, x, uq.McDropConfig(T=6, seed=9))
    b = uq.mcdrop_uncertainty(spec, p, x, uq.McDropConfig(T=6, seed=9))
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0], b[0])
    # the pass streams do not depend on batching; BLAS rounding may
    c = uq.mcdrop_uncertainty(spec, p, x, uq.McDropConfig(T=6, seed=9, chunk=2))
    np.testing.assert_allclose(c[1], a[1], rtol=1e-10, atol=1e-15)
    with pytest.raises(ConfigError):
        uq.McDropConfig(T=1)


def test_heatmap_invariant_to_pass_order():
    spec = nn.denoising_net(depth=4, channels=4, dropout=0.3)
    p = nn.init_params(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).random((8, 8, 1))
    s = uq.mcdrop_samples(spec, p, x, uq.McDropConfig(T=10, seed=2))
    perm = np.random.default_rng(5).permutation(10)
    np.testing.assert_allclose(uq.sample_variance(s[perm]), uq.sample_variance(s), rtol=1e-12, atol=1e-15)
    assert np.all(uq.sample_variance(s) >= 0)


def test_doubling_T_halves_monte_carlo_variance():
    """The Monte-Carlo variance of the heatmap mean (the squared standard
    error) halves when T doubles; the standard error itself drops by sqrt(2)."""
    spec = nn.NetworkSpec([nn.Dropout(0.5), nn.Dense(16, 1)])
    p = {"1.weight": np.full((1, 16), 0.25), "1.bias": np.zeros(1)}
    x = np.random.default_rng(0).random(16)

    def estimates(T, reps=400):
        return np.array([uq.mcdrop_uncertainty(spec, p, x, uq.McDropConfig(T=T, seed=1000 * T + r))[1].mean()
                         for r in range(reps)])

    ratio = estimates(64).var(ddof=1) / estimates(32).var(ddof=1)
    assert 0.5 * 0.75 <= ratio <= 0.5 * 1.25


def test_decode_variance_calibration_and_monotone():
    assert uq.decode_variance(np.zeros(3)) == pytest.approx(np.ones(3), abs=1e-15)
    raw = np.linspace(-30, 30, 501)
    v = uq.decode_variance(raw)
    assert np.all(v > 0) and np.all(np.diff(v) > 0)


def test_probout_heatmap_is_decoded_channel():
    spec = nn.with_output_channels(nn.denoising_net(depth=3, channels=4), 2)
    p = nn.init_params(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).random((1, 6, 6, 1))
    mean, var = uq.probout_forward(spec, p, x)
    raw = nn.forward(spec, p, x)
    assert np.array_equal(var, uq.decode_variance(raw[..., 1:]))
    assert np.array_equal(mean, raw[..., :1])


def test_probout_init_starts_at_unit_variance():
    spec = nn.denoising_net(depth=3, channels=4)
    p = nn.init_params(spec, np.random.default_rng(0))
    pspec, pp = uq.probout_init(spec, p)
    x = np.random.default_rng(1).random((1, 6, 6, 1))
    mean, var = uq.probout_forward(pspec, pp, x)
    np.testing.assert_allclose(mean, nn.forward(spec, p, x), atol=1e-14)
    np.testing.assert_allclose(var, 1.0, atol=1e-15)


def test_probout_loss_examples():
    n = 9
    t = np.random.default_rng(0).random(n)
    assert uq.probout_loss(t, np.ones(n), t) == 0.0
    assert uq.probout_loss(t, np.full(n, np.e), t) == pytest.approx(n)
    assert uq.probout_loss(t + 1.0, np.ones(n), t) == pytest.approx(n)
    with pytest.raises(ContractError):
        uq.probout_loss(t, np.zeros(n), t)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_probout_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    out = rng.normal(size=(2, 3, 3, 2))
    target = rng.random((2, 3, 3, 1))

    def f(o):
        return uq.probout_head_grad(o, target)[0]

    _, g = uq.probout_head_grad(out, target)
    h = 1e-6
    for idx in np.ndindex(out.shape):
        op = out.copy()
        op[idx] += h
        om = out.copy()
        om[idx] -= h
        fd = (f(op) - f(om)) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-5 * max(abs(fd), abs(g[idx]), 1e-3)


def test_probout_loss_gradient_through_network_fd():
    rng = np.random.default_rng(4)
    spec = nn.with_output_channels(nn.NetworkSpec([nn.Conv(1, 3), nn.ReLU(), nn.Conv(3, 1)], residual=True), 2)
    p = nn.init_params(spec, rng)
    x = rng.random((1, 4, 4, 1))
    target = rng.random((1, 4, 4, 1))

    def f(pp):
        return uq.probout_head_grad(nn.forward(spec, pp, x), target)[0]

    out, tr = nn.forward(spec, p, x, record=True)
    _, g = uq.probout_head_grad(out, target)
    grads, _ = nn.backward(spec, p, tr, g)
    h = 1e-6
    for key in p:
        for idx in np.ndindex(p[key].shape):
            pp = nn.copy_params(p)
            pp[key][idx] += h
            fp = f(pp)
            pp[key][idx] -= 2 * h
            fd = (fp - f(pp)) / (2 * h)
            assert abs(fd - grads[key][idx]) <= 1e-5 * max(abs(fd), 1e-3)

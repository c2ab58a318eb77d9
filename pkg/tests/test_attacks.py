import numpy as np
import pytest

from innstab import attacks, nn
from innstab.attacks import AttackConfig
from innstab.errors import ConfigError, ContractError


def identity_net():
    spec = nn.NetworkSpec([nn.Conv(1, 1)], residual=True)
    return spec, {"0.weight": np.zeros((1, 1, 3, 3)), "0.bias": np.zeros(1)}


def small_net(seed=0):
    spec = nn.denoising_net(depth=3, channels=4)
    return spec, nn.init_params(spec, np.random.default_rng(seed))


def test_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(lam=-1)
    with pytest.raises(ConfigError):
        AttackConfig(optimizer="adam")
    assert attacks.patch_size_for("ct", 512) == 50
    assert attacks.patch_size_for("denoise", 181) == 50
    assert attacks.patch_size_for("ct", 64) == 6


def test_denoise_target_locality_and_noise_level():
    x = np.full((128, 128), 0.5)
    t, mask = attacks.adv_target_denoise(x, AttackConfig(patch_size=100, seed=3))
    assert mask.sum() == 100 * 100
    assert np.array_equal(t[~mask], x[~mask])
    d = t[mask] - 0.5  # 0.5 +- 4 sigma stays inside [0, 1], so clipping is inactive
    assert abs(d.std() / (25 / 255) - 1) < 0.1
    assert t.min() >= 0 and t.max() <= 1
    t0, m0 = attacks.adv_target_denoise(x, AttackConfig(patch_size=0))
    assert not m0.any() and np.array_equal(t0, x)
    with pytest.raises(ContractError):
        attacks.adv_target_denoise(np.zeros((8, 8)), AttackConfig(patch_size=9))


def test_ct_target_examples():
    t, mask = attacks.adv_target_ct(np.ones((32, 32)), AttackConfig(patch_size=6, seed=1))
    assert mask.sum() == 36
    assert np.all(t[mask] == -0.5) and np.all(t[~mask] == 1.0)
    t, _ = attacks.adv_target_ct(np.zeros((32, 32)), AttackConfig(patch_size=6))
    assert not t.any()
    with pytest.raises(ContractError):
        attacks.adv_target_ct(np.full((8, 8), np.nan), AttackConfig(patch_size=2))


@pytest.mark.parametrize("optimizer", ["lbfgsb", "pgd"])
def test_identity_network_cases(optimizer):
    spec, p = identity_net()
    x = np.random.default_rng(0).uniform(0.2, 0.8, (8, 8))
    res = attacks.find_adversarial_input(spec, p, x, x, AttackConfig(lam=0.7, optimizer=optimizer))
    assert np.array_equal(res.x_adv, x)
    t = np.random.default_rng(1).uniform(0.1, 0.9, (8, 8))
    res = attacks.find_adversarial_input(spec, p, x, t, AttackConfig(lam=0.0, optimizer=optimizer,
                                                                     rel_tol=0.0, max_iterations=200))
    assert np.abs(res.x_adv - t).max() < 1e-6


@pytest.mark.parametrize("optimizer", ["lbfgsb", "pgd"])
def test_feasible_monotone_and_not_worse(optimizer):
    spec, p = small_net()
    rng = np.random.default_rng(2)
    x = rng.random((10, 10))
    target = rng.uniform(-1, 2, (10, 10))
    cfg = AttackConfig(lam=0.1, max_iterations=40, optimizer=optimizer)
    res = attacks.find_adversarial_input(spec, p, x, target, cfg)
    assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1
    assert np.all(np.diff(res.trace) <= 0)
    f = attacks.attack_objective(spec, p, x, target, cfg.lam)
    f_adv = f(res.x_adv.ravel())[0]
    assert f_adv <= f(x.ravel())[0]
    assert f_adv == pytest.approx(res.final, rel=1e-12)


def test_large_lambda_stays_close():
    spec, p = small_net(1)
    rng = np.random.default_rng(3)
    x = rng.random((10, 10))
    res = attacks.find_adversarial_input(spec, p, x, rng.random((10, 10)), AttackConfig(lam=1e6, max_iterations=50))
    assert np.abs(res.x_adv - x).max() < 1e-2


def test_determinism():
    spec, p = small_net()
    rng = np.random.default_rng(4)
    x, target = rng.random((2, 10, 10))
    cfg = AttackConfig(lam=0.0, max_iterations=30)
    a = attacks.find_adversarial_input(spec, p, x, target, cfg)
    b = attacks.find_adversarial_input(spec, p, x, target, cfg)
    assert np.array_equal(a.x_adv, b.x_adv) and a.trace == b.trace


def test_objective_gradient_fd():
    spec, p = small_net()
    rng = np.random.default_rng(5)
    x, target = rng.random((2, 5, 5))
    f = attacks.attack_objective(spec, p, x, target, 0.3)
    z = rng.random(25)
    _, g = f(z)
    h = 1e-6
    for i in range(25):
        e = np.zeros(25)
        e[i] = h
        fd = (f(z + e)[0] - f(z - e)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(abs(fd), 1e-3)


def test_start_point_contract():
    spec, p = identity_net()
    with pytest.raises(ContractError):
        attacks.find_adversarial_input(spec, p, np.full((4, 4), 1.5), np.zeros((4, 4)), AttackConfig())

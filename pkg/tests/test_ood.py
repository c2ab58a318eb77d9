import numpy as np
import pytest

from innstab import ood
from innstab.errors import ConfigError, ContractError
from innstab.operators import NoiseModel, gaussian_noise


def test_salt_pepper_counts_values_and_locality():
    clean = np.random.default_rng(0).uniform(0.2, 0.8, (128, 128))
    noise = NoiseModel(seed=11)
    (x, ref), region = ood.salt_pepper_half(clean, 0.1, "left", seed=2, noise=noise)
    assert np.array_equal(ref, clean)
    assert region[:, :64].all() and not region[:, 64:].any()
    changed = region & (x != clean)
    assert np.isin(x[changed], (0.0, 1.0)).all()
    assert abs(changed.sum() / region.sum() - 0.1) < 0.02
    # the other half is exactly the in-distribution input
    in_dist = np.clip(clean + gaussian_noise(clean.shape, noise), 0, 1)
    assert np.array_equal(x[~region], in_dist[~region])
    # untouched pixels of the corrupted half carry no Gaussian noise
    untouched = region & ~np.isin(x, (0.0, 1.0))
    assert np.array_equal(x[untouched], clean[untouched])


def test_salt_pepper_config_and_determinism():
    clean = np.full((32, 32), 0.5)
    with pytest.raises(ConfigError):
        ood.salt_pepper_half(clean, 0.0)
    with pytest.raises(ConfigError):
        ood.salt_pepper_half(clean, 0.1, side="top")
    a = ood.salt_pepper_half(clean, 0.2, seed=5)
    b = ood.salt_pepper_half(clean, 0.2, seed=5)
    assert np.array_equal(a[0][0], b[0][0]) and np.array_equal(a[1], b[1])
    sides = {ood.salt_pepper_half(clean, 0.2, seed=s)[1][0, 0] for s in range(20)}
    assert sides == {True, False}


def test_silhouette_examples():
    clean = np.random.default_rng(1).random((64, 64))
    out, region = ood.insert_silhouette(clean, np.zeros((5, 5), bool), position=(3, 3))
    assert np.array_equal(out, clean) and not region.any()
    shape = ood.dove_mask(64)
    out, region = ood.insert_silhouette(clean, shape, intensity=0.9, seed=3)
    assert np.all(out[region] == 0.9)
    assert np.array_equal(out[~region], clean[~region])
    assert region.sum() == shape.sum()
    areas = {ood.insert_silhouette(clean, shape, seed=s)[1].sum() for s in range(10)}
    assert areas == {shape.sum()}


def test_silhouette_contracts():
    clean = np.zeros((16, 16))
    with pytest.raises(ContractError):
        ood.insert_silhouette(clean, np.ones((20, 4), bool))
    with pytest.raises(ContractError):
        ood.insert_silhouette(clean, np.ones((4, 4), bool), position=(14, 0))
    with pytest.raises(ContractError):
        ood.insert_silhouette(clean, np.ones((4, 4), bool), intensity=2.0)


@pytest.mark.parametrize("n", [64, 128])
def test_dove_area(n):
    m = ood.dove_mask(n)
    assert m.dtype == bool
    assert abs(m.sum() / n**2 - 0.03) < 0.005

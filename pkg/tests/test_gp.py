import numpy as np
import pytest
from hypothesis import given, strategies as st

from redspace.gp import GpModel, gp_fit, gp_predict, kernel, kernel_matrix, lml_and_grad, log_marginal_likelihood


def test_kernel_values():
    assert kernel([0.3, 0.1], [0.3, 0.1], (1.5, [1.0, 2.0])) == pytest.approx(2.25)
    assert kernel([0.0], [np.sqrt(2.0)], (1.0, [1.0])) == pytest.approx(np.exp(-1.0))
    assert kernel([0.0], [np.sqrt(2.0)], (1.0, [1.0]), "standard") == pytest.approx(np.exp(-1.0))
    assert kernel([0.0], [2.0], (1.0, [2.0]), "standard") == pytest.approx(np.exp(-0.5))
    assert kernel([0.0], [2.0], (1.0, [2.0]), "linear") == pytest.approx(np.exp(-1.0))
    with pytest.raises(ValueError):
        kernel([0.0], [0.0, 1.0], (1.0, [1.0]))


@given(seed=st.integers(0, 10_000), conv=st.sampled_from(["linear", "standard"]))
def test_gram_psd_and_matches_pointwise(seed, conv):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(12, 3))
    ls = rng.uniform(0.1, 3.0, 3)
    K = kernel_matrix(Z, Z, 1.3, ls, conv)
    assert np.linalg.eigvalsh(K).min() > -1e-10
    assert K[2, 5] == pytest.approx(kernel(Z[2], Z[5], (1.3, ls), conv), rel=1e-12)


def test_noise_free_interpolation_and_prior_reversion():
    rng = np.random.default_rng(0)
    Z = rng.uniform(-1, 1, size=(15, 2))
    y = np.sin(3 * Z[:, 0]) + Z[:, 1]
    m = GpModel(Z, y, 1.0, [0.5, 0.5], sigma_y=0.0)
    p = gp_predict(m, Z)
    assert np.abs(p.mean - y).max() < 1e-6
    assert p.variance.max() < 1e-6
    far = gp_predict(m, np.full((1, 2), 100.0))
    assert abs(far.mean[0]) < 1e-6 and abs(far.variance[0] - 1.0) < 1e-6


def test_cached_factor_reproduces_matrix():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(10, 2))
    m = GpModel(Z, rng.normal(size=10), 0.8, [1.2, 0.4], sigma_y=0.1)
    K = m.gram(Z) + m.sigma_y ** 2 * np.eye(10)
    assert np.abs(m.L @ m.L.T - K).max() < 1e-10


def test_prediction_matches_dense_inverse():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(5, 2))
    y = rng.normal(size=5)
    m = GpModel(Z, y, 1.1, [0.7, 1.9], sigma_y=0.05)
    Zs = rng.normal(size=(4, 2))
    Kinv = np.linalg.inv(m.gram(Z) + 0.05 ** 2 * np.eye(5))
    Ks = m.gram(Zs, Z)
    p = gp_predict(m, Zs, full_cov=True)
    assert np.allclose(p.mean, Ks @ Kinv @ y, atol=1e-8)
    assert np.allclose(p.cov, m.gram(Zs) - Ks @ Kinv @ Ks.T, atol=1e-8)
    assert np.linalg.eigvalsh(p.cov).min() > -1e-8


def test_lml_scalar_and_permutation():
    m = GpModel(np.zeros((1, 1)), [0.0], sigma_f=np.sqrt(1 - 1e-12), lengthscales=[1.0], sigma_y=1e-6)
    assert log_marginal_likelihood(m) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-9)
    rng = np.random.default_rng(3)
    Z, y = rng.normal(size=(9, 2)), rng.normal(size=9)
    perm = rng.permutation(9)
    a = GpModel(Z, y, 1.0, [1.0, 2.0], 0.1).log_marginal_likelihood()
    b = GpModel(Z[perm], y[perm], 1.0, [1.0, 2.0], 0.1).log_marginal_likelihood()
    assert abs(a - b) < 1e-10


@given(seed=st.integers(0, 10_000), conv=st.sampled_from(["linear", "standard"]))
def test_lml_gradient_matches_finite_differences(seed, conv):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(3, 15)), int(rng.integers(1, 4))
    Z, y = rng.normal(size=(n, d)), rng.normal(size=n)
    p = np.concatenate([[rng.uniform(-1, 1)], rng.uniform(-1, 1.5, d), [rng.uniform(-3, -0.5)]])
    v, g = lml_and_grad(p, Z, y, conv)
    assert v == pytest.approx(GpModel.from_log_params(Z, y, p, conv).log_marginal_likelihood(), abs=1e-9)
    h = 1e-5
    fd = np.array([(lml_and_grad(p + h * e, Z, y, conv)[0] - lml_and_grad(p - h * e, Z, y, conv)[0]) / (2 * h)
                   for e in np.eye(p.size)])
    assert np.all(np.abs(fd - g) <= 1e-4 * np.maximum(np.abs(fd), 1.0))


def test_adding_point_never_increases_variance():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(8, 2))
    y = rng.normal(size=8)
    test = rng.normal(size=(30, 2))
    base = GpModel(Z[:7], y[:7], 1.0, [0.8, 0.8], 0.0).predict(test).variance
    more = GpModel(Z, y, 1.0, [0.8, 0.8], 0.0).predict(test).variance
    assert np.all(more <= base + 1e-8)


def test_fit_recovers_lengthscale():
    rng = np.random.default_rng(5)
    Z = rng.uniform(-3, 3, size=(60, 1))
    true = GpModel(Z, np.zeros(60), 1.0, [0.5], 1e-3)
    K = true.gram(Z) + 1e-6 * np.eye(60)
    y = np.linalg.cholesky(K) @ rng.standard_normal(60)
    m = gp_fit(Z, y, restarts=8, seed=0)
    assert abs(np.log(m.lengthscales[0]) - np.log(0.5)) < 0.5


def test_fit_zero_signal_and_restart_monotonicity():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(20, 2))
    m = gp_fit(Z, np.zeros(20), restarts=3, seed=0)
    assert np.abs(m.predict(rng.normal(size=(10, 2))).mean).max() < 1e-6
    y = np.sin(Z[:, 0] * 2) + 0.05 * rng.normal(size=20)
    lmls = [gp_fit(Z, y, restarts=r, seed=1).log_marginal_likelihood() for r in (1, 2, 4, 8)]
    assert all(b >= a - 1e-9 for a, b in zip(lmls, lmls[1:]))


def test_fit_validation_and_determinism():
    with pytest.raises(ValueError):
        gp_fit(np.zeros((1, 1)), [0.0])
    rng = np.random.default_rng(7)
    Z, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    assert np.array_equal(gp_fit(Z, y, seed=3).log_params, gp_fit(Z, y, seed=3).log_params)
    with pytest.raises(ValueError):
        GpModel(Z, y, 1.0, [1.0, 1.0], 0.1, convention="bogus")

import numpy as np
import pytest

from src.GpModel import GpDataset, KernelParams
from src.calculations.gp_calculations import (assemble_joint, fit, fit_auto, fit_sparse, kernel, kernel_matrix,
                                              posterior_mean, posterior_mean_grad, posterior_var, propagate_horizon,
                                              select_inducing)


def _random_dataset(rng, n):
    dataset = GpDataset()
    for _ in range(n):
        dataset.append(rng.normal(0.0, 2.0, 4), rng.uniform(-0.5, 0.5))
    return dataset


def test_kernel_is_squared_exponential():
    params = KernelParams(0.7, [1.0, 2.0, 3.0, 4.0])
    z, w = np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0, 0.0])
    assert kernel(z, z, params) == pytest.approx(0.49)
    assert kernel(z, w, params) == pytest.approx(0.49 * np.exp(-0.5 * (1.0 + 1.0)))


def test_empty_dataset_gives_prior(kernel):
    gp = fit(GpDataset(), kernel)
    assert gp.mode == "prior"
    assert posterior_mean(gp, np.zeros(4)) == 0.0
    assert posterior_var(gp, np.zeros(4)) == pytest.approx(0.49)
    np.testing.assert_array_equal(posterior_mean_grad(gp, np.zeros(4)), np.zeros(4))


def test_exact_posterior_matches_dense_solve(rng):
    params = KernelParams(0.7, [0.5, 0.5, 0.5, 0.5], jitter=1e-6)
    for _ in range(100):
        dataset = _random_dataset(rng, int(rng.integers(1, 201)))
        gp = fit(dataset, params)
        Z, y = dataset.inputs(), dataset.targets()
        gram = kernel_matrix(Z, Z, params) + params.jitter * np.eye(dataset.n_D)
        for z in rng.normal(0.0, 2.0, (5, 4)):
            k = kernel_matrix(z, Z, params)[0]
            mean = k @ np.linalg.solve(gram, y)
            var = 0.49 - k @ np.linalg.solve(gram, k)
            assert posterior_mean(gp, z) == pytest.approx(mean, rel=1e-6, abs=1e-8)
            assert posterior_var(gp, z) == pytest.approx(max(var, 0.0), rel=1e-5, abs=1e-8)


def test_mean_gradient_matches_central_differences(small_dataset, kernel, rng):
    gp = fit(small_dataset, kernel)
    for z in small_dataset.inputs()[:5] + rng.normal(0.0, 1.0, (5, 4)):
        h = 1e-4 * kernel.length_scales
        numeric = np.array([(posterior_mean(gp, z + h[i] * np.eye(4)[i]) - posterior_mean(gp, z - h[i] * np.eye(4)[i]))
                            / (2 * h[i]) for i in range(4)])
        np.testing.assert_allclose(posterior_mean_grad(gp, z), numeric, rtol=1e-5, atol=1e-9)


def test_observed_points_are_reproduced(small_dataset, kernel):
    gp = fit(small_dataset, kernel)
    for z, y in zip(small_dataset.inputs(), small_dataset.targets()):
        assert posterior_mean(gp, z) == pytest.approx(y, abs=1e-3)
        assert posterior_var(gp, z) < 1e-3


def test_sparse_variance_is_bounded(small_dataset, kernel):
    inducing = select_inducing(small_dataset.inputs(), 4)
    gp = fit_sparse(small_dataset, inducing, kernel)
    assert gp.mode == "sparse"
    for z in small_dataset.inputs():
        assert 0.0 <= posterior_var(gp, z) <= kernel.sigma_d ** 2 + 1e-9


def test_kernel_decays_along_rays(rng):
    params = KernelParams(0.7, [5.0, 100.0, 500.0, 100.0])
    for _ in range(10):
        z = rng.normal(0.0, 10.0, 4)
        direction = rng.normal(0.0, 1.0, 4)
        direction /= np.linalg.norm(direction)
        values = [kernel(z, z + t * direction, params) for t in np.linspace(0.0, 5000.0, 200)]
        assert np.all(np.diff(values) < 0.0)
        assert values[-1] < 1e-12


def test_sparse_with_every_input_inducing_is_exact(rng):
    params = KernelParams(0.7, [1.5, 1.5, 1.5, 1.5], jitter=1e-6)
    dataset = _random_dataset(rng, 30)
    exact = fit(dataset, params)
    inducing = dataset.inputs()[rng.permutation(dataset.n_D)]
    for support in (inducing, np.vstack([inducing, rng.normal(0.0, 2.0, (3, 4))])):
        sparse = fit_sparse(dataset, support, params)
        for z in rng.normal(0.0, 2.0, (10, 4)):
            assert posterior_mean(sparse, z) == pytest.approx(posterior_mean(exact, z), rel=1e-6, abs=1e-12)
            assert posterior_var(sparse, z) == pytest.approx(posterior_var(exact, z), rel=1e-6, abs=1e-12)


def test_sparse_mean_stays_near_exact_mean(rng):
    params = KernelParams(0.7, [3.0, 3.0, 3.0, 3.0], jitter=1e-4)
    dataset = GpDataset()
    for z in rng.normal(0.0, 2.0, (50, 4)):
        dataset.append(z, 0.5 * np.sin(z[0] / 3.0))
    exact = fit(dataset, params)
    sparse = fit_sparse(dataset, select_inducing(dataset.inputs(), 4), params)
    assert sparse.mode == "sparse"
    grid = np.array(np.meshgrid(*[np.linspace(-3.0, 3.0, 4)] * 4)).T.reshape(-1, 4)
    for z in grid:
        assert abs(posterior_mean(sparse, z) - posterior_mean(exact, z)) <= 3.0 * params.sigma_d


@pytest.mark.slow
def test_propagated_covariance_matches_sampled_linearization(small_dataset, kernel, model):
    rng = np.random.default_rng(7)
    gp = fit(small_dataset, kernel)
    x0 = np.array([45.0, 0.0, -100.0, 11.0])
    inputs = [0.5, -1.0, 0.0]
    means, joints = propagate_horizon(gp, x0, inputs, model)

    samples = np.tile(x0, (100_000, 1))
    for k, u1 in enumerate(inputs):
        x_hat = means[k]
        std = np.sqrt(posterior_var(gp, x_hat))
        d = (posterior_mean(gp, x_hat) + (samples - x_hat) @ posterior_mean_grad(gp, x_hat)
             + std * rng.standard_normal(samples.shape[0]))
        samples = samples @ model.A.T + model.B1 * u1 + np.outer(d, model.B2)

    np.testing.assert_allclose(samples.mean(axis=0), means[-1], atol=0.05)
    np.testing.assert_allclose(np.cov(samples.T)[:2, :2], joints[-1].Sigma_x[:2, :2], rtol=0.05)


def test_fit_auto_switches_at_threshold(small_dataset, kernel):
    inducing = select_inducing(small_dataset.inputs(), 4)
    assert fit_auto(small_dataset, kernel, inducing, sparse_threshold=100).mode == "exact"
    assert fit_auto(small_dataset, kernel, inducing, sparse_threshold=5).mode == "sparse"


def test_select_inducing_spacing():
    trajectory = np.arange(21 * 4, dtype=float).reshape(21, 4)
    np.testing.assert_array_equal(select_inducing(trajectory, 4)[:, 0], trajectory[[0, 7, 13, 20], 0])
    np.testing.assert_array_equal(select_inducing(trajectory, 1), trajectory[[10]])
    with pytest.raises(ValueError):
        select_inducing(trajectory, 0)


def test_prior_rollout_equals_nominal_rollout(model, kernel):
    gp = fit(GpDataset(), kernel)
    x0 = np.array([20.0, -3.0, -200.0, 12.0])
    inputs = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
    means, joints = propagate_horizon(gp, x0, inputs, model)
    np.testing.assert_array_equal(means, model.rollout(x0, inputs))
    assert all(joint.is_psd() for joint in joints)
    assert joints[0].Sigma_x.sum() == 0.0


def test_joint_covariance_blocks(small_dataset, kernel):
    gp = fit(small_dataset, kernel)
    z = small_dataset.inputs()[0]
    Sigma_x = np.diag([1.0, 0.5, 0.0, 0.0])
    joint = assemble_joint(gp, z, Sigma_x)
    g = posterior_mean_grad(gp, z)
    np.testing.assert_allclose(joint.Sigma_xd, Sigma_x @ g)
    assert joint.Sigma_d == pytest.approx(g @ Sigma_x @ g + posterior_var(gp, z))


def test_dataset_capacity_and_csv(tmp_path, small_dataset):
    capped = GpDataset(capacity=5)
    for z, y in zip(small_dataset.inputs(), small_dataset.targets()):
        capped.append(z, y)
    assert capped.n_D == 5 and capped.evicted == small_dataset.n_D - 5
    np.testing.assert_array_equal(capped.inputs(), small_dataset.inputs()[-5:])

    path = str(tmp_path / "dataset.csv")
    small_dataset.save_dataset_to_csv(path)
    loaded = GpDataset.load_dataset_from_csv(path)
    np.testing.assert_array_equal(loaded.inputs(), small_dataset.inputs())
    np.testing.assert_array_equal(loaded.targets(), small_dataset.targets())

import numpy as np
import pytest

import meshgp.gp as gp
from meshgp.gp import (
    ModelError,
    TrainingSet,
    loo_residuals,
    nll,
    posterior_mean,
    posterior_mean_points,
    posterior_variance,
    posterior_variance_points,
)
from meshgp.kernels import Hyperparams
from meshgp.kroncov import FieldTensor
from oracles import (
    dense_loo_residuals,
    dense_nll,
    dense_posterior_mean,
    dense_posterior_variance,
    random_instance,
    random_theta,
)


def make_data(rng, spectrum, n_s=5, n_t=4, y=None):
    X_tr = np.sort(rng.choice(spectrum.n_vertices, size=n_s, replace=False))
    T_tr = np.sort(rng.uniform(0.0, 10.0, size=n_t))
    values = rng.standard_normal((2, n_s, n_t)) if y is None else y
    return TrainingSet(
        mesh_ref="test", X_tr=X_tr, T_tr=T_tr,
        Y=FieldTensor(values=values, space_ids=X_tr, times=T_tr),
    )


class TestTrainingSet:
    def test_duplicate_vertices_rejected(self, rng):
        with pytest.raises(ModelError, match="unique"):
            TrainingSet(mesh_ref="", X_tr=[0, 0], T_tr=[0.0, 1.0],
                        Y=FieldTensor(values=np.zeros((2, 2, 2))))

    def test_nonincreasing_times_rejected(self):
        with pytest.raises(ModelError, match="increasing"):
            TrainingSet(mesh_ref="", X_tr=[0, 1], T_tr=[1.0, 1.0],
                        Y=FieldTensor(values=np.zeros((2, 2, 2))))

    def test_shape_mismatch(self):
        with pytest.raises(ModelError, match="does not match"):
            TrainingSet(mesh_ref="", X_tr=[0, 1], T_tr=[0.0, 1.0],
                        Y=FieldTensor(values=np.zeros((2, 3, 2))))


class TestNLL:
    def test_standard_normal_at_zero(self, tetra_spectrum):
        # one location, one time, identity covariance, zero data:
        # L_d = (0 + 0 + 2 log 2pi) / 4 = log(2pi) / 2
        theta = Hyperparams(sigma_m=1.0, l_s=1.0, sigma_a=1.0, l_t=1.0,
                            beta11=1.0, beta21=0.0, beta22=1.0,
                            sigma2_u_eps=0.0, sigma2_v_eps=0.0)
        X_tr = np.array([0])
        T_tr = np.array([0.0])
        data = TrainingSet(mesh_ref="", X_tr=X_tr, T_tr=T_tr,
                           Y=FieldTensor(values=np.zeros((2, 1, 1))))
        # rescale sigma_m so the spatial kernel is exactly 1 at the vertex
        from meshgp.kernels import spatial_kernel_diag
        k0 = spatial_kernel_diag(tetra_spectrum, 1.0, 1.0, X_tr)[0]
        theta = Hyperparams(**{**theta.to_dict(), "sigma_m": 1.0 / k0})
        got = nll(theta, data, tetra_spectrum)
        assert got == pytest.approx(0.5 * np.log(2 * np.pi), rel=1e-10)

    def test_dense_oracle(self, rng):
        for _ in range(8):
            theta, data, spectrum = random_instance(rng)
            assert nll(theta, data, spectrum) == pytest.approx(
                dense_nll(theta, data, spectrum), rel=1e-8
            )

    def test_noisier_data_costs_more_on_average(self, rng):
        theta, data, spectrum = random_instance(rng, n_s_max=5, n_t_max=4)
        base = np.zeros_like(data.Y.values)
        clean_data = TrainingSet(mesh_ref=data.mesh_ref, X_tr=data.X_tr,
                                 T_tr=data.T_tr,
                                 Y=FieldTensor(values=base, space_ids=data.X_tr,
                                               times=data.T_tr))
        clean = nll(theta, clean_data, spectrum)
        noisy = []
        for seed in range(20):
            g = np.random.default_rng(seed)
            y = base + g.standard_normal(base.shape)
            noisy_data = TrainingSet(mesh_ref=data.mesh_ref, X_tr=data.X_tr,
                                     T_tr=data.T_tr,
                                     Y=FieldTensor(values=y, space_ids=data.X_tr,
                                                   times=data.T_tr))
            noisy.append(nll(theta, noisy_data, spectrum))
        assert np.mean(noisy) > clean


class TestPosteriorMean:
    def test_zero_data_gives_zero_mean(self, rng, tetra_spectrum):
        data = make_data(rng, tetra_spectrum, y=np.zeros((2, 4, 4)), n_s=4, n_t=4)
        theta = random_theta(rng)
        mean = posterior_mean(theta, data, tetra_spectrum)
        np.testing.assert_allclose(mean.values, 0.0, atol=1e-14)

    def test_interpolation_limit(self, rng, tetra_spectrum):
        theta = Hyperparams(sigma_m=1.0, l_s=1.0, sigma_a=1.0, l_t=3.0,
                            beta11=1.0, beta21=0.2, beta22=1.0,
                            sigma2_u_eps=1e-10, sigma2_v_eps=1e-10)
        data = make_data(rng, tetra_spectrum, n_s=4, n_t=3)
        mean = posterior_mean(theta, data, tetra_spectrum)
        rel = np.abs(mean.values - data.Y.values) / np.abs(data.Y.values)
        assert rel.max() <= 1e-4

    def test_dense_oracle_heldout_vertices(self, rng):
        theta, data, spectrum = random_instance(rng, n_s_max=6, n_t_max=5)
        held_out = np.setdiff1d(np.arange(spectrum.n_vertices), data.X_tr)[:3]
        times = np.array([0.5, 4.2])
        points = [(f, x, t) for f in (0, 1) for x in held_out for t in times]
        got = posterior_mean_points(theta, data, spectrum, points)
        expected = dense_posterior_mean(theta, data, spectrum, points)
        np.testing.assert_allclose(got, expected, rtol=1e-7, atol=1e-12)

    def test_grid_matches_points(self, rng):
        theta, data, spectrum = random_instance(rng)
        verts = np.array([0, 3, 7])
        times = np.array([1.0, 2.5, 9.0])
        grid = posterior_mean(theta, data, spectrum, verts, times)
        points = [(f, x, t) for f in (0, 1) for x in verts for t in times]
        flat = posterior_mean_points(theta, data, spectrum, points)
        np.testing.assert_allclose(grid.values.ravel(), flat, rtol=1e-12)

    def test_linear_in_observations(self, rng):
        theta, data, spectrum = random_instance(rng)
        y2 = np.random.default_rng(7).standard_normal(data.Y.values.shape)
        alpha = 0.73

        def mean_of(values):
            d = TrainingSet(mesh_ref=data.mesh_ref, X_tr=data.X_tr, T_tr=data.T_tr,
                            Y=FieldTensor(values=values, space_ids=data.X_tr,
                                          times=data.T_tr))
            return posterior_mean(theta, d, spectrum).values

        combined = mean_of(alpha * data.Y.values + y2)
        split = alpha * mean_of(data.Y.values) + mean_of(y2)
        np.testing.assert_allclose(combined, split, atol=1e-10)

    def test_task_decoupling(self, rng):
        theta, data, spectrum = random_instance(rng)
        theta = Hyperparams(**{**theta.to_dict(), "beta21": 0.0})
        modified = data.Y.values.copy()
        modified[1] = np.random.default_rng(3).standard_normal(modified[1].shape)
        d2 = TrainingSet(mesh_ref=data.mesh_ref, X_tr=data.X_tr, T_tr=data.T_tr,
                         Y=FieldTensor(values=modified, space_ids=data.X_tr,
                                       times=data.T_tr))
        m1 = posterior_mean(theta, data, spectrum).values[0]
        m2 = posterior_mean(theta, d2, spectrum).values[0]
        np.testing.assert_allclose(m1, m2, atol=1e-12)

    def test_empty_query_rejected(self, rng):
        theta, data, spectrum = random_instance(rng)
        with pytest.raises(ModelError, match="empty"):
            posterior_mean(theta, data, spectrum, [], [1.0])
        with pytest.raises(ModelError, match="empty"):
            posterior_mean_points(theta, data, spectrum, [])

    def test_unknown_vertex_rejected(self, rng):
        theta, data, spectrum = random_instance(rng)
        with pytest.raises(ModelError, match="out of range"):
            posterior_mean(theta, data, spectrum, [spectrum.n_vertices], [0.0])


class TestPosteriorVariance:
    def test_dense_oracle(self, rng):
        theta, data, spectrum = random_instance(rng, n_s_max=6, n_t_max=5)
        verts = np.array([0, 2, 9])
        times = np.array([0.3, 5.0])
        points = [(f, x, t) for f in (0, 1) for x in verts for t in times]
        expected = dense_posterior_variance(theta, data, spectrum, points)
        grid = posterior_variance(theta, data, spectrum, verts, times)
        np.testing.assert_allclose(grid.values.ravel(), expected, rtol=1e-7, atol=1e-10)
        pts = posterior_variance_points(theta, data, spectrum, points)
        np.testing.assert_allclose(pts, expected, rtol=1e-7, atol=1e-10)

    def test_prior_reversion_far_in_time(self, rng):
        theta, data, spectrum = random_instance(rng)
        far = data.T_tr.max() + 1000.0 * theta.l_t
        var = posterior_variance(theta, data, spectrum, [0], [far]).values
        from meshgp.kernels import spatial_kernel_diag, task_kernel
        K_f = task_kernel(theta)
        prior_s = spatial_kernel_diag(spectrum, theta.sigma_m, theta.l_s, [0])[0]
        for f in (0, 1):
            prior = K_f[f, f] * prior_s * theta.sigma_a
            assert var[f, 0, 0] == pytest.approx(prior, rel=0.01)

    def test_observation_shrinks_variance(self, rng, tetra_spectrum):
        theta = Hyperparams(sigma_m=1.0, l_s=1.0, sigma_a=1.0, l_t=2.0,
                            beta11=1.0, beta21=0.0, beta22=1.0,
                            sigma2_u_eps=1e-8, sigma2_v_eps=1e-8)
        X_all = np.arange(4)
        T = np.array([0.0, 1.0])
        far = TrainingSet(mesh_ref="", X_tr=X_all[:2], T_tr=T + 500.0,
                          Y=FieldTensor(values=np.zeros((2, 2, 2))))
        prior_var = posterior_variance(theta, far, tetra_spectrum, [3], [0.5]).values[0, 0, 0]
        near = TrainingSet(mesh_ref="", X_tr=np.array([3]), T_tr=np.array([0.5]),
                           Y=FieldTensor(values=np.zeros((2, 1, 1))))
        post_var = posterior_variance(theta, near, tetra_spectrum, [3], [0.5]).values[0, 0, 0]
        assert post_var < 0.1 * prior_var

    def test_variance_ignores_observation_values(self, rng):
        theta, data, spectrum = random_instance(rng)
        other = TrainingSet(
            mesh_ref=data.mesh_ref, X_tr=data.X_tr, T_tr=data.T_tr,
            Y=FieldTensor(values=np.random.default_rng(9).standard_normal(data.Y.values.shape),
                          space_ids=data.X_tr, times=data.T_tr))
        v1 = posterior_variance(theta, data, spectrum).values
        v2 = posterior_variance(theta, other, spectrum).values
        np.testing.assert_array_equal(v1, v2)

    def test_nonnegative(self, rng):
        theta, data, spectrum = random_instance(rng)
        var = posterior_variance(theta, data, spectrum).values
        assert var.min() >= 0.0


class TestLOOResiduals:
    def test_matches_naive_exclusion(self, rng):
        for _ in range(3):
            theta, data, spectrum = random_instance(rng, n_s_max=5, n_t_max=4)
            res, tau2 = loo_residuals(theta, data, spectrum)
            expected_res, expected_tau2 = dense_loo_residuals(theta, data, spectrum)
            np.testing.assert_allclose(res.values, expected_res, rtol=1e-6, atol=1e-9)
            assert tau2 == pytest.approx(expected_tau2, rel=1e-6)

    def test_two_locations_vs_posterior_mean(self, rng):
        # at N_s = 2 the leave-one-out prediction for location 0 is just a
        # model trained on location 1 alone
        theta, data, spectrum = random_instance(rng, n_s_max=2, n_t_max=4)
        while data.n_space != 2:
            theta, data, spectrum = random_instance(rng, n_s_max=2, n_t_max=4)
        res, _ = loo_residuals(theta, data, spectrum)
        reduced = TrainingSet(
            mesh_ref=data.mesh_ref, X_tr=data.X_tr[1:], T_tr=data.T_tr,
            Y=FieldTensor(values=data.Y.values[:, 1:, :],
                          space_ids=data.X_tr[1:], times=data.T_tr))
        pred = posterior_mean(theta, reduced, spectrum, data.X_tr[:1], data.T_tr)
        expected = data.Y.values[:, 0, :] - pred.values[:, 0, :]
        np.testing.assert_allclose(res.values[:, 0, :], expected, rtol=1e-6, atol=1e-9)

    def test_zero_data_zero_residuals(self, rng, tetra_spectrum):
        data = make_data(rng, tetra_spectrum, n_s=3, n_t=3, y=np.zeros((2, 3, 3)))
        res, tau2 = loo_residuals(random_theta(rng), data, tetra_spectrum)
        np.testing.assert_array_equal(res.values, 0.0)
        assert tau2 == 0.0

    def test_invariant_under_location_permutation(self, rng):
        theta, data, spectrum = random_instance(rng, n_s_max=6, n_t_max=4)
        _, tau2 = loo_residuals(theta, data, spectrum)
        perm = np.random.default_rng(1).permutation(data.n_space)
        shuffled = TrainingSet(
            mesh_ref=data.mesh_ref, X_tr=data.X_tr[perm], T_tr=data.T_tr,
            Y=FieldTensor(values=data.Y.values[:, perm, :],
                          space_ids=data.X_tr[perm], times=data.T_tr))
        # X_tr loses its sort order but stays unique; rebuild via argsort
        order = np.argsort(shuffled.X_tr)
        resorted = TrainingSet(
            mesh_ref=data.mesh_ref, X_tr=shuffled.X_tr[order], T_tr=data.T_tr,
            Y=FieldTensor(values=shuffled.Y.values[:, order, :],
                          space_ids=shuffled.X_tr[order], times=data.T_tr))
        _, tau2_perm = loo_residuals(theta, resorted, spectrum)
        assert tau2_perm == pytest.approx(tau2, rel=1e-10)

    def test_single_location_rejected(self, rng, tetra_spectrum):
        data = make_data(rng, tetra_spectrum, n_s=1, n_t=3)
        with pytest.raises(ModelError, match="at least 2"):
            loo_residuals(random_theta(rng), data, tetra_spectrum)

    def test_single_factorization(self, rng, monkeypatch):
        theta, data, spectrum = random_instance(rng)
        calls = []
        original = gp.factorize

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(gp, "factorize", counting)
        loo_residuals(theta, data, spectrum)
        assert len(calls) == 1

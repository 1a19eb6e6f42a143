"""Tests for the Euler-Maruyama ensemble simulator."""

import math

import numpy as np
import pytest

from gpsde import (Ensemble, MomentState, TimeGrid, em_step, empirical_moments,
                   make_benes, make_linear, simulate)
from gpsde.errors import DivergenceError


class TestEmStep:
    def test_zero_model(self):
        model = make_linear(np.zeros((2, 2)), np.zeros((2, 2)))
        z = np.array([1.0, -1.0])
        np.testing.assert_array_equal(em_step(model, z, 0.0, 0.1, np.ones(2)), z)

    def test_noise_scaling(self):
        model = make_linear(np.zeros((2, 2)), np.eye(2))
        z = np.zeros(2)
        out = em_step(model, z, 0.0, 0.25, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, [0.5, 0.0])

    def test_deterministic_part(self):
        model = make_linear(np.array([[-1.0]]), np.array([[1.0]]))
        out = em_step(model, np.array([1.0]), 0.0, 0.1, np.zeros(1))
        assert out[0] == pytest.approx(0.9)

    def test_dt_validation(self):
        model = make_linear(np.zeros((1, 1)), np.ones((1, 1)))
        with pytest.raises(ValueError):
            em_step(model, np.zeros(1), 0.0, 0.0, np.zeros(1))


class TestSimulate:
    def test_zero_model_constant_paths(self):
        model = make_linear(np.zeros((2, 2)), np.zeros((2, 2)))
        z0 = np.array([1.0, 2.0])
        ens = simulate(model, z0, 5, TimeGrid(0, 1, 0.25), seed=0)
        assert ens.paths.shape == (5, 5, 2)
        for k in range(5):
            np.testing.assert_array_equal(ens.paths[:, k, :], np.tile(z0, (5, 1)))

    def test_determinism(self):
        model = make_benes(2, np.zeros(2))
        a = simulate(model, np.zeros(2), 16, TimeGrid(0, 1, 0.1), seed=42)
        b = simulate(model, np.zeros(2), 16, TimeGrid(0, 1, 0.1), seed=42)
        np.testing.assert_array_equal(a.paths, b.paths)

    def test_seed_changes_output(self):
        model = make_benes(1, np.zeros(1))
        a = simulate(model, np.zeros(1), 8, TimeGrid(0, 1, 0.1), seed=0)
        b = simulate(model, np.zeros(1), 8, TimeGrid(0, 1, 0.1), seed=1)
        assert np.max(np.abs(a.paths - b.paths)) > 0

    def test_thread_count_invariance(self):
        # more paths than one chunk so the threaded branch actually splits work
        model = make_benes(1, np.zeros(1))
        grid = TimeGrid(0, 0.5, 0.1)
        a = simulate(model, np.zeros(1), 5000, grid, seed=3, threads=1)
        b = simulate(model, np.zeros(1), 5000, grid, seed=3, threads=4)
        np.testing.assert_array_equal(a.paths, b.paths)

    def test_record_times_subset_matches_full_run(self):
        model = make_benes(2, np.zeros(2))
        grid = TimeGrid(0, 1, 0.1)
        full = simulate(model, np.zeros(2), 12, grid, seed=9)
        sub = simulate(model, np.zeros(2), 12, grid, seed=9,
                       record_times=[0.5, 1.0])
        np.testing.assert_allclose(sub.times, [0.5, 1.0])
        np.testing.assert_array_equal(sub.paths[:, 0], full.paths[:, 5])
        np.testing.assert_array_equal(sub.paths[:, 1], full.paths[:, 10])

    def test_record_times_must_be_on_grid(self):
        model = make_benes(1, np.zeros(1))
        with pytest.raises(ValueError):
            simulate(model, np.zeros(1), 4, TimeGrid(0, 1, 0.1), seed=0,
                     record_times=[0.55])

    def test_gaussian_initial_state(self):
        model = make_linear(np.zeros((2, 2)), np.zeros((2, 2)))
        init = MomentState(mean=np.array([1.0, -1.0]),
                           cov=np.array([[0.5, 0.2], [0.2, 0.3]]))
        ens = simulate(model, init, 20000, TimeGrid(0, 0.1, 0.1), seed=0)
        st = empirical_moments(ens, 0)
        np.testing.assert_allclose(st.mean, init.mean, atol=0.02)
        np.testing.assert_allclose(st.cov, init.cov, atol=0.02)

    def test_benes_moments_large_n(self):
        model = make_benes(1, np.zeros(1))
        n = 10**5
        ens = simulate(model, np.zeros(1), n, TimeGrid(0, 1, 0.01), seed=0,
                       record_times=[1.0])
        st = empirical_moments(ens, 0)
        # oracle at z0=0, t=1: mean 0, variance t + t^2 = 2
        P = 2.0
        assert abs(st.mean[0]) <= 3 * math.sqrt(P / n)
        assert st.cov[0, 0] == pytest.approx(P, rel=0.03)

    def test_divergence_names_path_and_step(self):
        model = make_linear(np.array([[50.0]]), np.zeros((1, 1)))
        with pytest.raises(DivergenceError) as exc:
            simulate(model, np.array([1e300]), 3, TimeGrid(0, 10, 1.0), seed=0)
        assert exc.value.step is not None
        assert exc.value.path is not None

    def test_n_validation(self):
        model = make_benes(1, np.zeros(1))
        with pytest.raises(ValueError):
            simulate(model, np.zeros(1), 0, TimeGrid(0, 1, 0.1), seed=0)

    def test_euler_weak_bias_halves_with_dt(self):
        # scalar OU: deterministic Euler bias of the mean is O(dt)
        model = make_linear(np.array([[-1.0]]), np.array([[1.0]]))
        n = 10**6
        exact = math.exp(-1.0)
        biases = []
        for dt in (0.2, 0.1):
            ens = simulate(model, np.array([1.0]), n, TimeGrid(0, 1, dt),
                           seed=0, record_times=[1.0])
            biases.append(abs(empirical_moments(ens, 0).mean[0] - exact))
        ratio = biases[0] / biases[1]
        assert ratio == pytest.approx(2.0, rel=0.3)


class TestEmpiricalMoments:
    def test_identical_paths_zero_covariance(self):
        ens = Ensemble(times=np.array([0.0]), paths=np.ones((4, 1, 2)), seed=0)
        st = empirical_moments(ens, 0)
        np.testing.assert_allclose(st.cov, np.zeros((2, 2)))

    def test_two_path_hand_example(self):
        paths = np.array([[[0.0]], [[2.0]]])
        st = empirical_moments(Ensemble(times=np.array([0.0]), paths=paths,
                                        seed=0), 0)
        assert st.mean[0] == pytest.approx(1.0)
        assert st.cov[0, 0] == pytest.approx(2.0)  # unbiased, denominator 1

    def test_needs_two_paths(self):
        ens = Ensemble(times=np.array([0.0]), paths=np.zeros((1, 1, 1)), seed=0)
        with pytest.raises(ValueError):
            empirical_moments(ens, 0)

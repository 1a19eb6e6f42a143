"""Tests for moment propagation: PSD roots, quadrature rules, and the
linearized/matched moment ODEs."""

import itertools
import math

import numpy as np
import pytest

from gpsde import (Method, MomentState, Scheme, TimeGrid, cubature_rule,
                   gauss_hermite_rule, linearized_rhs, make_benes, make_linear,
                   matched_rhs, propagate, sqrt_psd)
from gpsde.errors import CapacityError, DivergenceError, StabilityError
from gpsde.models import SdeModel
from gpsde.moments import EvalCounts, QuadratureRule


def random_psd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T) / d + 0.1 * np.eye(d)


def gaussian_monomial_moment(exponents, m, P):
    """Closed-form E[prod z_i^{k_i}] under N(m, P) for total degree <= 3.

    Expands each factor around the mean and applies Isserlis' theorem to the
    centered part (odd central moments vanish, E[xy] = P_xy).
    """
    idx = []
    for i, k in enumerate(exponents):
        idx.extend([i] * k)
    deg = len(idx)
    if deg == 0:
        return 1.0
    if deg == 1:
        return m[idx[0]]
    if deg == 2:
        a, b = idx
        return m[a] * m[b] + P[a, b]
    if deg == 3:
        a, b, c = idx
        return (m[a] * m[b] * m[c]
                + m[a] * P[b, c] + m[b] * P[a, c] + m[c] * P[a, b])
    raise ValueError("only total degree <= 3 supported")


def rule_expectation(rule, m, S, g):
    sigma = m + rule.points @ S.T
    return sum(w * g(z) for w, z in zip(rule.weights, sigma))


class TestSqrtPsd:
    def test_identity(self):
        np.testing.assert_allclose(sqrt_psd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_hand_cholesky(self):
        P = np.array([[2.0, 1.0], [1.0, 2.0]])
        S = sqrt_psd(P)
        np.testing.assert_allclose(S, [[1.41421, 0.0], [0.70711, 1.22474]], atol=1e-5)
        np.testing.assert_allclose(S @ S.T, P, atol=1e-12)

    def test_random_psd_reconstruction_lower_triangular(self):
        rng = np.random.default_rng(0)
        for d in (1, 3, 8):
            P = random_psd(rng, d)
            S = sqrt_psd(P)
            np.testing.assert_allclose(S, np.tril(S), atol=0)
            assert np.max(np.abs(S @ S.T - P)) <= 1e-8

    def test_zero_matrix_is_legal(self):
        S = sqrt_psd(np.zeros((3, 3)))
        np.testing.assert_allclose(S @ S.T, np.zeros((3, 3)), atol=1e-8)

    def test_rank_deficient_clamp(self):
        v = np.array([1.0, 2.0, -1.0])
        P = np.outer(v, v)  # rank one
        S = sqrt_psd(P)
        assert np.max(np.abs(S @ S.T - P)) <= 1e-8

    def test_tiny_negative_eigenvalue_clamped(self):
        U = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))[0]
        P = U @ np.diag([1.0, 0.5, -1e-12]) @ U.T
        P = (P + P.T) / 2.0
        S = sqrt_psd(P)
        assert np.max(np.abs(S @ S.T - P)) <= 1e-8

    def test_asymmetric_input_rejected(self):
        with pytest.raises(ValueError):
            sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            sqrt_psd(np.eye(2), jitter=-1.0)


class TestCubatureRule:
    def test_d1(self):
        rule = cubature_rule(1)
        np.testing.assert_allclose(sorted(rule.points.ravel()), [-1.0, 1.0])
        np.testing.assert_allclose(rule.weights, [0.5, 0.5])

    def test_d2(self):
        rule = cubature_rule(2)
        s = math.sqrt(2)
        expect = sorted([(s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)])
        got = sorted((float(p[0]), float(p[1])) for p in rule.points)
        np.testing.assert_allclose(got, expect, atol=1e-12)
        np.testing.assert_allclose(rule.weights, np.full(4, 0.25))

    @pytest.mark.parametrize("d", [1, 2, 5, 10])
    def test_rule_invariants(self, d):
        rule = cubature_rule(d)
        assert abs(rule.weights.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(rule.weights @ rule.points, np.zeros(d),
                                   atol=1e-12)
        second = (rule.points.T * rule.weights) @ rule.points
        np.testing.assert_allclose(second, np.eye(d), atol=1e-10)

    def test_degree_four_boundary(self):
        # E[z^4] = 3 for N(0,1); the 3rd-order rule returns 1
        rule = cubature_rule(1)
        est = rule_expectation(rule, np.zeros(1), np.eye(1), lambda z: z[0]**4)
        assert est == pytest.approx(1.0, abs=1e-12)

    def test_invalid_dim(self):
        with pytest.raises(ValueError):
            cubature_rule(0)


class TestGaussHermiteRule:
    def test_d1_p2(self):
        rule = gauss_hermite_rule(1, 2)
        np.testing.assert_allclose(sorted(rule.points.ravel()), [-1.0, 1.0],
                                   atol=1e-12)
        np.testing.assert_allclose(rule.weights, [0.5, 0.5])

    def test_d2_p3_marginals(self):
        rule = gauss_hermite_rule(2, 3)
        assert rule.points.shape == (9, 2)
        marg = sorted(set(np.round(rule.points[:, 0], 10)))
        np.testing.assert_allclose(marg, [-math.sqrt(3), 0.0, math.sqrt(3)],
                                   atol=1e-9)
        # weight of the axis value 0 in each marginal is 2/3
        w0 = rule.weights[np.abs(rule.points[:, 0]) < 1e-12].sum()
        assert w0 == pytest.approx(2.0 / 3.0, abs=1e-12)

    @pytest.mark.parametrize("d,p", [(1, 5), (3, 4), (2, 10)])
    def test_weights_normalized(self, d, p):
        rule = gauss_hermite_rule(d, p)
        assert abs(rule.weights.sum() - 1.0) <= 1e-12

    def test_capacity_guard(self):
        with pytest.raises(CapacityError):
            gauss_hermite_rule(8, 10)  # 10^8 points
        with pytest.raises(ValueError):
            gauss_hermite_rule(1, 11)


class TestQuadratureExactness:
    @pytest.mark.parametrize("d", [1, 2, 5, 10])
    def test_cubature_exact_to_degree_three(self, d):
        rng = np.random.default_rng(d)
        rule = cubature_rule(d)
        for _ in range(10):
            m = rng.standard_normal(d)
            P = random_psd(rng, d)
            S = sqrt_psd(P)
            for exps in itertools.combinations_with_replacement(range(d), 3):
                k = np.bincount(exps, minlength=d)
                est = rule_expectation(rule, m, S,
                                       lambda z: float(np.prod(z**k)))
                truth = gaussian_monomial_moment(k, m, P)
                assert abs(est - truth) <= 1e-10 * max(1.0, abs(truth))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_gauss_hermite_matches_cubature_on_low_degree(self, d):
        rng = np.random.default_rng(20 + d)
        cub = cubature_rule(d)
        gh = gauss_hermite_rule(d, 3)
        m = rng.standard_normal(d)
        S = sqrt_psd(random_psd(rng, d))
        for deg in (1, 2, 3):
            for exps in itertools.combinations_with_replacement(range(d), deg):
                k = np.bincount(exps, minlength=d)
                g = lambda z: float(np.prod(z**k))
                assert abs(rule_expectation(cub, m, S, g)
                           - rule_expectation(gh, m, S, g)) <= 1e-10


class TestRhs:
    def zero_model(self, d=2):
        return make_linear(np.zeros((d, d)), np.zeros((d, d)))

    def test_zero_model_rhs(self):
        st = MomentState(mean=np.array([1.0, 2.0]), cov=np.eye(2))
        for rhs in (lambda: linearized_rhs(self.zero_model(), st, 0.0),
                    lambda: matched_rhs(self.zero_model(), st, 0.0,
                                        cubature_rule(2))):
            dm, dP = rhs()
            np.testing.assert_allclose(dm, np.zeros(2), atol=1e-14)
            np.testing.assert_allclose(dP, np.zeros((2, 2)), atol=1e-14)

    def test_linearized_is_exact_for_linear_models(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((3, 3))
        L = rng.standard_normal((3, 3))
        model = make_linear(A, L)
        st = MomentState(mean=rng.standard_normal(3), cov=random_psd(rng, 3))
        dm, dP = linearized_rhs(model, st, 0.0)
        np.testing.assert_allclose(dm, A @ st.mean, atol=1e-12)
        np.testing.assert_allclose(
            dP, A @ st.cov + st.cov @ A.T + L @ L.T, atol=1e-12)

    def test_matched_agrees_with_linearized_on_linear_models(self):
        rng = np.random.default_rng(8)
        for d in (1, 2, 4):
            A = rng.standard_normal((d, d))
            L = rng.standard_normal((d, d))
            model = make_linear(A, L)
            rule = cubature_rule(d)
            for _ in range(5):
                st = MomentState(mean=rng.standard_normal(d),
                                 cov=random_psd(rng, d))
                dm1, dP1 = linearized_rhs(model, st, 0.0)
                dm2, dP2 = matched_rhs(model, st, 0.0, rule)
                np.testing.assert_allclose(dm1, dm2, atol=1e-10)
                np.testing.assert_allclose(dP1, dP2, atol=1e-10)

    def test_benes_linearized_value(self):
        model = make_benes(1, np.zeros(1))
        st = MomentState(mean=np.zeros(1), cov=np.ones((1, 1)))
        dm, dP = linearized_rhs(model, st, 0.0)
        assert dm[0] == pytest.approx(0.0, abs=1e-14)
        assert dP[0, 0] == pytest.approx(3.0, abs=1e-12)  # 2*tanh'(0)*P + 1

    def test_benes_matched_value(self):
        model = make_benes(1, np.zeros(1))
        st = MomentState(mean=np.zeros(1), cov=np.ones((1, 1)))
        dm, dP = matched_rhs(model, st, 0.0, cubature_rule(1))
        assert dm[0] == pytest.approx(0.0, abs=1e-14)
        assert dP[0, 0] == pytest.approx(2 * math.tanh(1.0) + 1.0, abs=1e-12)

    def test_stein_identity_for_identity_drift(self):
        # E[f(z)(z-m)^T] = P when f(z) = z; with zero diffusion the matched
        # covariance derivative is exactly 2P
        rng = np.random.default_rng(9)
        d = 3
        model = make_linear(np.eye(d), np.zeros((d, d)))
        rule = cubature_rule(d)
        for _ in range(5):
            st = MomentState(mean=rng.standard_normal(d), cov=random_psd(rng, d))
            _, dP = matched_rhs(model, st, 0.0, rule)
            np.testing.assert_allclose(dP, 2 * st.cov, atol=1e-10)

    def test_finite_difference_jacobian_fallback(self):
        model = SdeModel(dim=1, drift=lambda z, t: np.tanh(z),
                         diffusion=lambda z, t: np.eye(1),
                         diffusion_constant=True)
        st = MomentState(mean=np.zeros(1), cov=np.ones((1, 1)))
        dm, dP = linearized_rhs(model, st, 0.0)
        assert dP[0, 0] == pytest.approx(3.0, abs=1e-6)

    def test_eval_count_tallies(self):
        model = make_benes(3, np.zeros(3))
        st = MomentState(mean=np.zeros(3), cov=np.eye(3))
        c = EvalCounts()
        linearized_rhs(model, st, 0.0, counts=c)
        assert c.as_tuple() == (1, 1, 1)
        c = EvalCounts()
        matched_rhs(model, st, 0.0, cubature_rule(3), counts=c)
        assert c.as_tuple() == (6, 6, 0)


class TestMomentState:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            MomentState(mean=np.zeros(2), cov=np.zeros((3, 3)))

    def test_validate_flags_asymmetry_and_negativity(self):
        bad = MomentState(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            bad.validate()
        neg = MomentState(mean=np.zeros(1), cov=np.array([[-1.0]]))
        with pytest.raises(ValueError):
            neg.validate()


class TestPropagate:
    def test_zero_model_constant_trajectory(self):
        model = make_linear(np.zeros((2, 2)), np.zeros((2, 2)))
        m0 = np.array([1.0, -2.0])
        P0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        for scheme in (Scheme.LINEARIZED, Scheme.MATCHED):
            for method in (Method.EULER, Method.RK4):
                traj = propagate(model, m0, P0, TimeGrid(0, 1, 0.25),
                                 scheme, method)
                for st in traj.states:
                    np.testing.assert_allclose(st.mean, m0, atol=1e-13)
                    np.testing.assert_allclose(st.cov, P0, atol=1e-13)

    @pytest.mark.parametrize("scheme", [Scheme.LINEARIZED, Scheme.MATCHED])
    def test_ou_closed_form(self, scheme):
        model = make_linear(np.array([[-1.0]]), np.array([[1.0]]))
        traj = propagate(model, np.array([1.0]), np.zeros((1, 1)),
                         TimeGrid(0, 1, 1e-3), scheme, Method.RK4)
        assert traj.states[-1].mean[0] == pytest.approx(math.exp(-1), abs=1e-6)
        assert traj.states[-1].cov[0, 0] == pytest.approx(
            (1 - math.exp(-2)) / 2, abs=1e-6)

    def test_euler_eval_counts(self):
        d = 3
        model = make_benes(d, np.zeros(d))
        grid = TimeGrid(0, 1, 0.1)
        lin = propagate(model, np.zeros(d), np.eye(d), grid,
                        Scheme.LINEARIZED, Method.EULER)
        assert all(c.as_tuple() == (1, 1, 1) for c in lin.eval_counts)
        mat = propagate(model, np.zeros(d), np.eye(d), grid,
                        Scheme.MATCHED, Method.EULER)
        assert all(c.as_tuple() == (2 * d, 2 * d, 0) for c in mat.eval_counts)

    def test_rk4_multiplies_counts_by_four(self):
        d = 2
        model = make_benes(d, np.zeros(d))
        grid = TimeGrid(0, 1, 0.1)
        lin = propagate(model, np.zeros(d), np.eye(d), grid,
                        Scheme.LINEARIZED, Method.RK4)
        assert all(c.as_tuple() == (4, 4, 4) for c in lin.eval_counts)
        mat = propagate(model, np.zeros(d), np.eye(d), grid,
                        Scheme.MATCHED, Method.RK4)
        assert all(c.as_tuple() == (8 * d, 8 * d, 0) for c in mat.eval_counts)

    def test_covariance_stays_symmetric_psd(self):
        model = make_benes(4, np.zeros(4))
        traj = propagate(model, np.linspace(0, 1, 4), np.zeros((4, 4)),
                         TimeGrid(0, 5, 0.1), Scheme.MATCHED, Method.EULER)
        for st in traj.states:
            np.testing.assert_allclose(st.cov, st.cov.T, atol=1e-10)
            assert np.min(np.linalg.eigvalsh(st.cov)) >= -1e-8

    def test_matched_fast_path_matches_generic_rule_path(self):
        # a rule object without the coordinate-structure marker forces the
        # generic sigma-point code; results must agree with the fast loop
        d = 5
        model = make_benes(d, np.zeros(d))
        r = cubature_rule(d)
        plain = QuadratureRule(points=r.points, weights=r.weights)
        grid = TimeGrid(0, 2, 0.1)
        m0, P0 = np.linspace(0, 1, d), np.zeros((d, d))
        fast = propagate(model, m0, P0, grid, Scheme.MATCHED, Method.EULER)
        slow = propagate(model, m0, P0, grid, Scheme.MATCHED, Method.EULER,
                         rule=plain)
        np.testing.assert_allclose(fast.states[-1].mean, slow.states[-1].mean,
                                   atol=1e-12)
        np.testing.assert_allclose(fast.states[-1].cov, slow.states[-1].cov,
                                   atol=1e-12)

    def test_linearized_fast_path_matches_manual_euler(self):
        model = make_benes(3, np.zeros(3))
        grid = TimeGrid(0, 1, 0.1)
        m0 = np.array([0.0, 0.3, 0.6])
        traj = propagate(model, m0, np.zeros((3, 3)), grid,
                         Scheme.LINEARIZED, Method.EULER)
        m, P = m0.copy(), np.zeros((3, 3))
        times = grid.times()
        for k in range(len(times) - 1):
            dt = times[k + 1] - times[k]
            dm, dP = linearized_rhs(model, MomentState(mean=m, cov=P), times[k])
            m, P = m + dt * dm, P + dt * dP
        np.testing.assert_allclose(traj.states[-1].mean, m, atol=1e-12)
        np.testing.assert_allclose(traj.states[-1].cov, P, atol=1e-12)

    def test_gauss_hermite_rule_accepted(self):
        model = make_benes(2, np.zeros(2))
        traj = propagate(model, np.zeros(2), 0.1 * np.eye(2), TimeGrid(0, 1, 0.1),
                         Scheme.MATCHED, Method.RK4, rule=gauss_hermite_rule(2, 4))
        assert traj.eval_counts[0].drift == 4 * 16

    def test_divergence_raises(self):
        model = make_linear(np.array([[100.0]]), np.zeros((1, 1)))
        with pytest.raises(DivergenceError):
            propagate(model, np.array([1e300]), np.zeros((1, 1)),
                      TimeGrid(0, 10, 0.5), Scheme.LINEARIZED, Method.EULER)

    def test_psd_loss_raises_stability_error(self):
        # dP = -2P with Euler dt=1 sends P from 1 to -1 in one step
        model = make_linear(np.array([[-1.0]]), np.zeros((1, 1)))
        with pytest.raises(StabilityError):
            propagate(model, np.array([0.0]), np.array([[1.0]]),
                      TimeGrid(0, 3, 1.0), Scheme.LINEARIZED, Method.EULER)

    def test_trajectory_at_time(self):
        model = make_linear(np.array([[-1.0]]), np.array([[1.0]]))
        traj = propagate(model, np.array([1.0]), np.zeros((1, 1)),
                         TimeGrid(0, 1, 0.1), Scheme.LINEARIZED, Method.RK4)
        st = traj.at_time(0.5)
        assert st.mean[0] == pytest.approx(math.exp(-0.5), abs=1e-6)
        with pytest.raises(ValueError):
            traj.at_time(0.55)

"""Q-function, M-steps, and the EM driver."""

import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from bwlab.baumwelch import (
    m_step_general,
    m_step_two_state_gaussian,
    project_zeta,
    q_value,
    q_value_truncated,
    run_em,
    stat_distance,
    theta_distance,
    truncated_m_step,
)
from bwlab.errors import EmptyState
from bwlab.inference import forward_backward, log_emission_matrix
from bwlab.models import (
    GeneralHmmParams,
    ThetaParams,
    TransitionModel,
    beta_of_zeta,
    sample_general_sequence,
    sample_sequence,
)


class TestQValue:
    def test_decomposition_identity(self):
        rng = np.random.default_rng(0)
        theta = ThetaParams(beta=0.2, mu=rng.standard_normal(3))
        prime = ThetaParams(beta=-0.1, mu=rng.standard_normal(3))
        _, x = sample_sequence(theta, n=25, k=0, rng=rng)
        q = q_value(theta, prime, x)
        assert q.q_total == pytest.approx(q.q1_obs + q.q2_trans, abs=1e-12)

    def test_single_observation_hand_computation(self):
        theta = ThetaParams(beta=0.3, mu=np.array([1.0, -0.5]))
        prime = ThetaParams(beta=-0.2, mu=np.array([0.6, 0.1]))
        x = np.array([[0.4, 0.9]])
        post = forward_backward(x, prime)
        gamma = post.gamma[0]
        zeta = theta.zeta
        # complete-likelihood convention: stationary term for z_0, one
        # transition pair (z_0, z_1), one emission term
        emis = [
            -0.5 * np.sum((x[0] - theta.mu) ** 2) - math.log(2 * math.pi),
            -0.5 * np.sum((x[0] + theta.mu) ** 2) - math.log(2 * math.pi),
        ]
        q1_hand = gamma[0] * emis[0] + gamma[1] * emis[1]
        stay = zeta  # P(Z_0 = Z_1 | x) equals the prior stay probability
        q2_hand = math.log(0.5) + stay * math.log(zeta) + (1 - stay) * math.log(1 - zeta)
        q = q_value(theta, prime, x)
        assert q.q1_obs == pytest.approx(q1_hand, abs=1e-12)
        assert q.q2_trans == pytest.approx(q2_hand, abs=1e-12)

    def test_jensen_sandwich(self):
        rng = np.random.default_rng(1)
        star = ThetaParams(beta=0.3, mu=np.array([1.2, -0.7]))
        prime = ThetaParams(beta=0.25, mu=np.array([0.9, 0.1]))
        _, x = sample_sequence(star, n=6, k=0, rng=rng)
        n = 6

        # entropy of p(z_0^n | x; theta') by enumeration
        model = prime.transition()
        le = log_emission_matrix(x.core, np.stack([prime.mu, -prime.mu]), prime.sigma)
        log_a = np.log(model.a)
        paths = np.array(list(product((0, 1), repeat=n + 1)))
        logp = np.log(model.pi_bar)[paths[:, 0]].copy()
        for i in range(1, n + 1):
            logp += log_a[paths[:, i - 1], paths[:, i]] + le[i - 1, paths[:, i]]
        m = logp.max()
        w = np.exp(logp - m)
        ll = m + math.log(w.sum())
        w /= w.sum()
        entropy = -(w * np.log(w)).sum() / n

        for _ in range(25):
            probe = ThetaParams(
                beta=float(rng.uniform(-0.69, 0.69)), mu=rng.standard_normal(2))
            lhs = q_value(probe, prime, x).q_total + entropy
            rhs = forward_backward(x, probe).log_lik / n
            assert lhs <= rhs + 1e-10
        q_self = q_value(prime, prime, x).q_total
        assert q_self + entropy == pytest.approx(ll / n, abs=1e-10)


class TestTwoStateMStep:
    def test_hard_positive_labels_give_sample_mean(self):
        mu = np.array([2.0, -1.0])
        theta = ThetaParams(beta=0.0, mu=mu, sigma=1e-4)
        x = mu[None, :] + 1e-6 * np.random.default_rng(0).standard_normal((30, 2))
        plus = m_step_two_state_gaussian(theta, x)
        np.testing.assert_allclose(plus.mu, x.mean(axis=0), atol=1e-8)

    def test_symmetric_posteriors_zero_mean(self):
        theta = ThetaParams(beta=0.3, mu=np.array([1.0, 1.0]))
        x = np.zeros((12, 2))
        plus = m_step_two_state_gaussian(theta, x)
        np.testing.assert_allclose(plus.mu, 0.0, atol=1e-14)

    def test_projection_clamps_to_feasible_set(self):
        assert project_zeta(0.05, 0.6) == pytest.approx(0.2)
        assert project_zeta(0.97, 0.6) == pytest.approx(0.8)
        assert project_zeta(0.5, 0.6) == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.05, 0.95))
    def test_projection_idempotent(self, zeta, b):
        once = project_zeta(zeta, b)
        assert project_zeta(once, b) == once
        assert (1 - b) / 2 <= once <= (1 + b) / 2

    def test_m_step_maximizes_q(self):
        rng = np.random.default_rng(2)
        star = ThetaParams(beta=0.3, mu=np.array([1.2, -0.7]))
        _, x = sample_sequence(star, n=60, k=0, rng=rng)
        prime = ThetaParams(beta=-0.2, mu=np.array([0.8, -0.2]))
        plus = m_step_two_state_gaussian(prime, x)
        best = q_value(plus, prime, x).q_total
        for _ in range(100):
            probe = ThetaParams(
                beta=beta_of_zeta(float(rng.uniform(0.2, 0.8))),
                mu=plus.mu + rng.standard_normal(2),
            )
            assert q_value(probe, prime, x).q_total <= best + 1e-12

    def test_sigma_update_behind_flag(self):
        rng = np.random.default_rng(3)
        star = ThetaParams(beta=0.2, mu=np.array([1.5, 0.5]), sigma=0.7)
        _, x = sample_sequence(star, n=4000, k=0, rng=rng)
        frozen = m_step_two_state_gaussian(star, x)
        assert frozen.sigma == star.sigma
        updated = m_step_two_state_gaussian(star, x, update_sigma=True)
        assert updated.sigma == pytest.approx(0.7, abs=0.05)


class TestGeneralMStep:
    def test_reduces_to_two_state_closed_form(self):
        rng = np.random.default_rng(4)
        star = ThetaParams(beta=0.25, mu=np.array([1.0, -0.3]))
        _, x = sample_sequence(star, n=50, k=0, rng=rng)
        post = forward_backward(x, star)
        general = GeneralHmmParams(
            trans=star.transition(), means=np.stack([star.mu, -star.mu]))
        g_plus = m_step_general(general, x)
        t_plus = m_step_two_state_gaussian(star, x, posteriors=post)
        # tied-mean identity: mu+ = (w+ mu+_0 - w- mu+_1) / n
        w = post.gamma.sum(axis=0)
        tied = (w[0] * g_plus.means[0] - w[1] * g_plus.means[1]) / x.n
        np.testing.assert_allclose(tied, t_plus.mu, atol=1e-10)
        # stay-mass identity: zeta+ (pre-projection) = sum of diagonal pair mass / n
        pair_sum = post.xi0 + post.xi.sum(axis=0)
        np.testing.assert_allclose(
            (pair_sum[0, 0] + pair_sum[1, 1]) / x.n, t_plus.zeta, atol=1e-10)

    def test_hard_posteriors_recover_observations(self):
        a = np.array([[0.5, 0.5], [0.5, 0.5]])
        gp = GeneralHmmParams(
            trans=TransitionModel(a=a), means=np.array([[5.0], [-5.0]]), sigma=0.01)
        x = np.array([[5.0], [-5.0]])
        plus = m_step_general(gp, x)
        np.testing.assert_allclose(plus.means, x, atol=1e-10)

    def test_matches_numeric_argmax(self):
        rng = np.random.default_rng(5)
        a = np.array([[0.5, 0.3, 0.2], [0.25, 0.5, 0.25], [0.2, 0.3, 0.5]])
        gp = GeneralHmmParams(trans=TransitionModel(a=a), means=rng.standard_normal((3, 2)))
        _, x = sample_general_sequence(gp, n=6, k=0, rng=rng)
        plus = m_step_general(gp, x)

        def unpack(v):
            logits = v[:9].reshape(3, 3)
            rows = np.exp(logits - logits.max(axis=1, keepdims=True))
            rows /= rows.sum(axis=1, keepdims=True)
            return GeneralHmmParams(trans=TransitionModel(a=rows), means=v[9:].reshape(3, 2))

        def neg_q(v):
            return -q_value(unpack(v), gp, x).q_total

        v0 = np.concatenate([np.log(plus.trans.a).ravel(), plus.means.ravel()])
        res = minimize(neg_q, v0 + 0.2 * rng.standard_normal(v0.size), method="Nelder-Mead",
                       options={"maxiter": 20000, "xatol": 1e-10, "fatol": 1e-13})
        opt = unpack(res.x)
        assert np.abs(opt.trans.a - plus.trans.a).max() < 1e-6
        assert np.abs(opt.means - plus.means).max() < 1e-6
        assert -res.fun <= q_value(plus, gp, x).q_total + 1e-12

    def test_entry_bounds_projection(self):
        rng = np.random.default_rng(6)
        a = np.array([[0.9, 0.1], [0.1, 0.9]])
        gp = GeneralHmmParams(trans=TransitionModel(a=a), means=np.array([[2.0], [-2.0]]))
        _, x = sample_general_sequence(gp, n=40, k=0, rng=rng)
        plus = m_step_general(gp, x, entry_bounds=(0.2, 0.8))
        assert plus.trans.a.min() >= 0.2 - 1e-12
        np.testing.assert_allclose(plus.trans.a.sum(axis=1), 1.0, atol=1e-12)

    def test_empty_state(self):
        a = np.array([[0.999, 0.001], [0.001, 0.999]])
        gp = GeneralHmmParams(
            trans=TransitionModel(a=a), means=np.array([[0.0], [1e6]]), sigma=0.5)
        x = np.zeros((5, 1))
        with pytest.raises(EmptyState):
            m_step_general(gp, x)


class TestTruncatedMStep:
    def test_full_window_equals_full_m_step(self):
        rng = np.random.default_rng(7)
        star = ThetaParams(beta=0.3, mu=np.array([1.2, -0.7]))
        _, x = sample_sequence(star, n=8, k=0, rng=rng)
        prime = ThetaParams(beta=-0.2, mu=np.array([0.8, -0.2]))
        full = m_step_two_state_gaussian(prime, x)
        trunc = truncated_m_step(prime, x, k=12)
        assert theta_distance(full, trunc) == 0.0

    def test_k_zero_symmetric_data(self):
        theta = ThetaParams(beta=0.3, mu=np.array([1.0]))
        x_obj = sample_sequence(theta, n=10, k=0, rng=8)[1]
        zeros = type(x_obj)(x=np.zeros((10, 1)), n=10, k=0)
        plus = truncated_m_step(theta, zeros, k=0)
        np.testing.assert_allclose(plus.mu, 0.0, atol=1e-14)

    def test_operator_gap_decays_in_k(self):
        star = ThetaParams(beta=beta_of_zeta(0.2), mu=np.array([1.5, 0.0, 0.0]), b_bound=0.6)
        _, x = sample_sequence(star, n=150, k=10, rng=9)
        full = m_step_two_state_gaussian(star, x)
        gaps = [theta_distance(full, truncated_m_step(star, x, k)) for k in (0, 2, 4, 6)]
        assert gaps[1] < gaps[0] and gaps[2] < gaps[1]

    def test_truncated_q_value_matches_full_at_large_k(self):
        star = ThetaParams(beta=0.3, mu=np.array([0.9]))
        _, x = sample_sequence(star, n=7, k=0, rng=10)
        probe = ThetaParams(beta=0.1, mu=np.array([0.5]))
        qt = q_value_truncated(probe, star, x, k=8)
        qf = q_value(probe, star, x)
        assert qt.q_total == pytest.approx(qf.q_total, abs=1e-12)


class TestRunEm:
    def test_loglik_non_decreasing(self):
        rng = np.random.default_rng(11)
        for _ in range(6):
            d = int(rng.integers(1, 6))
            star = ThetaParams(beta=float(rng.uniform(-0.6, 0.6)), mu=rng.standard_normal(d))
            _, x = sample_sequence(star, n=150, k=0, rng=rng)
            theta0 = star.with_(beta=0.0, mu=star.mu + 0.3 * rng.standard_normal(d))
            traj = run_em(x, theta0, star, n_steps=15)
            assert np.diff(traj.log_liks).min() >= -1e-9

    def test_trajectory_shapes(self):
        star = ThetaParams(beta=0.2, mu=np.array([1.0, 0.5]))
        _, x = sample_sequence(star, n=60, k=0, rng=12)
        traj = run_em(x, star, star, n_steps=9)
        assert traj.T == 9
        assert len(traj.iterates) == len(traj.log_liks) == 10
        assert traj.stat_err.shape == traj.opt_err.shape == (10,)
        assert traj.opt_err[-1] == 0.0

    def test_start_at_truth_stays_near_floor(self):
        star = ThetaParams(beta=beta_of_zeta(0.2), mu=np.r_[2.0, np.zeros(4)], b_bound=0.6)
        _, x = sample_sequence(star, n=2000, k=0, rng=13)
        traj = run_em(x, star, star, n_steps=20)
        floor = math.sqrt(star.d / 2000)
        assert traj.stat_err.max() < 10 * floor

    def test_truncated_variant_runs(self):
        star = ThetaParams(beta=beta_of_zeta(0.2), mu=np.array([1.5, 0.0]), b_bound=0.6)
        _, x = sample_sequence(star, n=120, k=8, rng=14)
        traj = run_em(x, star, star, n_steps=6, variant="truncated", k=8)
        assert traj.T == 6

    def test_fixed_point_drift_scales_as_root_n(self):
        # self-consistency: || M_n(theta*) - theta* || ~ n^(-1/2)
        star_mu = np.r_[1.5, np.zeros(3)]
        ns = [500, 1000, 2000, 4000, 8000]
        med = []
        for n in ns:
            drifts = []
            for seed in range(10):
                star = ThetaParams(beta=beta_of_zeta(0.2), mu=star_mu, b_bound=0.6)
                _, x = sample_sequence(star, n=n, k=0, rng=1000 * seed + n)
                drifts.append(stat_distance(m_step_two_state_gaussian(star, x), star))
            med.append(np.median(drifts))
        slope = np.polyfit(np.log(ns), np.log(med), 1)[0]
        assert -0.65 <= slope <= -0.35


class TestDistances:
    def test_label_swap_minimum(self):
        star = ThetaParams(beta=0.3, mu=np.array([1.0, -2.0]))
        flipped = star.with_(mu=-star.mu)
        assert stat_distance(flipped, star) == 0.0
        assert theta_distance(flipped, star) > 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = ThetaParams(beta=float(rng.uniform(-0.6, 0.6)), mu=rng.standard_normal(3))
        b = ThetaParams(beta=float(rng.uniform(-0.6, 0.6)), mu=rng.standard_normal(3))
        assert stat_distance(a, b) == pytest.approx(stat_distance(a.with_(mu=-a.mu), b), abs=1e-12)
        assert stat_distance(a, b) <= theta_distance(a, b) + 1e-15

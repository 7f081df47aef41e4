"""Smoothing: forward-backward vs the enumeration oracle, windowed posteriors."""

import numpy as np
import pytest

from bwlab.errors import MissingExtension, NumericalUnderflow, TooLarge
from bwlab.inference import (
    brute_force_posteriors,
    forward_backward,
    truncation_gap,
    windowed_posteriors,
)
from bwlab.models import (
    GeneralHmmParams,
    ObservedSequence,
    ThetaParams,
    TransitionModel,
    sample_general_sequence,
    sample_sequence,
)


def random_two_state(rng, d=None):
    d = d or int(rng.integers(1, 4))
    return ThetaParams(
        beta=float(rng.uniform(-0.69, 0.69)),
        mu=rng.standard_normal(d),
        sigma=float(rng.uniform(0.5, 2.0)),
    )


def posterior_deviation(a, b):
    dev = max(
        np.abs(a.gamma - b.gamma).max(),
        abs(np.exp(a.log_lik - b.log_lik) - 1.0),
        np.abs(a.gamma0 - b.gamma0).max(),
        np.abs(a.xi0 - b.xi0).max(),
    )
    if a.xi.shape[0]:
        dev = max(dev, np.abs(a.xi - b.xi).max())
    return dev


class TestOracleEquivalence:
    def test_two_state_instances(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(60):
            theta = random_two_state(rng)
            n = int(rng.integers(1, 9))
            _, x = sample_sequence(theta, n=n, k=0, rng=rng)
            worst = max(worst, posterior_deviation(
                forward_backward(x, theta), brute_force_posteriors(x, theta)))
        assert worst < 1e-10

    def test_three_state_instances(self):
        rng = np.random.default_rng(43)
        a = np.array([[0.5, 0.3, 0.2], [0.25, 0.5, 0.25], [0.2, 0.3, 0.5]])
        worst = 0.0
        for _ in range(40):
            gp = GeneralHmmParams(trans=TransitionModel(a=a), means=rng.standard_normal((3, 2)))
            n = int(rng.integers(1, 8))
            _, x = sample_general_sequence(gp, n=n, k=0, rng=rng)
            worst = max(worst, posterior_deviation(
                forward_backward(x, gp), brute_force_posteriors(x, gp)))
        assert worst < 1e-10

    def test_single_observation_bayes_rule(self):
        theta = ThetaParams(beta=0.3, mu=np.array([1.0, -0.5]))
        x = np.array([[0.7, 0.2]])
        post = forward_backward(x, theta)
        # direct Bayes: pi(z) N(x; z mu, I), normalized
        raw = np.array([
            0.5 * np.exp(-0.5 * np.sum((x[0] - theta.mu) ** 2)),
            0.5 * np.exp(-0.5 * np.sum((x[0] + theta.mu) ** 2)),
        ])
        np.testing.assert_allclose(post.gamma[0], raw / raw.sum(), atol=1e-12)
        assert posterior_deviation(post, brute_force_posteriors(x, theta)) < 1e-10

    def test_zero_observations_symmetry(self):
        theta = ThetaParams(beta=0.4, mu=np.array([1.0, 2.0]))
        x = np.zeros((7, 2))
        post = forward_backward(x, theta)
        np.testing.assert_allclose(post.gamma, 0.5, atol=1e-12)

    def test_degenerate_concentration(self):
        # near-deterministic chain and near-noiseless emissions pin the path
        theta = ThetaParams(beta=3.4, mu=np.array([1.0]), sigma=1e-3, b_bound=0.999)
        hidden, x = sample_sequence(theta, n=8, k=0, rng=5)
        post = forward_backward(x, theta)
        top = post.gamma.max(axis=1)
        np.testing.assert_allclose(top, 1.0, atol=1e-6)
        decoded = np.where(post.gamma[:, 0] > 0.5, 1, -1)
        np.testing.assert_array_equal(decoded, hidden.core)

    def test_loglik_matches_enumeration(self):
        rng = np.random.default_rng(44)
        theta = random_two_state(rng)
        _, x = sample_sequence(theta, n=8, k=0, rng=rng)
        fb = forward_backward(x, theta)
        bf = brute_force_posteriors(x, theta)
        assert abs(fb.log_lik - bf.log_lik) < 1e-10

    def test_brute_force_cap(self):
        theta = ThetaParams(beta=0.0, mu=np.array([1.0]))
        with pytest.raises(TooLarge):
            brute_force_posteriors(np.zeros((25, 1)), theta)

    def test_underflow_detected(self):
        theta = ThetaParams(beta=0.0, mu=np.array([1.0]))
        with pytest.raises(NumericalUnderflow):
            forward_backward(np.array([[np.inf]]), theta)


class TestPosteriorInvariants:
    def test_normalization_and_consistency(self):
        rng = np.random.default_rng(45)
        for _ in range(20):
            theta = random_two_state(rng)
            n = int(rng.integers(2, 40))
            _, x = sample_sequence(theta, n=n, k=0, rng=rng)
            post = forward_backward(x, theta)
            np.testing.assert_allclose(post.gamma.sum(axis=1), 1.0, atol=1e-10)
            np.testing.assert_allclose(post.xi.sum(axis=(1, 2)), 1.0, atol=1e-10)
            # marginal consistency in both directions
            np.testing.assert_allclose(post.xi.sum(axis=2), post.gamma[:-1], atol=1e-9)
            np.testing.assert_allclose(post.xi.sum(axis=1), post.gamma[1:], atol=1e-9)
            np.testing.assert_allclose(post.gamma0.sum(), 1.0, atol=1e-10)

    def test_time_reversal_equivariance(self):
        rng = np.random.default_rng(46)
        theta = random_two_state(rng, d=2)
        _, x = sample_sequence(theta, n=12, k=0, rng=rng)
        fwd = forward_backward(x, theta)
        rev = forward_backward(x.core[::-1], theta)
        np.testing.assert_allclose(rev.gamma, fwd.gamma[::-1], atol=1e-10)
        np.testing.assert_allclose(rev.xi, np.transpose(fwd.xi[::-1], (0, 2, 1)), atol=1e-10)
        assert rev.log_lik == pytest.approx(fwd.log_lik, abs=1e-9)


class TestWindowedPosteriors:
    def test_full_window_equals_smoother(self):
        theta = ThetaParams(beta=0.25, mu=np.array([0.8, -0.4]))
        _, x = sample_sequence(theta, n=6, k=0, rng=1)
        wp = windowed_posteriors(x, theta, k=6)
        fb = forward_backward(x, theta)
        np.testing.assert_allclose(wp.gamma_k, fb.gamma, atol=1e-12)
        np.testing.assert_allclose(wp.xi_k[1:], fb.xi, atol=1e-12)
        np.testing.assert_allclose(wp.xi_k[0], fb.xi0, atol=1e-12)

    def test_k_zero_is_local_bayes(self):
        theta = ThetaParams(beta=0.25, mu=np.array([0.8, -0.4]))
        _, x = sample_sequence(theta, n=9, k=2, rng=2)
        wp = windowed_posteriors(x, theta, k=0)
        core = x.core
        for i in range(9):
            raw = np.array([
                0.5 * np.exp(-0.5 * np.sum((core[i] - theta.mu) ** 2)),
                0.5 * np.exp(-0.5 * np.sum((core[i] + theta.mu) ** 2)),
            ])
            np.testing.assert_allclose(wp.gamma_k[i], raw / raw.sum(), atol=1e-12)

    def test_windows_match_per_window_oracle(self):
        rng = np.random.default_rng(47)
        theta = random_two_state(rng, d=2)
        k = 2
        _, x = sample_sequence(theta, n=5, k=3, rng=rng)
        wp = windowed_posteriors(x, theta, k=k)
        for i in range(1, 6):
            lo = (i - k) + x.k - 1  # row of position i-k
            window = x.x[lo : lo + 2 * k + 1]
            oracle = brute_force_posteriors(window, theta)
            np.testing.assert_allclose(wp.gamma_k[i - 1], oracle.gamma[k], atol=1e-10)
            np.testing.assert_allclose(wp.xi_k[i - 1], oracle.xi[k - 1], atol=1e-10)

    def test_missing_extension(self):
        theta = ThetaParams(beta=0.25, mu=np.array([1.0]))
        _, x = sample_sequence(theta, n=20, k=2, rng=3)
        with pytest.raises(MissingExtension):
            windowed_posteriors(x, theta, k=5)

    def test_normalization(self):
        theta = ThetaParams(beta=-0.3, mu=np.array([1.0, 0.2, 0.1]))
        _, x = sample_sequence(theta, n=15, k=4, rng=4)
        wp = windowed_posteriors(x, theta, k=4)
        np.testing.assert_allclose(wp.gamma_k.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(wp.xi_k.sum(axis=(1, 2)), 1.0, atol=1e-10)
        np.testing.assert_allclose(wp.gamma0.sum(), 1.0, atol=1e-10)


class TestTruncationGap:
    def test_full_window_gap_zero(self):
        theta = ThetaParams(beta=0.25, mu=np.array([1.0]))
        _, x = sample_sequence(theta, n=7, k=0, rng=5)
        gaps = truncation_gap(x, theta, [7, 10])
        np.testing.assert_allclose(gaps, 0.0, atol=1e-12)

    def test_monotone_non_increasing(self):
        theta = ThetaParams(beta=-0.55, mu=np.array([1.2, 0.3]))
        _, x = sample_sequence(theta, n=60, k=0, rng=6)
        gaps = truncation_gap(x, theta, range(0, 12))
        assert np.all(np.diff(gaps) <= 1e-12)

    def test_iid_chain_windows_suffice(self):
        # rho = 0: states are conditionally independent given their own x_i
        theta = ThetaParams(beta=0.0, mu=np.array([1.0, -1.0]))
        _, x = sample_sequence(theta, n=8, k=0, rng=7)
        gaps = truncation_gap(x, theta, [0, 1, 2])
        assert gaps[1] <= gaps[0] + 1e-12
        assert gaps[1] < 1e-12 and gaps[2] < 1e-12

    def test_geometric_decay_on_sampled_data(self):
        theta = ThetaParams(beta=-0.6931471805599453, mu=np.array([1.5, 0, 0]), b_bound=0.6)
        _, x = sample_sequence(theta, n=120, k=0, rng=8)
        ks = np.arange(0, 9, 2)
        gaps = truncation_gap(x, theta, ks)
        pos = gaps > 1e-13
        slope = np.polyfit(ks[pos], np.log(gaps[pos]), 1)[0]
        assert slope < -0.3

"""EM machinery: Q-function evaluation, full and k-truncated M-steps, iteration driver.

The complete likelihood carries the extra unobserved z_0, so the Q-function
sums n transition pairs (z_{i-1}, z_i) for i = 1..n; the (z_0, z_1) pair
posterior is the one-step backward extension computed by the smoother.  For
the symmetric two-state chain the stationary term log pi_bar(z_0) = -log 2
is parameter-free, which makes the closed-form updates below the exact
maximizers and keeps EM ascent exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyState
from .inference import (
    PosteriorMarginals,
    WindowedPosteriors,
    forward_backward,
    log_emission_matrix,
    windowed_posteriors,
)
from .models import (
    GeneralHmmParams,
    ObservedSequence,
    ThetaParams,
    TransitionModel,
    beta_of_zeta,
)


@dataclass(frozen=True)
class QEval:
    """Decomposed Q-function value Q = Q1(mu-part) + Q2(beta-part)."""

    q_total: float
    q1_obs: float
    q2_trans: float
    evaluated_at: tuple


def project_zeta(zeta: float, b_bound: float) -> float:
    """Euclidean projection onto Omega_zeta = [(1-b)/2, (1+b)/2]."""
    return float(np.clip(zeta, (1.0 - b_bound) / 2.0, (1.0 + b_bound) / 2.0))


def theta_distance(theta: ThetaParams, other: ThetaParams) -> float:
    """Additive norm ||mu - mu'||_2 + |beta - beta'|."""
    return float(np.linalg.norm(theta.mu - other.mu) + abs(theta.beta - other.beta))


def stat_distance(theta: ThetaParams, theta_star: ThetaParams) -> float:
    """Additive-norm error minimized over the (mu, z) -> (-mu, -z) relabeling.

    The symmetric transition is invariant under flipping every hidden state,
    so the model is identifiable only up to the sign of mu.
    """
    swapped = theta_star.with_(mu=-theta_star.mu)
    return min(theta_distance(theta, theta_star), theta_distance(theta, swapped))


def _pair_average(post: PosteriorMarginals | WindowedPosteriors) -> np.ndarray:
    """Average of the n pair posteriors (z_{i-1}, z_i), i = 1..n."""
    if isinstance(post, WindowedPosteriors):
        return post.xi_k.mean(axis=0)
    stats = post.xi0.copy()
    if post.xi.shape[0]:
        stats += post.xi.sum(axis=0)
    return stats / post.n


def _sufficient_stats_two_state(x_core: np.ndarray, gamma: np.ndarray, pair_avg: np.ndarray):
    """(mean statistic, stay probability) of the two-state closed forms."""
    ez = gamma[:, 0] - gamma[:, 1]  # E[Z_i | data]
    s_mu = (ez[:, None] * x_core).mean(axis=0)
    s_stay = float(pair_avg[0, 0] + pair_avg[1, 1])
    return s_mu, s_stay


def _finish_two_state(theta_prime: ThetaParams, s_mu: np.ndarray, s_stay: float,
                      sigma: float | None = None) -> ThetaParams:
    zeta_plus = project_zeta(s_stay, theta_prime.b_bound)
    return theta_prime.with_(
        beta=beta_of_zeta(zeta_plus),
        mu=s_mu,
        sigma=theta_prime.sigma if sigma is None else sigma,
    )


def m_step_two_state_gaussian(
    theta_prime: ThetaParams, x, posteriors: PosteriorMarginals | None = None,
    update_sigma: bool = False,
) -> ThetaParams:
    """One Baum-Welch update of the two-state Gaussian model.

    mu+  = (1/n) sum_i E[Z_i | x; theta'] x_i
    zeta+ = Pi_{Omega_zeta}( (1/n) sum_i p(Z_{i-1} = Z_i | x; theta') )
    beta+ = 0.5 log(zeta+ / (1 - zeta+)); sigma is kept fixed (known) unless
    update_sigma is set, which is off in every reproduction.
    """
    if posteriors is None:
        posteriors = forward_backward(x, theta_prime)
    core = x.core if isinstance(x, ObservedSequence) else np.atleast_2d(x)
    s_mu, s_stay = _sufficient_stats_two_state(core, posteriors.gamma, _pair_average(posteriors))
    sigma = None
    if update_sigma:
        # E||x - Z mu+||^2 has cross term -2 mu+ . (1/n) sum E[Z] x = -2 ||s_mu||^2
        sq = (core**2).sum(axis=1).mean() - float(s_mu @ s_mu)
        sigma = math.sqrt(max(sq, 0.0) / core.shape[1])
    return _finish_two_state(theta_prime, s_mu, s_stay, sigma)


def truncated_m_step(theta_prime: ThetaParams, x: ObservedSequence, k: int) -> ThetaParams:
    """Baum-Welch update with k-windowed posteriors in place of full ones."""
    wp = windowed_posteriors(x, theta_prime, k)
    s_mu, s_stay = _sufficient_stats_two_state(x.core, wp.gamma_k, _pair_average(wp))
    return _finish_two_state(theta_prime, s_mu, s_stay)


def m_step_general(
    theta_prime: GeneralHmmParams, x, entry_bounds: tuple[float, float] | None = None
) -> GeneralHmmParams:
    """General s-state update: row-normalized pair counts and weighted means.

    entry_bounds, when given, clamps every transition entry to [lo, hi] and
    renormalizes rows (the configured feasible-set projection).
    """
    post = forward_backward(x, theta_prime)
    core = x.core if isinstance(x, ObservedSequence) else np.atleast_2d(x)
    pair_sum = post.xi0 + (post.xi.sum(axis=0) if post.xi.shape[0] else 0.0)
    a_plus = pair_sum / pair_sum.sum(axis=1, keepdims=True)
    if entry_bounds is not None:
        lo, hi = entry_bounds
        a_plus = np.clip(a_plus, lo, hi)
        a_plus = a_plus / a_plus.sum(axis=1, keepdims=True)
    mass = post.gamma.sum(axis=0)
    if np.any(mass < 1e-12):
        raise EmptyState(f"state posterior mass {mass} too small for a mean update")
    means = (post.gamma.T @ core) / mass[:, None]
    return GeneralHmmParams(trans=TransitionModel(a=a_plus), means=means, sigma=theta_prime.sigma)


def _q_two_state(theta: ThetaParams, gamma, gamma0, pair_avg, x_core) -> QEval:
    n = x_core.shape[0]
    le = log_emission_matrix(x_core, np.stack([theta.mu, -theta.mu]), theta.sigma)
    q1 = float((gamma * le).sum() / n)
    model = theta.transition()
    with np.errstate(divide="ignore"):
        log_a = np.log(model.a)
        log_pi = np.log(model.pi_bar)
    q2 = float(gamma0 @ log_pi) / n + float((pair_avg * log_a).sum())
    return QEval(q_total=q1 + q2, q1_obs=q1, q2_trans=q2, evaluated_at=(theta, None))


def q_value(theta, theta_prime, x, posteriors=None) -> QEval:
    """Sample Q-function Q_n(theta | theta') and its (Q1, Q2) decomposition.

    Expectations run under the smoothed posteriors of theta'.  For the
    two-state model the stationary term uses pi_bar(beta) literally (it is
    beta-free); for general parameters the initial distribution is treated
    as the fixed nuisance pi_bar(theta'), so the closed-form M-step is the
    exact maximizer in both cases.
    """
    if posteriors is None:
        posteriors = forward_backward(x, theta_prime)
    core = x.core if isinstance(x, ObservedSequence) else np.atleast_2d(x)
    pair_avg = _pair_average(posteriors)
    if isinstance(theta, ThetaParams):
        q = _q_two_state(theta, posteriors.gamma, posteriors.gamma0, pair_avg, core)
        return QEval(q.q_total, q.q1_obs, q.q2_trans, evaluated_at=(theta, theta_prime))
    n = core.shape[0]
    le = log_emission_matrix(core, theta.means, theta.sigma)
    q1 = float((posteriors.gamma * le).sum() / n)
    prime_pi = _hmm_pi(theta_prime)
    with np.errstate(divide="ignore"):
        log_a = np.log(theta.trans.a)
        log_pi = np.log(prime_pi)
    q2 = float(posteriors.gamma0 @ log_pi) / n + float((pair_avg * log_a).sum())
    return QEval(q_total=q1 + q2, q1_obs=q1, q2_trans=q2, evaluated_at=(theta, theta_prime))


def _hmm_pi(params) -> np.ndarray:
    if isinstance(params, ThetaParams):
        return params.transition().pi_bar
    return params.trans.pi_bar


def q_value_truncated(theta: ThetaParams, theta_prime: ThetaParams, x: ObservedSequence, k: int) -> QEval:
    """k-truncated Q: every expectation conditions on its own 2k window."""
    wp = windowed_posteriors(x, theta_prime, k)
    q = _q_two_state(theta, wp.gamma_k, wp.gamma0, _pair_average(wp), x.core)
    return QEval(q.q_total, q.q1_obs, q.q2_trans, evaluated_at=(theta, theta_prime))


@dataclass(frozen=True)
class EmTrajectory:
    """Iterates theta^0..theta^T with per-iterate diagnostics.

    log_liks is the exact core log-likelihood of each iterate; stat_err the
    label-swap-minimized additive-norm distance to theta_star; opt_err the
    distance to this run's own final iterate.
    """

    iterates: tuple
    log_liks: np.ndarray
    stat_err: np.ndarray
    opt_err: np.ndarray

    @property
    def T(self) -> int:
        return len(self.iterates) - 1

    @property
    def final(self) -> ThetaParams:
        return self.iterates[-1]


def run_em(
    x: ObservedSequence,
    theta0: ThetaParams,
    theta_star: ThetaParams,
    n_steps: int,
    variant: str = "full",
    k: int | None = None,
    update_sigma: bool = False,
) -> EmTrajectory:
    """Apply the chosen M-step n_steps times and record the error curves.

    variant "full" smooths over the whole core; "truncated" uses the
    k-windowed posteriors (k required) and optimizes a surrogate, so the
    EM ascent property is only guaranteed for the full variant.
    """
    if n_steps < 1:
        raise DomainError(f"need n_steps >= 1, got {n_steps}")
    if variant not in ("full", "truncated"):
        raise DomainError(f"unknown variant {variant!r}")
    if variant == "truncated" and k is None:
        raise DomainError("truncated variant needs a window radius k")
    feasible0 = project_zeta(theta0.zeta, theta0.b_bound)
    theta = theta0.with_(beta=beta_of_zeta(feasible0))

    iterates = [theta]
    log_liks = []
    for _ in range(n_steps):
        post = forward_backward(x, theta)
        log_liks.append(post.log_lik)
        if variant == "full":
            theta = m_step_two_state_gaussian(theta, x, posteriors=post, update_sigma=update_sigma)
        else:
            theta = truncated_m_step(theta, x, k)
        iterates.append(theta)
    log_liks.append(forward_backward(x, theta).log_lik)

    final = iterates[-1]
    stat = np.array([stat_distance(t, theta_star) for t in iterates])
    opt = np.array([theta_distance(t, final) for t in iterates])
    return EmTrajectory(
        iterates=tuple(iterates),
        log_liks=np.array(log_liks),
        stat_err=stat,
        opt_err=opt,
    )

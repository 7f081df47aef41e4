"""Numerical verification of the convergence theory's structural pieces.

Covers the closed-form rate/bound formulas (kappa, phi), strong-concavity
curvature checks, enumeration-based covariance mixing, filter stability,
and Monte-Carlo estimates of the k-truncated population update operator
(contraction factor and first-order-stability Lipschitz constants).

The universal constants inside the bound formulas are unspecified upstream
and live in TheoryConstants with default 1.0; every acceptance-style check
therefore tests shapes (slopes, ratios, monotonicity), not absolute levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BoundViolation, ConcavityViolation, DomainError, TooLarge
from .inference import (
    _fb_batched,
    _logsumexp_last,
    forward_backward,
    log_emission_matrix,
)
from .models import (
    MixingProfile,
    ObservedSequence,
    ThetaParams,
    beta_of_zeta,
    mixing_profile,
    sample_sequence,
)
from .baumwelch import (
    _finish_two_state,
    project_zeta,
    q_value,
    theta_distance,
)
from .rng import stream


@dataclass(frozen=True)
class TheoryConstants:
    """Configurable universal constants plus model-derived scalars.

    lambda_mu = 1 and lambda_beta = 1 - b^2 are the strong-concavity
    parameters (in sigma = 1 units); lam = min of the two.
    """

    s: int
    eps_mix: float
    pi_min: float
    b: float
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        for name in ("c0", "c1", "c2"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")

    @property
    def lambda_mu(self) -> float:
        return 1.0

    @property
    def lambda_beta(self) -> float:
        return 1.0 - self.b**2

    @property
    def lam(self) -> float:
        return min(self.lambda_mu, self.lambda_beta)

    @classmethod
    def for_two_state(cls, profile: MixingProfile, **kwargs) -> "TheoryConstants":
        return cls(s=2, eps_mix=profile.eps_mix, pi_min=profile.pi_min, b=profile.b_bound, **kwargs)


def kappa_formula(eta2: float, b: float, constants: TheoryConstants) -> float:
    """Contraction-rate formula kappa = C1 eta^2 (eta^2 + 1) e^{-c2 eta^2} / (1 - b^2)."""
    return constants.c1 * eta2 * (eta2 + 1.0) * math.exp(-constants.c2 * eta2) / (1.0 - b**2)


def phi_formula(k: int, constants: TheoryConstants) -> float:
    """Truncation-bias bound phi(k) = sqrt(c0 s^5 (1 - eps pi)^k / (lam eps^8 pi^2))."""
    if k < 0:
        raise DomainError("k must be nonnegative")
    c = constants
    ratio = 1.0 - c.eps_mix * c.pi_min
    return math.sqrt(c.c0 * c.s**5 * ratio**k / (c.lam * c.eps_mix**8 * c.pi_min**2))


def beta_curvature(beta: float) -> float:
    """Closed-form d^2 Q2 / d beta^2 = -4 e^{-2 beta} / (e^{-2 beta} + 1)^2."""
    e = math.exp(-2.0 * beta)
    return -4.0 * e / (e + 1.0) ** 2


@dataclass(frozen=True)
class ConcavityReport:
    beta_grid: np.ndarray
    max_hessian_dev: float
    max_curvature_dev: float
    min_curvature_dev: float
    lambda_mu: float
    lambda_beta: float


def strong_concavity_check(
    theta_prime: ThetaParams, x, tol: float = 1e-6, grid_points: int = 20
) -> ConcavityReport:
    """Finite-difference curvature of Q1 and Q2 against the closed forms.

    (a) the Hessian of Q1(.|theta') in mu equals -I/sigma^2 (Q1 is an exact
    quadratic, so central differences are exact up to rounding);
    (b) d^2 Q2 / d beta^2 equals -4 e^{-2 beta}/(e^{-2 beta}+1)^2 on a grid
    spanning Omega_beta -- data-free, since pi_bar is constant in beta;
    (c) the minimum curvature over Omega_beta equals 1 - b^2, attained at
    the endpoints += beta_b.

    Raises ConcavityViolation if any deviation exceeds tol (scaled by
    1/sigma^2 for the Hessian part).
    """
    post = forward_backward(x, theta_prime)
    d = theta_prime.d
    sig2 = theta_prime.sigma**2

    def q1(mu):
        return q_value(theta_prime.with_(mu=mu), theta_prime, x, posteriors=post).q1_obs

    h = 1e-3
    hess = np.empty((d, d))
    mu0 = theta_prime.mu
    for i in range(d):
        for j in range(d):
            ei = np.zeros(d); ei[i] = h
            ej = np.zeros(d); ej[j] = h
            hess[i, j] = (
                q1(mu0 + ei + ej) - q1(mu0 + ei - ej) - q1(mu0 - ei + ej) + q1(mu0 - ei - ej)
            ) / (4.0 * h**2)
    hess_dev = float(np.abs(hess - (-np.eye(d) / sig2)).max())
    if hess_dev > tol / sig2:
        raise ConcavityViolation(f"Q1 Hessian deviates from -I/sigma^2 by {hess_dev:.3e}")

    # roomy feasible set so the FD offsets beta +- h stay constructible
    bb_wide = math.tanh(theta_prime.beta_b + 1.0)

    def q2(beta):
        cand = ThetaParams(beta=beta, mu=theta_prime.mu, sigma=theta_prime.sigma, b_bound=bb_wide)
        return q_value(cand, theta_prime, x, posteriors=post).q2_trans

    hb = 3e-4
    grid = np.linspace(-theta_prime.beta_b, theta_prime.beta_b, grid_points)
    curv_dev = 0.0
    curvatures = np.empty(grid_points)
    for idx, beta in enumerate(grid):
        fd = (q2(beta + hb) - 2.0 * q2(beta) + q2(beta - hb)) / hb**2
        curvatures[idx] = fd
        curv_dev = max(curv_dev, abs(fd - beta_curvature(beta)))
        if curv_dev > tol:
            raise ConcavityViolation(f"Q2 curvature at beta={beta:.4f} deviates by {curv_dev:.3e}")

    lam_beta = float((-curvatures).min())
    min_dev = abs(lam_beta - (1.0 - theta_prime.b_bound**2))
    if min_dev > tol:
        raise ConcavityViolation(f"min curvature over Omega_beta deviates from 1-b^2 by {min_dev:.3e}")
    return ConcavityReport(
        beta_grid=grid,
        max_hessian_dev=hess_dev,
        max_curvature_dev=curv_dev,
        min_curvature_dev=min_dev,
        lambda_mu=float(sig2 * -np.linalg.eigvalsh(hess).max()),
        lambda_beta=lam_beta,
    )


def covariance_decay_check(theta: ThetaParams, x, l_max: int) -> np.ndarray:
    """Enumerated conditional covariances against their geometric mixing bounds.

    For each lag l <= l_max, computes the max over anchors t of
    |cov(Z_t, Z_{t+l} | x)|, |cov(Z_t, Z_{t+l} Z_{t+l+1} | x)| and
    |cov(Z_t Z_{t+1}, Z_{t+l} Z_{t+l+1} | x)| and asserts the bound
    2 rho_mix^g, where g counts the transitions separating the two blocks:
    g = l for the singleton cases and g = max(l - 1, 0) for pairs of pairs.
    (Overlapping pair products stay correlated through their shared state
    even for an i.i.d. chain, so the pair-pair exponent cannot be l; the
    i.i.d. limit rho = 0 with pinned outer spins is a counterexample.)

    Raises BoundViolation with the offending (lag, value) on any breach.
    """
    core = x.core if isinstance(x, ObservedSequence) else np.atleast_2d(x)
    n = core.shape[0]
    if n > 12:
        raise TooLarge(f"enumeration over 2^{n} paths exceeds the n <= 12 cap")
    if l_max >= n:
        raise DomainError(f"l_max={l_max} needs lag anchors inside n={n}")
    model = theta.transition()
    le = log_emission_matrix(core, np.stack([theta.mu, -theta.mu]), theta.sigma)
    log_a = np.log(model.a)
    paths = np.array(list(product((0, 1), repeat=n)), dtype=np.int64)
    logp = np.log(model.pi_bar)[paths[:, 0]] + le[0, paths[:, 0]]
    for i in range(1, n):
        logp += log_a[paths[:, i - 1], paths[:, i]] + le[i, paths[:, i]]
    w = np.exp(logp - logp.max())
    w /= w.sum()
    zmat = 1.0 - 2.0 * paths  # state 0 -> +1, state 1 -> -1
    pairs = zmat[:, :-1] * zmat[:, 1:]

    rho = mixing_profile(model).rho_mix
    ez = w @ zmat
    ep = w @ pairs
    out = np.zeros(l_max + 1)
    for lag in range(l_max + 1):
        single_worst = 0.0
        pair_worst = 0.0
        for t in range(n - lag):
            c = (w * zmat[:, t] * zmat[:, t + lag]).sum() - ez[t] * ez[t + lag]
            single_worst = max(single_worst, abs(c))
            if t + lag + 1 < n:
                c = (w * zmat[:, t] * pairs[:, t + lag]).sum() - ez[t] * ep[t + lag]
                single_worst = max(single_worst, abs(c))
            if t + 1 < n and t + lag + 1 < n:
                c = (w * pairs[:, t] * pairs[:, t + lag]).sum() - ep[t] * ep[t + lag]
                pair_worst = max(pair_worst, abs(c))
        single_bound = 2.0 * rho**lag
        pair_bound = 2.0 * rho ** max(lag - 1, 0)
        if single_worst > single_bound + 1e-12:
            raise BoundViolation(
                f"lag {lag}: singleton |cov| = {single_worst:.6g} exceeds 2 rho^l = {single_bound:.6g}"
            )
        if pair_worst > pair_bound + 1e-12:
            raise BoundViolation(
                f"lag {lag}: pair-pair |cov| = {pair_worst:.6g} exceeds 2 rho^(l-1) = {pair_bound:.6g}"
            )
        out[lag] = max(single_worst, pair_worst)
    return out


@dataclass(frozen=True)
class FilterStabilityReport:
    k_grid: np.ndarray
    filter_gaps: np.ndarray  # (trials, len(k_grid)): short- vs long-history filter
    prior_gaps: np.ndarray   # (trials, len(k_grid)): p(z_0 | x_k^n) vs pi_bar
    filter_slope: float
    prior_slope: float


def _fit_log_slope(k_grid: np.ndarray, values: np.ndarray, floor: float = 1e-14) -> float:
    mask = values > floor
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.asarray(k_grid)[mask], np.log(values[mask]), 1)[0])


def filter_stability_check(
    theta: ThetaParams, n: int, k_grid, trials: int, seed: int = 0
) -> FilterStabilityReport:
    """Two geometric-decay diagnostics of the conditional chain.

    (a) sup_z |p(z_n | x_1^n) - p(z_n | x_{n-k}^n)|: filters started k and
    n-1 steps back merge geometrically;
    (b) sup_z |p(z_0 | x_k^n) - pi_bar(z_0)|: observations at distance >= k
    influence z_0 through A^k only, so this gap decays like rho_mix^k.

    Slopes are fitted on log trial-mean gaps; thresholds are left to tests.
    """
    k_grid = np.asarray(list(k_grid), dtype=int)
    if trials < 1:
        raise DomainError("trials >= 1 required")
    if k_grid.max() >= n:
        raise DomainError("k_grid entries must be < n")
    model = theta.transition()
    log_pi = np.log(model.pi_bar)
    log_a = np.log(model.a)
    means = np.stack([theta.mu, -theta.mu])
    fgaps = np.empty((trials, len(k_grid)))
    pgaps = np.empty((trials, len(k_grid)))
    for t in range(trials):
        rng = stream(seed, "filter-stability", t)
        _, x = sample_sequence(theta, n=n, k=0, rng=rng)
        le = log_emission_matrix(x.core, means, theta.sigma)

        la, _, _ = _fb_batched(le[None], log_a, log_pi)
        filt_full = np.exp(la[0, -1] - _logsumexp_last(la[0, -1]))
        for j, k in enumerate(k_grid):
            la_k, _, _ = _fb_batched(le[None, n - 1 - k :], log_a, log_pi)
            filt_k = np.exp(la_k[0, -1] - _logsumexp_last(la_k[0, -1]))
            fgaps[t, j] = np.abs(filt_full - filt_k).max()

            if k == 0:
                pgaps[t, j] = 0.0  # z_0 coincides with the first conditioned index
                continue
            la_s, lb_s, _ = _fb_batched(le[None, k - 1 :], log_a, log_pi)
            first = la_s[0, 0] + lb_s[0, 0]
            smoothed = np.exp(first - _logsumexp_last(first))
            a_pow = np.linalg.matrix_power(model.a, int(k))
            # back[a, b] = p(z_0 = a | z_k = b); stationarity gives the pi_bar denominator
            back = model.pi_bar[:, None] * a_pow / model.pi_bar[None, :]
            p0 = back @ smoothed
            pgaps[t, j] = np.abs(p0 - model.pi_bar).max()
    return FilterStabilityReport(
        k_grid=k_grid,
        filter_gaps=fgaps,
        prior_gaps=pgaps,
        filter_slope=_fit_log_slope(k_grid, fgaps.mean(axis=0)),
        prior_slope=_fit_log_slope(k_grid[k_grid > 0], pgaps.mean(axis=0)[k_grid > 0]),
    )


# ---------------------------------------------------------------------------
# Monte-Carlo population operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractionEstimate:
    kappa_hat: float
    probe_count: int
    mc_sequences: int
    mc_std_err: float
    per_probe: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


@dataclass(frozen=True)
class FosEstimate:
    l_mu1: float
    l_mu2: float
    l_beta1: float
    l_beta2: float


def _mc_window_stats(thetas, theta_star: ThetaParams, k: int, mc_sequences: int,
                     seq_len: int, seed: int):
    """Per-sequence truncated sufficient statistics for every probe.

    Draws mc_sequences extended sequences from theta_star (common random
    numbers across probes), computes k-windowed posteriors under each probe
    theta, and returns s_mu (m, P, d), s_stay (m, P), mean_sq (m,).
    """
    m, p = mc_sequences, len(thetas)
    d = theta_star.d
    n = seq_len
    xs = np.empty((m, n + 2 * k, d))
    for j in range(m):
        rng = stream(seed, "mc-sequence", j)
        _, x = sample_sequence(theta_star, n=n, k=k, rng=rng)
        xs[j] = x.x
    length = 2 * k + 1
    # (m, n, L, d) observation windows, flattened to one batched recursion
    wins_x = sliding_window_view(xs, length, axis=1)
    wins_x = np.moveaxis(wins_x[:, :n], 3, 2).reshape(m * n, length, d)
    cores = xs[:, k : k + n, :]

    s_mu = np.empty((m, p, d))
    s_stay = np.empty((m, p))
    for pi_idx, th in enumerate(thetas):
        model = th.transition()
        log_a = np.log(model.a)
        log_pi = np.log(model.pi_bar)
        means = np.stack([th.mu, -th.mu])
        if k == 0:
            le = log_emission_matrix(cores.reshape(m * n, d), means, th.sigma)
            lp = log_pi[None, :] + le
            gam = np.exp(lp - _logsumexp_last(lp)[:, None]).reshape(m, n, 2)
            stay = np.full((m, n), th.zeta)  # backward-extended pair is data-free
        else:
            le = log_emission_matrix(wins_x.reshape(-1, d), means, th.sigma).reshape(
                m * n, length, 2
            )
            la, lb, _ = _fb_batched(le, log_a, log_pi)
            cen = la[:, k, :] + lb[:, k, :]
            gam = np.exp(cen - _logsumexp_last(cen)[:, None]).reshape(m, n, 2)
            pair = la[:, k - 1, :, None] + log_a[None] + (le[:, k, :] + lb[:, k, :])[:, None, :]
            flat = pair.reshape(m * n, 4)
            flat = np.exp(flat - _logsumexp_last(flat)[:, None])
            stay = (flat[:, 0] + flat[:, 3]).reshape(m, n)
        ez = gam[:, :, 0] - gam[:, :, 1]
        s_mu[:, pi_idx, :] = np.einsum("mn,mnd->md", ez, cores) / n
        s_stay[:, pi_idx] = stay.mean(axis=1)
    mean_sq = (cores**2).sum(axis=2).mean(axis=1)
    return s_mu, s_stay, mean_sq


def _theta_from_stats(theta_like: ThetaParams, s_mu: np.ndarray, s_stay: float) -> ThetaParams:
    return _finish_two_state(theta_like, s_mu, float(s_stay))


def population_m_operator_mc(
    theta: ThetaParams, k: int, mc_sequences: int, seq_len: int, seed: int,
    theta_star: ThetaParams | None = None,
) -> tuple[ThetaParams, float]:
    """Monte-Carlo estimate of the k-truncated population update at theta.

    Sequences are drawn from theta_star (theta itself by default, matching
    the fixed-point check M(theta*) ~ theta*); sufficient statistics are
    averaged across sequences *before* the closed-form maximization, which
    matches the argmax-of-expected-Q population operator.  The returned
    scalar is the jackknife standard error of the estimate in the additive
    norm (l2 over the mean coordinates plus the beta coordinate).
    """
    if theta_star is None:
        theta_star = theta
    s_mu, s_stay, _ = _mc_window_stats([theta], theta_star, k, mc_sequences, seq_len, seed)
    s_mu = s_mu[:, 0, :]
    s_stay = s_stay[:, 0]
    est = _theta_from_stats(theta, s_mu.mean(axis=0), s_stay.mean())

    m = mc_sequences
    if m < 2:
        return est, float("nan")
    mu_jack = (s_mu.sum(axis=0)[None, :] - s_mu) / (m - 1)
    stay_jack = (s_stay.sum() - s_stay) / (m - 1)
    beta_jack = np.array([
        beta_of_zeta(project_zeta(z, theta.b_bound)) for z in stay_jack
    ])
    se_mu = math.sqrt(
        (m - 1) / m * float(((mu_jack - mu_jack.mean(axis=0)) ** 2).sum())
    )
    se_beta = math.sqrt((m - 1) / m * float(((beta_jack - beta_jack.mean()) ** 2).sum()))
    return est, se_mu + se_beta


def _sample_probes(theta_star: ThetaParams, radius: float, count: int, rng) -> list[ThetaParams]:
    """Uniform draws from {||mu - mu*|| <= radius} x Omega_beta."""
    probes = []
    d = theta_star.d
    bb = theta_star.beta_b
    while len(probes) < count:
        direction = rng.standard_normal(d)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        r = radius * rng.random() ** (1.0 / d)
        mu = theta_star.mu + direction / norm * r
        beta = rng.uniform(-bb, bb)
        probes.append(theta_star.with_(beta=beta, mu=mu))
    return probes


def contraction_estimate(
    theta_star: ThetaParams, k: int, radius: float, probes: int,
    mc_sequences: int, seq_len: int, seed: int = 0,
) -> ContractionEstimate:
    """Empirical contraction factor of the truncated population update.

    kappa_hat = max over probes theta of
    ||M(theta) - M(theta*)||_add / ||theta - theta*||_add, with all
    operator values estimated from one shared set of Monte-Carlo sequences
    (common random numbers), and a jackknife standard error of the max.
    """
    rng = stream(seed, "contraction-probes")
    probe_list = _sample_probes(theta_star, radius, probes, rng)
    thetas = [theta_star] + probe_list
    s_mu, s_stay, _ = _mc_window_stats(thetas, theta_star, k, mc_sequences, seq_len, seed)

    def kappas(mu_stats, stay_stats):
        ref = _theta_from_stats(theta_star, mu_stats[0], stay_stats[0])
        out = np.empty(len(probe_list))
        for i, th in enumerate(probe_list):
            dist = theta_distance(th, theta_star)
            img = _theta_from_stats(th, mu_stats[i + 1], stay_stats[i + 1])
            out[i] = theta_distance(img, ref) / dist if dist > 1e-12 else 0.0
        return out

    per_probe = kappas(s_mu.mean(axis=0), s_stay.mean(axis=0))
    kappa_hat = float(per_probe.max())

    m = mc_sequences
    if m >= 2:
        jack = np.empty(m)
        mu_tot = s_mu.sum(axis=0)
        stay_tot = s_stay.sum(axis=0)
        for j in range(m):
            jack[j] = kappas((mu_tot - s_mu[j]) / (m - 1), (stay_tot - s_stay[j]) / (m - 1)).max()
        se = math.sqrt((m - 1) / m * float(((jack - jack.mean()) ** 2).sum()))
    else:
        se = float("nan")
    return ContractionEstimate(
        kappa_hat=kappa_hat, probe_count=probes, mc_sequences=mc_sequences,
        mc_std_err=se, per_probe=per_probe,
    )


def fos_lipschitz_estimate(
    theta_star: ThetaParams, k: int, radius: float, probes: int,
    mc_sequences: int, seq_len: int, seed: int = 0, fd_scale: float = 1e-4,
) -> FosEstimate:
    """Empirical first-order-stability Lipschitz constants of the MC Q^k.

    For each probe (mu', beta'), gradients of the Q components are taken by
    central differences at (mu*, beta*), with the conditioning parameter
    moved one coordinate at a time:

      l_mu1   <- ||grad_mu Q1(.|mu',beta') - grad_mu Q1(.|mu*,beta')|| / ||mu'-mu*||
      l_mu2   <- ||grad_mu Q1(.|mu',beta') - grad_mu Q1(.|mu',beta*)|| / |beta'-beta*|
      l_beta1 <- |d Q2(.|mu',beta') - d Q2(.|mu*,beta')| / ||mu'-mu*||
      l_beta2 <- |d Q2(.|mu',beta') - d Q2(.|mu',beta*)| / |beta'-beta*|

    Common random numbers across every conditioning point keep the ratios
    usable at desk-scale Monte-Carlo budgets.
    """
    rng = stream(seed, "fos-probes")
    probe_list = _sample_probes(theta_star, radius, probes, rng)
    thetas = [theta_star]
    for th in probe_list:
        thetas.extend([
            th,
            th.with_(mu=theta_star.mu),
            th.with_(beta=theta_star.beta),
        ])
    s_mu, s_stay, mean_sq = _mc_window_stats(thetas, theta_star, k, mc_sequences, seq_len, seed)
    s_mu = s_mu.mean(axis=0)
    s_stay = s_stay.mean(axis=0)
    msq = mean_sq.mean()
    sig2 = theta_star.sigma**2
    d = theta_star.d

    def grad_mu(idx, at_mu):
        # central differences of Q1(mu) = -(msq - 2 s_mu.mu + ||mu||^2)/(2 sig2) + const
        def q1(mu):
            return -(msq - 2.0 * float(s_mu[idx] @ mu) + float(mu @ mu)) / (2.0 * sig2)
        g = np.empty(d)
        for c in range(d):
            h = fd_scale * max(1.0, abs(at_mu[c]))
            e = np.zeros(d); e[c] = h
            g[c] = (q1(at_mu + e) - q1(at_mu - e)) / (2.0 * h)
        return g

    def dq2(idx, at_beta):
        # Q2(beta) = corr * beta - log(e^beta + e^-beta) + const
        corr = 2.0 * s_stay[idx] - 1.0
        def q2(b):
            return corr * b - math.log(math.exp(b) + math.exp(-b))
        h = fd_scale * max(1.0, abs(at_beta))
        return (q2(at_beta + h) - q2(at_beta - h)) / (2.0 * h)

    l_mu1 = l_mu2 = l_beta1 = l_beta2 = 0.0
    for i, th in enumerate(probe_list):
        base = 1 + 3 * i
        dmu = float(np.linalg.norm(th.mu - theta_star.mu))
        dbeta = abs(th.beta - theta_star.beta)
        g_full = grad_mu(base, theta_star.mu)
        d_full = dq2(base, theta_star.beta)
        if dmu > 1e-9:
            g_mu_star = grad_mu(base + 1, theta_star.mu)
            d_mu_star = dq2(base + 1, theta_star.beta)
            l_mu1 = max(l_mu1, float(np.linalg.norm(g_full - g_mu_star)) / dmu)
            l_beta1 = max(l_beta1, abs(d_full - d_mu_star) / dmu)
        if dbeta > 1e-9:
            g_beta_star = grad_mu(base + 2, theta_star.mu)
            d_beta_star = dq2(base + 2, theta_star.beta)
            l_mu2 = max(l_mu2, float(np.linalg.norm(g_full - g_beta_star)) / dbeta)
            l_beta2 = max(l_beta2, abs(d_full - d_beta_star) / dbeta)
    return FosEstimate(l_mu1=l_mu1, l_mu2=l_mu2, l_beta1=l_beta1, l_beta2=l_beta2)

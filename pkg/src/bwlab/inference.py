"""Exact smoothing for discrete-state Gaussian-output chains.

Three routes to the same posteriors, kept deliberately independent:

* ``forward_backward`` -- log-domain sum-product over the full sequence,
* ``windowed_posteriors`` -- per-index smoothing over a 2k observation window,
* ``brute_force_posteriors`` -- explicit summation over all hidden paths
  (the test oracle; capped at s^n <= 1e6).

All recursions run in the log domain with per-step max subtraction, so
sequences of length 1e4 at low SNR are safe from underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, MissingExtension, NumericalUnderflow, TooLarge
from .models import GeneralHmmParams, ObservedSequence, ThetaParams

BRUTE_FORCE_CAP = 10**6


@dataclass(frozen=True)
class PosteriorMarginals:
    """Smoothed posteriors of one forward-backward pass.

    gamma[i, z] = p(z_i = z | x_1^n), xi[i] the (i, i+1) pair posterior,
    log_lik = log p(x_1^n).  gamma0 and xi0 extend the smoother one step
    back to the unobserved z_0 of the complete-likelihood convention.
    """

    gamma: np.ndarray
    xi: np.ndarray
    log_lik: float
    gamma0: np.ndarray
    xi0: np.ndarray

    @property
    def n(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class WindowedPosteriors:
    """k-truncated posteriors: each core index conditions on its own window.

    gamma_k[i-1, z] = p(z_i = z | x_{i-k}^{i+k}) and
    xi_k[i-1, a, b] = p(z_{i-1} = a, z_i = b | x_{i-k}^{i+k}) for i = 1..n.
    gamma0 carries p(z_0 | x_{-k}^{k} clipped to the available extension).
    """

    k: int
    gamma_k: np.ndarray
    xi_k: np.ndarray
    gamma0: np.ndarray


def _hmm_arrays(params) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """(A, pi_bar, means, sigma) for either parameterization."""
    if isinstance(params, ThetaParams):
        model = params.transition()
        means = np.stack([params.mu, -params.mu])
        return model.a, model.pi_bar, means, params.sigma
    if isinstance(params, GeneralHmmParams):
        return params.trans.a, params.trans.pi_bar, params.means, params.sigma
    raise DomainError(f"unsupported parameter type {type(params).__name__}")


def log_emission_matrix(x: np.ndarray, means: np.ndarray, sigma: float) -> np.ndarray:
    """le[t, z] = log N(x_t; means[z], sigma^2 I)."""
    if sigma <= 0.0:
        raise DomainError("emission log-density needs sigma > 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return -0.5 * sq / sigma**2 - 0.5 * d * np.log(2.0 * np.pi * sigma**2)


def _reverse_kernel(a: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """revk[a, b] = p(z_{t-1} = a | z_t = b) for the stationary chain."""
    return pi[:, None] * a / pi[None, :]


def _logsumexp_last(arr: np.ndarray) -> np.ndarray:
    m = arr.max(axis=-1)
    return m + np.log(np.exp(arr - m[..., None]).sum(axis=-1))


def _fb_batched(le: np.ndarray, log_a: np.ndarray, log_pi: np.ndarray):
    """Batched log-domain forward-backward.

    le: (B, T, s) emission log-densities; log_a: (s, s) or (B, s, s).
    Returns log_alpha (B, T, s), log_beta (B, T, s), log_lik (B,) where
    log_alpha is renormalized per step and the running normalizer is folded
    into log_lik.  The s=2 path pairs the transitions into two logaddexp
    calls per step; the general path does a full log-sum-exp reduction.
    """
    b, t, s = le.shape
    shared_a = log_a.ndim == 2
    if not shared_a:
        log_a = np.broadcast_to(log_a, (b, s, s))
    la = np.empty((b, t, s))
    lb = np.empty((b, t, s))
    norm = np.zeros(b)
    two = s == 2 and shared_a

    with np.errstate(invalid="ignore"):  # -inf emissions surface as NumericalUnderflow below
        cur = log_pi[None, :] + le[:, 0, :]
        shift = cur.max(axis=1)
        cur = cur - shift[:, None]
        norm += shift
        la[:, 0] = cur
        for i in range(1, t):
            if two:
                # logsumexp over the source state, one logaddexp per target pair
                cur = np.logaddexp(
                    cur[:, 0:1] + log_a[0][None, :], cur[:, 1:2] + log_a[1][None, :]
                ) + le[:, i, :]
            else:
                tmp = cur[:, :, None] + log_a
                m = tmp.max(axis=1)
                cur = m + np.log(np.exp(tmp - m[:, None, :]).sum(axis=1)) + le[:, i, :]
            shift = cur.max(axis=1)
            cur = cur - shift[:, None]
            norm += shift
            la[:, i] = cur

    log_lik = norm + _logsumexp_last(la[:, -1])
    if not np.all(np.isfinite(log_lik)):
        raise NumericalUnderflow("a per-step normalizer collapsed to -inf")

    cur = np.zeros((b, s))
    lb[:, -1] = cur
    for i in range(t - 2, -1, -1):
        inc = le[:, i + 1, :] + cur
        if two:
            cur = np.logaddexp(
                inc[:, 0:1] + log_a[:, 0][None, :], inc[:, 1:2] + log_a[:, 1][None, :]
            )
        else:
            tmp = log_a + inc[:, None, :]
            m = tmp.max(axis=2)
            cur = m + np.log(np.exp(tmp - m[:, :, None]).sum(axis=2))
        cur = cur - cur.max(axis=1)[:, None]
        lb[:, i] = cur
    return la, lb, log_lik


def _posteriors_from_messages(la, lb, le, log_a):
    """gamma (B, T, s) and xi (B, T-1, s, s) from normalized messages."""
    post = la + lb
    post = post - _logsumexp_last(post)[..., None]
    gamma = np.exp(post)

    b, t, s = le.shape
    if t == 1:
        return gamma, np.empty((b, 0, s, s))
    if log_a.ndim == 2:
        log_a = log_a[None, None, :, :]
    else:
        log_a = log_a[:, None, :, :]
    pair = la[:, :-1, :, None] + log_a + (le[:, 1:, :] + lb[:, 1:, :])[:, :, None, :]
    flat = pair.reshape(b, t - 1, s * s)
    flat = flat - _logsumexp_last(flat)[..., None]
    xi = np.exp(flat).reshape(b, t - 1, s, s)
    return gamma, xi


def _as_core(x) -> np.ndarray:
    if isinstance(x, ObservedSequence):
        return x.core
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def forward_backward(x, params) -> PosteriorMarginals:
    """Exact smoothed marginals and log-likelihood of the core sequence.

    x may be an ObservedSequence (its core is used) or a raw (n, d) array.
    O(n s^2) time, log domain throughout.
    """
    core = _as_core(x)
    a, pi, means, sigma = _hmm_arrays(params)
    le = log_emission_matrix(core, means, sigma)
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    la, lb, log_lik = _fb_batched(le[None], log_a, np.log(pi))
    gamma, xi = _posteriors_from_messages(la, lb, le[None], log_a)
    gamma, xi = gamma[0], xi[0]
    revk = _reverse_kernel(a, pi)
    gamma0 = revk @ gamma[0]
    xi0 = revk * gamma[0][None, :]
    return PosteriorMarginals(gamma=gamma, xi=xi, log_lik=float(log_lik[0]), gamma0=gamma0, xi0=xi0)


def brute_force_posteriors(x, params) -> PosteriorMarginals:
    """Posteriors by explicit summation over all s^(n+1) paths z_0^n.

    Reference implementation for tests; raises TooLarge beyond s^n = 1e6.
    """
    core = _as_core(x)
    n = core.shape[0]
    a, pi, means, sigma = _hmm_arrays(params)
    s = a.shape[0]
    if s**n > BRUTE_FORCE_CAP:
        raise TooLarge(f"s^n = {s**n} exceeds the enumeration cap {BRUTE_FORCE_CAP}")
    le = log_emission_matrix(core, means, sigma)
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_pi = np.log(pi)

    paths = np.array(list(product(range(s), repeat=n + 1)), dtype=np.int64)
    logp = log_pi[paths[:, 0]].copy()
    for i in range(1, n + 1):
        logp += log_a[paths[:, i - 1], paths[:, i]] + le[i - 1, paths[:, i]]
    m = logp.max()
    w = np.exp(logp - m)
    total = w.sum()
    log_lik = float(m + np.log(total))
    w /= total

    gamma = np.zeros((n, s))
    for i in range(1, n + 1):
        np.add.at(gamma, (np.full(paths.shape[0], i - 1), paths[:, i]), w)
    xi = np.zeros((max(n - 1, 0), s, s))
    for i in range(1, n):
        np.add.at(xi, (np.full(paths.shape[0], i - 1), paths[:, i], paths[:, i + 1]), w)
    gamma0 = np.zeros(s)
    np.add.at(gamma0, paths[:, 0], w)
    xi0 = np.zeros((s, s))
    np.add.at(xi0, (paths[:, 0], paths[:, 1]), w)
    return PosteriorMarginals(gamma=gamma, xi=xi, log_lik=log_lik, gamma0=gamma0, xi0=xi0)


def _window_mode(x: ObservedSequence, k: int) -> str:
    if k <= x.k:
        return "windowed"
    if k >= x.n - 1 + x.k:
        return "full"
    raise MissingExtension(
        f"window radius {k} exceeds the carried extension {x.k} "
        f"(only k <= {x.k} or k >= {x.n - 1 + x.k} are computable)"
    )


def windowed_posteriors(x: ObservedSequence, params, k: int) -> WindowedPosteriors:
    """k-truncated posteriors, one independent smoothing pass per core index.

    Every window is clipped to the observations the sequence actually
    carries; radii between the carried extension and the whole-sequence
    regime raise MissingExtension.  All n windows run as one batched
    recursion, O(n k s^2) total.
    """
    if k < 0:
        raise DomainError(f"window radius must be nonnegative, got {k}")
    mode = _window_mode(x, k)
    a, pi, means, sigma = _hmm_arrays(params)
    s = a.shape[0]
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    log_pi_vec = np.log(pi)
    revk = _reverse_kernel(a, pi)
    n, kx = x.n, x.k

    if mode == "full":
        full = forward_backward(x.x, params)
        gamma_k = full.gamma[kx : kx + n]
        xi_k = np.empty((n, s, s))
        if kx >= 1:
            xi_k[:] = full.xi[kx - 1 : kx + n - 1]
        else:
            xi_k[0] = full.xi0
            if n > 1:
                xi_k[1:] = full.xi[: n - 1]
        gamma0 = full.gamma0 if kx == 0 else full.gamma[kx - 1]
        # z_0 one step before position 1; with extension it is an in-window
        # smoothed marginal, without it the backward-kernel extension.
        return WindowedPosteriors(k=k, gamma_k=gamma_k, xi_k=xi_k, gamma0=gamma0)

    le_ext = log_emission_matrix(x.x, means, sigma)

    if k == 0:
        lp = log_pi_vec[None, :] + le_ext[kx : kx + n]
        gamma_k = np.exp(lp - _logsumexp_last(lp)[:, None])
        xi_k = revk[None, :, :] * gamma_k[:, None, :]
        if kx == 0:
            gamma0 = pi
        else:
            l0 = log_pi_vec + le_ext[kx - 1]
            gamma0 = np.exp(l0 - _logsumexp_last(l0))
        return WindowedPosteriors(k=0, gamma_k=gamma_k, xi_k=xi_k, gamma0=gamma0)

    length = 2 * k + 1
    wins = sliding_window_view(le_ext, length, axis=0)  # (T-L+1, s, L)
    wins = np.swapaxes(wins[kx - k : kx - k + n], 1, 2)  # (n, L, s)
    la, lb, _ = _fb_batched(wins, log_a, log_pi_vec)

    center = la[:, k, :] + lb[:, k, :]
    gamma_k = np.exp(center - _logsumexp_last(center)[:, None])

    pair = la[:, k - 1, :, None] + log_a[None] + (wins[:, k, :] + lb[:, k, :])[:, None, :]
    flat = pair.reshape(n, s * s)
    xi_k = np.exp(flat - _logsumexp_last(flat)[:, None]).reshape(n, s, s)

    # z_0 anchor: window centered at index 0, clipped to the extension.
    left = max(1 - kx, -k)
    rows = le_ext[left + kx - 1 : k + kx]  # positions left .. k
    la0, lb0, _ = _fb_batched(rows[None], log_a, log_pi_vec)
    at0 = la0[0, -left, :] + lb0[0, -left, :]
    gamma0 = np.exp(at0 - _logsumexp_last(at0))
    return WindowedPosteriors(k=k, gamma_k=gamma_k, xi_k=xi_k, gamma0=gamma0)


def clipped_window_singletons(x, params, k: int) -> np.ndarray:
    """p(z_i | x_{max(1,i-k)}^{min(n,i+k)}) for every core index i.

    Windows are clipped to the core, so the conditioning sets nest inside
    x_1^n.  Implemented by padding the core with zero log-emission rows:
    a vacuous observation multiplies every state's likelihood by one, and
    pushing the stationary prior through extra transitions leaves it fixed,
    so uniform windows over the padded array equal the clipped windows.
    """
    core = _as_core(x)
    a, pi, means, sigma = _hmm_arrays(params)
    s = a.shape[0]
    le = log_emission_matrix(core, means, sigma)
    n = le.shape[0]
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    log_pi = np.log(pi)
    if k == 0:
        lp = log_pi[None, :] + le
        return np.exp(lp - _logsumexp_last(lp)[:, None])
    pad = np.zeros((k, s))
    padded = np.vstack([pad, le, pad])
    wins = np.swapaxes(sliding_window_view(padded, 2 * k + 1, axis=0), 1, 2)
    la, lb, _ = _fb_batched(wins, log_a, log_pi)
    center = la[:, k, :] + lb[:, k, :]
    return np.exp(center - _logsumexp_last(center)[:, None])


def truncation_gap(x, params, k_grid, clip_to_core: bool = True) -> np.ndarray:
    """sup_i total-variation-style gap between full and windowed singletons.

    Returns, per k in k_grid, sup_i sum_z |p(z_i | x_1^n) - p(z_i | window_i)|.
    By default window_i = x_{max(1,i-k)}^{min(n,i+k)} (nested conditioning,
    the comparison whose gap vanishes geometrically in k).  With
    clip_to_core=False the windows reach into the carried +-k extension;
    indices near the core edge then condition on observations the full
    smoother never sees, and the sup stalls at an O(1) floor.
    """
    k_grid = list(k_grid)
    if not k_grid:
        raise DomainError("k_grid must be nonempty")
    full = forward_backward(x, params)
    gaps = np.empty(len(k_grid))
    for j, k in enumerate(k_grid):
        if clip_to_core:
            gamma_k = clipped_window_singletons(x, params, int(k))
        else:
            gamma_k = windowed_posteriors(x, params, int(k)).gamma_k
        gaps[j] = np.abs(full.gamma - gamma_k).sum(axis=1).max()
    return gaps

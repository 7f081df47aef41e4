"""Model parameterization, stationary/mixing analysis, and sequence simulation.

Two-state Gaussian-output chains use the +/-1 state encoding (state value z
multiplies the mean vector: emission mean is z * mu).  General s-state chains
use 0-based labels with one mean vector per state and a shared sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, MissingExtension, NonErgodicChain, ZeroTransition

# Column order of every two-state posterior/emission array: index 0 is the
# z=+1 state, index 1 is z=-1.
TWO_STATE_VALUES = np.array([1, -1])

_ROW_SUM_TOL = 1e-12
_STATIONARY_TOL = 1e-10
_REVERSIBLE_TOL = 1e-10


def stationary_distribution(a: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix by direct linear solve.

    Solves pi^T (A - I) = 0 with the normalization sum(pi) = 1 appended,
    instead of power iteration.  Raises NonErgodicChain when the unit
    eigenvalue is not simple (eigen-gap below 1e-12).
    """
    a = np.asarray(a, dtype=float)
    s = a.shape[0]
    if a.shape != (s, s):
        raise DomainError(f"transition matrix must be square, got {a.shape}")
    if np.any(a < -_ROW_SUM_TOL) or np.any(a > 1 + _ROW_SUM_TOL):
        raise DomainError("transition probabilities must lie in [0, 1]")
    if np.max(np.abs(a.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
        raise DomainError("every row of the transition matrix must sum to 1")

    eigvals = np.linalg.eigvals(a)
    dist_to_one = np.sort(np.abs(eigvals - 1.0))
    if len(dist_to_one) > 1 and dist_to_one[1] < 1e-12:
        raise NonErgodicChain("unit eigenvalue of the transition matrix is not simple")

    # pi^T A = pi^T  <=>  (A^T - I) pi = 0; replace one equation with sum = 1.
    m = np.vstack([a.T - np.eye(s), np.ones(s)])
    rhs = np.zeros(s + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    if np.any(pi < -1e-10):
        raise NonErgodicChain("stationary solve produced negative mass (chain not ergodic)")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class TransitionModel:
    """Row-stochastic transition matrix with its stationary distribution."""

    a: np.ndarray
    pi_bar: np.ndarray = field(default=None)  # type: ignore[assignment]
    reversible: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        if self.pi_bar is None:
            object.__setattr__(self, "pi_bar", stationary_distribution(a))
        pi = np.asarray(self.pi_bar, dtype=float)
        object.__setattr__(self, "pi_bar", pi)
        if np.max(np.abs(a.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
            raise DomainError("transition rows must sum to 1 within 1e-12")
        if np.max(np.abs(pi @ a - pi)) > _STATIONARY_TOL:
            raise DomainError("pi_bar is not stationary for A within 1e-10")
        if self.reversible:
            flux = pi[:, None] * a
            if np.max(np.abs(flux - flux.T)) > _REVERSIBLE_TOL:
                raise DomainError("detailed balance violated beyond 1e-10")

    @property
    def s(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class MixingProfile:
    """Mixing constant/rate of a transition model.

    eps_mix is the largest eps with eps <= A(j,k)/pi_bar(k) <= 1/eps for all
    entries; rho_mix = 1 - eps_mix.  b_bound is the configured upper bound
    b < 1 on rho_mix used by the two-state feasible sets.
    """

    eps_mix: float
    rho_mix: float
    pi_min: float
    b_bound: float


def mixing_profile(model: TransitionModel, b_bound: float | None = None) -> MixingProfile:
    """Compute the mixing constant of a transition model.

    Raises ZeroTransition when any A(j,k) = 0, in which case no positive
    mixing constant exists.
    """
    if np.any(model.a <= 0.0):
        raise ZeroTransition("a zero transition probability admits no mixing constant")
    ratios = model.a / model.pi_bar[None, :]
    eps = float(np.min(np.minimum(ratios, 1.0 / ratios)))
    rho = 1.0 - eps
    if b_bound is None:
        b_bound = rho
    if not rho <= b_bound + 1e-12 or not b_bound < 1.0:
        raise DomainError(f"b_bound must satisfy rho_mix <= b < 1, got b={b_bound}, rho={rho}")
    return MixingProfile(eps_mix=eps, rho_mix=rho, pi_min=float(np.min(model.pi_bar)), b_bound=float(b_bound))


def beta_of_zeta(zeta: float) -> float:
    """Log-odds parameter beta = 0.5 * log(zeta / (1 - zeta))."""
    if not 0.0 < zeta < 1.0:
        raise DomainError(f"zeta must lie in (0, 1), got {zeta}")
    return 0.5 * math.log(zeta / (1.0 - zeta))


def zeta_of_beta(beta: float) -> float:
    """Stay probability zeta = e^beta / (e^beta + e^-beta)."""
    # expit form is stable for large |beta|
    return 1.0 / (1.0 + math.exp(-2.0 * beta))


def two_state_transition(zeta: float) -> TransitionModel:
    """Symmetric two-state chain [[zeta, 1-zeta], [1-zeta, zeta]]."""
    if not 0.0 < zeta < 1.0:
        raise DomainError(f"zeta must lie in (0, 1), got {zeta}")
    a = np.array([[zeta, 1.0 - zeta], [1.0 - zeta, zeta]])
    return TransitionModel(a=a, pi_bar=np.array([0.5, 0.5]), reversible=True)


@dataclass(frozen=True)
class ThetaParams:
    """Joint parameter theta = (beta, mu) of the two-state Gaussian HMM.

    sigma is the (known) emission standard deviation; b_bound < 1 bounds
    rho_mix = |tanh(beta)| and fixes the feasible sets
    Omega_zeta = [(1-b)/2, (1+b)/2] and Omega_beta = [-beta_b, beta_b].
    """

    beta: float
    mu: np.ndarray
    sigma: float = 1.0
    b_bound: float = 0.6

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", float(self.beta))
        if not 0.0 < self.b_bound < 1.0:
            raise DomainError(f"b_bound must lie in (0, 1), got {self.b_bound}")
        if self.sigma < 0.0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if abs(self.beta) > self.beta_b + 1e-9:
            raise DomainError(
                f"|beta|={abs(self.beta):.6g} outside the feasible set (beta_b={self.beta_b:.6g})"
            )

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @property
    def zeta(self) -> float:
        return zeta_of_beta(self.beta)

    @property
    def beta_b(self) -> float:
        return 0.5 * math.log((1.0 + self.b_bound) / (1.0 - self.b_bound))

    @property
    def snr2(self) -> float:
        """eta^2 = ||mu||^2 / sigma^2 (inf in the degenerate sigma=0 limit)."""
        n2 = float(np.dot(self.mu, self.mu))
        return n2 / self.sigma**2 if self.sigma > 0 else math.inf

    def transition(self) -> TransitionModel:
        return two_state_transition(self.zeta)

    def with_(self, **kwargs) -> "ThetaParams":
        params = {"beta": self.beta, "mu": self.mu, "sigma": self.sigma, "b_bound": self.b_bound}
        params.update(kwargs)
        return ThetaParams(**params)


@dataclass(frozen=True)
class GeneralHmmParams:
    """General s-state Gaussian-output parameters: one mean per state, shared sigma."""

    trans: TransitionModel
    means: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", means)
        if means.shape[0] != self.trans.s:
            raise DomainError(f"means has {means.shape[0]} rows for an s={self.trans.s} chain")
        if self.sigma <= 0.0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    @property
    def s(self) -> int:
        return self.trans.s

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class HiddenSequence:
    """Hidden states over the extended index range 1-k .. n+k."""

    z: np.ndarray
    n: int
    k: int

    def __post_init__(self):
        z = np.asarray(self.z)
        object.__setattr__(self, "z", z)
        if z.shape[0] != self.n + 2 * self.k:
            raise DomainError(f"hidden length {z.shape[0]} != n + 2k = {self.n + 2 * self.k}")

    @property
    def core(self) -> np.ndarray:
        return self.z[self.k : self.k + self.n]


@dataclass(frozen=True)
class ObservedSequence:
    """Observations over the extended index range 1-k .. n+k; core is 1..n."""

    x: np.ndarray
    n: int
    k: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        if x.shape[0] != self.n + 2 * self.k:
            raise DomainError(f"observed length {x.shape[0]} != n + 2k = {self.n + 2 * self.k}")

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def core(self) -> np.ndarray:
        return self.x[self.k : self.k + self.n]

    def strip_extension(self) -> "ObservedSequence":
        return ObservedSequence(x=self.core, n=self.n, k=0)

    def require_extension(self, k: int) -> None:
        if k > self.k:
            raise MissingExtension(f"window radius {k} exceeds carried extension {self.k}")


def _simulate_chain(a: np.ndarray, pi: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """0-based state path of the given length, started from pi."""
    cum = np.cumsum(a, axis=1)
    u = rng.random(length)
    states = np.empty(length, dtype=np.int64)
    states[0] = np.searchsorted(np.cumsum(pi), u[0], side="right")
    for t in range(1, length):
        states[t] = np.searchsorted(cum[states[t - 1]], u[t], side="right")
    return np.minimum(states, a.shape[0] - 1)


def sample_sequence(
    theta: ThetaParams, n: int, k: int = 0, rng: np.random.Generator | int | None = None
) -> tuple[HiddenSequence, ObservedSequence]:
    """Draw an extended two-state sequence from the stationary chain.

    z_{1-k} is drawn from pi_bar = (1/2, 1/2); x_i = z_i * mu + sigma * eps_i
    with eps_i standard Gaussian in R^d.  Deterministic given the generator
    state (an int seed is accepted for convenience).
    """
    if n < 1 or k < 0:
        raise DomainError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    rng = np.random.default_rng(rng)
    model = theta.transition()
    length = n + 2 * k
    path = _simulate_chain(model.a, model.pi_bar, length, rng)
    z = TWO_STATE_VALUES[path]
    eps = rng.standard_normal((length, theta.d))
    x = z[:, None] * theta.mu[None, :] + theta.sigma * eps
    return HiddenSequence(z=z, n=n, k=k), ObservedSequence(x=x, n=n, k=k)


def sample_general_sequence(
    params: GeneralHmmParams, n: int, k: int = 0, rng: np.random.Generator | int | None = None
) -> tuple[HiddenSequence, ObservedSequence]:
    """Extended s-state sequence with 0-based hidden labels."""
    if n < 1 or k < 0:
        raise DomainError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    rng = np.random.default_rng(rng)
    length = n + 2 * k
    path = _simulate_chain(params.trans.a, params.trans.pi_bar, length, rng)
    eps = rng.standard_normal((length, params.d))
    x = params.means[path] + params.sigma * eps
    return HiddenSequence(z=path, n=n, k=k), ObservedSequence(x=x, n=n, k=k)

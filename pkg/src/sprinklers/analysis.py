"""Executable stability and delay analysis.

Everything here is pure computation on rates and probabilities, independent
of the discrete-event simulator:

* queue_rate evaluates the per-queue arrival rate X induced by a rate vector
  and a primary-port permutation,
* theorem1_threshold / extremal_rate_vector give the exact load threshold
  below which X < 1/N for every permutation, together with the minimizing
  rate vector that attains X = 1/N exactly,
* chernoff_bound / switch_wide_bound evaluate the closed-form tail bound on
  P(X >= 1/N) in the high-load regime by one-dimensional minimization over
  the Chernoff parameter,
* monte_carlo_overload and exhaustive_overload estimate/enumerate the same
  probability directly, as independent checks on the bound,
* markov_expected_queue solves the cycle-level batch-arrival chain for the
  expected queue length at an intermediate port.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix

from .model import is_power_of_two
from .striping import load_per_share, stripe_size


@dataclass(frozen=True)
class RateVector:
    """Arrival rates of the N VOQs competing at one input port."""

    r: tuple

    def __post_init__(self) -> None:
        if any(x < 0 for x in self.r):
            raise ValueError("rates must be nonnegative")
        if self.total > 1:
            raise ValueError(f"total rate {self.total} exceeds 1 (inadmissible)")

    @property
    def total(self):
        return sum(self.r)

    def __len__(self) -> int:
        return len(self.r)


def _rates(r) -> Sequence:
    return r.r if isinstance(r, RateVector) else r


def queue_rate(r, sigma: Sequence[int], n: int):
    """Total arrival rate X to the queue of packets bound for intermediate
    port 1, when VOQ i sits on primary port sigma[i-1].

    The VOQ on primary port l covers port 1 exactly when its stripe size is
    at least l (its dyadic interval is then (0, f] which contains 1), and it
    then contributes one load share:

        X = sum_l  s_{sigma^-1(l)} * [ f_{sigma^-1(l)} >= l ]

    Exact when called with Fraction rates.
    """
    rates = _rates(r)
    if len(rates) != n or sorted(sigma) != list(range(1, n + 1)):
        raise ValueError("sigma must be a permutation of 1..n matching the rate vector")
    inv = [0] * (n + 1)
    for voq, port in enumerate(sigma, start=1):
        inv[port] = voq
    x = 0
    for port in range(1, n + 1):
        voq = inv[port]
        rate = rates[voq - 1]
        if stripe_size(rate, n) >= port:
            x += load_per_share(rate, n)
    return x


def theorem1_threshold(n: int) -> Fraction:
    """Exact load threshold 2/3 + 1/(3N^2): any rate vector with a smaller
    total keeps X < 1/N for every permutation."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return Fraction(2, 3) + Fraction(1, 3 * n * n)


def extremal_rate_vector(n: int) -> RateVector:
    """The minimizing rate vector (indexed by primary port) whose total hits
    the threshold exactly and which achieves X = 1/N under the identity
    permutation.

    Port l <= N/2 carries rate 2^ceil(log2 l) / N^2 (stripe size exactly
    2^ceil(log2 l), load-per-share exactly 1/N^2); port N/2 + 1 carries 1/2
    (full-size stripe); the rest are idle.
    """
    if not is_power_of_two(n) or n < 4:
        raise ValueError("n must be a power of two >= 4")
    nn = Fraction(n * n)
    r = [Fraction(0)] * n
    for port in range(1, n // 2 + 1):
        r[port - 1] = Fraction(1 << _ceil_log2_int(port), 1) / nn
    r[n // 2] = Fraction(1, 2)
    vec = RateVector(r=tuple(r))
    assert vec.total == theorem1_threshold(n)
    return vec


def _ceil_log2_int(x: int) -> int:
    return (x - 1).bit_length()


# ---------------------------------------------------------------------------
# Closed-form tail bound
# ---------------------------------------------------------------------------


def h_func(p: float, a: float) -> float:
    """h(p, a) = p*exp(a*(1-p)) + (1-p)*exp(-a*p)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return p * math.exp(a * (1.0 - p)) + (1.0 - p) * math.exp(-a * p)


def p_star(a: float) -> float:
    """Maximizer of h(., a): (e^a - 1 - a) / (a e^a - a), continued with its
    limit 1/2 at a = 0."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if a < 1e-5:
        # removable singularity: (e^a-1-a)/(a(e^a-1)) = 1/2 - a/12 + O(a^2)
        return 0.5 - a / 12.0
    em = math.expm1(a)
    return (em - a) / (a * em)


def _log_h(p: float, a: float) -> float:
    # h = exp(-a*p) * (p*e^a + 1 - p); safe for a up to ~1e9 where the direct
    # form overflows.
    return -a * p + np.logaddexp(math.log(p) + a, math.log1p(-p))


THETA_BRACKET = (1e-3, 1e9)


class ChernoffBound(NamedTuple):
    value: float
    theorem1_regime: bool
    theta: Optional[float]


def chernoff_bound(n: int, rho: float) -> ChernoffBound:
    """Upper bound on sup P(X >= 1/N) over rate vectors with total rho:

        inf_theta  exp(-theta/N) * h(p*(theta*alpha), theta*alpha)^(N/2)
                   * exp(theta*rho/N),        alpha = 1/N^2.

    Below the theorem1_threshold the probability is exactly zero and the
    bound is returned as 0 with the regime flag set.  The infimum is found
    by bounded scalar minimization of the log-objective over log(theta) in
    [1e-3, 1e9] (the objective is smooth and unimodal; tolerance is far
    below the displayed precision of the resulting probabilities).
    """
    if rho >= 1:
        raise ValueError(f"rho must be < 1, got {rho}")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho < float(theorem1_threshold(n)):
        return ChernoffBound(value=0.0, theorem1_regime=True, theta=None)

    inv_n2 = 1.0 / (n * n)

    def log_objective(u: float) -> float:
        theta = math.exp(u)
        a = theta * inv_n2
        return theta * (rho - 1.0) / n + 0.5 * n * _log_h(p_star(a), a)

    res = minimize_scalar(
        log_objective,
        bounds=(math.log(THETA_BRACKET[0]), math.log(THETA_BRACKET[1])),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return ChernoffBound(
        value=float(math.exp(res.fun)),
        theorem1_regime=False,
        theta=float(math.exp(res.x)),
    )


def switch_wide_bound(n: int, rho: float) -> ChernoffBound:
    """Union bound over all 2N^2 single-server queues (N^2 between inputs and
    intermediates plus N^2 between intermediates and outputs): 2 N^2 times the
    single-queue bound."""
    single = chernoff_bound(n, rho)
    return ChernoffBound(
        value=2 * n * n * single.value,
        theorem1_regime=single.theorem1_regime,
        theta=single.theta,
    )


# ---------------------------------------------------------------------------
# Direct estimation of the overload probability
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, total: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("total must be >= 1")
    phat = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (phat + z2 / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z2 / (4 * total * total)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == total else min(1.0, center + half)
    return lo, hi


class MonteCarloResult(NamedTuple):
    estimate: float
    wilson_low: float
    wilson_high: float
    hits: int
    trials: int


def _sizes_and_shares(rates: np.ndarray, n: int):
    f = np.array([stripe_size(float(x), n) for x in rates], dtype=np.int64)
    s = np.where(f > 0, rates / f, 0.0)
    return f, s


def monte_carlo_overload(n: int, r, trials: int, rng) -> MonteCarloResult:
    """Empirical P(X >= 1/N) over uniform random permutations, with a 95%
    Wilson interval.

    Uses the change of variable X = sum_i s_i * [sigma(i) <= f_i] (VOQ i
    contributes iff its primary port falls inside its own interval-from-1
    prefix), which is algebraically identical to the queue_rate sum and
    vectorizes over batches of sampled permutations.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.PCG64(int(rng)))
    rates = np.asarray(_rates(r), dtype=float)
    f, s = _sizes_and_shares(rates, n)
    threshold = 1.0 / n

    hits = 0
    remaining = trials
    batch = 4096
    base = np.tile(np.arange(1, n + 1, dtype=np.int64), (batch, 1))
    while remaining > 0:
        b = min(batch, remaining)
        perms = rng.permuted(base[:b], axis=1)
        x = ((perms <= f[None, :]) * s[None, :]).sum(axis=1)
        hits += int((x >= threshold - 1e-15).sum())
        remaining -= b
    est = hits / trials
    lo, hi = wilson_interval(hits, trials)
    return MonteCarloResult(est, lo, hi, hits, trials)


@lru_cache(maxsize=4)
def _all_permutations(n: int) -> np.ndarray:
    if n > 8:
        raise ValueError("exhaustive enumeration supported for n <= 8")
    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64)


def exhaustive_queue_rates(r, n: int) -> np.ndarray:
    """X for every one of the n! permutations (n <= 8), vectorized."""
    rates = np.asarray(_rates(r), dtype=float)
    f, s = _sizes_and_shares(rates, n)
    perms = _all_permutations(n)
    return ((perms <= f[None, :]) * s[None, :]).sum(axis=1)


def exhaustive_overload(r, n: int) -> float:
    """Exact P(X >= 1/N) by enumeration of all permutations (n <= 8)."""
    x = exhaustive_queue_rates(r, n)
    return float((x >= 1.0 / n - 1e-15).mean())


# ---------------------------------------------------------------------------
# Cycle-level Markov chain for the intermediate-stage queue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovChainSpec:
    """Queue length sampled at cycle (N-slot) boundaries under worst-case
    burstiness: per cycle the queue receives N packets with probability
    rho/N (else none) and serves one packet.

    `truncation` defaults to the smallest multiple of N-1 exceeding
    50 N / (1 - rho); under the chain's negative drift the stationary tail
    decays geometrically, so that leaves tail mass far below the 1e-12
    residual target (the solver still verifies, and extends if needed).
    """

    n: int
    rho: float
    truncation: Optional[int] = None

    def default_truncation(self) -> int:
        if self.truncation is not None:
            return self.truncation
        step = max(self.n - 1, 1)
        target = 50.0 * self.n / (1.0 - self.rho)
        return step * (int(target / step) + 1)


class MarkovResult(NamedTuple):
    expected_queue: float
    residual: float
    q_max: int
    stable: bool


ORIENTATIONS = ("corrected", "as_printed")


def markov_expected_queue(spec: MarkovChainSpec, orientation: str = "corrected") -> MarkovResult:
    """Expected stationary queue length (packets) of the batch-arrival chain.

    The "corrected" orientation jumps up by N-1 with probability rho/N and
    down by 1 otherwise, matching the arrival description (batch of N with
    probability rho/N, service of one per cycle) and giving drift rho - 1 < 0.
    The "as_printed" orientation swaps the two probabilities; its drift
    (N-1) - rho is positive for every N >= 2, so it admits no stationary
    distribution and is reported as unstable (expected queue = inf).  Both
    are selectable so the discrepancy is auditable.

    The stationary vector is obtained by direct forward substitution on the
    level-crossing balance equations,

        q * pi[j+1] = p * sum_{i=max(0, j-N+2)}^{j} pi[i],

    then validated against the truncated transition matrix: the solver
    raises unless ||pi P - pi||_1 < 1e-12.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    n, rho = spec.n, spec.rho
    if n < 2:
        raise ValueError("n must be >= 2")
    if rho < 0:
        raise ValueError("rho must be nonnegative")

    if orientation == "corrected":
        if rho >= 1:
            raise ValueError("no stationary distribution for rho >= 1")
        p_up = rho / n
    else:
        p_up = 1.0 - rho / n
        if p_up * (n - 1) >= 1.0 - p_up:  # nonnegative drift
            return MarkovResult(math.inf, math.nan, 0, stable=False)

    if rho == 0 and orientation == "corrected":
        return MarkovResult(0.0, 0.0, 1, stable=True)

    q_max = spec.default_truncation()
    for _ in range(8):
        pi = _stationary_by_substitution(n, p_up, q_max)
        tail = pi[-(n - 1):].sum() if n > 1 else pi[-1]
        if tail <= 1e-13:
            break
        q_max *= 2
    residual = _residual_l1(pi, n, p_up)
    if residual >= 1e-12:
        raise ArithmeticError(
            f"stationary residual {residual:.3e} did not reach 1e-12 at truncation {q_max}"
        )
    expected = float(np.dot(np.arange(len(pi)), pi))
    return MarkovResult(expected, float(residual), q_max, stable=True)


def _stationary_by_substitution(n: int, p_up: float, q_max: int) -> np.ndarray:
    p = p_up
    q = 1.0 - p
    ratio = p / q
    pi = np.zeros(q_max + 1)
    pi[0] = 1.0
    window = 1.0  # sum of pi over the active window [max(0, j-N+2), j]
    for j in range(q_max):
        pi[j + 1] = ratio * window
        # advance the window from [j-N+2, j] to [j-N+3, j+1]
        window += pi[j + 1]
        drop = j + 2 - n
        if drop >= 0:
            window -= pi[drop]
        if window > 1e250:  # rescale guard; normalization absorbs the factor
            pi[: j + 2] *= 1e-250
            window *= 1e-250
    return pi / pi.sum()


def _truncated_transition(n: int, p_up: float, q_max: int) -> coo_matrix:
    size = q_max + 1
    rows, cols, vals = [], [], []
    for i in range(size):
        up = min(i + n - 1, q_max)  # clip the batch jump at the boundary
        rows.append(i)
        cols.append(up)
        vals.append(p_up)
        rows.append(i)
        cols.append(max(i - 1, 0))
        vals.append(1.0 - p_up)
    return coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()


def _residual_l1(pi: np.ndarray, n: int, p_up: float) -> float:
    pmat = _truncated_transition(n, p_up, len(pi) - 1)
    return float(np.abs(pi @ pmat - pi).sum())


def closed_form_birth_death(n: int, rho: float) -> float:
    """Closed-form E[Q] for N = 2, where the chain is a plain birth-death
    walk with birth rho/2 and death 1 - rho/2: geometric stationary law with
    ratio beta = p/q and mean beta/(1-beta)."""
    if n != 2:
        raise ValueError("closed form applies to n = 2 only")
    p = rho / 2.0
    beta = p / (1.0 - p)
    if beta >= 1:
        raise ValueError("unstable")
    return beta / (1.0 - beta)

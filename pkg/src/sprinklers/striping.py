"""Stripe-interval generation: rate-driven dyadic sizing and randomized
placement of VOQs onto intermediate ports.

The three pieces compose as follows.  Each VOQ's rate r picks a power-of-two
stripe size f(r) that pushes its load-per-share r/f below alpha = 1/N^2; a
weakly uniform random orthogonal Latin square assigns every VOQ a primary
intermediate port such that the N VOQs of any input port, and the N VOQs
headed to any output port, land on distinct primaries; the VOQ's stripe
interval is then the unique dyadic interval of size f containing its primary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import DestDist, StripeInterval, TrafficSpec, is_power_of_two
from .rng import SplitMix64


def alpha(n: int) -> float:
    """Per-port load target: sizing drives every load-per-share into
    (alpha/2, alpha] (or below alpha for size-1 stripes)."""
    return 1.0 / (n * n)


def _ceil_log2(t) -> int:
    """Smallest k >= 0 with 2^k >= t, exact for int, float and Fraction.

    The float estimate is corrected by exact comparisons so that values of t
    that are exactly a power of two map to that power (no log2 rounding
    hazards at the boundaries).
    """
    k = max(0, math.ceil(math.log2(float(t))))
    while k > 0 and (1 << (k - 1)) >= t:
        k -= 1
    while (1 << k) < t:
        k += 1
    return k


def stripe_size(r, n: int):
    """Stripe size for a VOQ of rate r in an N-port switch:
    min(N, 2^ceil(log2(r * N^2))), clamped to [1, N].

    An idle VOQ (r = 0) gets the minimal size 1: the rule's logarithm is
    undefined there and an empty VOQ imposes no load either way.  Accepts
    Fraction rates for exact arithmetic.
    """
    if r < 0:
        raise ValueError(f"rate must be nonnegative, got {r}")
    if not is_power_of_two(n):
        raise ValueError(f"n must be a power of two, got {n}")
    if r == 0:
        return 1
    t = r * n * n
    k = min(_ceil_log2(t), n.bit_length() - 1)
    return 1 << k


def load_per_share(r, n: int):
    """Traffic a VOQ of rate r imposes on each port of its stripe interval."""
    return r / stripe_size(r, n)


def dyadic_interval(primary: int, size: int, n: int) -> StripeInterval:
    """The unique dyadic interval of the given size containing `primary`."""
    if not is_power_of_two(size) or n % size != 0:
        raise ValueError(f"size {size} must be a power of two dividing {n}")
    if not (1 <= primary <= n):
        raise ValueError(f"primary port {primary} out of range 1..{n}")
    m = (primary - 1) // size
    return StripeInterval(lo=m * size, hi=(m + 1) * size)


def random_permutation(n: int, rng: SplitMix64) -> list[int]:
    """Uniform random permutation of {1..n} (Fisher-Yates)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    perm = list(range(1, n + 1))
    rng.shuffle(perm)
    return perm


@dataclass(frozen=True)
class OlsMatrix:
    """N x N orthogonal Latin square of primary ports: a[i-1][j-1] is the
    primary intermediate port of VOQ (input i -> output j)."""

    n: int
    a: np.ndarray

    def primary(self, i: int, j: int) -> int:
        return int(self.a[i - 1, j - 1])


def weak_ols(n: int, rng: SplitMix64) -> OlsMatrix:
    """Weakly uniform random OLS in O(N log N) random bits.

    Two independent uniform permutations sigma_R (drawn first) and sigma_C
    give a(i, j) = ((sigma_R(i) + sigma_C(j)) mod N) + 1.  Every row and
    every column is then a uniform random permutation marginally, which is
    all the load-balancing argument needs; nothing is claimed about the
    joint distribution.
    """
    sig_r = np.array(random_permutation(n, rng), dtype=np.int64)
    sig_c = np.array(random_permutation(n, rng), dtype=np.int64)
    a = (sig_r[:, None] + sig_c[None, :]) % n + 1
    return OlsMatrix(n=n, a=a)


def ols_from_permutations(sigma_r, sigma_c) -> OlsMatrix:
    """Deterministic variant of weak_ols for known generator permutations."""
    sig_r = np.asarray(sigma_r, dtype=np.int64)
    sig_c = np.asarray(sigma_c, dtype=np.int64)
    n = len(sig_r)
    a = (sig_r[:, None] + sig_c[None, :]) % n + 1
    return OlsMatrix(n=n, a=a)


def verify_ols(m) -> bool:
    """True iff every row and every column is a permutation of {1..N}."""
    a = m.a if isinstance(m, OlsMatrix) else np.asarray(m)
    n = a.shape[0]
    if a.shape != (n, n):
        return False
    expect = np.arange(1, n + 1)
    rows_ok = bool((np.sort(a, axis=1) == expect[None, :]).all())
    cols_ok = bool((np.sort(a, axis=0) == expect[:, None]).all())
    return rows_ok and cols_ok


@dataclass(frozen=True)
class RateMatrix:
    """Arrival rates r[i-1][j-1] (packets/slot) for all N^2 VOQs.  Admissible
    traffic has every row sum and column sum <= 1."""

    r: np.ndarray

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        if (self.r < 0).any():
            raise ValueError("rates must be nonnegative")
        if (self.r.sum(axis=1) > 1 + tol).any() or (self.r.sum(axis=0) > 1 + tol).any():
            raise ValueError("inadmissible traffic: a row or column sum exceeds 1")

    @classmethod
    def from_csv(cls, path) -> "RateMatrix":
        r = np.loadtxt(path, delimiter=",", dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"rate matrix in {path} must be square")
        m = cls(r=r)
        m.validate()
        return m


def rate_matrix_for(traffic: TrafficSpec, n: int) -> RateMatrix:
    """True per-VOQ rates implied by a traffic spec ("oracle rates")."""
    rho = traffic.load
    if traffic.dest_dist is DestDist.UNIFORM:
        r = np.full((n, n), rho / n)
    else:
        off = rho / (2 * (n - 1))
        r = np.full((n, n), off)
        np.fill_diagonal(r, rho / 2)
    return RateMatrix(r=r)


@dataclass
class IntervalTable:
    """Per-VOQ striping state: size f, load-per-share s and interval.

    Stored as dense arrays indexed [i-1, j-1]; `interval(i, j)` materializes
    the StripeInterval on demand.
    """

    n: int
    f: np.ndarray        # int, stripe sizes
    s: np.ndarray        # float, load-per-share
    lo: np.ndarray       # int, interval lower bounds (interval is (lo, lo+f])
    primary: np.ndarray  # int, primary ports (placement stays fixed on resize)

    def interval(self, i: int, j: int) -> StripeInterval:
        lo = int(self.lo[i - 1, j - 1])
        return StripeInterval(lo=lo, hi=lo + int(self.f[i - 1, j - 1]))

    def size(self, i: int, j: int) -> int:
        return int(self.f[i - 1, j - 1])


def assign_intervals(rates: RateMatrix, ols: OlsMatrix) -> IntervalTable:
    """Compose sizing and placement for every VOQ."""
    n = rates.n
    if ols.n != n:
        raise ValueError(f"rate matrix is {n}x{n} but OLS is {ols.n}x{ols.n}")
    rates.validate()
    f = np.empty((n, n), dtype=np.int64)
    s = np.empty((n, n), dtype=float)
    lo = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            r = float(rates.r[i, j])
            fi = stripe_size(r, n)
            f[i, j] = fi
            s[i, j] = r / fi
            lo[i, j] = ((int(ols.a[i, j]) - 1) // fi) * fi
    return IntervalTable(n=n, f=f, s=s, lo=lo, primary=ols.a.copy())


# ---------------------------------------------------------------------------
# Online rate measurement and stripe resizing (measurement mode)
# ---------------------------------------------------------------------------


@dataclass
class EwmaRateEstimator:
    """Exponentially weighted per-slot arrival-rate estimate.

    Decay is applied lazily: between observations the estimate only shrinks
    geometrically, so `update` cost is O(arrivals) rather than O(slots).
    """

    half_life: int
    rate: float = 0.0
    _last_slot: int = -1
    _lam: float = field(init=False)

    def __post_init__(self) -> None:
        if self.half_life < 1:
            raise ValueError("half_life must be >= 1 slot")
        self._lam = 1.0 - 2.0 ** (-1.0 / self.half_life)

    def _decay_to(self, slot: int) -> None:
        if self._last_slot >= 0 and slot > self._last_slot:
            self.rate *= (1.0 - self._lam) ** (slot - self._last_slot)
        self._last_slot = max(self._last_slot, slot)

    def observe_arrival(self, slot: int) -> None:
        self._decay_to(slot)
        self.rate += self._lam

    def value(self, slot: int) -> float:
        self._decay_to(slot)
        return self.rate


@dataclass
class ResizeController:
    """Hysteretic doubling/halving of one VOQ's stripe size.

    The size doubles only after the measured rate has exceeded the doubling
    threshold f/N^2 by the hysteresis factor for one full measurement window
    (one estimator half-life), and halves symmetrically.  A triggered resize
    first raises a barrier: the VOQ stops forming stripes until every
    in-flight stripe of the old size has left the intermediate stage, which
    is what keeps old-size and new-size stripes from interleaving (and hence
    reordering) during the change.
    """

    n: int
    size: int
    hysteresis: float = 1.25
    window: int = 1024

    pending_size: Optional[int] = None
    _streak_start: int = -1
    _streak_dir: int = 0  # +1 doubling streak, -1 halving streak

    def _target_dir(self, rate: float) -> int:
        a2 = self.n * self.n
        if self.size < self.n and rate > self.hysteresis * (self.size / a2):
            return +1
        if self.size > 1 and rate * self.hysteresis < (self.size / 2) / a2:
            return -1
        return 0

    def observe(self, rate: float, slot: int) -> bool:
        """Feed one rate reading; returns True when a resize triggers (the
        caller must then hold stripe formation until `barrier_cleared`)."""
        if self.pending_size is not None:
            return False
        d = self._target_dir(rate)
        if d == 0 or d != self._streak_dir:
            self._streak_dir = d
            self._streak_start = slot if d != 0 else -1
            return False
        if slot - self._streak_start >= self.window:
            self.pending_size = self.size * 2 if d > 0 else self.size // 2
            self._streak_dir = 0
            self._streak_start = -1
            return True
        return False

    def barrier_cleared(self) -> int:
        """Apply the pending size once the VOQ's in-flight count hit zero."""
        if self.pending_size is None:
            raise RuntimeError("no resize pending")
        self.size = self.pending_size
        self.pending_size = None
        return self.size

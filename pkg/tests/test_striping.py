import collections
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sprinklers.model import DestDist, StripeInterval, TrafficSpec
from sprinklers.rng import SplitMix64
from sprinklers.striping import (
    EwmaRateEstimator,
    ResizeController,
    alpha,
    assign_intervals,
    dyadic_interval,
    load_per_share,
    ols_from_permutations,
    random_permutation,
    rate_matrix_for,
    stripe_size,
    verify_ols,
    weak_ols,
    RateMatrix,
)


# --- stripe_size -----------------------------------------------------------


def test_stripe_size_examples():
    assert stripe_size(Fraction(1, 64), 8) == 1   # 64 * 1/64 = 1, ceil(log2 1) = 0
    assert stripe_size(Fraction(3, 64), 8) == 4   # 64r = 3, ceil(log2 3) = 2
    assert stripe_size(0.2, 8) == 8               # r > 1/N: size is N
    assert stripe_size(0, 8) == 1                 # idle VOQ gets minimal size


def test_stripe_size_exact_power_boundaries():
    # r*N^2 exactly a power of two maps to that power, not the next one.
    assert stripe_size(Fraction(4, 64), 8) == 4
    assert stripe_size(Fraction(8, 64), 8) == 8
    assert stripe_size(4 / 64, 8) == 4
    # just above the boundary doubles
    assert stripe_size(Fraction(4, 64) + Fraction(1, 10**9), 8) == 8


def test_stripe_size_clamps_to_valid_range():
    assert stripe_size(1e-12, 8) == 1           # tiny rates never go below 1
    assert stripe_size(0.999, 8) == 8           # never above N
    with pytest.raises(ValueError):
        stripe_size(-0.1, 8)
    with pytest.raises(ValueError):
        stripe_size(0.1, 12)


@given(
    n_exp=st.integers(min_value=1, max_value=13),
    num=st.integers(min_value=0, max_value=10**6),
)
def test_stripe_size_is_power_of_two_in_range(n_exp, num):
    n = 1 << n_exp
    r = Fraction(num, 10**6)
    f = stripe_size(r, n)
    assert 1 <= f <= n and (f & (f - 1)) == 0
    if r > 0 and f < n:
        # defining property of the rule: f is the least power of two >= r*N^2
        assert f >= r * n * n and f < 2 * r * n * n or f == 1


def test_load_per_share_examples():
    assert load_per_share(Fraction(1, 64), 8) == Fraction(1, 64)
    s = load_per_share(Fraction(3, 64), 8)
    assert s == Fraction(3, 256)
    assert Fraction(1, 128) < s <= Fraction(1, 64)  # inside (alpha/2, alpha]
    assert load_per_share(0, 8) == 0


@given(num=st.integers(min_value=1, max_value=999))
def test_load_per_share_band(num):
    # Size 1 (possibly clamped): s in [0, 1/N^2].  Sizes 2..N/2: the rule
    # guarantees s in (1/(2N^2), 1/N^2].  Size N: s <= 1/N by admissibility.
    n = 16
    r = Fraction(num, 1000)
    f = stripe_size(r, n)
    s = load_per_share(r, n)
    if f == 1:
        assert s <= Fraction(1, n * n)
    elif f < n:
        assert Fraction(1, 2 * n * n) < s <= Fraction(1, n * n)
        assert f >= r * n * n and f < 2 * r * n * n
    else:
        assert s <= Fraction(1, n)


# --- dyadic intervals ------------------------------------------------------


def test_dyadic_interval_examples():
    assert dyadic_interval(1, 4, 8) == StripeInterval(0, 4)
    assert dyadic_interval(5, 1, 8) == StripeInterval(4, 5)
    assert dyadic_interval(7, 8, 8) == StripeInterval(0, 8)


def test_dyadic_interval_rejects_bad_args():
    with pytest.raises(ValueError):
        dyadic_interval(1, 3, 8)
    with pytest.raises(ValueError):
        dyadic_interval(0, 2, 8)
    with pytest.raises(ValueError):
        dyadic_interval(9, 2, 8)


# --- permutations and the OLS ---------------------------------------------


def test_random_permutation_determinism():
    assert random_permutation(1, SplitMix64(3)) == [1]
    a = random_permutation(4, SplitMix64(42))
    b = random_permutation(4, SplitMix64(42))
    assert a == b
    assert sorted(a) == [1, 2, 3, 4]


def test_random_permutation_uniform_chi_square():
    # 10^5 draws at n=4: each of the 24 permutations within 3 sigma of 1/24.
    draws = 100_000
    rng = SplitMix64(2024)
    counts = collections.Counter(tuple(random_permutation(4, rng)) for _ in range(draws))
    assert len(counts) == 24
    expect = draws / 24
    sigma = (draws * (1 / 24) * (23 / 24)) ** 0.5
    for c in counts.values():
        assert abs(c - expect) <= 3.5 * sigma
    # chi-square with 23 dof: p > 0.999 cutoff ~ 49.7
    chi2 = sum((c - expect) ** 2 / expect for c in counts.values())
    assert chi2 < 49.7


def test_weak_ols_hand_example():
    m = ols_from_permutations([2, 4, 1, 3], [1, 3, 2, 4])
    assert list(m.a[0]) == [4, 2, 1, 3]
    assert list(m.a[:, 0]) == [4, 2, 3, 1]
    assert verify_ols(m)


def test_weak_ols_identity_2x2():
    m = ols_from_permutations([1, 2], [1, 2])
    assert m.a.tolist() == [[1, 2], [2, 1]]


def test_verify_ols_rejects_column_repeat():
    assert verify_ols(np.array([[1, 2], [2, 1]]))
    assert not verify_ols(np.array([[1, 2], [1, 2]]))


def test_weak_ols_always_valid_many_seeds():
    # Construction guarantees rows/columns are permutations; exercise 1000 seeds.
    for seed in range(1000):
        assert verify_ols(weak_ols(64, SplitMix64(seed)))


def test_weak_ols_row_marginal_uniformity():
    # Row 1 of the OLS, over many seeds, is itself a uniform random permutation.
    draws = 50_000
    counts = collections.Counter()
    for seed in range(draws):
        m = weak_ols(4, SplitMix64(seed))
        counts[tuple(int(x) for x in m.a[0])] += 1
    assert len(counts) == 24
    expect = draws / 24
    sigma = (draws * (1 / 24) * (23 / 24)) ** 0.5
    for c in counts.values():
        assert abs(c - expect) <= 4 * sigma


# --- interval assignment ---------------------------------------------------


def test_assign_intervals_all_zero_rates():
    n = 8
    ols = weak_ols(n, SplitMix64(5))
    table = assign_intervals(RateMatrix(np.zeros((n, n))), ols)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            assert table.size(i, j) == 1
            assert table.interval(i, j) == dyadic_interval(ols.primary(i, j), 1, n)


def test_assign_intervals_high_rate_voq_gets_full_range():
    n = 8
    r = np.zeros((n, n))
    r[0, 0] = 0.5  # > 1/N
    table = assign_intervals(RateMatrix(r), weak_ols(n, SplitMix64(1)))
    assert table.size(1, 1) == n
    assert table.interval(1, 1) == StripeInterval(0, n)


def test_assign_intervals_primary_one_size_four():
    n = 8
    sig = [n] + list(range(1, n))  # sigma(1) = 8, so a[0][0] = (8+8) mod 8 + 1 = 1
    ols = ols_from_permutations(sig, sig)
    assert ols.primary(1, 1) == 1
    r = np.zeros((n, n))
    r[0, 0] = 3 / 64  # size 4
    table = assign_intervals(RateMatrix(r), ols)
    assert table.interval(1, 1) == StripeInterval(0, 4)


def test_assign_intervals_rejects_inadmissible():
    n = 4
    r = np.full((n, n), 0.3)  # row sums 1.2
    with pytest.raises(ValueError):
        assign_intervals(RateMatrix(r), weak_ols(n, SplitMix64(0)))


def test_assign_intervals_deterministic():
    n = 16
    rates = rate_matrix_for(TrafficSpec(0.6, DestDist.DIAGONAL), n)
    ols = weak_ols(n, SplitMix64(77))
    t1 = assign_intervals(rates, ols)
    t2 = assign_intervals(rates, ols)
    assert (t1.f == t2.f).all() and (t1.lo == t2.lo).all()


def test_rate_matrix_for_diagonal_sums():
    n = 32
    m = rate_matrix_for(TrafficSpec(0.9, DestDist.DIAGONAL), n)
    assert np.allclose(m.r.sum(axis=1), 0.9)
    assert np.allclose(m.r.sum(axis=0), 0.9)
    assert m.r[3, 3] == pytest.approx(0.45)
    assert m.r[3, 4] == pytest.approx(0.9 / 62)


def test_rate_matrix_csv_roundtrip(tmp_path):
    n = 4
    m = rate_matrix_for(TrafficSpec(0.5), n)
    path = tmp_path / "rates.csv"
    np.savetxt(path, m.r, delimiter=",")
    again = RateMatrix.from_csv(path)
    assert np.allclose(again.r, m.r)


# --- measurement mode helpers ----------------------------------------------


def test_ewma_converges_to_true_rate():
    est = EwmaRateEstimator(half_life=500)
    rng = SplitMix64(11)
    rate = 0.2
    for t in range(20_000):
        if rng.random() < rate:
            est.observe_arrival(t)
    assert est.value(20_000) == pytest.approx(rate, rel=0.25)


def test_ewma_decays_to_zero():
    est = EwmaRateEstimator(half_life=100)
    est.observe_arrival(0)
    assert est.value(5000) < 1e-10


def test_resize_controller_doubles_after_sustained_window():
    n = 8
    ctl = ResizeController(n=n, size=2, hysteresis=1.25, window=100)
    high = 1.5 * 2 / (n * n)  # above hysteresis * f/N^2
    assert not ctl.observe(high, 0)
    assert not ctl.observe(high, 50)
    assert ctl.observe(high, 101)
    assert ctl.pending_size == 4
    # barrier: no further trigger until cleared, then size applies
    assert not ctl.observe(high, 300)
    assert ctl.barrier_cleared() == 4
    assert ctl.size == 4


def test_resize_controller_streak_resets_when_rate_dips():
    n = 8
    ctl = ResizeController(n=n, size=2, hysteresis=1.25, window=100)
    high = 1.5 * 2 / (n * n)
    mid = 1.0 * 2 / (n * n)  # inside the hysteresis band: no resize direction
    assert not ctl.observe(high, 0)
    assert not ctl.observe(mid, 60)   # streak broken
    assert not ctl.observe(high, 70)
    assert not ctl.observe(high, 150)
    assert ctl.observe(high, 171)


def test_resize_controller_halves_symmetrically():
    n = 8
    ctl = ResizeController(n=n, size=4, hysteresis=1.25, window=10)
    low = 0.5 * (2 / (n * n))  # well below halving threshold / hysteresis
    assert not ctl.observe(low, 0)
    assert ctl.observe(low, 11)
    assert ctl.pending_size == 2


def test_alpha_value():
    assert alpha(8) == pytest.approx(1 / 64)

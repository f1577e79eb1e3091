import math

import numpy as np
import pytest
from scipy import optimize, stats

from oamqrng import entropy as ent


def binomial_upper_limit(k, n, alpha):
    """Independent oracle: solve P[Binom(n, p) <= k] = alpha for p by root finding."""
    if k >= n:
        return 1.0
    return optimize.brentq(lambda p: stats.binom.cdf(k, n, p) - alpha, k / n, 1.0, xtol=1e-15, rtol=1e-15)


def oracle_bound(counts, delta):
    n = sum(counts)
    return -math.log2(max(binomial_upper_limit(k, n, delta / len(counts)) for k in counts))


# -- min-entropy -------------------------------------------------------------


def test_min_entropy_examples():
    assert ent.min_entropy([0.25] * 4) == 2.0
    assert ent.min_entropy([1.0, 0, 0, 0]) == 0.0
    assert ent.min_entropy([0.4, 0.3, 0.2, 0.1]) == pytest.approx(-math.log2(0.4), abs=1e-15)
    assert ent.min_entropy([0.4, 0.3, 0.2, 0.1]) == pytest.approx(1.321928094887362, abs=1e-12)


def test_min_entropy_rejects_bad_input():
    for bad in ([], [0.5, 0.6], [-0.1, 1.1]):
        with pytest.raises(ValueError):
            ent.min_entropy(bad)


def test_min_entropy_range():
    rng = np.random.default_rng(1)
    for d in range(1, 9):
        for _ in range(20):
            p = rng.dirichlet(np.ones(d))
            p[-1] = 1 - p[:-1].sum()
            h = ent.min_entropy(np.clip(p, 0, None))
            assert 0 <= h <= math.log2(d) + 1e-12


# -- conditional min-entropy -------------------------------------------------


def part(*branches):
    return ent.SideInfoPartition(tuple((i, w, d) for i, (w, d) in enumerate(branches)))


def test_conditional_two_branch_example():
    p = part((0.5, [0.4, 0.3, 0.2, 0.1]), (0.5, [0.25] * 4))
    assert ent.conditional_min_entropy(p) == pytest.approx(-math.log2(0.325), abs=1e-12)
    assert ent.conditional_min_entropy(p) == pytest.approx(1.62148837674627, abs=1e-12)


def test_conditional_degenerate_cases():
    d = [0.4, 0.3, 0.2, 0.1]
    assert ent.conditional_min_entropy(part((1.0, d))) == ent.min_entropy(d)
    assert ent.conditional_min_entropy(part((0.3, [1, 0, 0]), (0.7, [0, 0, 1]))) == 0.0


def test_partition_rejects_bad_weights():
    with pytest.raises(ValueError):
        part((0.5, [0.5, 0.5]), (0.6, [0.5, 0.5]))
    with pytest.raises(ValueError):
        part((0.5, [0.5, 0.5]), (0.5, [1.0]))


def random_partition(rng, n_e, d):
    w = rng.dirichlet(np.ones(n_e))
    w[-1] = 1 - w[:-1].sum()
    dists = rng.dirichlet(np.ones(d), size=n_e)
    dists[:, -1] = 1 - dists[:, :-1].sum(axis=1)
    return [(float(a), np.clip(b, 0, None)) for a, b in zip(w, dists)]


def test_conditioning_never_increases_min_entropy():
    rng = np.random.default_rng(2)
    for _ in range(300):
        br = random_partition(rng, rng.integers(1, 6), rng.integers(2, 7))
        p = part(*br)
        assert ent.conditional_min_entropy(p) <= ent.min_entropy(p.marginal()) + 1e-12


def test_conditional_relabeling_invariance():
    rng = np.random.default_rng(3)
    for _ in range(100):
        br = random_partition(rng, 4, 5)
        h = ent.conditional_min_entropy(part(*br))
        perm_b = rng.permutation(5)
        perm_e = rng.permutation(4)
        shuffled = [(br[i][0], br[i][1][perm_b]) for i in perm_e]
        assert ent.conditional_min_entropy(part(*shuffled)) == pytest.approx(h, abs=1e-12)


# -- finite-sample bound -----------------------------------------------------


def test_upper_confidence_limit_matches_oracle():
    for k, n, a in ((0, 10, 0.05), (3, 10, 0.01), (2500, 10_000, 2.5e-11), (99, 100, 1e-6)):
        assert float(ent.upper_confidence_limit(k, n, a)) == pytest.approx(binomial_upper_limit(k, n, a), abs=1e-9)
    assert float(ent.upper_confidence_limit(5, 5, 0.01)) == 1.0


def test_bound_for_delta_counts_is_zero():
    for n in (1, 10, 12345):
        r = ent.empirical_hmin_bound(ent.EmpiricalDistribution((n, 0, 0, 0)), 1e-10)
        assert r.hmin_lower_bound == 0.0 and r.hmin_point == 0.0


def test_bound_never_exceeds_point_estimate():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        counts = rng.integers(0, rng.integers(1, 5000), size=d)
        counts[rng.integers(d)] += 1
        r = ent.empirical_hmin_bound(ent.EmpiricalDistribution(tuple(counts)), 10 ** -rng.uniform(1, 12))
        assert 0.0 <= r.hmin_lower_bound <= r.hmin_point <= math.log2(d) + 1e-12


def test_bound_balanced_2500_exact_value():
    counts = (2500,) * 4
    r = ent.empirical_hmin_bound(ent.EmpiricalDistribution(counts), 1e-10)
    assert r.hmin_point == 2.0
    assert r.hmin_lower_bound == pytest.approx(oracle_bound(counts, 1e-10), abs=1e-8)
    # 10^4 samples leave a confidence penalty of about 0.16 bits at this delta
    assert r.hmin_lower_bound == pytest.approx(1.8406, abs=1e-4)


def test_bound_balanced_enters_upper_band_and_converges():
    prev = 0.0
    for per in (2500, 10_000, 100_000, 1_000_000, 10_000_000):
        counts = (per,) * 4
        r = ent.empirical_hmin_bound(ent.EmpiricalDistribution(counts), 1e-10)
        assert r.hmin_lower_bound == pytest.approx(oracle_bound(counts, 1e-10), abs=1e-8)
        assert r.hmin_lower_bound > prev
        prev = r.hmin_lower_bound
        if per >= 10_000:
            assert 1.9 < r.hmin_lower_bound < 2.0
    assert 2.0 - prev < 3e-3


def test_bound_converges_on_nested_prefixes():
    rng = np.random.default_rng(5)
    sample = rng.choice(4, size=2_000_000, p=[0.4, 0.3, 0.2, 0.1])
    gaps = []
    for n in (10**3, 10**4, 10**5, 10**6, 2 * 10**6):
        r = ent.empirical_hmin_bound(ent.EmpiricalDistribution(tuple(np.bincount(sample[:n], minlength=4))), 1e-6)
        gaps.append(r.hmin_point - r.hmin_lower_bound)
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.01


def test_bound_rejects_bad_delta():
    for delta in (0, 1, -0.5, 2):
        with pytest.raises(ValueError):
            ent.empirical_hmin_bound(ent.EmpiricalDistribution((5, 5)), delta)


def test_empirical_distribution_validation():
    with pytest.raises(ValueError):
        ent.EmpiricalDistribution((0, 0))
    with pytest.raises(ValueError):
        ent.EmpiricalDistribution((3, -1))


def test_conditional_bound_single_branch_equals_plain_bound():
    dist = ent.EmpiricalDistribution((400, 300, 200, 100))
    a = ent.conditional_hmin_bound([dist], 1e-6)
    b = ent.empirical_hmin_bound(dist, 1e-6)
    assert a.hmin_point == pytest.approx(b.hmin_point, abs=1e-12)
    assert a.hmin_lower_bound == pytest.approx(b.hmin_lower_bound, abs=1e-12)


def test_conditional_bound_below_point():
    rng = np.random.default_rng(6)
    for _ in range(100):
        branches = [ent.EmpiricalDistribution(tuple(rng.integers(1, 1000, 4))) for _ in range(rng.integers(1, 5))]
        r = ent.conditional_hmin_bound(branches, 1e-10)
        assert 0 <= r.hmin_lower_bound <= r.hmin_point <= 2.0


def test_report_rate_and_dict_round_trip():
    r = ent.EntropyReport(1.99, 1.96, 1e-10, 1000, 4, 3)
    assert r.bits_per_symbol == 2
    assert r.rate_per_bit == pytest.approx(0.98)
    assert ent.EntropyReport.from_dict({k: str(v) for k, v in r.as_dict().items()}) == r
    assert [ent.bits_per_symbol(d) for d in (1, 2, 3, 4, 5, 8, 9)] == [1, 1, 2, 2, 3, 3, 4]


def test_power_partition_pools_blocks():
    rng = np.random.default_rng(7)
    codes = rng.choice([1, 2, 3, 4, 0xFF], size=65536 * 8).astype(np.uint8)
    labels, branches = ent.power_partition(codes, 4, 65536, 4)
    assert len(labels) == len(branches) <= 4
    total = sum(b.total for b in branches)
    assert total == int(np.count_nonzero(codes <= 4))
    one = ent.power_partition(codes, 4, 65536, 1)[1]
    assert len(one) == 1 and one[0].counts == tuple(np.bincount(codes[codes <= 4], minlength=5)[1:])

"""Statistical test battery for extracted bit streams.

The tests follow the statistics of NIST SP 800-22 rev. 1a.  Reference class
probabilities (longest run, matrix rank, overlapping template) are computed
exactly instead of taken from the rounded published tables.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special, stats

ALPHA = 0.01
BATTERY_MIN_BITS = 1_000_000
CAVEAT = (
    "Statistical tests can only reject a generator. Passing them is a "
    "prerequisite, not evidence of quantum origin or unpredictability."
)


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    n_bits: int

    __test__ = False  # not a pytest class

    @property
    def passed(self) -> bool:
        return self.p_value >= ALPHA


@dataclass(frozen=True)
class TestReport:
    entries: tuple

    __test__ = False

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def by_name(self) -> dict:
        return {e.name: e for e in self.entries}

    def failures(self) -> list:
        return [e.name for e in self.entries if not e.passed]


def _bits(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size and b.max() > 1:
        raise ValueError("bit stream must contain only 0 and 1")
    return b


def _need(name: str, n: int, minimum: int) -> None:
    if n < minimum:
        raise InsufficientDataError(f"{name} needs at least {minimum} bits, got {n}")


def _igamc(a, x) -> float:
    return float(special.gammaincc(a, x))


def _clip(p: float) -> float:
    return min(1.0, max(0.0, float(p)))


# -- individual tests --------------------------------------------------------


def monobit(bits) -> TestResult:
    b = _bits(bits)
    n = b.size
    _need("monobit", n, 100)
    s = 2 * int(b.sum()) - n
    stat = abs(s) / math.sqrt(n)
    return TestResult("monobit", stat, _clip(math.erfc(stat / math.sqrt(2))), n)


def block_frequency(bits, block: int = 128) -> TestResult:
    b = _bits(bits)
    _need("block_frequency", b.size, max(100, block))
    nblocks = b.size // block
    pi = b[: nblocks * block].reshape(nblocks, block).mean(axis=1)
    chi2 = 4.0 * block * float(np.sum((pi - 0.5) ** 2))
    return TestResult("block_frequency", chi2, _clip(_igamc(nblocks / 2, chi2 / 2)), nblocks * block)


def runs(bits) -> TestResult:
    """Total number of runs.  Fails outright when the monobit prerequisite fails."""
    b = _bits(bits)
    n = b.size
    _need("runs", n, 100)
    pi = b.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestResult("runs", float("nan"), 0.0, n)
    v = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return TestResult("runs", float(v), _clip(math.erfc(num / den)), n)


@lru_cache(maxsize=None)
def _longest_run_cdf(block: int, r: int) -> float:
    """P(longest run of ones in ``block`` fair bits <= r), by dynamic programming."""
    state = np.zeros(r + 1)
    state[0] = 1.0
    for _ in range(block):
        nxt = np.zeros(r + 1)
        nxt[0] = 0.5 * state.sum()
        nxt[1:] = 0.5 * state[:-1]
        state = nxt
    return float(state.sum())


def longest_run_probabilities(block: int, lo: int, hi: int) -> np.ndarray:
    """Class probabilities for longest run ``<= lo``, ``lo+1``, ..., ``>= hi``."""
    cdf = [_longest_run_cdf(block, r) for r in range(lo, hi)]
    probs = [cdf[0]] + [cdf[k] - cdf[k - 1] for k in range(1, len(cdf))] + [1.0 - cdf[-1]]
    return np.array(probs)


_LONGEST_RUN_PARAMS = [  # (min n, block, lowest class, highest class)
    (750_000, 10_000, 10, 16),
    (6_272, 128, 4, 9),
    (128, 8, 1, 4),
]


def longest_run(bits) -> TestResult:
    b = _bits(bits)
    n = b.size
    _need("longest_run", n, 128)
    block, lo, hi = next((m, lo, hi) for nmin, m, lo, hi in _LONGEST_RUN_PARAMS if n >= nmin)
    nblocks = n // block
    x = b[: nblocks * block].reshape(nblocks, block).astype(np.int32)
    # longest run of ones per row: cumulative count reset at zeros
    run = np.zeros(nblocks, dtype=np.int32)
    longest = np.zeros(nblocks, dtype=np.int32)
    for j in range(block):
        run = (run + 1) * x[:, j]
        np.maximum(longest, run, out=longest)
    classes = np.clip(longest, lo, hi) - lo
    observed = np.bincount(classes, minlength=hi - lo + 1)
    expected = nblocks * longest_run_probabilities(block, lo, hi)
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    k = hi - lo
    return TestResult("longest_run", chi2, _clip(_igamc(k / 2, chi2 / 2)), nblocks * block)


def rank_probabilities(rows: int = 32, cols: int = 32) -> np.ndarray:
    """Probabilities of full rank, rank - 1 and lower for a random binary matrix."""

    def p(r):
        prod = 1.0
        for i in range(r):
            prod *= (1 - 2.0 ** (i - cols)) * (1 - 2.0 ** (i - rows)) / (1 - 2.0 ** (i - r))
        return 2.0 ** (r * (rows + cols - r) - rows * cols) * prod

    full = min(rows, cols)
    pf, pf1 = p(full), p(full - 1)
    return np.array([pf, pf1, 1.0 - pf - pf1])


def gf2_ranks(matrices: np.ndarray) -> np.ndarray:
    """GF(2) ranks of a stack of square 0/1 matrices of size <= 64."""
    mats = np.asarray(matrices, dtype=np.uint8)
    count, size, _ = mats.shape
    weights = np.uint64(1) << np.arange(size - 1, -1, -1, dtype=np.uint64)
    rows = (mats.astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
    used = np.zeros((count, size), dtype=bool)
    idx = np.arange(count)
    for c in range(size):
        bit = np.uint64(1) << np.uint64(size - 1 - c)
        has = (rows & bit) != 0
        cand = has & ~used
        ok = cand.any(axis=1)
        piv = np.argmax(cand, axis=1)
        prow = np.where(ok, rows[idx, piv], np.uint64(0))
        used[idx[ok], piv[ok]] = True
        clear = has.copy()
        clear[idx, piv] = False
        rows ^= np.where(clear & ok[:, None], prow[:, None], np.uint64(0))
    return used.sum(axis=1)


def matrix_rank(bits, size: int = 32) -> TestResult:
    b = _bits(bits)
    per = size * size
    _need("matrix_rank", b.size, 38 * per)
    count = b.size // per
    ranks = gf2_ranks(b[: count * per].reshape(count, size, size))
    observed = np.array([np.sum(ranks == size), np.sum(ranks == size - 1), np.sum(ranks < size - 1)])
    expected = count * rank_probabilities(size, size)
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    return TestResult("matrix_rank", chi2, _clip(math.exp(-chi2 / 2)), count * per)


def _pattern_counts(b: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return np.array([b.size])
    ext = np.concatenate([b, b[: m - 1]]).astype(np.int64)
    n = b.size
    v = np.zeros(n, dtype=np.int64)
    for k in range(m):
        v = (v << 1) | ext[k: k + n]
    return np.bincount(v, minlength=1 << m)


def _psi2(b: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    counts = _pattern_counts(b, m).astype(float)
    return float((2.0 ** m) / b.size * np.sum(counts ** 2) - b.size)


def serial(bits, m: int) -> tuple[TestResult, TestResult]:
    """Both serial-test p-values for pattern length ``m``."""
    b = _bits(bits)
    n = b.size
    _need(f"serial_m{m}", n, 1 << (m + 3))
    p0, p1, p2 = _psi2(b, m), _psi2(b, m - 1), _psi2(b, m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return (
        TestResult(f"serial_m{m}_p1", d1, _clip(_igamc(2.0 ** (m - 2), d1 / 2)), n),
        TestResult(f"serial_m{m}_p2", d2, _clip(_igamc(2.0 ** (m - 3), d2 / 2)), n),
    )


def approximate_entropy(bits, m: int = 2) -> TestResult:
    b = _bits(bits)
    n = b.size
    _need("approximate_entropy", n, 1 << (m + 6))

    def phi(k):
        c = _pattern_counts(b, k) / n
        c = c[c > 0]
        return float(np.sum(c * np.log(c)))

    apen = phi(m) - phi(m + 1)
    chi2 = 2 * n * (math.log(2) - apen)
    return TestResult("approximate_entropy", chi2, _clip(_igamc(2.0 ** (m - 1), chi2 / 2)), n)


def _cusum_p(z: float, n: int) -> float:
    if z == 0:
        return 1.0
    sq = math.sqrt(n)
    k1 = np.arange(math.trunc((-n / z + 1) / 4), math.trunc((n / z - 1) / 4) + 1)
    k2 = np.arange(math.trunc((-n / z - 3) / 4), math.trunc((n / z - 1) / 4) + 1)
    cdf = stats.norm.cdf
    s1 = np.sum(cdf((4 * k1 + 1) * z / sq) - cdf((4 * k1 - 1) * z / sq))
    s2 = np.sum(cdf((4 * k2 + 3) * z / sq) - cdf((4 * k2 + 1) * z / sq))
    return _clip(1.0 - s1 + s2)


def cumulative_sums(bits, reverse: bool = False) -> TestResult:
    b = _bits(bits)
    n = b.size
    name = "cusum_backward" if reverse else "cusum_forward"
    _need(name, n, 100)
    x = 2 * b.astype(np.int64) - 1
    if reverse:
        x = x[::-1]
    z = float(np.abs(np.cumsum(x)).max())
    return TestResult(name, z, _cusum_p(z, n), n)


def autocorrelation(bits, lag: int) -> TestResult:
    b = _bits(bits)
    n = b.size
    name = f"autocorrelation_lag{lag}"
    _need(name, n, max(100, lag + 100))
    k = n - lag
    a = int(np.count_nonzero(b[:k] != b[lag:]))
    z = (2 * a - k) / math.sqrt(k)
    return TestResult(name, z, _clip(math.erfc(abs(z) / math.sqrt(2))), n)


@lru_cache(maxsize=None)
def overlapping_template_probabilities(block: int = 1032, m: int = 9, classes: int = 6) -> np.ndarray:
    """Exact probabilities of 0..classes-2 and >= classes-1 overlapping hits of ``1**m``.

    Dynamic programming over (trailing run of ones capped at ``m - 1``, hits so far).
    """
    top = classes - 1
    state = np.zeros((m, classes))
    state[0, 0] = 1.0
    for _ in range(block):
        nxt = np.zeros_like(state)
        nxt[0] += 0.5 * state.sum(axis=0)
        nxt[1:m] += 0.5 * state[: m - 1]
        # a one after m-1 ones completes a hit and keeps the run at m-1
        full = 0.5 * state[m - 1]
        nxt[m - 1, 1:] += full[:-1]
        nxt[m - 1, top] += full[top]
        state = nxt
    return state.sum(axis=0)


def overlapping_template(bits, m: int = 9, block: int = 1032) -> TestResult:
    b = _bits(bits)
    _need("overlapping_template", b.size, 1_000_000)
    nblocks = b.size // block
    x = b[: nblocks * block].reshape(nblocks, block).astype(np.int32)
    c = np.cumsum(x, axis=1)
    c = np.concatenate([np.zeros((nblocks, 1), dtype=c.dtype), c], axis=1)
    hits = np.sum((c[:, m:] - c[:, :-m]) == m, axis=1)
    classes = 6
    observed = np.bincount(np.minimum(hits, classes - 1), minlength=classes)
    expected = nblocks * overlapping_template_probabilities(block, m, classes)
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    return TestResult("overlapping_template", chi2, _clip(_igamc((classes - 1) / 2, chi2 / 2)), nblocks * block)


# -- battery -----------------------------------------------------------------

_BATTERY = (
    lambda b: [monobit(b)],
    lambda b: [block_frequency(b, 128)],
    lambda b: [runs(b)],
    lambda b: [longest_run(b)],
    lambda b: [matrix_rank(b, 32)],
    lambda b: list(serial(b, 2)),
    lambda b: list(serial(b, 3)),
    lambda b: [approximate_entropy(b, 2)],
    lambda b: [cumulative_sums(b), cumulative_sums(b, reverse=True)],
    lambda b: [autocorrelation(b, 1)],
    lambda b: [autocorrelation(b, 2)],
    lambda b: [autocorrelation(b, 8)],
    lambda b: [overlapping_template(b, 9)],
)


def run_battery(bits, workers: int = 1) -> TestReport:
    """Run the full battery; needs at least ``BATTERY_MIN_BITS`` bits."""
    b = _bits(bits)
    _need("battery", b.size, BATTERY_MIN_BITS)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            groups = list(pool.map(lambda f: f(b), _BATTERY))
    else:
        groups = [f(b) for f in _BATTERY]
    return TestReport(tuple(e for g in groups for e in g))


def p_value_uniformity(reports: Sequence[TestReport], min_reports: int = 20) -> dict:
    """Kolmogorov-Smirnov p-value for uniformity of each test's first-level p-values."""
    if len(reports) < min_reports:
        raise InsufficientDataError(f"need at least {min_reports} reports, got {len(reports)}")
    names = [e.name for e in reports[0].entries]
    out = {}
    for name in names:
        ps = np.array([r.by_name()[name].p_value for r in reports])
        out[name] = float(stats.kstest(ps, "uniform").pvalue)
    return out


# -- rendering ---------------------------------------------------------------


def format_table(report: TestReport) -> str:
    lines = [f"{'test':<24}{'statistic':>16}{'p-value':>12}  result", "-" * 60]
    for e in report.entries:
        lines.append(
            f"{e.name:<24}{e.statistic:>16.6g}{e.p_value:>12.6f}  {'PASS' if e.passed else 'FAIL'}"
        )
    lines.append("-" * 60)
    lines.append(f"{sum(e.passed for e in report.entries)}/{len(report.entries)} passed at alpha={ALPHA}")
    lines.append(CAVEAT)
    return "\n".join(lines) + "\n"


def format_records(report: TestReport, prefix: str = "battery") -> str:
    lines = []
    for e in report.entries:
        lines.append(
            f"{prefix}.{e.name} statistic={float(e.statistic)!r} p_value={float(e.p_value)!r} "
            f"pass={int(e.passed)} bits={e.n_bits}"
        )
    return "\n".join(lines) + "\n"

"""Min-entropy and classically conditioned min-entropy of symbol statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

NORM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalDistribution:
    counts: tuple

    def __post_init__(self):
        c = tuple(int(x) for x in self.counts)
        if not c or any(x < 0 for x in c):
            raise ValueError("counts must be nonnegative")
        if sum(c) < 1:
            raise ValueError("need at least one sample")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def probs(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.total


@dataclass(frozen=True)
class SideInfoPartition:
    """Branches ``(label, weight, distribution)`` of a classical side-information variable.

    A branch distribution is either an :class:`EmpiricalDistribution` or a
    probability vector.
    """

    branches: tuple

    def __post_init__(self):
        if not self.branches:
            raise ValueError("partition needs at least one branch")
        weights = np.array([w for _, w, _ in self.branches], dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"branch weights must be nonnegative and sum to 1 (sum={weights.sum()!r})")
        for label, _, dist in self.branches:
            p = _as_probs(dist)
            if len(p) != len(_as_probs(self.branches[0][2])):
                raise ValueError(f"branch {label!r} has a different outcome count")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w, _ in self.branches], dtype=float)

    def marginal(self) -> np.ndarray:
        return sum(w * _as_probs(dist) for _, w, dist in self.branches)


@dataclass(frozen=True)
class EntropyReport:
    hmin_point: float
    hmin_lower_bound: float
    delta: float
    n_samples: int
    d: int = 0
    n_branches: int = 1

    @property
    def bits_per_symbol(self) -> int:
        return bits_per_symbol(self.d)

    @property
    def rate_per_bit(self) -> float:
        """Lower-bound min-entropy per serialized raw bit."""
        return self.hmin_lower_bound / self.bits_per_symbol

    def as_dict(self) -> dict:
        return {
            "hmin_point": self.hmin_point,
            "hmin_lower_bound": self.hmin_lower_bound,
            "delta": self.delta,
            "n_samples": self.n_samples,
            "d": self.d,
            "n_branches": self.n_branches,
            "rate_per_bit": self.rate_per_bit,
        }

    @classmethod
    def from_dict(cls, kv: dict) -> "EntropyReport":
        return cls(
            hmin_point=float(kv["hmin_point"]),
            hmin_lower_bound=float(kv["hmin_lower_bound"]),
            delta=float(kv["delta"]),
            n_samples=int(kv["n_samples"]),
            d=int(kv["d"]),
            n_branches=int(kv.get("n_branches", 1)),
        )


def bits_per_symbol(d: int) -> int:
    return max(1, math.ceil(math.log2(d))) if d > 1 else 1


def _as_probs(dist) -> np.ndarray:
    if isinstance(dist, EmpiricalDistribution):
        return dist.probs
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a nonempty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"distribution is not normalized (sum={p.sum()!r})")
    return p


def min_entropy(dist) -> float:
    """``-log2`` of the largest outcome probability, in bits."""
    p = _as_probs(dist)
    return -math.log2(float(p.max())) + 0.0


def guessing_probability(part: SideInfoPartition) -> float:
    return float(sum(w * _as_probs(dist).max() for _, w, dist in part.branches))


def conditional_min_entropy(part: SideInfoPartition) -> float:
    """``-log2 sum_e P_E(e) max_b P(b | E=e)``."""
    return -math.log2(guessing_probability(part)) + 0.0


def upper_confidence_limit(k, n: int, alpha: float) -> np.ndarray:
    """One-sided Clopper-Pearson upper limit on a binomial proportion.

    The returned ``p`` satisfies ``P[Binom(n, p) <= k] = alpha`` (``1`` when ``k == n``).
    """
    k = np.asarray(k)
    ucl = stats.beta.ppf(1.0 - alpha, k + 1, n - k)
    return np.where(k >= n, 1.0, ucl)


def empirical_hmin_bound(dist: EmpiricalDistribution, delta: float) -> EntropyReport:
    """Point estimate and a (1 - delta) lower bound on the min-entropy.

    Each symbol probability is bounded above at confidence ``1 - delta/d``
    (Bonferroni over the ``d`` symbols); the bound is ``-log2`` of the largest
    upper limit.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta={delta} outside (0, 1)")
    d = len(dist.counts)
    point = min_entropy(dist.probs)
    ucl = upper_confidence_limit(dist.counts, dist.total, delta / d)
    lower = min(point, max(0.0, -math.log2(float(ucl.max())) + 0.0))
    return EntropyReport(point, lower, delta, dist.total, d)


def conditional_hmin_bound(branches: Sequence[EmpiricalDistribution], delta: float) -> EntropyReport:
    """Conditional min-entropy with branch weights taken from the sample counts.

    The confidence budget ``delta`` is split over every (branch, symbol) pair.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta={delta} outside (0, 1)")
    branches = [b for b in branches if b is not None]
    if not branches:
        raise ValueError("no populated branches")
    d = len(branches[0].counts)
    n = sum(b.total for b in branches)
    alpha = delta / (d * len(branches))
    point_guess = 0.0
    bound_guess = 0.0
    for b in branches:
        w = b.total / n
        point_guess += w * b.probs.max()
        bound_guess += w * float(upper_confidence_limit(b.counts, b.total, alpha).max())
    point = -math.log2(point_guess) + 0.0
    lower = min(point, max(0.0, -math.log2(min(1.0, bound_guess)) + 0.0))
    return EntropyReport(point, lower, delta, n, d, len(branches))


def power_partition(codes: np.ndarray, d: int, block_pulses: int = 65536, n_branches: int = 4):
    """Split a symbol stream into side-information branches by per-block detection rate.

    Pulses are grouped into consecutive blocks; each block's valid-symbol
    rate is a proxy for laser power in that block.  Blocks are binned into
    ``n_branches`` rate quantiles and each branch pools its blocks' symbol
    counts.  Returns ``(labels, [EmpiricalDistribution, ...])``; empty
    branches are dropped.
    """
    codes = np.asarray(codes)
    n_blocks = max(1, len(codes) // block_pulses)
    usable = codes[: n_blocks * block_pulses] if len(codes) >= block_pulses else codes
    blocks = np.array_split(usable, n_blocks)
    per_block = np.array(
        [np.bincount(b[(b >= 1) & (b <= d)], minlength=d + 1)[1:] for b in blocks]
    )
    rates = per_block.sum(axis=1) / np.array([len(b) for b in blocks])
    k = min(n_branches, n_blocks)
    if k > 1:
        edges = np.quantile(rates, np.linspace(0, 1, k + 1)[1:-1])
        which = np.searchsorted(edges, rates, side="right")
    else:
        which = np.zeros(n_blocks, dtype=int)
    labels, dists = [], []
    for e in range(k):
        counts = per_block[which == e].sum(axis=0)
        if counts.sum() > 0:
            labels.append(e)
            dists.append(EmpiricalDistribution(tuple(counts)))
    return labels, dists

"""Seeded multi-input analysis: ambiguity sets, tamper detection and a guessing bound.

The preparation (input mode ``M_i`` chosen by a seed) is trusted; the
measurement device is not.  The adversary may alter the reported outcome
statistics, but only within a total-variation tolerance of the expected
per-input rows, since larger deviations are caught by :func:`tamper_test`.

Guessing model used by :func:`adversary_guess_bound`
-----------------------------------------------------
The adversary learns the input after the fact (the seed is consumed as in
randomness expansion) and may hold classical side information ``lambda``.
For every value of ``lambda`` the per-input behaviour ``Q(b | i, lambda)``
must itself stay within the tolerance of the expected row, i.e. the adversary
cannot hide a deviation inside a sub-ensemble.  The guessing probability is

    P_guess = sum_i P(M_i) max_{Q(.|i) in ball_i} max_b Q(b | i)

with ``ball_i`` the total-variation ball around row ``i`` intersected with the
probability simplex.  This formalization is our own extension; it reduces to
the plain min-entropy of the rows at tolerance 0.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .entropy import EmpiricalDistribution

logger = logging.getLogger(__name__)

ROW_TOL = 1e-9


class InfeasibleModelError(ValueError):
    pass


@dataclass(frozen=True)
class JointModel:
    """Expected click statistics ``P(b_j | M_i)`` of a seeded source.

    Rows may be sub-normalized; the deficit is the no-click probability.
    """

    inputs: tuple
    seed: tuple
    outcomes: tuple
    cond: np.ndarray

    def __post_init__(self):
        cond = np.asarray(self.cond, dtype=float)
        if cond.shape != (len(self.inputs), len(self.outcomes)):
            raise ValueError(f"cond has shape {cond.shape}, expected {(len(self.inputs), len(self.outcomes))}")
        if len(self.seed) != len(self.inputs):
            raise ValueError("seed needs one probability per input")
        seed = np.asarray(self.seed, dtype=float)
        if np.any(seed < 0) or abs(seed.sum() - 1) > 1e-12:
            raise ValueError("seed probabilities must be nonnegative and sum to 1")
        if np.any(cond < 0):
            raise ValueError("conditional probabilities must be nonnegative")
        sums = cond.sum(axis=1)
        if np.any(sums > 1 + ROW_TOL) or np.any(sums <= 0):
            raise ValueError("every row must sum to a value in (0, 1]")
        for label, s in zip(self.inputs, sums):
            if s < 1 - ROW_TOL:
                logger.info("input %s: no-click mass %.6g", label, 1 - s)
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ValueError("duplicate outcome labels")
        object.__setattr__(self, "cond", cond)
        object.__setattr__(self, "seed", tuple(seed.tolist()))

    @property
    def no_click(self) -> np.ndarray:
        return np.clip(1.0 - self.cond.sum(axis=1), 0.0, None)

    @property
    def click_rows(self) -> np.ndarray:
        """Rows renormalized to the clicked outcomes."""
        return self.cond / self.cond.sum(axis=1, keepdims=True)

    @property
    def marginal(self) -> np.ndarray:
        return np.asarray(self.seed) @ self.click_rows


@dataclass(frozen=True)
class AmbiguitySet:
    outcomes: frozenset
    tau: float


@dataclass(frozen=True)
class TamperReport:
    statistics: tuple  # per input chi-square
    dofs: tuple
    p_value: float
    alarm_level: float
    per_input_p: tuple = field(default=())

    @property
    def verdict(self) -> str:
        return "tampering-suspected" if self.p_value < self.alarm_level else "consistent"


@dataclass(frozen=True)
class GuessBound:
    p_guess: float
    certified_bits: float
    tolerance: float


def ambiguity_set(model: JointModel, tau: float = 0.01) -> AmbiguitySet:
    """Outcomes to which at least two inputs assign probability ``>= tau``."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau={tau} outside (0, 1]")
    hits = (model.cond >= tau).sum(axis=0)
    return AmbiguitySet(frozenset(o for o, h in zip(model.outcomes, hits) if h >= 2), tau)


def _chi2_gof(counts: np.ndarray, probs: np.ndarray) -> tuple[float, int]:
    total = counts.sum()
    expected = total * probs
    zero = expected == 0
    if np.any(counts[zero] > 0):
        return math.inf, max(1, int((~zero).sum()) - 1)
    e = expected[~zero]
    c = counts[~zero]
    return float(np.sum((c - e) ** 2 / e)), max(1, len(e) - 1)


def tamper_test(
    expected: JointModel,
    observed: Sequence[EmpiricalDistribution],
    alarm_level: float = 0.01,
    min_samples: int = 100,
) -> TamperReport:
    """Pearson goodness-of-fit of observed click counts against each expected row.

    Per-input statistics and degrees of freedom are summed into one
    chi-square test.  Observed counts are over clicked outcomes only, so they
    are compared with the click-normalized rows.
    """
    if len(observed) != len(expected.inputs):
        raise ValueError(f"need observed counts for all {len(expected.inputs)} inputs")
    rows = expected.click_rows
    stats_, dofs, per_p = [], [], []
    for label, obs, row in zip(expected.inputs, observed, rows):
        if len(obs.counts) != len(expected.outcomes):
            raise ValueError(f"input {label}: observed counts do not match the outcome set")
        if obs.total < min_samples:
            raise ValueError(f"input {label}: {obs.total} samples, need at least {min_samples}")
        s, k = _chi2_gof(np.asarray(obs.counts, dtype=float), row)
        stats_.append(s)
        dofs.append(k)
        per_p.append(float(stats.chi2.sf(s, k)) if math.isfinite(s) else 0.0)
    total = sum(stats_)
    p = float(stats.chi2.sf(total, sum(dofs))) if math.isfinite(total) else 0.0
    return TamperReport(tuple(stats_), tuple(dofs), p, alarm_level, tuple(per_p))


def _rows_for_guessing(model: JointModel) -> np.ndarray:
    return model.click_rows


def adversary_guess_bound(model: JointModel, tolerance: float = 0.0) -> GuessBound:
    """Adversary's guessing probability as a linear program.

    For each input ``i`` and each candidate guess ``g`` the LP carries a
    sub-normalized component ``Q_g(. | i)`` of weight ``p_g(i)``; components
    must each lie within the tolerance of the expected row (a homogeneous,
    hence linear, total-variation constraint).  The objective is
    ``sum_i P(M_i) sum_g Q_g(g | i)``.
    """
    if tolerance < 0:
        raise InfeasibleModelError(f"tolerance={tolerance} must be >= 0")
    rows = _rows_for_guessing(model)
    n_in, k = rows.shape
    seed = np.asarray(model.seed)

    # variable layout per (i, g): Q[0..k), then slack t[0..k) for |Q - p*row|, then p
    per = 2 * k + 1
    nvar = n_in * k * per

    def base(i, g):
        return (i * k + g) * per

    c = np.zeros(nvar)
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for i in range(n_in):
        weight_row = np.zeros(nvar)
        for g in range(k):
            o = base(i, g)
            c[o + g] = -seed[i]
            p_idx = o + 2 * k
            # sum_b Q = p
            r = np.zeros(nvar)
            r[o: o + k] = 1.0
            r[p_idx] = -1.0
            a_eq.append(r)
            b_eq.append(0.0)
            for b in range(k):
                # t_b >= +(Q_b - p row_b) and t_b >= -(Q_b - p row_b)
                r1 = np.zeros(nvar)
                r1[o + b] = 1.0
                r1[p_idx] = -rows[i, b]
                r1[o + k + b] = -1.0
                r2 = -r1
                r2[o + k + b] = -1.0
                a_ub += [r1, r2]
                b_ub += [0.0, 0.0]
            # sum_b t_b <= 2 * tol * p
            r = np.zeros(nvar)
            r[o + k: o + 2 * k] = 1.0
            r[p_idx] = -2.0 * tolerance
            a_ub.append(r)
            b_ub.append(0.0)
            weight_row[p_idx] = 1.0
        a_eq.append(weight_row)
        b_eq.append(1.0)
    res = optimize.linprog(
        c,
        A_ub=np.array(a_ub),
        b_ub=np.array(b_ub),
        A_eq=np.array(a_eq),
        b_eq=np.array(b_eq),
        bounds=[(0, None)] * nvar,
        method="highs",
    )
    if not res.success:
        raise InfeasibleModelError(f"guessing LP failed: {res.message}")
    p_guess = min(1.0, max(0.0, -res.fun))
    return GuessBound(p_guess, -math.log2(p_guess) + 0.0, tolerance)


def steered_mass(row: np.ndarray, b: int, tolerance: float) -> float:
    """Largest ``Q(b)`` over distributions within total variation ``tolerance`` of ``row``."""
    return min(1.0, float(row[b]) + tolerance)


def brute_force_guess_bound(model: JointModel, tolerance: float = 0.0) -> GuessBound:
    """Exhaustive search over deterministic guessing strategies ``i -> g(i)``.

    For each strategy the adversary steers every input's report towards its
    guess as far as the tolerance allows.  Exponential in the number of
    inputs; intended as a reference for small instances.
    """
    if tolerance < 0:
        raise InfeasibleModelError(f"tolerance={tolerance} must be >= 0")
    rows = _rows_for_guessing(model)
    n_in, k = rows.shape
    seed = np.asarray(model.seed)
    best = 0.0
    for strategy in itertools.product(range(k), repeat=n_in):
        value = sum(seed[i] * steered_mass(rows[i], g, tolerance) for i, g in enumerate(strategy))
        best = max(best, value)
    return GuessBound(best, -math.log2(best) + 0.0, tolerance)


# -- model files -------------------------------------------------------------


def parse_model(text: str) -> JointModel:
    """Parse the plain-text model format.

    ``#`` starts a comment line.  Keyword lines, in any order::

        inputs 6 10
        seed 0.5 0.5
        outcomes 4 5 6 7 8 9 10 11 12
        row 6 0.1 0.15 ...
        row 10 0 0 0.05 ...

    There is one ``row <input> <p...>`` line per input, with one value per
    outcome.
    """
    inputs = seed = outcomes = None
    rows = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *vals = line.split()
        if key == "inputs":
            inputs = tuple(vals)
        elif key == "seed":
            seed = tuple(float(v) for v in vals)
        elif key == "outcomes":
            outcomes = tuple(vals)
        elif key == "row":
            if not vals:
                raise ValueError(f"line {lineno}: row needs an input label")
            rows[vals[0]] = [float(v) for v in vals[1:]]
        else:
            raise ValueError(f"line {lineno}: unknown keyword {key!r}")
    if inputs is None or seed is None or outcomes is None:
        raise ValueError("model needs inputs, seed and outcomes lines")
    missing = [i for i in inputs if i not in rows]
    if missing:
        raise ValueError(f"no row for inputs {missing}")
    cond = np.array([rows[i] for i in inputs])
    return JointModel(_labels(inputs), seed, _labels(outcomes), cond)


def _labels(vals):
    try:
        return tuple(int(v) for v in vals)
    except ValueError:
        return tuple(vals)


def format_model(model: JointModel) -> str:
    lines = [
        "inputs " + " ".join(str(i) for i in model.inputs),
        "seed " + " ".join(repr(p) for p in model.seed),
        "outcomes " + " ".join(str(o) for o in model.outcomes),
    ]
    for label, row in zip(model.inputs, model.cond):
        lines.append(f"row {label} " + " ".join(repr(float(p)) for p in row))
    return "\n".join(lines) + "\n"


def load_model(path) -> JointModel:
    return parse_model(Path(path).read_text())


def parse_observed(text: str, model: JointModel) -> list[EmpiricalDistribution]:
    """Observed counts: ``outcomes ...`` header then ``<input> <count...>`` lines."""
    outcomes = None
    counts = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *vals = line.split()
        if key == "outcomes":
            outcomes = _labels(vals)
            continue
        if outcomes is None:
            raise ValueError(f"line {lineno}: counts before the outcomes header")
        row = [int(v) for v in vals]
        if len(row) != len(outcomes):
            raise ValueError(f"line {lineno}: expected {len(outcomes)} counts")
        label = _labels([key])[0]
        index = {o: k for k, o in enumerate(outcomes)}
        aligned = [0] * len(model.outcomes)
        for o, n in zip(outcomes, row):
            if o not in index or o not in model.outcomes:
                if n:
                    raise ValueError(f"line {lineno}: outcome {o} not in the model")
                continue
            aligned[model.outcomes.index(o)] = n
        prev = counts.get(label, [0] * len(model.outcomes))
        counts[label] = [a + b for a, b in zip(prev, aligned)]
    missing = [i for i in model.inputs if i not in counts]
    if missing:
        raise ValueError(f"no observed counts for inputs {missing}")
    return [EmpiricalDistribution(tuple(counts[i])) for i in model.inputs]


def format_observed(model: JointModel, observed: Sequence[EmpiricalDistribution]) -> str:
    lines = ["outcomes " + " ".join(str(o) for o in model.outcomes)]
    for label, obs in zip(model.inputs, observed):
        lines.append(f"{label} " + " ".join(str(c) for c in obs.counts))
    return "\n".join(lines) + "\n"


def sample_observed(model: JointModel, n_per_input: int, rng: np.random.Generator, rows=None):
    rows = model.click_rows if rows is None else rows
    return [EmpiricalDistribution(tuple(rng.multinomial(n_per_input, r))) for r in rows]


def two_input_toy_model() -> JointModel:
    """Two-input model with the support structure of a binary-seeded source.

    Input 6 excites modes 4..10, input 10 excites modes 6 and 8..12; the two
    supports overlap on {6, 8, 9, 10}.  The heights are illustrative.
    """
    outcomes = tuple(range(4, 13))
    row6 = {4: 0.10, 5: 0.15, 6: 0.30, 7: 0.15, 8: 0.10, 9: 0.10, 10: 0.10}
    row10 = {6: 0.05, 8: 0.10, 9: 0.15, 10: 0.30, 11: 0.20, 12: 0.20}
    cond = np.array([[r.get(o, 0.0) for o in outcomes] for r in (row6, row10)])
    return JointModel((6, 10), (0.5, 0.5), outcomes, cond)

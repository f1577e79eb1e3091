"""Analytic crosstalk model: OAM superposition and per-time-bin click probabilities.

A :class:`CrosstalkProfile` holds the probabilities ``|lambda_j|^2`` with which
one input OAM mode is found in each guided output mode after coupling into the
ring-core fiber.  Output modes are listed in arrival order, so the position of
a mode in ``outputs`` is also its time-bin rank.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

NORM_TOL = 1e-12


class ModeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class OamMode:
    """An OAM mode with topological charge ``ell``.

    ``relative_group_delay`` is in picoseconds per meter and only matters when
    deriving bin offsets from a fiber length.
    """

    ell: int
    relative_group_delay: float | None = None

    def __post_init__(self):
        if self.relative_group_delay is not None and not math.isfinite(self.relative_group_delay):
            raise ValueError(f"group delay of mode {self.ell} is not finite")


@dataclass(frozen=True)
class OutcomeDistribution:
    """Normalized probabilities over labelled outcomes."""

    labels: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(self.labels) or len(probs) == 0:
            raise ValueError("distribution needs one probability per label")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={probs.sum()!r})")
        object.__setattr__(self, "probs", probs)

    @property
    def d(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class CrosstalkProfile:
    input_mode: OamMode
    outputs: tuple  # ((OamMode, probability), ...) in arrival order

    def __post_init__(self):
        outputs = tuple((m, float(p)) for m, p in self.outputs)
        ells = [m.ell for m, _ in outputs]
        if len(set(ells)) != len(ells):
            raise ValueError(f"duplicate output modes in profile: {ells}")
        probs = np.array([p for _, p in outputs])
        if len(probs) == 0 or np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("profile probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"profile probabilities sum to {probs.sum()!r}, not 1")
        delays = [m.relative_group_delay for m, _ in outputs]
        if all(t is not None for t in delays) and len(delays) > 1:
            if np.any(np.diff(delays) == 0):
                raise ValueError("adjacent output modes share a group delay; bins would coincide")
        object.__setattr__(self, "outputs", outputs)

    @property
    def modes(self) -> tuple:
        return tuple(m for m, _ in self.outputs)

    @property
    def ells(self) -> tuple:
        return tuple(m.ell for m, _ in self.outputs)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.outputs])

    @classmethod
    def from_weights(cls, input_ell: int, ells: Sequence[int], weights: Sequence[float]) -> "CrosstalkProfile":
        """Build a profile from raw (possibly unnormalized) intensities."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with a positive sum")
        total = float(w.sum())
        if abs(total - 1.0) > NORM_TOL:
            logger.info("normalizing crosstalk profile for input %d by %.12g", input_ell, total)
        probs = w / total
        # absorb float residue so the sum is 1 to within NORM_TOL
        probs[np.argmax(probs)] += 1.0 - probs.sum()
        return cls(OamMode(int(input_ell)), tuple((OamMode(int(e)), p) for e, p in zip(ells, probs)))

    @classmethod
    def balanced(cls, input_ell: int, ells: Sequence[int]) -> "CrosstalkProfile":
        return cls.from_weights(input_ell, ells, [1.0] * len(ells))


@dataclass(frozen=True)
class ChannelParams:
    eta_det: float
    epsilon: float
    d: int

    def __post_init__(self):
        if not 0.0 <= self.eta_det <= 1.0:
            raise ValueError(f"eta_det={self.eta_det} outside [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon={self.epsilon} outside [0, 1]")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d={self.d} must be a positive integer")


@dataclass(frozen=True)
class CoherentAmplitudes:
    mu: tuple = field(default_factory=tuple)

    def __post_init__(self):
        mu = tuple(float(x) for x in self.mu)
        if any(not x >= 0 for x in mu):
            raise ValueError("mean photon numbers must be >= 0")
        object.__setattr__(self, "mu", mu)

    @property
    def vacuum(self) -> np.ndarray:
        return np.exp(-np.asarray(self.mu))


@dataclass(frozen=True)
class SeedDistribution:
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError("seed probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(p.tolist()))


def superpose(input_mode: OamMode, profile: CrosstalkProfile) -> OutcomeDistribution:
    """Outcome distribution over output modes for ``input_mode``."""
    if input_mode.ell != profile.input_mode.ell:
        raise ModeMismatchError(
            f"profile is for input ell={profile.input_mode.ell}, got ell={input_mode.ell}"
        )
    return OutcomeDistribution(profile.ells, profile.probabilities)


def _no_spurious(ch: ChannelParams) -> float:
    return (1.0 - ch.epsilon) ** (ch.d - 1)


def click_probability(j: int, dist: OutcomeDistribution, ch: ChannelParams) -> float:
    """Probability of a valid click in time bin ``j`` (1-based).

    ``P(b_j) = P(N_j|M) * eta_det * (1 - epsilon)**(d - 1)``
    """
    if dist.d != ch.d:
        raise ValueError(f"distribution has {dist.d} outcomes but channel has d={ch.d}")
    if not 1 <= j <= ch.d:
        raise IndexError(f"bin index {j} outside 1..{ch.d}")
    return float(dist.probs[j - 1] * ch.eta_det * _no_spurious(ch))


def click_probability_coherent(j: int, amps: CoherentAmplitudes, ch: ChannelParams) -> float:
    """Click probability in bin ``j`` for a coherent pulse with mean photon number ``mu_j``.

    Uses the vacuum probability ``xi = exp(-mu_j)``:
    ``(1 - xi - xi*epsilon) * eta_det * (1 - epsilon)**(d - 1)``, floored at 0.
    """
    if not 1 <= j <= len(amps.mu):
        raise IndexError(f"bin index {j} outside 1..{len(amps.mu)}")
    xi = math.exp(-amps.mu[j - 1])
    signal = max(0.0, 1.0 - xi - xi * ch.epsilon)
    return signal * ch.eta_det * _no_spurious(ch)


def union_modes(profiles: Sequence[CrosstalkProfile]) -> tuple:
    """Sorted union of output ``ell`` values over all profiles."""
    return tuple(sorted({e for p in profiles for e in p.ells}))


def conditional_matrix(profiles: Sequence[CrosstalkProfile], labels: Sequence[int] | None = None) -> np.ndarray:
    """``P(N_j | M_i)`` as an (inputs x outcomes) array over a common outcome set."""
    labels = union_modes(profiles) if labels is None else tuple(labels)
    index = {e: k for k, e in enumerate(labels)}
    cond = np.zeros((len(profiles), len(labels)))
    for i, prof in enumerate(profiles):
        for e, p in zip(prof.ells, prof.probabilities):
            if e not in index:
                raise ValueError(f"mode {e} missing from outcome set")
            cond[i, index[e]] = p
    return cond


def seeded_distribution(
    inputs: Sequence[CrosstalkProfile], seed: SeedDistribution, ch: ChannelParams
) -> np.ndarray:
    """Per-bin click probabilities for a seeded multi-input source.

    Returns ``P(b_j) = sum_i P(M_i) P(N_j|M_i) eta_det (1 - epsilon)**(d-1)`` over
    :func:`union_modes` of ``inputs``, in that order.  Modes a profile does not
    excite contribute probability 0 for that input.
    """
    if len(seed.probs) != len(inputs):
        raise ValueError(f"seed has {len(seed.probs)} entries for {len(inputs)} input profiles")
    labels = union_modes(inputs)
    if ch.d != len(labels):
        raise ValueError(f"channel d={ch.d} but the union outcome set has {len(labels)} modes")
    cond = conditional_matrix(inputs, labels)
    return np.asarray(seed.probs) @ cond * ch.eta_det * _no_spurious(ch)


# -- profile files -----------------------------------------------------------


def parse_profile(text: str) -> CrosstalkProfile:
    """Parse the plain-text profile format.

    Blank lines and lines starting with ``#`` are ignored.  The first
    remaining line must be ``input_ell <int>``; each following line is
    ``<ell> <weight>`` in arrival order.  Weights are normalized on ingestion.
    """
    input_ell = None
    ells, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if input_ell is None:
            if len(parts) != 2 or parts[0] != "input_ell":
                raise ValueError(f"line {lineno}: expected 'input_ell <value>' header")
            input_ell = int(parts[1])
            continue
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<ell> <probability>'")
        ells.append(int(parts[0]))
        weights.append(float(parts[1]))
    if input_ell is None or not ells:
        raise ValueError("profile needs an input_ell header and at least one output mode")
    return CrosstalkProfile.from_weights(input_ell, ells, weights)


def load_profile(path) -> CrosstalkProfile:
    return parse_profile(Path(path).read_text())


def format_profile(profile: CrosstalkProfile) -> str:
    lines = [f"input_ell {profile.input_mode.ell}"]
    lines += [f"{e} {float(p)!r}" for e, p in zip(profile.ells, profile.probabilities)]
    return "\n".join(lines) + "\n"

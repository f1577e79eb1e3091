"""Monte Carlo generator of TDC detection events for a pulsed crosstalk source.

Per pulse one photon is routed to an output mode drawn from the crosstalk
distribution and detected with probability ``eta_det``; its timestamp is the
pulse time plus the mode's fiber delay plus Gaussian jitter.  Dark counts are
a homogeneous Poisson process over the whole run.  All randomness comes from a
single ``numpy.random.PCG64`` stream, so a seed reproduces a run exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crosstalk import OutcomeDistribution

RNG_ALGORITHM = "numpy.PCG64"
NO_DETECTION = 0xFF

EVENT_MAGIC = b"OAMQ"
EVENT_VERSION = 1
_EVENT_HEADER = struct.Struct("<4sHIQ")

PS = 1e-12


@dataclass(frozen=True)
class PulseTrainConfig:
    repetition_rate: float = 12.5e6
    pulse_width: float = 2e-9
    n_pulses: int = 1_000_000

    def __post_init__(self):
        if not self.repetition_rate > 0:
            raise ValueError("repetition_rate must be positive")
        if not 0 <= self.pulse_width < 1.0 / self.repetition_rate:
            raise ValueError("pulse_width must be shorter than the pulse period")
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")

    @property
    def period(self) -> float:
        return 1.0 / self.repetition_rate

    @property
    def duration(self) -> float:
        return self.n_pulses * self.period


@dataclass(frozen=True)
class FiberConfig:
    length: float = 800.0
    adjacent_mode_delay: float = 10e-9
    base_delay: float = 0.0

    def check(self, pt: PulseTrainConfig, d: int) -> None:
        if not self.adjacent_mode_delay * (d - 1) < pt.period:
            raise ValueError(
                f"{d} modes spaced {self.adjacent_mode_delay:g} s do not fit in a {pt.period:g} s period"
            )


@dataclass(frozen=True)
class DetectorConfig:
    eta_det: float = 0.83
    dark_rate: float = 50.0
    jitter_sigma: float = 50e-12
    timestamp_resolution: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.eta_det <= 1.0:
            raise ValueError("eta_det must lie in [0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if not self.timestamp_resolution > 0:
            raise ValueError("timestamp_resolution must be positive")

    @property
    def resolution_ps(self) -> int:
        r = round(self.timestamp_resolution / PS)
        if r < 1 or abs(r * PS - self.timestamp_resolution) > 1e-3 * PS:
            raise ValueError("timestamp_resolution must be a whole number of picoseconds")
        return r


def _quantize(t_ps: np.ndarray, res_ps: int) -> np.ndarray:
    q = np.rint(np.asarray(t_ps, dtype=float) / res_ps) * res_ps
    return np.maximum(q, 0).astype(np.uint64)


def arrival_time(pulse_index, mode_rank, pt: PulseTrainConfig, fc: FiberConfig, resolution: float = 1e-12):
    """Noise-free arrival timestamp in integer picoseconds (vectorized)."""
    res_ps = round(resolution / PS)
    t = (
        np.asarray(pulse_index, dtype=float) * (pt.period / PS)
        + fc.base_delay / PS
        + np.asarray(mode_rank, dtype=float) * (fc.adjacent_mode_delay / PS)
    )
    out = _quantize(t, res_ps)
    return int(out) if out.ndim == 0 else out


@dataclass
class SimulationResult:
    events: np.ndarray  # sorted uint64 picosecond timestamps
    ground_truth: np.ndarray  # uint8 per pulse: mode rank or NO_DETECTION
    n_dark: int
    metadata: dict


def simulate_events(
    dist: OutcomeDistribution,
    pt: PulseTrainConfig,
    fc: FiberConfig,
    det: DetectorConfig,
    rng_seed: int,
) -> SimulationResult:
    if not isinstance(dist, OutcomeDistribution):
        dist = OutcomeDistribution(tuple(range(len(dist))), np.asarray(dist, dtype=float))
    if dist.d > 0xFE:
        raise ValueError("at most 254 output modes fit the ground-truth format")
    fc.check(pt, dist.d)
    res_ps = det.resolution_ps
    rng = np.random.Generator(np.random.PCG64(rng_seed))

    n = pt.n_pulses
    detected = np.flatnonzero(rng.random(n) < det.eta_det)
    ranks = rng.choice(dist.d, size=len(detected), p=dist.probs).astype(np.uint8)
    t_sig = (
        detected * (pt.period / PS)
        + fc.base_delay / PS
        + ranks * (fc.adjacent_mode_delay / PS)
    )
    if det.jitter_sigma > 0:
        t_sig = t_sig + rng.normal(0.0, det.jitter_sigma / PS, size=len(t_sig))

    n_dark = int(rng.poisson(det.dark_rate * pt.duration))
    t_dark = rng.uniform(0.0, pt.duration / PS, size=n_dark)

    events = np.sort(_quantize(np.concatenate([t_sig, t_dark]), res_ps))
    truth = np.full(n, NO_DETECTION, dtype=np.uint8)
    truth[detected] = ranks
    meta = {
        "rng_algorithm": RNG_ALGORITHM,
        "rng_seed": int(rng_seed),
        "n_pulses": n,
        "n_signal": int(len(detected)),
        "n_dark": n_dark,
        "resolution_ps": res_ps,
    }
    return SimulationResult(events, truth, n_dark, meta)


# -- event log ---------------------------------------------------------------


def write_event_log(path, events: np.ndarray, resolution_ps: int = 1) -> None:
    events = np.asarray(events, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(_EVENT_HEADER.pack(EVENT_MAGIC, EVENT_VERSION, resolution_ps, len(events)))
        fh.write(events.tobytes())


def read_event_log(path) -> tuple[np.ndarray, int]:
    """Return ``(timestamps, resolution_ps)``."""
    data = Path(path).read_bytes()
    if len(data) < _EVENT_HEADER.size:
        raise ValueError(f"{path}: truncated event-log header")
    magic, version, res_ps, count = _EVENT_HEADER.unpack_from(data)
    if magic != EVENT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != EVENT_VERSION:
        raise ValueError(f"{path}: unsupported event-log version {version}")
    body = data[_EVENT_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"{path}: header says {count} records, file holds {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<u8").astype(np.uint64), res_ps


def write_ground_truth(path, truth: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(truth, dtype=np.uint8).tobytes())


def read_ground_truth(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype=np.uint8).copy()

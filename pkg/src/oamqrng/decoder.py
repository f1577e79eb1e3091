"""Mode-to-time decoding of detection timestamps into symbols.

Timestamps are folded modulo the pulse period; each of the ``d`` bins is a
window of width ``bin_width`` centred on a calibrated offset.  Centers are
kept in arrival order and unwrapped (strictly increasing, spanning less than
one period), so a bin may straddle the period boundary and the first center
may be slightly negative.  An event in bin ``j`` belongs to pulse
``round((t - center_j) / period)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crosstalk import OutcomeDistribution

logger = logging.getLogger(__name__)

OUT_OF_BIN = 0xFD
MULTI_CLICK = 0xFE
NO_CLICK = 0xFF
DISCARD_CODES = {OUT_OF_BIN: "out_of_bin", MULTI_CLICK: "multi_click", NO_CLICK: "no_click"}

SYMBOL_MAGIC = b"OAMS"
SYMBOL_VERSION = 1
_SYMBOL_HEADER = struct.Struct("<4sHHQQQ")

DEFAULT_BIN_WIDTH_PS = 4000


class CalibrationError(RuntimeError):
    pass


def _circular_distance(a, b, period):
    diff = np.abs(np.asarray(a, dtype=float) - b) % period
    return np.minimum(diff, period - diff)


@dataclass(frozen=True)
class BinningScheme:
    period: int
    bin_centers: tuple
    bin_width: float

    def __post_init__(self):
        centers = tuple(float(c) for c in self.bin_centers)
        if not centers:
            raise ValueError("need at least one bin")
        if self.bin_width <= 0 or self.bin_width > self.period:
            raise ValueError("bin_width must lie in (0, period]")
        gaps = np.diff(centers)
        if np.any(gaps < self.bin_width):
            raise ValueError("bin centers must increase by at least bin_width (bins overlap or are unordered)")
        if centers[-1] - centers[0] + self.bin_width > self.period:
            raise ValueError("bins do not fit in one pulse period")
        object.__setattr__(self, "bin_centers", centers)

    @property
    def d(self) -> int:
        return len(self.bin_centers)


def calibrate_bins(
    events: np.ndarray,
    period: int,
    d: int,
    bin_width: float = DEFAULT_BIN_WIDTH_PS,
    resolution: int = 1,
    smoothing: float | None = None,
    min_peak_fraction: float = 0.01,
) -> BinningScheme:
    """Locate the ``d`` strongest arrival-time peaks in the folded histogram.

    Coarse peaks come from a circularly box-smoothed histogram at the
    timestamp resolution, chosen greedily by height with at least
    ``bin_width`` between them.  Each center is then refined to the circular
    mean of the folded offsets within half a bin width of the coarse peak.
    Centers are returned in arrival order: the first follows the largest
    empty stretch of the period and is folded into ``[-period/2, period/2)``.
    """
    events = np.asarray(events)
    if events.size == 0:
        raise CalibrationError("no events to calibrate on")
    if d < 1:
        raise ValueError("d must be >= 1")
    period = int(period)
    offsets = (events % np.uint64(period)).astype(np.int64)
    nbins = period // resolution
    hist = np.bincount(offsets // resolution, minlength=nbins).astype(float)

    width = max(1, int(round((bin_width / 4 if smoothing is None else smoothing) / resolution)))
    padded = np.concatenate([hist[-width:], hist, hist[:width]])
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    lo = width - width // 2
    smooth = csum[lo + width: lo + width + nbins] - csum[lo: lo + nbins]

    order = np.argsort(-smooth, kind="stable")
    floor = min_peak_fraction * smooth[order[0]]
    peaks = []
    for k in order:
        if smooth[k] <= floor or smooth[k] <= 0:
            break
        pos = k * resolution
        if all(_circular_distance(pos, p, period) >= bin_width for p in peaks):
            peaks.append(pos)
            if len(peaks) == d:
                break
    if len(peaks) < d:
        raise CalibrationError(f"found {len(peaks)} resolvable peaks, need {d}")

    centers = []
    for p in peaks:
        rel = (offsets - p + period // 2) % period - period // 2
        sel = rel[np.abs(rel) <= bin_width / 2]
        centers.append((p + sel.mean()) % period)
    return BinningScheme(period, arrival_order(centers, period), bin_width)


def arrival_order(offsets, period) -> tuple:
    """Unwrap folded offsets into increasing arrival order starting after the widest gap."""
    c = np.sort(np.asarray(offsets, dtype=float) % period)
    gaps = np.diff(np.concatenate([c, [c[0] + period]]))
    start = (int(np.argmax(gaps)) + 1) % len(c)
    ordered = np.concatenate([c[start:], c[:start] + period])
    first = (ordered[0] + period / 2) % period - period / 2
    return tuple(ordered - ordered[0] + first)


def assign_bins(events: np.ndarray, scheme: BinningScheme) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pulse_index, bin)`` per event; bin is 0-based or -1 when outside every bin."""
    t = np.asarray(events).astype(np.int64)
    period = scheme.period
    half = scheme.bin_width / 2
    offsets = t % period
    bins = np.full(len(t), -1, dtype=np.int64)
    pulse = np.floor_divide(t, period)
    for k, c in enumerate(scheme.bin_centers):
        rel = (offsets - c + period / 2) % period - period / 2
        inside = np.abs(rel) <= half
        bins[inside] = k
        # an event belongs to the pulse whose bin center it is nearest
        pulse[inside] = np.rint((t[inside] - c) / period).astype(np.int64)
    return pulse, bins


def decode(events: np.ndarray, scheme: BinningScheme, n_pulses: int | None = None) -> np.ndarray:
    """Decode a sorted timestamp stream into one symbol code per pulse.

    Codes are ``1..d`` for a single in-bin click, or ``NO_CLICK``,
    ``MULTI_CLICK`` (two or more in-bin clicks) and ``OUT_OF_BIN`` (clicks,
    none inside a bin).  Without ``n_pulses`` the stream length is taken from
    the last event.
    """
    events = np.asarray(events)
    if events.size > 1 and np.any(events[1:] < events[:-1]):
        raise ValueError("event stream is not sorted")
    pulse, bins = assign_bins(events, scheme)
    if n_pulses is None:
        n_pulses = int(pulse.max()) + 1 if pulse.size else 0
    keep = (pulse >= 0) & (pulse < n_pulses)
    if np.any(~keep):
        logger.debug("dropping %d events outside pulses 0..%d", int((~keep).sum()), n_pulses - 1)
    pulse, bins = pulse[keep], bins[keep]

    inbin = bins >= 0
    n_in = np.bincount(pulse[inbin], minlength=n_pulses)
    n_any = np.bincount(pulse, minlength=n_pulses)
    codes = np.full(n_pulses, NO_CLICK, dtype=np.uint8)
    codes[(n_any > 0) & (n_in == 0)] = OUT_OF_BIN
    codes[n_in >= 2] = MULTI_CLICK
    single = n_in == 1
    hit = np.zeros(n_pulses, dtype=np.int64)
    hit[pulse[inbin]] = bins[inbin] + 1
    codes[single] = hit[single]
    return codes


def discard_counts(codes: np.ndarray) -> dict:
    codes = np.asarray(codes)
    return {name: int(np.count_nonzero(codes == c)) for c, name in DISCARD_CODES.items()}


def valid_symbols(codes: np.ndarray, d: int) -> np.ndarray:
    codes = np.asarray(codes)
    return codes[(codes >= 1) & (codes <= d)]


def symbol_counts(codes: np.ndarray, d: int) -> np.ndarray:
    return np.bincount(valid_symbols(codes, d), minlength=d + 1)[1:]


def symbol_histogram(codes: np.ndarray, d: int) -> tuple[OutcomeDistribution, dict]:
    """Empirical distribution over valid symbols, plus the discard counts."""
    codes = np.asarray(codes)
    if codes.size == 0:
        raise ValueError("empty symbol stream")
    counts = symbol_counts(codes, d)
    total = counts.sum()
    if total == 0:
        raise ValueError("symbol stream contains no valid symbols")
    probs = counts / total
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return OutcomeDistribution(tuple(range(1, d + 1)), probs), discard_counts(codes)


# -- symbol stream file ------------------------------------------------------


def write_symbols(path, codes: np.ndarray, d: int) -> None:
    codes = np.asarray(codes, dtype=np.uint8)
    dc = discard_counts(codes)
    with open(path, "wb") as fh:
        fh.write(
            _SYMBOL_HEADER.pack(
                SYMBOL_MAGIC, SYMBOL_VERSION, d, dc["out_of_bin"], dc["multi_click"], dc["no_click"]
            )
        )
        fh.write(codes.tobytes())


def read_symbols(path) -> tuple[np.ndarray, int]:
    """Return ``(codes, d)``; header discard counts are checked against the body."""
    data = Path(path).read_bytes()
    if len(data) < _SYMBOL_HEADER.size:
        raise ValueError(f"{path}: truncated symbol-stream header")
    magic, version, d, n_oob, n_multi, n_none = _SYMBOL_HEADER.unpack_from(data)
    if magic != SYMBOL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SYMBOL_VERSION:
        raise ValueError(f"{path}: unsupported symbol-stream version {version}")
    codes = np.frombuffer(data, dtype=np.uint8, offset=_SYMBOL_HEADER.size).copy()
    dc = discard_counts(codes)
    if (dc["out_of_bin"], dc["multi_click"], dc["no_click"]) != (n_oob, n_multi, n_none):
        raise ValueError(f"{path}: discard counts in header do not match the body")
    bad = (codes > d) & (codes < OUT_OF_BIN) | (codes == 0)
    if np.any(bad):
        raise ValueError(f"{path}: symbol codes outside 1..{d}")
    return codes, d

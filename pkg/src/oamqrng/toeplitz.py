"""Toeplitz-hashing privacy amplification over GF(2).

An ``m x n`` Toeplitz matrix is defined by ``n + m - 1`` seed bits with
``T[i][j] = seed[i - j + n - 1]``.  The product ``T x`` is the middle of the
full convolution ``seed * x``, which is evaluated with a real FFT and reduced
mod 2.  Every kept value is checked to lie within 0.25 of an integer before
rounding, so a loss of float64 exactness raises instead of flipping bits.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyReport, bits_per_symbol

logger = logging.getLogger(__name__)

try:
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without pyfftw
    pyfftw = None
import scipy.fft

DEFAULT_BLOCK_BITS = 1 << 20
DEFAULT_EPS_SEC = 1e-200
SEED_ALGORITHM = "numpy.PCG64"
_DIRECT_LIMIT = 64 * 64


class ExtractionError(ValueError):
    pass


def _log2_inv(eps_sec: float) -> float:
    if not 0 < eps_sec <= 1:
        raise ValueError(f"eps_sec={eps_sec} outside (0, 1]")
    return -math.log2(eps_sec)


def output_length(n: int, h: float, eps_sec: float) -> int:
    """Leftover-hash output length ``max(0, floor(n*h - 2*log2(1/eps)))``.

    ``eps_sec == 1`` is accepted as the zero-penalty limit.
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"entropy rate h={h} outside [0, 1]")
    if n < 0:
        raise ValueError("n must be >= 0")
    return max(0, math.floor(n * h - 2.0 * _log2_inv(eps_sec)))


@dataclass(frozen=True)
class ExtractionParams:
    n: int
    m: int
    eps_sec: float

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n (m={self.m}, n={self.n})")
        if not 0 < self.eps_sec < 1:
            raise ValueError("eps_sec must lie in (0, 1)")

    def check_entropy(self, h: float) -> None:
        if self.m > output_length(self.n, h, self.eps_sec):
            raise ValueError(f"m={self.m} exceeds the leftover-hash bound for h={h}")


def seed_bits(length: int, seed_value: int) -> np.ndarray:
    """Public Toeplitz seed from the PCG64 stream keyed by ``seed_value``."""
    rng = np.random.Generator(np.random.PCG64(seed_value))
    return rng.integers(0, 2, size=length, dtype=np.uint8)


def seed_identifier(seed_value: int) -> str:
    return f"{SEED_ALGORITHM}:{seed_value}"


def _check(bits: np.ndarray, seed: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, int]:
    x = np.asarray(bits, dtype=np.uint8).ravel()
    s = np.asarray(seed, dtype=np.uint8).ravel()
    n = len(x)
    if m > n:
        raise ExtractionError(f"m={m} exceeds input length n={n}")
    if m < 1:
        raise ExtractionError("m must be >= 1")
    if len(s) != n + m - 1:
        raise ExtractionError(f"seed has {len(s)} bits, need n + m - 1 = {n + m - 1}")
    return x, s, n


def _extract_direct(x: np.ndarray, s: np.ndarray, m: int) -> np.ndarray:
    n = len(x)
    idx = np.arange(m)[:, None] - np.arange(n)[None, :] + n - 1
    return ((s[idx].astype(np.int64) @ x.astype(np.int64)) & 1).astype(np.uint8)


class ToeplitzHasher:
    """Reusable ``m x n`` Toeplitz hash with the seed spectrum cached."""

    def __init__(self, seed: np.ndarray, n: int, m: int):
        s = np.asarray(seed, dtype=np.uint8).ravel()
        if not 1 <= m <= n:
            raise ExtractionError(f"need 1 <= m <= n (m={m}, n={n})")
        if len(s) != n + m - 1:
            raise ExtractionError(f"seed has {len(s)} bits, need n + m - 1 = {n + m - 1}")
        self.n, self.m = n, m
        self.seed = s
        # circular length n + m - 1 already avoids wrap-around on the outputs we keep
        self.size = scipy.fft.next_fast_len(n + m - 1, real=True)
        if pyfftw is not None:
            self._buf = pyfftw.empty_aligned(self.size, dtype="float64")
            self._spec = pyfftw.empty_aligned(self.size // 2 + 1, dtype="complex128")
            self._out = pyfftw.empty_aligned(self.size, dtype="float64")
            flags = ("FFTW_ESTIMATE",)
            self._fwd = pyfftw.FFTW(self._buf, self._spec, flags=flags, threads=1)
            self._inv = pyfftw.FFTW(
                self._spec, self._out, direction="FFTW_BACKWARD", flags=flags + ("FFTW_DESTROY_INPUT",), threads=1
            )
            self._buf[:] = 0
            self._buf[: len(s)] = s
            self.seed_spectrum = self._fwd().copy()
        else:
            padded = np.zeros(self.size)
            padded[: len(s)] = s
            self.seed_spectrum = scipy.fft.rfft(padded)
        # per-call work buffers; fresh 8 MB temporaries cost more than the arithmetic
        self._r = np.empty(m)
        self._err = np.empty(m)
        self._int = np.empty(m, dtype=np.int32)

    def __call__(self, block: np.ndarray) -> np.ndarray:
        x = np.asarray(block, dtype=np.uint8).ravel()
        if len(x) != self.n:
            raise ExtractionError(f"block has {len(x)} bits, hasher expects {self.n}")
        n, m = self.n, self.m
        if pyfftw is not None:
            self._buf[:n] = x
            self._buf[n:] = 0
            spec = self._fwd()
            np.multiply(spec, self.seed_spectrum, out=spec)
            full = self._inv()
        else:
            full = scipy.fft.irfft(scipy.fft.rfft(x.astype(float), n=self.size) * self.seed_spectrum, n=self.size)
        y = full[n - 1: n - 1 + m]
        r, err = self._r, self._err
        np.rint(y, out=r)
        np.subtract(y, r, out=err)
        if max(err.max(), -err.min()) > 0.25:
            raise FloatingPointError("FFT convolution lost integer exactness")
        np.copyto(self._int, r, casting="unsafe")
        # bit 0 of the little-endian low byte is the parity
        low = self._int.view(np.uint8)[:: 4] if np.little_endian else self._int.view(np.uint8)[3::4]
        return low & np.uint8(1)


def extract(bits: np.ndarray, seed: np.ndarray, m: int, method: str = "auto") -> np.ndarray:
    """``T x`` over GF(2) for the Toeplitz matrix defined by ``seed``.

    ``method`` is ``"direct"`` (dense integer product), ``"fft"`` or
    ``"auto"``, which picks the dense product for small matrices.
    """
    x, s, n = _check(bits, seed, m)
    if method not in ("auto", "direct", "fft"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct" or (method == "auto" and n * m <= _DIRECT_LIMIT):
        return _extract_direct(x, s, m)
    return ToeplitzHasher(s, n, m)(x)


def symbols_to_bits(symbols: np.ndarray, d: int) -> np.ndarray:
    """Serialize symbols ``1..d`` as fixed-width big-endian fields of ``b - 1``."""
    w = bits_per_symbol(d)
    if w > 8:
        raise ValueError(f"d={d} needs more than 8 bits per symbol")
    v = np.asarray(symbols, dtype=np.uint8) - np.uint8(1)
    return np.unpackbits(v[:, None], axis=1)[:, 8 - w:].ravel()


@dataclass
class ExtractionResult:
    bits: np.ndarray
    metadata: dict = field(default_factory=dict)


def extract_stream(
    codes: np.ndarray,
    report: EntropyReport,
    seed_value: int = 0,
    eps_sec: float = DEFAULT_EPS_SEC,
    block_bits: int = DEFAULT_BLOCK_BITS,
) -> ExtractionResult:
    """Hash the valid symbols of a decoded stream block by block.

    Symbols are serialized with :func:`symbols_to_bits`, cut into
    ``block_bits``-bit blocks and each block is hashed with the same public
    seed.  The output length per block is the leftover-hash length for the
    report's lower-bound entropy per raw bit.  A trailing partial block is
    dropped.
    """
    d = report.d
    if not report.hmin_lower_bound > 0:
        raise ExtractionError("entropy lower bound is zero; nothing can be extracted")
    h = min(1.0, report.rate_per_bit)
    m = output_length(block_bits, h, eps_sec)
    if m < 1:
        raise ExtractionError(f"block of {block_bits} bits at h={h:.6g} yields no output")
    codes = np.asarray(codes)
    symbols = codes[(codes >= 1) & (codes <= d)]
    raw = symbols_to_bits(symbols, d)
    n_blocks = len(raw) // block_bits
    dropped = len(raw) - n_blocks * block_bits
    meta = {
        "n": block_bits,
        "m": m,
        "eps_sec": eps_sec,
        "h_per_bit": h,
        "seed_id": seed_identifier(seed_value),
        "blocks": n_blocks,
        "input_bits": n_blocks * block_bits,
        "dropped_bits": dropped,
        "output_bits": n_blocks * m,
    }
    if n_blocks == 0:
        logger.warning("only %d raw bits, less than one %d-bit block; no output", len(raw), block_bits)
        meta["hash_seconds"] = 0.0
        return ExtractionResult(np.zeros(0, dtype=np.uint8), meta)
    if dropped:
        logger.info("dropping %d bits of a truncated final block", dropped)

    hasher = ToeplitzHasher(seed_bits(block_bits + m - 1, seed_value), block_bits, m)
    out = np.empty(n_blocks * m, dtype=np.uint8)
    t0 = time.perf_counter()
    for b in range(n_blocks):
        out[b * m:(b + 1) * m] = hasher(raw[b * block_bits:(b + 1) * block_bits])
    meta["hash_seconds"] = time.perf_counter() - t0
    return ExtractionResult(out, meta)


# -- bitstream file ----------------------------------------------------------


def write_bits(path, bits: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes())


def read_bits(path, n_bits: int | None = None) -> np.ndarray:
    bits = np.unpackbits(np.fromfile(path, dtype=np.uint8))
    return bits if n_bits is None else bits[:n_bits]

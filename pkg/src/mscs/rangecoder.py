"""Carry-less range coder (Subbotin style) with a 64-bit state.

Symbols are coded against cumulative frequency tables whose total is
``2**PRECISION``.  The interval ``[low, low + range)`` never wraps past
``2**64``; bytes are emitted once the top byte is settled, and when the range
collapses below ``2**48`` without settling it is shrunk to the next byte
boundary.  The range therefore stays >= 2**48 between symbols, which keeps
the per-symbol precision loss below 2**-32.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_MASK = (1 << 64) - 1
_TOP = 1 << 56
_BOT = 1 << 48
_STATE_BYTES = 8


class RangeCoderError(ValueError):
    pass


class TruncatedStreamError(RangeCoderError):
    pass


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def encode(self, cum: int, freq: int) -> None:
        if freq <= 0:
            raise RangeCoderError("zero-width bin in CDF")
        r = self.range >> PRECISION
        low = self.low + r * cum
        rng = r * freq
        out = self.out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            out.append(low >> 56)
            low = (low << 8) & _MASK
            rng <<= 8
        self.low, self.range = low, rng

    def encode_many(self, cums: Sequence[int], freqs: Sequence[int]) -> None:
        low, rng, out = self.low, self.range, self.out
        for cum, freq in zip(cums, freqs):
            if freq <= 0:
                raise RangeCoderError("zero-width bin in CDF")
            r = rng >> PRECISION
            low += r * cum
            rng = r * freq
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOT:
                    rng = -low & (_BOT - 1)
                else:
                    break
                out.append(low >> 56)
                low = (low << 8) & _MASK
                rng <<= 8
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        self.out += self.low.to_bytes(_STATE_BYTES, "big")
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        if len(data) < _STATE_BYTES:
            raise TruncatedStreamError("payload shorter than the coder state")
        self.data = data
        self.pos = _STATE_BYTES
        self.code = int.from_bytes(data[:_STATE_BYTES], "big")
        self.low = 0
        self.range = _MASK

    def _target(self) -> tuple[int, int]:
        r = self.range >> PRECISION
        v = ((self.code - self.low) & _MASK) // r
        return r, v if v < TOTAL else TOTAL - 1

    def _consume(self, r: int, cum: int, freq: int) -> None:
        low = self.low + r * cum
        rng = r * freq
        code, pos, data = self.code, self.pos, self.data
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            if pos >= len(data):
                raise TruncatedStreamError("payload ended before all symbols were decoded")
            code = ((code << 8) | data[pos]) & _MASK
            pos += 1
            low = (low << 8) & _MASK
            rng <<= 8
        self.low, self.range, self.code, self.pos = low, rng, code, pos

    def decode(self, cdf: Sequence[int]) -> int:
        """Decode one symbol given its CDF (``cdf[0] == 0``, ``cdf[-1] == TOTAL``)."""
        r, v = self._target()
        s = bisect_right(cdf, v) - 1
        lo, hi = cdf[s], cdf[s + 1]
        if hi <= lo:
            raise RangeCoderError("zero-width bin in CDF")
        self._consume(r, lo, hi - lo)
        return s

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def freqs_from_probs(p: np.ndarray) -> np.ndarray:
    """Quantize probability rows to integer frequencies summing to ``TOTAL``, each >= 1."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    nbins = p.shape[1]
    if nbins >= TOTAL:
        raise RangeCoderError(f"alphabet of {nbins} symbols does not fit {PRECISION}-bit precision")
    freq = np.floor(np.clip(p, 0.0, 1.0) * (TOTAL - nbins)).astype(np.int64) + 1
    spare = TOTAL - freq.sum(axis=1)
    freq[np.arange(len(freq)), np.argmax(freq, axis=1)] += spare
    return freq


def cdf_from_freqs(freq: np.ndarray) -> np.ndarray:
    freq = np.atleast_2d(freq)
    cdf = np.zeros((freq.shape[0], freq.shape[1] + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def range_encode(symbols: Sequence[int], cdfs) -> bytes:
    """Encode ``symbols[i]`` against ``cdfs[i]`` (one CDF, or one row per symbol)."""
    cdfs = np.asarray(cdfs, dtype=np.int64)
    symbols = np.asarray(symbols, dtype=np.int64)
    if cdfs.ndim == 1:
        cdfs = np.broadcast_to(cdfs, (len(symbols), len(cdfs)))
    _check_cdfs(cdfs)
    rows = np.arange(len(symbols))
    lo = cdfs[rows, symbols]
    hi = cdfs[rows, symbols + 1]
    enc = RangeEncoder()
    enc.encode_many(lo.tolist(), (hi - lo).tolist())
    return enc.finish()


def range_decode(data: bytes, count: int, cdfs) -> list[int]:
    cdfs = np.asarray(cdfs, dtype=np.int64)
    if cdfs.ndim == 1:
        rows = [cdfs.tolist()] * count
    else:
        rows = cdfs.tolist()
    dec = RangeDecoder(data)
    return [dec.decode(rows[i]) for i in range(count)]


def _check_cdfs(cdfs: np.ndarray) -> None:
    if np.any(cdfs[:, 0] != 0) or np.any(cdfs[:, -1] != TOTAL):
        raise RangeCoderError(f"CDFs must start at 0 and end at {TOTAL}")
    if np.any(np.diff(cdfs, axis=1) <= 0):
        raise RangeCoderError("zero-width bin in CDF")

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mscs.gaussfield import discretized_pmf
from mscs.rangecoder import (
    TOTAL,
    RangeCoderError,
    RangeDecoder,
    TruncatedStreamError,
    cdf_from_freqs,
    freqs_from_probs,
    range_decode,
    range_encode,
)

UNIFORM2 = [0, TOTAL // 2, TOTAL]


def test_single_symbol_small():
    data = range_encode([1], UNIFORM2)
    assert len(data) <= 9
    assert range_decode(data, 1, UNIFORM2) == [1]


def test_near_entropy_on_gaussian_symbols():
    ks, p = discretized_pmf(25.0)
    rng = np.random.default_rng(0)
    count = 100_000
    idx = rng.choice(len(p), size=count, p=p / p.sum())
    cdf = cdf_from_freqs(freqs_from_probs(p))[0]
    data = range_encode(idx, cdf)
    nz = p[p > 0]
    bound = count * float(-(nz * np.log2(nz)).sum()) + 64
    assert abs(8 * len(data) / bound - 1) < 0.005
    assert range_decode(data, count, cdf) == idx.tolist()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=40), st.data())
def test_round_trip_random(weights, data):
    w = np.asarray(weights) + 1e-3
    cdf = cdf_from_freqs(freqs_from_probs(w / w.sum()))[0]
    syms = data.draw(st.lists(st.integers(0, len(w) - 1), min_size=0, max_size=300))
    blob = range_encode(syms, cdf)
    assert range_decode(blob, len(syms), cdf) == syms


def test_per_symbol_cdfs_round_trip():
    rng = np.random.default_rng(4)
    probs = rng.dirichlet(np.ones(7), size=500)
    cdfs = cdf_from_freqs(freqs_from_probs(probs))
    syms = np.array([rng.choice(7, p=p) for p in probs])
    blob = range_encode(syms, cdfs)
    assert range_decode(blob, len(syms), cdfs) == syms.tolist()


def test_extreme_skew_round_trip():
    # one dominant bin and many minimum-width bins stress renormalization
    p = np.full(300, 1e-12)
    p[150] = 1.0
    cdf = cdf_from_freqs(freqs_from_probs(p / p.sum()))[0]
    syms = [150] * 5000 + [0, 299, 1, 298] * 50 + [150] * 100
    assert range_decode(range_encode(syms, cdf), len(syms), cdf) == syms


def test_deterministic_bytes():
    cdf = cdf_from_freqs(freqs_from_probs(np.array([0.1, 0.2, 0.7])))[0]
    syms = [2, 1, 0, 2, 2, 1] * 100
    assert range_encode(syms, cdf) == range_encode(syms, cdf)


def test_freqs_valid():
    f = freqs_from_probs(np.array([[0.0, 1.0, 0.0], [0.5, 0.25, 0.25]]))
    assert (f.sum(axis=1) == TOTAL).all() and (f >= 1).all()
    with pytest.raises(RangeCoderError):
        freqs_from_probs(np.ones(TOTAL) / TOTAL)


def test_zero_width_bin_rejected():
    with pytest.raises(RangeCoderError):
        range_encode([0], [0, 0, TOTAL])
    with pytest.raises(RangeCoderError):
        range_encode([0], [0, 10, TOTAL - 1])


def test_truncated_stream_detected():
    cdf = cdf_from_freqs(freqs_from_probs(np.full(200, 1 / 200)))[0]
    syms = list(range(200)) * 20
    blob = range_encode(syms, cdf)
    with pytest.raises(TruncatedStreamError):
        range_decode(blob[: len(blob) // 2], len(syms), cdf)
    with pytest.raises(TruncatedStreamError):
        RangeDecoder(b"\x00" * 3)

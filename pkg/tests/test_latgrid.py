from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mscs.latgrid import (
    LatentDims,
    OrderError,
    PatchOrder,
    StageMap,
    anchor_fraction,
    checkerboard_map,
    format_order,
    pad_image_dims,
    parse_order,
    raster_order,
    required_padding_multiple,
    stage_grid,
    stage_of_position,
)


def test_parse_raster_orders():
    assert parse_order("0123").stages == (0, 1, 2, 3)
    assert parse_order("0123456789abcdef") == raster_order(4)


def test_parse_reference_order_row_major():
    o = parse_order("0254" + "17b8" + "6cda" + "3ef9")
    assert o.n == 4
    assert o.stages[:4] == (0, 2, 5, 4)
    assert o.stages[4] == 1 and o.stages[6] == 11


@pytest.mark.parametrize("bad", ["0113", "012", "0124", "01234567", "0123456789abcdeg", "", "00"])
def test_parse_rejects(bad):
    with pytest.raises(OrderError):
        parse_order(bad)


def test_parse_accepts_non_raster_permutation():
    assert parse_order("0213").stages == (0, 2, 1, 3)


def test_n3_flagged_impractical():
    assert PatchOrder(3, tuple(range(9))).impractical
    assert not raster_order(2).impractical
    assert not raster_order(4).impractical


def test_unsupported_n():
    with pytest.raises(OrderError):
        PatchOrder(5, tuple(range(25)))


def test_round_trip_exhaustive_n2():
    for p in itertools.permutations(range(4)):
        o = PatchOrder(2, p)
        assert parse_order(format_order(o)) == o


@given(st.permutations(list(range(16))))
def test_round_trip_random_n4(perm):
    o = PatchOrder(4, tuple(perm))
    assert parse_order(format_order(o)) == o


def test_stage_of_position_examples():
    assert stage_of_position(parse_order("0123"), 0, 1) == 1
    assert stage_of_position(parse_order("0123"), 7, 4) == 2
    assert stage_of_position(parse_order("0231"), 1, 1) == 1


@given(st.permutations(list(range(16))), st.integers(0, 200), st.integers(0, 200))
def test_stage_is_periodic(perm, y, x):
    o = PatchOrder(4, tuple(perm))
    s = stage_of_position(o, y, x)
    assert s == stage_of_position(o, y + 4, x) == stage_of_position(o, y, x + 4)


def test_anchor_fractions():
    assert anchor_fraction(raster_order(2)) == Fraction(1, 4)
    assert anchor_fraction(raster_order(4)) == Fraction(1, 16)
    assert anchor_fraction(checkerboard_map()) == Fraction(1, 2)


def test_checkerboard_map_shape():
    cb = checkerboard_map()
    assert cb.num_stages == 2 and not cb.bijective
    assert sorted(cb.cells_of(0)) == [(0, 0), (1, 1)]
    assert len(cb.cells_of(1)) == 2
    assert checkerboard_map(1).stage_of == ((1, 0), (0, 1))


def test_stage_map_rejects_gaps():
    with pytest.raises(ValueError):
        StageMap(2, ((0, 2), (2, 0)))


def test_stage_counts_equal_hw_over_n2():
    for n, (h, w) in itertools.product((1, 2, 4), ((8, 8), (16, 24), (64, 32))):
        o = PatchOrder(n, tuple(np.random.default_rng(n).permutation(n * n).tolist()))
        counts = np.bincount(stage_grid(o, LatentDims(h, w)).ravel(), minlength=n * n)
        assert (counts == h * w // (n * n)).all()


@pytest.mark.parametrize("n,expected", [(1, 64), (2, 64), (3, 192), (4, 64)])
def test_padding_multiple(n, expected):
    assert required_padding_multiple(n) == expected


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_padding_multiple_is_least_common_multiple(n):
    m = required_padding_multiple(n)
    assert m % (16 * n) == 0 and m % 64 == 0
    # smallest positive common multiple, by search
    assert m == next(k for k in itertools.count(1) if k % (16 * n) == 0 and k % 64 == 0)


def test_pad_examples():
    assert pad_image_dims(768, 512, 4) == (768, 512, 0.0)
    ph, pw, ov = pad_image_dims(768, 512, 3)
    assert (ph, pw) == (768, 576)
    assert math.isclose(ov, 0.125)
    assert pad_image_dims(1, 1, 2) == (64, 64, 4095.0)


@given(st.integers(1, 3000), st.integers(1, 3000), st.sampled_from([1, 2, 3, 4]))
def test_pad_is_smallest_multiple(h, w, n):
    m = required_padding_multiple(n)
    ph, pw, _ = pad_image_dims(h, w, n)
    assert ph % m == 0 and pw % m == 0
    assert h <= ph < h + m and w <= pw < w + m


def test_latent_dims_validation():
    with pytest.raises(ValueError):
        LatentDims(0, 4)
    assert LatentDims(8, 12).divisible_by(4)
    assert not LatentDims(8, 10).divisible_by(4)

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mscs.ctxmask import (
    D4,
    EMPTY,
    OFFSETS,
    ContextMask,
    MaskError,
    ar_causal_mask,
    brute_force_mask,
    canonical_bits,
    clip_mask,
    four_adjacency_count,
    stage_mask,
    transform_mask,
)
from mscs.latgrid import LatentDims, PatchOrder, checkerboard_map, parse_order, raster_order
from mscs.ordersearch import REFERENCE_ORDER_4X4, random_orders

WINDOW = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3) if (dy, dx) != (0, 0)]


def offsets_of(mask):
    return set(mask.offsets())


def test_raster_2x2_stage1_six_offsets():
    expected = {(dy, dx) for dy in (-2, 0, 2) for dx in (-1, 1)}
    assert offsets_of(stage_mask(parse_order("0123"), 1)) == expected


def test_raster_2x2_stage2_two_full_rows():
    expected = {(dy, dx) for dy in (-1, 1) for dx in range(-2, 3)}
    assert offsets_of(stage_mask(parse_order("0123"), 2)) == expected


def test_raster_2x2_stage3_matches_grid():
    o = parse_order("0123")
    m = stage_mask(o, 3)
    assert m == brute_force_mask(o, 3, LatentDims(8, 8))
    # everything except the same-parity-both-axes cells, which are stage 3 themselves
    assert offsets_of(m) == {(dy, dx) for dy, dx in WINDOW if dy % 2 or dx % 2}


def test_stage0_is_empty():
    for o in (raster_order(2), raster_order(4), parse_order(REFERENCE_ORDER_4X4)):
        assert stage_mask(o, 0) == EMPTY
    assert brute_force_mask(raster_order(4), 0, LatentDims(16, 16)) == EMPTY


def test_checkerboard_stage1_opposite_parity():
    m = stage_mask(checkerboard_map(), 1)
    expected = {(dy, dx) for dy, dx in WINDOW if (dy + dx) % 2}
    assert offsets_of(m) == expected and len(m) == 12
    assert m == brute_force_mask(checkerboard_map(), 1, LatentDims(8, 8))
    assert four_adjacency_count(m) == 4


def test_checkerboard_parities_agree():
    for p in (0, 1):
        assert stage_mask(checkerboard_map(p), 1) == stage_mask(checkerboard_map(1 - p), 1)


def test_oracle_equivalence_all_n2():
    dims = LatentDims(8, 8)
    for p in itertools.permutations(range(4)):
        o = PatchOrder(2, p)
        for s in range(4):
            assert stage_mask(o, s) == brute_force_mask(o, s, dims)


def test_oracle_equivalence_random_n4():
    dims = LatentDims(16, 16)
    for o in random_orders(4, 100, seed=7) + [parse_order(REFERENCE_ORDER_4X4)]:
        for s in range(16):
            assert stage_mask(o, s) == brute_force_mask(o, s, dims)


def test_stage_out_of_range():
    with pytest.raises(MaskError):
        stage_mask(raster_order(2), 4)
    with pytest.raises(MaskError):
        stage_mask(raster_order(2), -1)


def test_brute_force_needs_room():
    with pytest.raises(MaskError):
        brute_force_mask(raster_order(2), 1, LatentDims(6, 6))
    with pytest.raises(MaskError):
        brute_force_mask(raster_order(4), 1, LatentDims(18, 16))


def test_non_uniform_stage_error():
    from mscs.latgrid import StageMap

    smap = StageMap(2, ((0, 1), (1, 2)))
    with pytest.raises(MaskError):
        stage_mask(smap, 1)


def test_union_covers_patch_at_n2():
    for p in itertools.permutations(range(4)):
        o = PatchOrder(2, p)
        for cell in range(4):
            cy, cx = divmod(cell, 2)
            seen = set()
            for s in range(4):
                if o.stages[cell] != s:
                    continue
                for dy, dx in stage_mask(o, s).offsets():
                    seen.add(((cy + dy) % 2, (cx + dx) % 2))
            # decoded earlier: every other cell whose stage is lower
            assert seen == {divmod(c, 2) for c in range(4) if o.stages[c] < o.stages[cell]}
        last = o.stages.index(3)
        ly, lx = divmod(last, 2)
        wrapped = {((ly + dy) % 2, (lx + dx) % 2) for dy, dx in stage_mask(o, 3).offsets()}
        assert wrapped == {divmod(c, 2) for c in range(4) if c != last}


def test_stage_predicate_monotone():
    for o in random_orders(4, 20, seed=3):
        for s in range(15):
            # at a fixed cell, "neighbour stage < s" stays true for every later s
            py, px = o.cell_of_stage(s)
            smap = o.stage_map()
            for t in range(s, 16):
                for dy, dx in OFFSETS:
                    if smap.stage_of[(py + dy) % 4][(px + dx) % 4] < s:
                        assert smap.stage_of[(py + dy) % 4][(px + dx) % 4] < t


def test_clip_examples():
    dims = LatentDims(64, 64)
    base = stage_mask(raster_order(2), 3)
    assert clip_mask(base, 4, 4, dims).clipped == base
    corner = clip_mask(base, 0, 0, dims).clipped
    assert all(dy >= 0 and dx >= 0 for dy, dx in corner.offsets())
    assert offsets_of(corner) == {(dy, dx) for dy, dx in base.offsets() if dy >= 0 and dx >= 0}
    edge = clip_mask(base, 0, 5, dims).clipped
    assert offsets_of(edge) == {(dy, dx) for dy, dx in base.offsets() if dy >= 0}
    assert corner.issubset(base)
    with pytest.raises(ValueError):
        clip_mask(base, 64, 0, dims)


def test_ar_causal_mask():
    m = ar_causal_mask()
    assert (-1, 2) in m and (0, 1) not in m
    assert len(m) == sum(1 for dy, dx in WINDOW if dy < 0 or (dy == 0 and dx < 0)) == 12
    assert m != stage_mask(checkerboard_map(), 1)


def test_four_adjacency_examples():
    assert four_adjacency_count(stage_mask(parse_order("0231"), 1)) == 0
    assert four_adjacency_count(EMPTY) == 0


def test_center_never_available():
    with pytest.raises(MaskError):
        ContextMask.from_offsets([(0, 0)])
    with pytest.raises(ValueError):
        ContextMask.from_offsets([(3, 0)])


def test_render():
    text = stage_mask(parse_order("0123"), 2).render()
    assert text.splitlines() == [".....", "#####", "..o..", "#####", "....."]
    assert EMPTY.render().replace("o", ".") == "\n".join(["....."] * 5)


def test_from_grid_round_trip():
    m = stage_mask(parse_order(REFERENCE_ORDER_4X4), 9)
    assert ContextMask.from_grid(m.avail) == m


masks = st.integers(0, (1 << 25) - 1).map(lambda b: ContextMask(b & ~(1 << 12)))


@given(masks)
def test_d4_group_closure(m):
    orbit = {transform_mask(m, g) for g in D4}
    assert len(orbit) in (1, 2, 4, 8)
    assert canonical_bits(m.bits) == min(o.bits for o in orbit)
    for o in orbit:
        assert canonical_bits(o.bits) == canonical_bits(m.bits)

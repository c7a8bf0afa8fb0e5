"""Context-availability masks over the 5x5 context window.

A mask is stored as a 25-bit integer; bit ``(dy + 2) * 5 + (dx + 2)`` is set
when the latent at offset ``(dy, dx)`` is already decoded.  Iterating a mask
always yields offsets in row-major order, which fixes the accumulation order
of every predictor built on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .latgrid import LatentDims, MapLike, as_stage_map, stage_grid

RADIUS = 2
SIDE = 2 * RADIUS + 1
OFFSETS: tuple[tuple[int, int], ...] = tuple(
    (dy, dx) for dy in range(-RADIUS, RADIUS + 1) for dx in range(-RADIUS, RADIUS + 1)
)
CENTER_BIT = OFFSETS.index((0, 0))
FOUR_ADJACENT = ((-1, 0), (1, 0), (0, -1), (0, 1))


def offset_bit(dy: int, dx: int) -> int:
    if abs(dy) > RADIUS or abs(dx) > RADIUS:
        raise ValueError(f"offset ({dy}, {dx}) lies outside the 5x5 window")
    return 1 << ((dy + RADIUS) * SIDE + (dx + RADIUS))


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class ContextMask:
    bits: int = 0

    def __post_init__(self):
        if self.bits >> (SIDE * SIDE):
            raise MaskError("mask has bits outside the 5x5 window")
        if self.bits >> CENTER_BIT & 1:
            raise MaskError("a position can never be its own context")

    @classmethod
    def from_offsets(cls, offsets) -> "ContextMask":
        bits = 0
        for dy, dx in offsets:
            bits |= offset_bit(dy, dx)
        return cls(bits)

    @classmethod
    def from_grid(cls, avail) -> "ContextMask":
        a = np.asarray(avail, dtype=bool)
        return cls.from_offsets((dy, dx) for dy, dx in OFFSETS if a[dy + RADIUS, dx + RADIUS])

    def offsets(self) -> list[tuple[int, int]]:
        return [o for i, o in enumerate(OFFSETS) if self.bits >> i & 1]

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.offsets())

    def __contains__(self, offset) -> bool:
        dy, dx = offset
        if abs(dy) > RADIUS or abs(dx) > RADIUS:
            return False
        return bool(self.bits & offset_bit(dy, dx))

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def issubset(self, other: "ContextMask") -> bool:
        return self.bits & ~other.bits == 0

    @property
    def avail(self) -> np.ndarray:
        grid = np.zeros((SIDE, SIDE), dtype=bool)
        for dy, dx in self.offsets():
            grid[dy + RADIUS, dx + RADIUS] = True
        return grid

    def render(self) -> str:
        """ASCII view: ``#`` available, ``.`` unavailable, ``o`` the decoded position."""
        rows = []
        for dy in range(-RADIUS, RADIUS + 1):
            row = ""
            for dx in range(-RADIUS, RADIUS + 1):
                if (dy, dx) == (0, 0):
                    row += "o"
                else:
                    row += "#" if (dy, dx) in self else "."
            rows.append(row)
        return "\n".join(rows)


@dataclass(frozen=True)
class BorderClippedMask:
    base: ContextMask
    clipped: ContextMask

    def offsets(self) -> list[tuple[int, int]]:
        return self.clipped.offsets()


EMPTY = ContextMask(0)


def stage_mask(smap: MapLike, stage: int) -> ContextMask:
    """Offsets already decoded when the cells of ``stage`` are decoded.

    Uses the patch periodicity: the neighbour at ``(dy, dx)`` of cell
    ``(py, px)`` sits in cell ``((py + dy) mod n, (px + dx) mod n)``.
    """
    smap = as_stage_map(smap)
    if not 0 <= stage < smap.num_stages:
        raise MaskError(f"stage {stage} out of range 0..{smap.num_stages - 1}")
    n = smap.n
    masks = set()
    for py, px in smap.cells_of(stage):
        bits = 0
        for i, (dy, dx) in enumerate(OFFSETS):
            if smap.stage_of[(py + dy) % n][(px + dx) % n] < stage:
                bits |= 1 << i
        masks.add(bits)
    if len(masks) != 1:
        raise MaskError(f"cells of stage {stage} see different contexts; unsupported stage map")
    return ContextMask(masks.pop())


def brute_force_mask(smap: MapLike, stage: int, dims: LatentDims) -> ContextMask:
    """Read the stage mask off a materialized full grid (independent check of ``stage_mask``)."""
    smap = as_stage_map(smap)
    if not dims.divisible_by(smap.n):
        raise MaskError(f"dims {dims.height}x{dims.width} not divisible by n={smap.n}")
    if dims.height < 8 or dims.width < 8:
        raise MaskError("brute-force mask needs a grid of at least 8x8")
    if not 0 <= stage < smap.num_stages:
        raise MaskError(f"stage {stage} out of range 0..{smap.num_stages - 1}")
    grid = stage_grid(smap, dims)
    inner = grid[RADIUS:-RADIUS, RADIUS:-RADIUS]
    ys, xs = np.nonzero(inner == stage)
    if len(ys) == 0:
        raise MaskError("no interior position of the requested stage")
    y, x = int(ys[0]) + RADIUS, int(xs[0]) + RADIUS
    return ContextMask.from_offsets(
        (dy, dx) for dy, dx in OFFSETS if (dy, dx) != (0, 0) and grid[y + dy, x + dx] < stage
    )


def clip_mask(mask: ContextMask, y: int, x: int, dims: LatentDims) -> BorderClippedMask:
    if not (0 <= y < dims.height and 0 <= x < dims.width):
        raise ValueError(f"position ({y}, {x}) outside {dims.height}x{dims.width}")
    keep = ContextMask.from_offsets(
        (dy, dx)
        for dy, dx in mask.offsets()
        if 0 <= y + dy < dims.height and 0 <= x + dx < dims.width
    )
    return BorderClippedMask(mask, keep)


def inside_bits(y: int, x: int, dims: LatentDims) -> int:
    """Bits of the window offsets that land inside the grid at ``(y, x)``."""
    bits = 0
    for i, (dy, dx) in enumerate(OFFSETS):
        if 0 <= y + dy < dims.height and 0 <= x + dx < dims.width:
            bits |= 1 << i
    return bits & ~(1 << CENTER_BIT)


def ar_causal_mask() -> ContextMask:
    return ContextMask.from_offsets(
        (dy, dx) for dy, dx in OFFSETS if dy < 0 or (dy == 0 and dx < 0)
    )


def four_adjacency_count(mask: ContextMask) -> int:
    return sum(o in mask for o in FOUR_ADJACENT)


# Dihedral group of the square acting on (dy, dx).
D4 = (
    lambda dy, dx: (dy, dx),
    lambda dy, dx: (dx, -dy),
    lambda dy, dx: (-dy, -dx),
    lambda dy, dx: (-dx, dy),
    lambda dy, dx: (dy, -dx),
    lambda dy, dx: (-dy, dx),
    lambda dy, dx: (dx, dy),
    lambda dy, dx: (-dx, -dy),
)


def transform_mask(mask: ContextMask, g) -> ContextMask:
    return ContextMask.from_offsets(g(dy, dx) for dy, dx in mask.offsets())


def _build_perm_tables():
    tables = []
    for g in D4:
        tables.append([OFFSETS.index(g(dy, dx)) for dy, dx in OFFSETS])
    return tables


_D4_PERMS = _build_perm_tables()


def canonical_bits(bits: int) -> int:
    """Smallest bit pattern in the D4 orbit of ``bits``."""
    best = bits
    for perm in _D4_PERMS[1:]:
        out = 0
        b = bits
        i = 0
        while b:
            if b & 1:
                out |= 1 << perm[i]
            b >>= 1
            i += 1
        if out < best:
            best = out
    return best

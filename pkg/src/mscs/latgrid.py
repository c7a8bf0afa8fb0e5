"""Patch-grid geometry for multistage context models.

A latent grid is tiled by square ``n x n`` patches.  Every patch shares the
same decoding schedule, so the stage of any latent position is a periodic
function of its coordinates.  Orders are written as ``n*n`` hex digits in
row-major order, top row first (``"0123"`` is the 2x2 raster scan).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

SUPPORTED_N = (1, 2, 3, 4)
_HEX = "0123456789abcdef"


class OrderError(ValueError):
    """Raised for malformed decoding orders or stage maps."""


@dataclass(frozen=True)
class LatentDims:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"latent dims must be >= 1, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    def divisible_by(self, n: int) -> bool:
        return self.height % n == 0 and self.width % n == 0


@dataclass(frozen=True)
class StageMap:
    """Assignment of within-patch cells to decoding stages.

    ``stage_of[row][col]`` is the stage of cell ``(row, col)``.  Stages are
    numbered ``0 .. num_stages - 1`` and every stage owns at least one cell.
    """

    n: int
    stage_of: tuple[tuple[int, ...], ...]
    num_stages: int = field(init=False)

    def __post_init__(self):
        grid = tuple(tuple(int(s) for s in row) for row in self.stage_of)
        if len(grid) != self.n or any(len(row) != self.n for row in grid):
            raise OrderError(f"stage grid must be {self.n}x{self.n}")
        flat = [s for row in grid for s in row]
        m = max(flat) + 1
        if min(flat) < 0 or set(flat) != set(range(m)):
            raise OrderError(f"stages must cover 0..{m - 1} without gaps, got {flat}")
        object.__setattr__(self, "stage_of", grid)
        object.__setattr__(self, "num_stages", m)

    @property
    def bijective(self) -> bool:
        return self.num_stages == self.n * self.n

    def stage(self, y: int, x: int) -> int:
        return self.stage_of[y % self.n][x % self.n]

    def cells_of(self, stage: int) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.n)
            for c in range(self.n)
            if self.stage_of[r][c] == stage
        ]


@dataclass(frozen=True)
class PatchOrder:
    """Bijective decoding order: one cell of every patch per stage."""

    n: int
    stages: tuple[int, ...]

    def __post_init__(self):
        if self.n not in SUPPORTED_N:
            raise OrderError(f"patch size n={self.n} not supported (use one of {SUPPORTED_N})")
        stages = tuple(int(s) for s in self.stages)
        if sorted(stages) != list(range(self.n * self.n)):
            raise OrderError(f"stages {stages} are not a permutation of 0..{self.n * self.n - 1}")
        object.__setattr__(self, "stages", stages)

    @property
    def impractical(self) -> bool:
        # n=3 forces 192-pixel padding on real images.
        return required_padding_multiple(self.n) > 64

    @property
    def num_stages(self) -> int:
        return self.n * self.n

    def stage_map(self) -> StageMap:
        n = self.n
        return StageMap(n, tuple(self.stages[r * n:(r + 1) * n] for r in range(n)))

    def cell_of_stage(self, stage: int) -> tuple[int, int]:
        i = self.stages.index(stage)
        return divmod(i, self.n)

    def __str__(self):
        return format_order(self)


MapLike = Union[StageMap, PatchOrder]


def as_stage_map(m: MapLike) -> StageMap:
    return m.stage_map() if isinstance(m, PatchOrder) else m


def parse_order(text: str) -> PatchOrder:
    """Parse a row-major hex order string such as ``"0123"``."""
    text = text.strip().lower()
    n = math.isqrt(len(text))
    if n * n != len(text) or n not in SUPPORTED_N:
        raise OrderError(f"order {text!r}: length {len(text)} is not n*n for n in {SUPPORTED_N}")
    stages = []
    for ch in text:
        if ch not in _HEX:
            raise OrderError(f"order {text!r}: {ch!r} is not a hex digit")
        stages.append(_HEX.index(ch))
    if len(set(stages)) != len(stages):
        raise OrderError(f"order {text!r}: duplicate stage digit")
    if max(stages) >= n * n:
        raise OrderError(f"order {text!r}: stage digit out of range for n={n}")
    return PatchOrder(n, tuple(stages))


def format_order(order: PatchOrder) -> str:
    return "".join(_HEX[s] for s in order.stages)


def raster_order(n: int) -> PatchOrder:
    return PatchOrder(n, tuple(range(n * n)))


def checkerboard_map(parity: int = 0) -> StageMap:
    """Two-stage checkerboard; cells with ``(y + x) % 2 == parity`` are anchors."""
    if parity not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    return StageMap(2, tuple(tuple(0 if (r + c) % 2 == parity else 1 for c in range(2)) for r in range(2)))


def stage_of_position(order: MapLike, y: int, x: int) -> int:
    if y < 0 or x < 0:
        raise ValueError("positions must be non-negative")
    if isinstance(order, PatchOrder):
        n = order.n
        return order.stages[(y % n) * n + (x % n)]
    return order.stage(y, x)


def stage_grid(order: MapLike, dims: LatentDims):
    """Materialize the stage of every position of ``dims`` as an int array."""
    smap = as_stage_map(order)
    tile = np.asarray(smap.stage_of, dtype=np.int64)
    reps = (-(-dims.height // smap.n), -(-dims.width // smap.n))
    return np.tile(tile, reps)[: dims.height, : dims.width]


def anchor_fraction(m: MapLike) -> Fraction:
    smap = as_stage_map(m)
    return Fraction(len(smap.cells_of(0)), smap.n * smap.n)


def required_padding_multiple(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.lcm(16 * n, 64)


def pad_image_dims(height: int, width: int, n: int) -> tuple[int, int, float]:
    """Smallest image size >= (height, width) that splits into n x n latent patches.

    Returns the padded height and width plus the relative pixel overhead.
    """
    if height < 1 or width < 1:
        raise ValueError("image dims must be >= 1")
    m = required_padding_multiple(n)
    ph = -(-height // m) * m
    pw = -(-width // m) * m
    return ph, pw, ph * pw / (height * width) - 1.0


def check_divisible(dims: LatentDims, n: int) -> None:
    if not dims.divisible_by(n):
        raise ValueError(
            f"latent grid {dims.height}x{dims.width} is not divisible by patch size {n}"
        )


def order_from_stages(n: int, stages: Sequence[int]) -> PatchOrder:
    return PatchOrder(n, tuple(stages))

"""Search for the best (or worst) within-patch decoding order.

The rate of a stage depends only on the *set* of cells decoded before it,
not on their internal order.  The total cost of an order is therefore a sum
of set-function terms ``cost(cell, decoded_set)``, which makes the problem a
shortest path over the subset lattice: 2^16 states for 4x4 patches instead
of 16! permutations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ctxmask import OFFSETS, ContextMask, canonical_bits
from .gaussfield import (
    DEFAULT_QUANT_NOISE,
    FieldModel,
    OrderScore,
    mask_rate,
    theoretical_order_rate,
)
from .latgrid import PatchOrder, format_order, parse_order

REFERENCE_ORDER_4X4 = "025417b86cda3ef9"
TIE_TOL = 1e-12


class SearchError(ValueError):
    pass


def score_order(
    order: PatchOrder | str,
    model: FieldModel,
    quant_noise: float = DEFAULT_QUANT_NOISE,
) -> OrderScore:
    if isinstance(order, str):
        order = parse_order(order)
    return theoretical_order_rate(model, order, quant_noise)


# --- symmetry -------------------------------------------------------------


def transform_order(order: PatchOrder, g) -> PatchOrder:
    """Apply a symmetry of the square to the cell coordinates of ``order``.

    ``g`` acts on centred, doubled coordinates so that it maps the patch onto
    itself; the stage of cell ``c`` moves to cell ``g(c)``.
    """
    n = order.n
    stages = [0] * (n * n)
    for r in range(n):
        for c in range(n):
            u, v = g(2 * r - (n - 1), 2 * c - (n - 1))
            r2, c2 = (u + n - 1) // 2, (v + n - 1) // 2
            stages[r2 * n + c2] = order.stages[r * n + c]
    return PatchOrder(n, tuple(stages))


def d4_orbit(order: PatchOrder) -> list[PatchOrder]:
    from .ctxmask import D4

    seen = {}
    for g in D4:
        t = transform_order(order, g)
        seen.setdefault(t.stages, t)
    return sorted(seen.values(), key=format_order)


def symmetry_classes(n: int, orders=None) -> list[list[PatchOrder]]:
    """Group orders into D4 orbits; every order of the patch when ``orders`` is None."""
    if orders is None:
        if n > 3:
            raise SearchError("enumerating every order is only possible for n <= 3; pass orders explicitly")
        orders = (PatchOrder(n, p) for p in itertools.permutations(range(n * n)))
    else:
        orders = [parse_order(o) if isinstance(o, str) else o for o in orders]
    classes: dict[str, list[PatchOrder]] = {}
    for o in orders:
        key = format_order(d4_orbit(o)[0])
        members = classes.setdefault(key, [])
        if o not in members:
            members.append(o)
    return [sorted(v, key=format_order) for _, v in sorted(classes.items())]


# --- subset cost table ----------------------------------------------------


def _relative_cell(n: int, cell: int, other: int) -> int:
    cy, cx = divmod(cell, n)
    oy, ox = divmod(other, n)
    return ((oy - cy) % n) * n + (ox - cx) % n


def induced_mask(n: int, relative_cells: int) -> ContextMask:
    """Window offsets whose wrapped cell (relative to the decoded cell) is in the set."""
    bits = 0
    for i, (dy, dx) in enumerate(OFFSETS):
        if (dy, dx) == (0, 0):
            continue
        if relative_cells >> ((dy % n) * n + dx % n) & 1:
            bits |= 1 << i
    return ContextMask(bits)


@dataclass
class SubsetCostTable:
    """``cost[c, S]``: bits to decode cell ``c`` once exactly the cells in ``S`` are decoded.

    Subsets are ``n*n``-bit integers over row-major cell indices.  Entries with
    ``c`` in ``S`` are NaN.
    """

    n: int
    cost: np.ndarray
    distinct_masks: int
    lookups: int
    model: FieldModel
    quant_noise: float

    @property
    def cells(self) -> int:
        return self.n * self.n

    @property
    def full(self) -> int:
        return (1 << self.cells) - 1

    @property
    def hit_rate(self) -> float:
        return 1.0 - self.distinct_masks / self.lookups

    def __call__(self, cell: int, subset: int) -> float:
        return float(self.cost[cell, subset])


def build_subset_costs(
    n: int,
    model: FieldModel,
    quant_noise: float = DEFAULT_QUANT_NOISE,
) -> SubsetCostTable:
    if n not in (1, 2, 3, 4):
        raise SearchError(f"subset tables support n in 1..4, got {n}")
    cells = n * n
    full = 1 << cells
    # rate for every relative-cell pattern; bit 0 (the cell itself) never set
    rel_rate = np.full(full, np.nan)
    rate_by_mask: dict[int, float] = {}
    canon_seen: set[int] = set()
    for rel in range(0, full, 2):
        mask = induced_mask(n, rel)
        if mask.bits not in rate_by_mask:
            canon_seen.add(canonical_bits(mask.bits))
            rate_by_mask[mask.bits] = mask_rate(model, mask, quant_noise)
        rel_rate[rel] = rate_by_mask[mask.bits]

    subsets = np.arange(full, dtype=np.int64)
    cost = np.full((cells, full), np.nan)
    for c in range(cells):
        rel = np.zeros(full, dtype=np.int64)
        for j in range(cells):
            rel |= ((subsets >> j) & 1) << _relative_cell(n, c, j)
        row = rel_rate[rel]
        row[(subsets >> c) & 1 == 1] = np.nan
        cost[c] = row
    lookups = cells * (full // 2)
    return SubsetCostTable(n, cost, len(canon_seen), lookups, model, quant_noise)


def _stages_from_sequence(n: int, seq) -> PatchOrder:
    stages = [0] * (n * n)
    for s, cell in enumerate(seq):
        stages[cell] = s
    return PatchOrder(n, tuple(stages))


def score_from_table(table: SubsetCostTable, order: PatchOrder) -> OrderScore:
    seq = [order.stages.index(s) for s in range(order.num_stages)]
    decoded = 0
    per_stage = []
    for c in seq:
        per_stage.append(table(c, decoded))
        decoded |= 1 << c
    return OrderScore(order, tuple(per_stage), sum(per_stage) / len(per_stage))


# --- exact searches -------------------------------------------------------


def _ranked(scores: list[OrderScore], worst: bool) -> list[OrderScore]:
    if worst:
        return sorted(scores, key=lambda s: (-s.total_bits_per_position, format_order(s.order)))
    return sorted(scores, key=lambda s: (s.total_bits_per_position, format_order(s.order)))


def exhaustive_search(
    n: int,
    model: FieldModel,
    worst: bool = False,
    allow_n3: bool = False,
    quant_noise: float = DEFAULT_QUANT_NOISE,
) -> list[OrderScore]:
    """Score every order of an n x n patch, best first (worst first with ``worst``)."""
    if n >= 4:
        raise SearchError(f"{math.factorial(n * n)} orders for n={n}; use dp_search")
    if n == 3 and not allow_n3:
        raise SearchError("n=3 enumerates 362880 orders; pass allow_n3=True")
    if n <= 2:
        scores = [
            score_order(PatchOrder(n, p), model, quant_noise)
            for p in itertools.permutations(range(n * n))
        ]
        return _ranked(scores, worst)

    table = build_subset_costs(n, model, quant_noise)
    cells = n * n
    perms = np.array(list(itertools.permutations(range(cells))), dtype=np.int64)  # stage -> cell
    decoded = np.zeros(len(perms), dtype=np.int64)
    per_stage = np.empty(perms.shape, dtype=float)
    total = np.zeros(len(perms))
    for s in range(cells):
        per_stage[:, s] = table.cost[perms[:, s], decoded]
        total = total + per_stage[:, s]
        decoded |= np.int64(1) << perms[:, s]
    total = total / cells
    scores = []
    for i in range(len(perms)):
        stages = np.empty(cells, dtype=np.int64)
        stages[perms[i]] = np.arange(cells)
        scores.append(OrderScore(PatchOrder(n, tuple(stages.tolist())), tuple(per_stage[i].tolist()), float(total[i])))
    return _ranked(scores, worst)


@dataclass
class DPResult:
    score: OrderScore
    optimal_orders: list[PatchOrder]
    table: SubsetCostTable = field(repr=False)
    value: np.ndarray = field(repr=False)


def _dp_values(table: SubsetCostTable, worst: bool) -> np.ndarray:
    cells = table.cells
    full = 1 << cells
    subsets = np.arange(full, dtype=np.int64)
    popcount = np.zeros(full, dtype=np.int64)
    for j in range(cells):
        popcount += (subsets >> j) & 1
    fill = -np.inf if worst else np.inf
    value = np.full(full, fill)
    value[0] = 0.0
    for k in range(1, cells + 1):
        layer = subsets[popcount == k]
        best = np.full(len(layer), fill)
        for c in range(cells):
            has = (layer >> c) & 1 == 1
            prev = layer[has] ^ (1 << c)
            cand = value[prev] + table.cost[c, prev]
            cur = best[has]
            best[has] = np.maximum(cur, cand) if worst else np.minimum(cur, cand)
        value[layer] = best
    return value


def _optimal_sequences(table: SubsetCostTable, value: np.ndarray, limit: int) -> list[list[int]]:
    """All stage sequences attaining the optimum (up to ``limit`` of them)."""
    out: list[list[int]] = []

    def walk(subset: int, tail: list[int]):
        if len(out) >= limit:
            return
        if subset == 0:
            out.append(tail[::-1])
            return
        target = value[subset]
        tol = TIE_TOL * max(1.0, abs(target))
        for c in range(table.cells):
            if subset >> c & 1:
                prev = subset ^ (1 << c)
                if abs(value[prev] + table.cost[c, prev] - target) <= tol:
                    tail.append(c)
                    walk(prev, tail)
                    tail.pop()

    walk(table.full, [])
    return out


def dp_search(
    n: int,
    model: FieldModel,
    worst: bool = False,
    table: SubsetCostTable | None = None,
    quant_noise: float = DEFAULT_QUANT_NOISE,
    tie_limit: int = 20000,
) -> DPResult:
    """Exact optimum of the additive stage-cost objective over all n*n! orders.

    Among orders tied at the optimum, the lexicographically smallest hex
    string is reported.
    """
    if n not in (1, 2, 3, 4):
        raise SearchError(f"dp_search supports n in 1..4, got {n}")
    if table is None:
        table = build_subset_costs(n, model, quant_noise)
    value = _dp_values(table, worst)
    seqs = _optimal_sequences(table, value, tie_limit)
    orders = sorted({_stages_from_sequence(n, s) for s in seqs}, key=format_order)
    best = score_from_table(table, orders[0])
    return DPResult(best, orders, table, value)


@dataclass
class BranchAndBoundResult:
    score: OrderScore
    nodes: int
    pruned: bool

    @property
    def pruning_ratio(self) -> float:
        """Expanded prefix nodes relative to the number of complete orders."""
        return self.nodes / math.factorial(len(self.score.order.stages))


def branch_and_bound_search(
    n: int,
    model: FieldModel,
    prune: bool = True,
    table: SubsetCostTable | None = None,
    quant_noise: float = DEFAULT_QUANT_NOISE,
) -> BranchAndBoundResult:
    """Depth-first search over order prefixes with admissible pruning.

    The remaining cells can never cost less than with every other cell
    already decoded (rates only fall as context grows), so
    ``prefix + sum(cost(c, all - c))`` bounds every completion; the next cell
    additionally pays its least excess over that floor.  A prefix is also
    dropped when the same decoded set was already reached more cheaply.
    """
    if n not in (1, 2, 3, 4):
        raise SearchError(f"branch_and_bound_search supports n in 1..4, got {n}")
    if table is None:
        table = build_subset_costs(n, model, quant_noise)
    cells = n * n
    full = table.full
    floor = [table(c, full ^ (1 << c)) for c in range(cells)]
    cost = table.cost
    by_set = cost.T.tolist()
    # whichever cell is decoded next pays at least its floor plus the least
    # excess over the floor available from the current set
    excess = cost - np.asarray(floor)[:, None]
    next_excess = np.nan_to_num(np.nanmin(np.where(np.isnan(excess), np.inf, excess), axis=0), posinf=0.0)
    next_excess = np.maximum(next_excess, 0.0).tolist()

    best_cost = math.inf
    best_seq: list[int] = []
    reached: dict[int, float] = {}
    nodes = 0
    seq: list[int] = []

    def dfs(decoded: int, spent: float, rest_floor: float):
        nonlocal best_cost, best_seq, nodes
        if decoded == full:
            if spent < best_cost:
                best_cost, best_seq = spent, list(seq)
            return
        row = by_set[decoded]
        children = sorted((row[c], c) for c in range(cells) if not decoded >> c & 1)
        for step, c in children:
            nxt = decoded | (1 << c)
            total = spent + step
            nodes += 1
            if prune:
                # a set reached more cheaply before dominates this prefix; record
                # even bound-pruned arrivals, the bound depends only on the set
                if reached.get(nxt, math.inf) <= total:
                    continue
                reached[nxt] = total
                if total + rest_floor - floor[c] + next_excess[nxt] >= best_cost:
                    continue
            seq.append(c)
            dfs(nxt, total, rest_floor - floor[c])
            seq.pop()

    dfs(0, 0.0, sum(floor))
    order = _stages_from_sequence(n, best_seq)
    return BranchAndBoundResult(score_from_table(table, order), nodes, prune)


def random_orders(n: int, count: int, seed: int = 0) -> list[PatchOrder]:
    rng = np.random.Generator(np.random.Philox(seed))
    return [PatchOrder(n, tuple(rng.permutation(n * n).tolist())) for _ in range(count)]

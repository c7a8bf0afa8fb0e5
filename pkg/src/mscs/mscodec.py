"""Multistage entropy codec for quantized latent grids.

Positions are coded stage by stage (raster order inside a stage).  Each
position is predicted linearly from its already-decoded neighbours inside
the 5x5 window, and its integer symbol is range coded against the
discretized conditional Gaussian.  Prediction inside a stage only reads
earlier stages, so it is computed for the whole stage at once; entropy
decoding itself stays sequential.
"""

from __future__ import annotations

import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .ctxmask import OFFSETS, ContextMask, ar_causal_mask, stage_mask
from .gaussfield import (
    DEFAULT_QUANT_NOISE,
    FieldModel,
    cond_stats,
    mask_rate,
    sample_field,
    theoretical_order_rate,
)
from .latgrid import (
    LatentDims,
    PatchOrder,
    StageMap,
    anchor_fraction,
    checkerboard_map,
    format_order,
    parse_order,
    stage_grid,
)
from .rangecoder import TOTAL, RangeDecoder, RangeEncoder, freqs_from_probs

MAGIC = b"MSCS"
VERSION = 1
MODE_CODES = {"nocontext": 0, "checkerboard": 1, "ar": 2, "multistage": 3}
KIND_CODES = {"separable": 0, "isotropic": 1}
_HEADER = struct.Struct(">4sBBBBB")
_DIMS = struct.Struct(">II")
_MODEL = struct.Struct(">dddI")
_LEN = struct.Struct(">I")


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecMode:
    kind: str
    order: PatchOrder | None = None
    parity: int = 0

    def __post_init__(self):
        if self.kind not in MODE_CODES:
            raise CodecError(f"unknown mode {self.kind!r}")
        if (self.kind == "multistage") != (self.order is not None):
            raise CodecError("multistage mode needs an order, other modes take none")

    @classmethod
    def multistage(cls, order: PatchOrder | str) -> "CodecMode":
        return cls("multistage", parse_order(order) if isinstance(order, str) else order)

    @property
    def n(self) -> int:
        if self.kind == "multistage":
            return self.order.n
        return 2 if self.kind == "checkerboard" else 1

    @property
    def label(self) -> str:
        if self.kind == "multistage":
            return f"multistage:{format_order(self.order)}"
        return self.kind

    def stage_map(self) -> StageMap | None:
        if self.kind == "multistage":
            return self.order.stage_map()
        if self.kind == "checkerboard":
            return checkerboard_map(self.parity)
        if self.kind == "nocontext":
            return StageMap(1, ((0,),))
        return None

    def num_stages(self, dims: LatentDims) -> int:
        return dims.size if self.kind == "ar" else self.stage_map().num_stages

    def anchor_fraction(self):
        if self.kind == "ar":
            raise CodecError("the AR model has a single anchor, not a periodic fraction")
        return anchor_fraction(self.stage_map())

    def base_mask(self, stage: int) -> ContextMask:
        if self.kind == "ar":
            return ar_causal_mask()
        return stage_mask(self.stage_map(), stage)

    def check_dims(self, dims: LatentDims) -> None:
        if dims.height < 8 or dims.width < 8:
            raise CodecError("the codec needs grids of at least 8x8")
        if not dims.divisible_by(self.n):
            raise CodecError(f"grid {dims.height}x{dims.width} is not divisible by n={self.n}")


def parse_mode(text: str) -> CodecMode:
    """``nocontext``, ``checkerboard``, ``ar`` or ``multistage:<order>``."""
    kind, _, arg = text.partition(":")
    if kind == "multistage":
        return CodecMode.multistage(arg)
    if arg:
        raise CodecError(f"mode {kind!r} takes no argument")
    return CodecMode(kind)


def clamp_bound(model: FieldModel) -> int:
    return math.ceil(16 * model.sigma) + 1


@dataclass
class QuantGrid:
    dims: LatentDims
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.shape != (self.dims.height, self.dims.width):
            raise CodecError("values do not match dims")

    def __eq__(self, other):
        return (
            isinstance(other, QuantGrid)
            and self.dims == other.dims
            and np.array_equal(self.values, other.values)
        )


def quantize(field: np.ndarray, model: FieldModel) -> QuantGrid:
    """Round to nearest and clamp to the codec alphabet ``[-B, B]``."""
    b = clamp_bound(model)
    vals = np.clip(np.rint(field), -b, b).astype(np.int64)
    return QuantGrid(LatentDims(*vals.shape), vals)


@dataclass(frozen=True)
class Predictor:
    offsets: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    cond_variance: float


class PredictorCache:
    """Predictors keyed by the border-clipped mask pattern."""

    def __init__(self, model: FieldModel, quant_noise: float):
        self.model = model
        self.quant_noise = quant_noise
        self._cache: dict[int, Predictor] = {}

    def get(self, bits: int) -> Predictor:
        pred = self._cache.get(bits)
        if pred is None:
            st = cond_stats(self.model, ContextMask(bits), self.quant_noise)
            pred = Predictor(st.offsets, tuple(float(w) for w in st.weights), st.cond_variance)
            self._cache[bits] = pred
        return pred

    def __len__(self):
        return len(self._cache)


@dataclass
class StagePlan:
    """Positions of one stage, grouped by clipped mask pattern."""

    stage: int
    ys: np.ndarray
    xs: np.ndarray
    groups: list[tuple[int, np.ndarray]]  # (clipped mask bits, indices into ys/xs)


def _inside_table(dims: LatentDims) -> np.ndarray:
    """Bit pattern of in-grid window offsets for every position."""
    ys, xs = np.mgrid[0 : dims.height, 0 : dims.width]
    bits = np.zeros((dims.height, dims.width), dtype=np.int64)
    for i, (dy, dx) in enumerate(OFFSETS):
        if (dy, dx) == (0, 0):
            continue
        ok = (ys + dy >= 0) & (ys + dy < dims.height) & (xs + dx >= 0) & (xs + dx < dims.width)
        bits |= ok.astype(np.int64) << i
    return bits


def plan(mode: CodecMode, dims: LatentDims) -> list[StagePlan]:
    mode.check_dims(dims)
    inside = _inside_table(dims)
    if mode.kind == "ar":
        base = ar_causal_mask().bits
        clipped = (inside & base).ravel()
        ys, xs = np.divmod(np.arange(dims.size), dims.width)
        return [
            StagePlan(i, ys[i : i + 1], xs[i : i + 1], [(int(clipped[i]), np.array([0]))])
            for i in range(dims.size)
        ]
    grid = stage_grid(mode.stage_map(), dims)
    plans = []
    for s in range(mode.stage_map().num_stages):
        ys, xs = np.nonzero(grid == s)
        clipped = inside[ys, xs] & mode.base_mask(s).bits
        groups = [(int(b), np.nonzero(clipped == b)[0]) for b in np.unique(clipped)]
        plans.append(StagePlan(s, ys, xs, groups))
    return plans


def predict(values: np.ndarray, ys: np.ndarray, xs: np.ndarray, pred: Predictor) -> np.ndarray:
    """Linear prediction, accumulated over offsets in row-major order."""
    mu = np.zeros(len(ys))
    for (dy, dx), w in zip(pred.offsets, pred.weights):
        mu = mu + w * values[ys + dy, xs + dx]
    return mu


def _stage_params(values, sp: StagePlan, cache: PredictorCache, workers: int = 1):
    mu = np.empty(len(sp.ys))
    var = np.empty(len(sp.ys))
    jobs = []
    for bits, idx in sp.groups:
        pred = cache.get(bits)
        var[idx] = pred.cond_variance
        if workers > 1 and len(idx) >= 2 * workers:
            jobs.extend((pred, chunk) for chunk in np.array_split(idx, workers))
        else:
            jobs.append((pred, idx))

    def run(job):
        pred, idx = job
        mu[idx] = predict(values, sp.ys[idx], sp.xs[idx], pred)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    return mu, var


def symbol_cdfs(mu: np.ndarray, var: np.ndarray, bound: int) -> np.ndarray:
    """Integer CDF rows over symbols ``-bound..bound`` for N(mu, var) per position.

    Bins are ``[k - 1/2, k + 1/2)``; the mass beyond the alphabet is folded
    into the two end bins.
    """
    s = np.sqrt(var)[:, None]
    edges = np.arange(-bound, bound) + 0.5
    z = (edges[None, :] - mu[:, None]) / s
    c = ndtr(z)
    p = np.empty((len(mu), 2 * bound + 1))
    p[:, 0] = c[:, 0]
    p[:, 1:-1] = np.diff(c, axis=1)
    p[:, -1] = ndtr(-z[:, -1])
    freq = freqs_from_probs(p)
    cdf = np.zeros((len(mu), 2 * bound + 2), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def _model_id(model: FieldModel, quant_noise: float) -> int:
    key = f"{model.kind}|{model.variance!r}|{model.rho!r}|{quant_noise!r}"
    return zlib.crc32(key.encode())


@dataclass
class Bitstream:
    mode: CodecMode
    dims: LatentDims
    variance: float
    rho: float
    kind: str
    quant_noise: float
    payload: bytes
    model_id: int = 0
    stage_bits: tuple[float, ...] = field(default=(), compare=False)

    @property
    def bit_count(self) -> int:
        return 8 * len(self.payload)

    def header_bytes(self) -> bytes:
        order = format_order(self.mode.order).encode() if self.mode.order is not None else b""
        return (
            _HEADER.pack(
                MAGIC,
                VERSION,
                MODE_CODES[self.mode.kind],
                KIND_CODES[self.kind],
                self.mode.order.n if self.mode.order is not None else 0,
                self.mode.parity,
            )
            + order
            + _DIMS.pack(self.dims.height, self.dims.width)
            + _MODEL.pack(self.variance, self.rho, self.quant_noise, self.model_id)
            + _LEN.pack(len(self.payload))
        )

    @property
    def header_bits(self) -> int:
        return 8 * len(self.header_bytes())

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        try:
            magic, version, mode_code, kind_code, n, parity = _HEADER.unpack_from(data, 0)
        except struct.error as exc:
            raise CodecError("truncated header") from exc
        if magic != MAGIC:
            raise CodecError("not a multistage-codec bitstream")
        if version != VERSION:
            raise CodecError(f"unsupported version {version}")
        kinds = {v: k for k, v in MODE_CODES.items()}
        cov = {v: k for k, v in KIND_CODES.items()}
        if mode_code not in kinds or kind_code not in cov:
            raise CodecError("corrupt header")
        pos = _HEADER.size
        order = None
        if n:
            order = parse_order(data[pos : pos + n * n].decode("ascii"))
            pos += n * n
        try:
            h, w = _DIMS.unpack_from(data, pos)
            pos += _DIMS.size
            variance, rho, qn, model_id = _MODEL.unpack_from(data, pos)
            pos += _MODEL.size
            (length,) = _LEN.unpack_from(data, pos)
            pos += _LEN.size
        except struct.error as exc:
            raise CodecError("truncated header") from exc
        payload = data[pos : pos + length]
        if len(payload) != length:
            raise CodecError("truncated payload")
        mode = CodecMode(kinds[mode_code], order, parity)
        return cls(mode, LatentDims(h, w), variance, rho, cov[kind_code], qn, payload, model_id)


def encode(
    grid: QuantGrid,
    mode: CodecMode,
    model: FieldModel,
    quant_noise: float = DEFAULT_QUANT_NOISE,
    workers: int = 1,
) -> Bitstream:
    dims = grid.dims
    bound = clamp_bound(model)
    if np.abs(grid.values).max(initial=0) > bound:
        raise CodecError(f"symbols exceed the clamp range +-{bound}; quantize() first")
    cache = PredictorCache(model, quant_noise)
    enc = RangeEncoder()
    values = grid.values.astype(float)
    stage_bits = []
    if mode.kind == "ar":
        # every context value is known up front; predict all positions in one pass
        stages = _merge_ar(plan(mode, dims))
    else:
        stages = plan(mode, dims)
    for sp in stages:
        mu, var = _stage_params(values, sp, cache, workers)
        cdf = symbol_cdfs(mu, var, bound)
        sym = grid.values[sp.ys, sp.xs] + bound
        rows = np.arange(len(sym))
        lo = cdf[rows, sym]
        freq = cdf[rows, sym + 1] - lo
        enc.encode_many(lo.tolist(), freq.tolist())
        stage_bits.append(float(-np.log2(freq / TOTAL).sum()))
    payload = enc.finish()
    return Bitstream(
        mode, dims, model.variance, model.rho, model.kind, quant_noise, payload,
        _model_id(model, quant_noise), tuple(stage_bits),
    )


def _merge_ar(stages: list[StagePlan]) -> list[StagePlan]:
    ys = np.concatenate([s.ys for s in stages])
    xs = np.concatenate([s.xs for s in stages])
    bits = np.array([s.groups[0][0] for s in stages])
    groups = [(int(b), np.nonzero(bits == b)[0]) for b in np.unique(bits)]
    return [StagePlan(0, ys, xs, groups)]


@dataclass
class DecodeResult:
    grid: QuantGrid
    prediction_steps: int


def decode(bs: Bitstream, model: FieldModel, workers: int = 1, return_steps: bool = False):
    """Reconstruct the quantized grid from ``bs``.

    ``model`` must match the parameters recorded in the header.
    """
    if (bs.variance, bs.rho, bs.kind) != (model.variance, model.rho, model.kind):
        raise CodecError("bitstream was encoded with a different field model")
    if bs.model_id and bs.model_id != _model_id(model, bs.quant_noise):
        raise CodecError("bitstream model id does not match")
    dims = bs.dims
    bound = clamp_bound(model)
    cache = PredictorCache(model, bs.quant_noise)
    dec = RangeDecoder(bs.payload)
    values = np.zeros((dims.height, dims.width))
    out = np.zeros((dims.height, dims.width), dtype=np.int64)
    steps = 0
    for sp in plan(bs.mode, dims):
        mu, var = _stage_params(values, sp, cache, workers)
        cdf = symbol_cdfs(mu, var, bound).tolist()
        steps += 1
        for i, row in enumerate(cdf):
            s = dec.decode(row) - bound
            y, x = sp.ys[i], sp.xs[i]
            out[y, x] = s
            values[y, x] = s
    grid = QuantGrid(dims, out)
    return DecodeResult(grid, steps) if return_steps else grid


# --- rate measurement -----------------------------------------------------


def border_aware_rate(mode: CodecMode, dims: LatentDims, model: FieldModel,
                      quant_noise: float = DEFAULT_QUANT_NOISE) -> float:
    """Expected bits per position at ``dims``, using each position's clipped mask."""
    total = 0.0
    for sp in plan(mode, dims):
        for bits, idx in sp.groups:
            total += len(idx) * mask_rate(model, ContextMask(bits), quant_noise)
    return total / dims.size


def interior_rate(mode: CodecMode, model: FieldModel,
                  quant_noise: float = DEFAULT_QUANT_NOISE) -> float:
    """Border-free bits per position (every position sees its full stage mask)."""
    if mode.kind == "ar":
        return mask_rate(model, ar_causal_mask(), quant_noise)
    if mode.kind == "multistage":
        return theoretical_order_rate(model, mode.order, quant_noise).total_bits_per_position
    smap = mode.stage_map()
    rates = [mask_rate(model, stage_mask(smap, s), quant_noise) * len(smap.cells_of(s))
             for s in range(smap.num_stages)]
    return sum(rates) / (smap.n * smap.n)


@dataclass
class RateReport:
    mode: str
    order: str
    height: int
    width: int
    seeds: int
    total_bits: float
    bits_per_position: float
    bits_std: float
    per_stage_bits: tuple[float, ...]
    theoretical_bits_per_position: float
    interior_bits_per_position: float
    header_bits: int
    round_trip: str
    seed_bits_per_position: tuple[float, ...] = field(repr=False, default=())

    def row(self) -> dict:
        return {
            "mode": self.mode,
            "order": self.order,
            "height": self.height,
            "width": self.width,
            "seeds": self.seeds,
            "total_bits": self.total_bits,
            "bits_per_position": self.bits_per_position,
            "bits_std": self.bits_std,
            "per_stage_bits": ";".join(repr(b) for b in self.per_stage_bits),
            "theoretical_bits_per_position": self.theoretical_bits_per_position,
            "interior_bits_per_position": self.interior_bits_per_position,
            "header_bits": self.header_bits,
            "round_trip": self.round_trip,
        }


REPORT_FIELDS = (
    "mode", "order", "height", "width", "seeds", "total_bits", "bits_per_position",
    "bits_std", "per_stage_bits", "theoretical_bits_per_position",
    "interior_bits_per_position", "header_bits", "round_trip",
)


def _one_seed(args):
    mode, dims, model, seed, verify, quant_noise = args
    grid = quantize(sample_field(model, dims, seed), model)
    bs = encode(grid, mode, model, quant_noise)
    ok = None
    if verify:
        ok = decode(bs, model) == grid
    return bs.bit_count, bs.stage_bits, bs.header_bits, ok


def measure_rates(
    dims: LatentDims,
    model: FieldModel,
    modes,
    seeds,
    verify: bool = False,
    quant_noise: float = DEFAULT_QUANT_NOISE,
    workers: int = 1,
) -> list[RateReport]:
    """Encode sampled grids for every mode and seed; report mean measured rates."""
    modes = [parse_mode(m) if isinstance(m, str) else m for m in modes]
    seeds = list(seeds)
    for m in modes:
        m.check_dims(dims)
    jobs = [(m, dims, model, s, verify, quant_noise) for m in modes for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_seed, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_one_seed(j) for j in jobs]

    reports = []
    for k, m in enumerate(modes):
        chunk = results[k * len(seeds) : (k + 1) * len(seeds)]
        bits = np.array([r[0] for r in chunk], dtype=float)
        stage = np.mean([r[1] for r in chunk], axis=0)
        if m.kind == "ar":
            stage = np.array([stage.sum()])
        if verify:
            status = "ok" if all(r[3] for r in chunk) else "FAILED"
        else:
            status = "unchecked"
        per_pos = bits / dims.size
        reports.append(
            RateReport(
                mode=m.kind,
                order=format_order(m.order) if m.order is not None else "",
                height=dims.height,
                width=dims.width,
                seeds=len(seeds),
                total_bits=float(bits.mean()),
                bits_per_position=float(per_pos.mean()),
                bits_std=float(per_pos.std(ddof=1)) if len(seeds) > 1 else 0.0,
                per_stage_bits=tuple(float(b) for b in stage),
                theoretical_bits_per_position=border_aware_rate(m, dims, model, quant_noise),
                interior_bits_per_position=interior_rate(m, model, quant_noise),
                header_bits=chunk[0][2],
                round_trip=status,
                seed_bits_per_position=tuple(per_pos.tolist()),
            )
        )
    return reports

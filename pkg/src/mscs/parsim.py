"""Wavefront schedules and a two-parameter latency model.

Every position of a stage is decoded concurrently, so a decoder's latency is
governed by its number of stages.  Each stage costs a fixed overhead ``t0``
plus ``t1`` per position spread over ``lanes`` parallel workers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .latgrid import LatentDims, check_divisible

SCHEDULE_KINDS = ("ar", "checkerboard", "nocontext", "multistage")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleMode:
    kind: str
    n: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ScheduleError(f"unknown mode {self.kind!r}; expected one of {', '.join(SCHEDULE_KINDS)}")
        if self.kind == "multistage" and self.n < 1:
            raise ScheduleError(f"patch size must be >= 1, got {self.n}")

    @property
    def label(self) -> str:
        return f"multistage:{self.n}" if self.kind == "multistage" else self.kind


def parse_schedule_mode(text: str, n: int | None = None) -> ScheduleMode:
    """``ar``, ``checkerboard``, ``nocontext``, ``multistage:<n>`` or ``<n>x<n>``."""
    text = text.strip().lower()
    kind, _, arg = text.partition(":")
    if kind == "multistage":
        size = arg or (str(n) if n is not None else "")
        if not size.isdigit():
            raise ScheduleError("multistage mode needs a patch size, e.g. multistage:4")
        return ScheduleMode("multistage", int(size))
    a, sep, b = text.partition("x")
    if sep and a.isdigit() and a == b:
        return ScheduleMode("multistage", int(a))
    if arg:
        raise ScheduleError(f"mode {kind!r} takes no argument")
    return ScheduleMode(kind)


@dataclass(frozen=True)
class Schedule:
    mode: ScheduleMode
    dims: LatentDims
    num_stages: int
    positions_per_stage: tuple[int, ...]

    @property
    def critical_path(self) -> int:
        return self.num_stages


@dataclass(frozen=True)
class LatencyModel:
    lanes: int
    t0: float
    t1: float

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes}")
        if not (self.t0 > 0 and self.t1 > 0):
            raise ValueError(f"t0 and t1 must be > 0, got {self.t0}, {self.t1}")


def build_schedule(mode: ScheduleMode | str, dims: LatentDims) -> Schedule:
    if isinstance(mode, str):
        mode = parse_schedule_mode(mode)
    hw = dims.size
    if hw <= 0:
        raise ScheduleError("dims must be positive")
    if mode.kind == "ar":
        per = (1,) * hw
    elif mode.kind == "nocontext":
        per = (hw,)
    elif mode.kind == "checkerboard":
        # parity-0 anchors; counted directly so odd grids stay exact
        even = (hw + 1) // 2 if (dims.height % 2 and dims.width % 2) else hw // 2
        per = (even, hw - even)
    else:
        check_divisible(dims, mode.n)
        per = (hw // (mode.n * mode.n),) * (mode.n * mode.n)
    return Schedule(mode, dims, len(per), per)


def simulate_latency(s: Schedule, lm: LatencyModel) -> float:
    per = np.asarray(s.positions_per_stage, dtype=float)
    return float(np.sum(lm.t0 + per * lm.t1 / lm.lanes))


@dataclass(frozen=True)
class FitResult:
    model: LatencyModel
    labels: tuple[str, ...]
    measured: tuple[float, ...]
    predicted: tuple[float, ...]

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(p - m for p, m in zip(self.predicted, self.measured))

    @property
    def relative_residuals(self) -> tuple[float, ...]:
        return tuple((p - m) / m for p, m in zip(self.predicted, self.measured))


def fit_overhead(
    table,
    lanes: int = 1,
    weighting: str = "absolute",
) -> FitResult:
    """Least-squares ``(t0, t1)`` from ``(mode, dims, latency)`` rows.

    Latency is linear in the unknowns: ``num_stages * t0 + (positions / lanes) * t1``.
    ``weighting="relative"`` divides each row by its latency, so that
    latencies spanning orders of magnitude count by ratio instead of size.
    """
    rows = [(build_schedule(m, d), float(lat)) for m, d, lat in table]
    if len({s.mode for s, _ in rows}) < 2:
        raise ScheduleError("fitting needs at least two distinct modes")
    if weighting not in ("absolute", "relative"):
        raise ScheduleError(f"unknown weighting {weighting!r}")
    a = np.array([[s.num_stages, s.dims.size / lanes] for s, _ in rows], dtype=float)
    y = np.array([lat for _, lat in rows])
    if np.any(y <= 0):
        raise ScheduleError("latencies must be positive")
    w = 1.0 / y if weighting == "relative" else np.ones_like(y)
    if np.linalg.matrix_rank(a) < 2:
        raise ScheduleError("rows do not separate per-stage from per-position cost")
    (t0, t1), *_ = np.linalg.lstsq(a * w[:, None], y * w, rcond=None)
    if not (t0 > 0 and t1 > 0):
        raise ScheduleError(f"fit gave non-positive costs t0={t0:.6g}, t1={t1:.6g}")
    lm = LatencyModel(lanes, float(t0), float(t1))
    pred = tuple(simulate_latency(s, lm) for s, _ in rows)
    return FitResult(lm, tuple(s.mode.label for s, _ in rows), tuple(y.tolist()), pred)


def read_fit_table(text: str) -> list[tuple[ScheduleMode, LatentDims, float]]:
    """Parse CSV with columns ``mode,height,width,latency``."""
    out = []
    reader = csv.DictReader(io.StringIO(text))
    need = {"mode", "height", "width", "latency"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ScheduleError(f"fit table needs columns {','.join(sorted(need))}")
    for row in reader:
        try:
            dims = LatentDims(int(row["height"]), int(row["width"]))
            out.append((parse_schedule_mode(row["mode"]), dims, float(row["latency"])))
        except (TypeError, ValueError) as exc:
            raise ScheduleError(f"bad fit-table row {row}: {exc}") from exc
    return out


# Decoding times (ms) of four context models on 768x512 images, i.e. 48x32 latents.
TIMING_DIMS = LatentDims(48, 32)
MEASURED_TIMINGS_MS = (
    (ScheduleMode("ar"), 8574.0),
    (ScheduleMode("checkerboard"), 76.0),
    (ScheduleMode("multistage", 2), 85.0),
    (ScheduleMode("multistage", 4), 97.0),
)


def measured_timing_rows():
    return [(m, TIMING_DIMS, ms) for m, ms in MEASURED_TIMINGS_MS]

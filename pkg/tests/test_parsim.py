from __future__ import annotations

import itertools

import numpy as np
import pytest

from mscs.latgrid import LatentDims
from mscs.parsim import (
    LatencyModel,
    ScheduleError,
    ScheduleMode,
    build_schedule,
    fit_overhead,
    measured_timing_rows,
    parse_schedule_mode,
    read_fit_table,
    simulate_latency,
)

AR = ScheduleMode("ar")
CB = ScheduleMode("checkerboard")
NC = ScheduleMode("nocontext")
M2 = ScheduleMode("multistage", 2)
M4 = ScheduleMode("multistage", 4)


def test_schedule_examples():
    s = build_schedule(AR, LatentDims(8, 8))
    assert s.num_stages == 64 and set(s.positions_per_stage) == {1}
    s = build_schedule(CB, LatentDims(64, 64))
    assert s.positions_per_stage == (2048, 2048)
    s = build_schedule(M4, LatentDims(64, 64))
    assert s.positions_per_stage == (256,) * 16 and s.critical_path == 16
    assert build_schedule(NC, LatentDims(5, 7)).positions_per_stage == (35,)


def test_stage_count_law_and_conservation():
    for h, w in itertools.product(range(4, 41, 4), repeat=2):
        dims = LatentDims(h, w)
        for mode, stages in ((AR, h * w), (CB, 2), (NC, 1), (M2, 4), (M4, 16)):
            s = build_schedule(mode, dims)
            assert s.num_stages == stages == len(s.positions_per_stage)
            assert sum(s.positions_per_stage) == h * w


def test_checkerboard_odd_grid_counts_cells():
    s = build_schedule(CB, LatentDims(5, 7))
    grid = np.add.outer(np.arange(5), np.arange(7)) % 2
    assert s.positions_per_stage == (int((grid == 0).sum()), int((grid == 1).sum()))


def test_multistage_needs_divisible_dims():
    with pytest.raises(ValueError):
        build_schedule(M4, LatentDims(65, 64))


def test_parse_schedule_mode():
    assert parse_schedule_mode("4x4") == M4
    assert parse_schedule_mode("multistage:2") == M2
    assert parse_schedule_mode("multistage", n=4) == M4
    assert parse_schedule_mode("AR") == AR
    with pytest.raises(ScheduleError):
        parse_schedule_mode("multistage")
    with pytest.raises(ScheduleError):
        parse_schedule_mode("wavefront")


def test_latency_formula():
    s = build_schedule(M2, LatentDims(8, 8))
    lm = LatencyModel(4, 2.0, 0.5)
    assert simulate_latency(s, lm) == pytest.approx(4 * (2.0 + 16 * 0.5 / 4))


def test_ar_over_checkerboard_ratio_when_overhead_dominates():
    dims = LatentDims(96, 64)
    lm = LatencyModel(1, 1.0, 1e-9)
    ratio = simulate_latency(build_schedule(AR, dims), lm) / simulate_latency(build_schedule(CB, dims), lm)
    assert ratio == pytest.approx(96 * 64 / 2, rel=1e-3)


def test_mode_ordering():
    dims = LatentDims(96, 64)
    lm = LatencyModel(1024, 1.0, 0.001)
    lat = {m: simulate_latency(build_schedule(m, dims), lm) for m in (AR, CB, M2, M4)}
    assert lat[CB] < lat[M2] < lat[M4] < lat[AR] / 100


def test_infinite_lanes_limit():
    lm = LatencyModel(10**15, 1.5, 1.0)
    for mode in (AR, CB, M2, M4):
        s = build_schedule(mode, LatentDims(32, 32))
        assert simulate_latency(s, lm) == pytest.approx(s.num_stages * 1.5, rel=1e-9)


def test_monotone_in_stage_count():
    dims = LatentDims(48, 32)
    lm = LatencyModel(64, 0.3, 0.02)
    scheds = sorted((build_schedule(m, dims) for m in (NC, CB, M2, M4, AR)), key=lambda s: s.num_stages)
    lats = [simulate_latency(s, lm) for s in scheds]
    assert all(b >= a for a, b in zip(lats, lats[1:]))


def test_latency_model_validation():
    for bad in ((0, 1.0, 1.0), (1, 0.0, 1.0), (1, 1.0, -1.0)):
        with pytest.raises(ValueError):
            LatencyModel(*bad)


@pytest.mark.parametrize("weighting", ["absolute", "relative"])
def test_fit_recovers_synthetic_parameters(weighting):
    truth = LatencyModel(256, 0.7, 0.013)
    rows = []
    for mode, dims in itertools.product((AR, CB, M2, M4), (LatentDims(48, 32), LatentDims(16, 16))):
        rows.append((mode, dims, simulate_latency(build_schedule(mode, dims), truth)))
    fit = fit_overhead(rows, lanes=256, weighting=weighting)
    assert abs(fit.model.t0 - truth.t0) < 1e-6 and abs(fit.model.t1 - truth.t1) < 1e-6
    assert max(abs(r) for r in fit.relative_residuals) < 1e-9


def test_fit_needs_two_modes():
    with pytest.raises(ScheduleError):
        fit_overhead([(AR, LatentDims(48, 32), 100.0), (AR, LatentDims(16, 16), 20.0)])


def test_fit_on_measured_timings():
    fit = fit_overhead(measured_timing_rows(), lanes=1024)
    pred = dict(zip(fit.labels, fit.predicted))
    # closed-form two-parameter least squares (stage count and a shared constant)
    s = np.array([1536, 2, 4, 16.0])
    y = np.array([8574, 76, 85, 97.0])
    a = np.c_[s, np.ones(4)]
    t0, c = np.linalg.solve(a.T @ a, a.T @ y)
    assert fit.model.t0 == pytest.approx(t0, rel=1e-9)
    assert fit.model.t1 == pytest.approx(c * 1024 / (48 * 32), rel=1e-9)
    assert pred["ar"] > 50 * pred["multistage:4"]
    assert pred["multistage:4"] > pred["multistage:2"] > pred["checkerboard"]


def test_read_fit_table():
    rows = read_fit_table("mode,height,width,latency\nar,48,32,8574\n4x4,48,32,97\n")
    assert rows[1] == (M4, LatentDims(48, 32), 97.0)
    with pytest.raises(ScheduleError):
        read_fit_table("mode,latency\nar,1\n")
    with pytest.raises(ScheduleError):
        read_fit_table("mode,height,width,latency\nar,x,32,1\n")

"""Multistage spatial-context decoding: orders, masks, an exact Gaussian oracle and a codec."""

from __future__ import annotations

from .ctxmask import ContextMask, brute_force_mask, stage_mask
from .gaussfield import FieldModel, cond_stats, mask_rate, sample_field, theoretical_order_rate
from .latgrid import LatentDims, PatchOrder, StageMap, format_order, pad_image_dims, parse_order
from .mscodec import CodecMode, decode, encode, measure_rates, quantize
from .ordersearch import branch_and_bound_search, dp_search, exhaustive_search, score_order
from .parsim import LatencyModel, build_schedule, fit_overhead, simulate_latency

__all__ = [
    "CodecMode",
    "ContextMask",
    "FieldModel",
    "LatencyModel",
    "LatentDims",
    "PatchOrder",
    "StageMap",
    "branch_and_bound_search",
    "brute_force_mask",
    "build_schedule",
    "cond_stats",
    "decode",
    "dp_search",
    "encode",
    "exhaustive_search",
    "fit_overhead",
    "format_order",
    "mask_rate",
    "measure_rates",
    "pad_image_dims",
    "parse_order",
    "quantize",
    "sample_field",
    "score_order",
    "simulate_latency",
    "stage_mask",
    "theoretical_order_rate",
]

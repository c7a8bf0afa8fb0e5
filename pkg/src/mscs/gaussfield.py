"""Stationary Gaussian latent fields and their exact context statistics.

The field model stands in for a learned entropy model that accepts an
arbitrary context mask: for any set of available offsets it yields the best
linear predictor together with the entropy of the integer-quantized
conditional distribution.

Context values are the *quantized* neighbours, modelled as the continuous
field plus independent rounding noise of variance ``quant_noise``.  The
target keeps its continuous conditional law, so integrating that law over
unit bins gives the exact probability of each quantized symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Literal

import numpy as np
from scipy.special import ndtr

from .ctxmask import ContextMask, canonical_bits, stage_mask
from .latgrid import LatentDims, PatchOrder

DEFAULT_SIGMA2 = 25.0
DEFAULT_RHO = 0.9
DEFAULT_QUANT_NOISE = 1.0 / 12.0
TAIL_SIGMAS = 16
JITTER = 1e-10

Kind = Literal["separable", "isotropic"]


class DegenerateModelError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FieldModel:
    variance: float = DEFAULT_SIGMA2
    rho: float = DEFAULT_RHO
    kind: Kind = "separable"

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be > 0, got {self.variance}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.kind not in ("separable", "isotropic"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    def cov(self, dy, dx):
        """Covariance between two positions separated by ``(dy, dx)``; vectorizes."""
        dy = np.abs(np.asarray(dy, dtype=float))
        dx = np.abs(np.asarray(dx, dtype=float))
        dist = dy + dx if self.kind == "separable" else np.hypot(dy, dx)
        return self.variance * self.rho ** dist

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class CondStats:
    mask: ContextMask
    offsets: tuple[tuple[int, int], ...]
    weights: np.ndarray
    cond_variance: float
    rate_bits: float


def discretized_pmf(variance: float, mean: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities of integer bins ``[k - 1/2, k + 1/2)`` under N(mean, variance).

    The support is ``|k - round(mean)| <= ceil(16 sigma)`` and the mass beyond
    it is folded into the two end bins.
    """
    s = math.sqrt(variance)
    half = math.ceil(TAIL_SIGMAS * s)
    center = round(mean)
    ks = np.arange(center - half, center + half + 1)
    z = (ks[:-1] + 0.5 - mean) / s
    edges = np.concatenate([[0.0], ndtr(z), [1.0]])
    p = np.diff(edges)
    # upper tail from the complementary side keeps precision
    p[-1] = ndtr(-z[-1])
    return ks, np.clip(p, 0.0, None)


def discretized_entropy(variance: float) -> float:
    """Entropy in bits of the unit-bin discretization of N(0, variance)."""
    _, p = discretized_pmf(variance)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _solve(model: FieldModel, offsets, quant_noise: float):
    off = np.asarray(offsets, dtype=float).reshape(-1, 2)
    sigma = model.cov(off[:, None, 0] - off[None, :, 0], off[:, None, 1] - off[None, :, 1])
    sigma = sigma + quant_noise * np.eye(len(off))
    c = model.cov(off[:, 0], off[:, 1])
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(sigma + JITTER * model.variance * np.eye(len(off)))
    z = np.linalg.solve(chol, c)
    weights = np.linalg.solve(chol.T, z)
    return weights, model.variance - float(z @ z)


def cond_stats(
    model: FieldModel,
    mask: ContextMask | Iterable[tuple[int, int]],
    quant_noise: float = 0.0,
) -> CondStats:
    """Best linear predictor of a latent from the offsets in ``mask``.

    Weights follow the mask's row-major offsets.  The variance is that of the
    continuous latent given the quantized context; ``rate_bits`` is the
    entropy of its discretization.
    """
    if quant_noise < 0:
        raise ValueError("quant_noise must be >= 0")
    if not isinstance(mask, ContextMask):
        mask = ContextMask.from_offsets(mask)
    offsets = tuple(mask.offsets())
    if not offsets:
        v = model.variance
        return CondStats(mask, (), np.zeros(0), v, discretized_entropy(v))
    weights, v = _solve(model, offsets, quant_noise)
    if not v > 0:
        raise DegenerateModelError(
            f"conditional variance {v} <= 0 for mask {mask.bits:#x}; model parameters are degenerate"
        )
    return CondStats(mask, offsets, weights, v, discretized_entropy(v))


@lru_cache(maxsize=None)
def _rate_canonical(model: FieldModel, bits: int, quant_noise: float) -> float:
    return cond_stats(model, ContextMask(bits), quant_noise).rate_bits


def mask_rate(model: FieldModel, mask: ContextMask, quant_noise: float = DEFAULT_QUANT_NOISE) -> float:
    """Cached ``cond_stats(...).rate_bits``.

    The covariance is invariant under the symmetries of the square, so the
    cache is keyed by the canonical D4 representative of the mask.  Masks
    related by a symmetry therefore get bit-identical rates.
    """
    return _rate_canonical(model, canonical_bits(mask.bits), float(quant_noise))


@dataclass(frozen=True)
class OrderScore:
    order: PatchOrder
    per_stage_bits: tuple[float, ...]
    total_bits_per_position: float


def theoretical_order_rate(
    model: FieldModel,
    order: PatchOrder,
    quant_noise: float = DEFAULT_QUANT_NOISE,
) -> OrderScore:
    per_stage = tuple(mask_rate(model, stage_mask(order, s), quant_noise) for s in range(order.num_stages))
    return OrderScore(order, per_stage, sum(per_stage) / len(per_stage))


def _ar1_factor_apply(g: np.ndarray, rho: float, scale: float, axis: int) -> np.ndarray:
    """Multiply by the lower-triangular factor of ``scale^2 * rho^|i-j|`` along ``axis``.

    The factor is ``L[i, 0] = rho^i`` and ``L[i, j] = rho^(i-j) sqrt(1 - rho^2)``;
    applying it is the AR(1) recursion started from the stationary law.
    """
    g = np.moveaxis(g, axis, 0)
    out = np.empty_like(g)
    innov = math.sqrt(1.0 - rho * rho)
    out[0] = g[0]
    for i in range(1, g.shape[0]):
        out[i] = rho * out[i - 1] + innov * g[i]
    return np.moveaxis(out * scale, 0, axis)


def sample_field(model: FieldModel, dims: LatentDims, seed: int) -> np.ndarray:
    """Exact zero-mean sample of a separable field on ``dims``.

    Draws come from a Philox counter-based generator, so a given
    ``(model, dims, seed)`` always yields the same grid.
    """
    if model.kind != "separable":
        raise ValueError("only the separable covariance supports exact sampling")
    if dims.height > 4096 or dims.width > 4096:
        raise ValueError("sampling is limited to 4096x4096 grids")
    rng = np.random.Generator(np.random.Philox(seed))
    g = rng.standard_normal((dims.height, dims.width))
    y = _ar1_factor_apply(g, model.rho, 1.0, axis=0)
    return _ar1_factor_apply(y, model.rho, model.sigma, axis=1)

"""Mapping state values to codes and back, per block.

Three rounding modes are supported:

* nearest: argmin over the level table, ties broken toward the smaller
  code index;
* stochastic: linear-interpolation rounding between the two bracketing
  levels, unbiased in value space;
* log dither: uniform noise in the log-index domain followed by convergent
  (round-half-to-even) rounding; only valid for logarithmic tables, where
  it is unbiased in code space and realizes exact expected exponential
  decay under zero signals.

All operations are pure and accept scalars or arrays; stochastic
operations take their random draws (or a seeded generator) as explicit
arguments so every caller is replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .levels import LevelTable, SchemeKind, build_log_levels

__all__ = [
    "RoundingMode",
    "BlockQuantization",
    "BlockCodes",
    "RATIO_MIN",
    "RATIO_MAX",
    "compute_scale",
    "tensor_quantile",
    "compute_log_base",
    "quantize_nearest",
    "quantize_stochastic",
    "quantize_log_dither",
    "dequantize",
    "quantize_block",
    "dequantize_block",
]

# The per-block base is (x_p / scale) ** (1 / (2^b - 1)).  The quantile is
# taken over the whole tensor while the scale is per block, so the ratio
# can reach or exceed 1; clamping keeps the base strictly inside (0, 1)
# and the levels strictly decreasing.
RATIO_MIN = 1e-8
RATIO_MAX = 0.25


class RoundingMode(Enum):
    NEAREST = "nearest"
    STOCHASTIC = "stochastic"
    LOG_DITHER = "log_dither"


@dataclass(frozen=True)
class BlockQuantization:
    """Configuration for one quantized state stream.

    For logarithmic tables the stored table only supplies the bit width;
    the actual base is recomputed per block from the tensor-global
    p-quantile at quantization time.
    """

    table: LevelTable
    mode: RoundingMode = RoundingMode.NEAREST
    block_size: int = 128
    p_quantile: float = 0.1

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.mode is RoundingMode.LOG_DITHER and not self.table.scheme.is_log:
            raise ValueError("log-dither rounding requires a logarithmic table")
        if self.table.scheme.is_log and not 0.0 < self.p_quantile < 1.0:
            raise ValueError("p_quantile must lie in (0, 1) for logarithmic tables")

    @property
    def bits(self) -> int:
        return self.table.bits

    @property
    def scheme(self) -> SchemeKind:
        return self.table.scheme


@dataclass(frozen=True, eq=False)
class BlockCodes:
    """Quantization result for a single block."""

    codes: np.ndarray  # integer codes, dtype uint8
    scale: float
    base: float | None = None  # per-block log base, LOG_UNSIGNED only


def compute_scale(values) -> float:
    """Scale factor of a block: the maximum absolute value.

    Zero is a legal result (all-zero block) and acts as a sentinel: such
    blocks dequantize to exact zeros.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot compute the scale of an empty block")
    return float(np.max(np.abs(arr)))


def tensor_quantile(values, p: float) -> float:
    """p-quantile of |values| by the nearest-rank rule (zeros included)."""
    arr = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    if arr.size == 0:
        raise ValueError("cannot take a quantile of an empty tensor")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    rank = max(1, math.ceil(p * arr.size))
    return float(np.sort(arr)[rank - 1])


def compute_log_base(x_p: float, scale: float, bits: int) -> float:
    """Per-block logarithmic base (x_p / scale) ** (1 / (2^b - 1)).

    The ratio is clamped into [RATIO_MIN, RATIO_MAX] before the root, which
    guarantees 0 < base < 1.  Zero-scale blocks must be short-circuited by
    the caller.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive; handle zero-scale blocks separately")
    if x_p < 0.0:
        raise ValueError("x_p must be non-negative")
    ratio = min(max(x_p / scale, RATIO_MIN), RATIO_MAX)
    return float(ratio ** (1.0 / (2**bits - 1)))


def _ascending_view(table: LevelTable) -> tuple[np.ndarray, np.ndarray]:
    # distinct ascending values and the smallest code carrying each value
    values, first = np.unique(table.levels, return_index=True)
    return values, first.astype(np.uint8)


def quantize_nearest(x, scale: float, table: LevelTable):
    """Nearest-level code(s) for x under the given scale.

    The mathematical argmin over |x/scale - level|, computed by midpoint
    bisection; exact ties break toward the smaller code index, and values
    outside the level range clamp to the extreme level.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    values, codes_of = _ascending_view(table)
    xn = np.atleast_1d(np.asarray(x, dtype=np.float64)) / scale
    midpoints = (values[:-1] + values[1:]) / 2.0
    # a value exactly on a midpoint must take the smaller code index: the
    # lower slot for ascending tables, the upper one for descending
    side = "right" if table.descending else "left"
    codes = codes_of[np.searchsorted(midpoints, xn, side=side)]
    return codes if np.ndim(x) else int(codes[0])


def quantize_stochastic(x, scale: float, table: LevelTable, u):
    """Stochastic rounding between the two bracketing levels.

    ``u`` holds uniform draws on [0, 1), one per element.  A value v with
    y_lo <= v/scale <= y_hi maps to the upper level with probability
    (v/scale - y_lo) / (y_hi - y_lo), so the dequantized expectation equals
    v.  Values outside the level range clamp deterministically.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    values, codes_of = _ascending_view(table)
    xn = np.clip(np.atleast_1d(np.asarray(x, dtype=np.float64)) / scale, values[0], values[-1])
    lo = np.clip(np.searchsorted(values, xn, side="right") - 1, 0, values.size - 2)
    frac = (xn - values[lo]) / (values[lo + 1] - values[lo])
    pick_hi = np.atleast_1d(np.asarray(u, dtype=np.float64)) < frac
    codes = codes_of[lo + pick_hi.astype(np.intp)]
    return codes if np.ndim(x) else int(codes[0])


def quantize_log_dither(x, scale: float, base: float, bits: int, xi):
    """Dithered logarithmic rounding.

    Adds uniform noise xi in [-0.5, 0.5] to the log index log_base(x/scale),
    applies convergent (half-to-even) rounding, and clips to the code range.
    x = 0 has log index +inf and therefore clips to the largest code.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    if not 0.0 < base < 1.0:
        raise ValueError("base must lie in (0, 1)")
    xn = np.atleast_1d(np.asarray(x, dtype=np.float64)) / scale
    if np.any(xn < 0.0):
        raise ValueError("logarithmic quantization is unsigned; negative values are invalid")
    with np.errstate(divide="ignore"):
        index = np.log(xn) / math.log(base)  # log of 0 -> +inf here
    dithered = index + np.atleast_1d(np.asarray(xi, dtype=np.float64))
    codes = np.clip(np.rint(dithered), 0, 2**bits - 1).astype(np.uint8)
    return codes if np.ndim(x) else int(codes[0])


def dequantize(code, scale: float, table: LevelTable):
    """Map code(s) back to values: levels[code] * scale; zero scale gives zeros."""
    codes = np.atleast_1d(np.asarray(code))
    if np.any(codes < 0) or np.any(codes >= table.codes):
        raise ValueError(f"codes must lie in [0, {table.codes})")
    if scale == 0.0:
        out = np.zeros(codes.shape, dtype=np.float64)
    else:
        out = table.levels[codes.astype(np.intp)] * scale
    return out if np.ndim(code) else float(out[0])


def _log_table(bits: int, base: float) -> LevelTable:
    return build_log_levels(bits, base)


def _quantize_with_scale(values: np.ndarray, scale: float, config: BlockQuantization,
                         rng: np.random.Generator | None, base: float | None) -> np.ndarray:
    """Quantize one block against a fixed (already rounded) scale."""
    table = config.table if base is None else _log_table(config.bits, base)
    if config.mode is RoundingMode.NEAREST:
        return quantize_nearest(values, scale, table)
    if rng is None:
        raise ValueError(f"{config.mode.value} rounding needs a random generator")
    if config.mode is RoundingMode.STOCHASTIC:
        return quantize_stochastic(values, scale, table, rng.uniform(0.0, 1.0, values.shape))
    xi = rng.uniform(-0.5, 0.5, values.shape)
    return quantize_log_dither(values, scale, base, config.bits, xi)


def quantize_block(values, config: BlockQuantization, rng: np.random.Generator | None = None,
                   x_p: float | None = None) -> BlockCodes:
    """Quantize one block of values under a configuration.

    The scale is the block's max absolute value; for logarithmic tables the
    caller must supply the tensor-global quantile ``x_p`` from which the
    per-block base is derived.  All-zero blocks store scale 0 and code 0.
    """
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.size > config.block_size:
        raise ValueError(f"block of {arr.size} exceeds block_size {config.block_size}")
    if config.scheme.is_log and np.any(arr < 0):
        raise ValueError("unsigned scheme cannot represent negative values")
    scale = compute_scale(arr)
    if scale == 0.0:
        return BlockCodes(np.zeros(arr.shape, dtype=np.uint8), 0.0,
                          0.5 if config.scheme.is_log else None)
    base = None
    if config.scheme.is_log:
        if x_p is None:
            raise ValueError("logarithmic quantization needs the tensor-global quantile x_p")
        base = compute_log_base(x_p, scale, config.bits)
    codes = _quantize_with_scale(arr, scale, config, rng, base)
    return BlockCodes(codes, scale, base)


def dequantize_block(codes, scale: float, config: BlockQuantization,
                     base: float | None = None) -> np.ndarray:
    """Invert quantize_block element-wise."""
    if config.scheme.is_log and scale != 0.0:
        if base is None:
            raise ValueError("logarithmic dequantization needs the per-block base")
        table = _log_table(config.bits, base)
    else:
        table = config.table
    return np.atleast_1d(dequantize(codes, scale, table))

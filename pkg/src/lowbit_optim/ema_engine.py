"""The quantized EMA update cycle and the signal-swamping predicates.

One EMA step over a quantized state runs the three-phase cycle:
dequantize the stored codes, apply x <- beta * x + (1 - beta) * z in full
precision, then requantize (fresh per-block scales; for logarithmic
schemes a fresh tensor-global quantile and per-block bases).  A config
with ``quantization=None`` keeps the state in full precision and serves as
the reference path for differential tests.

Swamping: under nearest rounding, a state code q survives an update
untouched whenever the level's radius exceeds the shifted distance

    r >= (1 - beta) * |z/scale_new - y_q| + |scale_old/scale_new - 1|.

This condition is sufficient; it is also necessary only when the two
neighbor gaps of y_q are equal (as in linear tables).  The threshold
helpers invert it into the smallest momentum at which every level (radius
choice "min") or half of the levels (choice "median") is guaranteed to
swamp every in-range signal at fixed scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import packed_state
from .levels import LevelTable, RadiusStats, radius_stats
from .quantizer import BlockQuantization

__all__ = [
    "EmaConfig",
    "EmaState",
    "ema_init",
    "ema_step",
    "ema_read",
    "ema_codes",
    "swamping_holds",
    "swamping_beta_threshold",
    "swamping_guaranteed_mask",
]


@dataclass(frozen=True)
class EmaConfig:
    """Momentum plus the quantization applied to one EMA stream.

    ``quantization=None`` means the state is kept in full precision.
    """

    beta: float
    quantization: BlockQuantization | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")


@dataclass(frozen=True, eq=False)
class EmaState:
    """One EMA stream: packed storage (or a full-precision buffer) plus a step count.

    States are value objects: ``ema_step`` returns a new one, so distinct
    streams can advance concurrently without coordination.
    """

    storage: "packed_state.BlockQuantizedTensor | np.ndarray"
    step: int = 0

    @property
    def quantized(self) -> bool:
        return isinstance(self.storage, packed_state.BlockQuantizedTensor)

    def __len__(self) -> int:
        return self.storage.length if self.quantized else self.storage.size


def _check_signals(values: np.ndarray, config: EmaConfig, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} must be finite")
    if config.quantization is not None and not config.quantization.scheme.signed:
        if np.any(values < 0):
            raise ValueError(f"unsigned scheme cannot hold negative {what}")


def ema_init(values, config: EmaConfig, rng: np.random.Generator | None = None) -> EmaState:
    """Quantize initial values into a fresh state at step 0."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    _check_signals(arr, config, "initial values")
    if config.quantization is None:
        storage = arr.copy()
        storage.setflags(write=False)
        return EmaState(storage, 0)
    return EmaState(packed_state.from_values(arr, config.quantization, rng), 0)


def ema_step(state: EmaState, signals, config: EmaConfig,
             rng: np.random.Generator | None = None) -> EmaState:
    """One dequantize / EMA / requantize cycle; returns the advanced state."""
    z = np.asarray(signals, dtype=np.float64).ravel()
    if z.size != len(state):
        raise ValueError(f"signal length {z.size} does not match state length {len(state)}")
    _check_signals(z, config, "signals")
    current = ema_read(state)
    updated = config.beta * current + (1.0 - config.beta) * z
    if config.quantization is None:
        updated.setflags(write=False)
        return EmaState(updated, state.step + 1)
    return EmaState(packed_state.from_values(updated, config.quantization, rng), state.step + 1)


def ema_read(state: EmaState) -> np.ndarray:
    """Element-wise dequantization of the stored state."""
    if state.quantized:
        return packed_state.to_values(state.storage)
    return np.array(state.storage, dtype=np.float64)


def ema_codes(state: EmaState) -> np.ndarray | None:
    """The stored codes, or None for a full-precision state."""
    if not state.quantized:
        return None
    return packed_state.state_codes(state.storage)


def swamping_holds(code: int, table: LevelTable, beta: float,
                   z_over_scale_new: float, scale_ratio: float) -> bool:
    """Sufficient condition for code ``code`` to survive one nearest-rounding update.

    ``z_over_scale_new`` is the incoming signal normalized by the new
    scale; ``scale_ratio`` is old scale / new scale.  Returns True when the
    level's radius dominates the update, which guarantees requantization
    leaves the code unchanged.  A False return is inconclusive unless the
    level's neighbor gaps are equal.
    """
    if scale_ratio <= 0.0:
        raise ValueError("scale_ratio must be positive")
    r = float(radius_stats(table).per_level[code])
    level = float(table.levels[code])
    drift = (1.0 - beta) * abs(z_over_scale_new - level) + abs(scale_ratio - 1.0)
    return r >= drift


def swamping_beta_threshold(stats: RadiusStats, signed: bool,
                            radius_choice: str = "min") -> float:
    """Momentum above which swamping is guaranteed at fixed scale.

    With radius choice "min" the guarantee covers every level; "median"
    covers the levels whose radius reaches the median (half of them for
    the dynamic-exponent tables).  Signed states admit normalized signal
    distances up to 2, hence the halved radius.
    """
    if radius_choice == "min":
        r = stats.r_min
    elif radius_choice == "median":
        r = stats.r_median
    else:
        raise ValueError(f"radius_choice must be 'min' or 'median', got {radius_choice!r}")
    return 1.0 - r / 2.0 if signed else 1.0 - r


def swamping_guaranteed_mask(table: LevelTable, beta: float) -> np.ndarray:
    """Per-code mask of levels guaranteed to swamp every in-range signal.

    In-range means z/scale in [0, 1] for unsigned tables and [-1, 1] for
    signed ones, with the scale held fixed.  Uses the worst-case signal
    distance per level, so a True entry certifies zero code movement under
    nearest rounding.
    """
    per_level = radius_stats(table).per_level
    y = table.levels
    worst = 1.0 + np.abs(y) if table.scheme.signed else np.maximum(y, 1.0 - y)
    return per_level >= (1.0 - beta) * worst

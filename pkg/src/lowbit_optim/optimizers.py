"""Adam-family optimizers with pluggable low-bit state quantization.

Adam, AdamW, and AdaBelief share the same two-stream structure: a signed
first-moment EMA of the gradient and an unsigned second-moment EMA of the
squared gradient (AdaBelief: the squared deviation from the fresh first
moment).  Either stream may be quantized independently via a
:class:`~lowbit_optim.quantizer.BlockQuantization`; ``None`` keeps it in
full precision.

Conventions, fixed here because different codebases disagree:

* epsilon is added after the square root of the bias-corrected second
  moment;
* bias correction uses the configured (possibly reduced) momentum, since a
  stochastically quantized first-moment update behaves like a standard EMA
  in that momentum over a noisier gradient;
* "adam" and "adabelief" fold weight decay into the gradient (classic L2
  coupling); "adamw" applies decoupled decay w -= lr * weight_decay * w;
* signed streams default to stochastic rounding, which keeps the
  quantization noise unbiased; nearest remains selectable for ablations.

``beta_prime`` advises a reduced first-moment momentum when dropping bit
width so that the momentum-amplified quantization noise does not grow:
it solves  b'/(1-b') * r_median(bits') = b/(1-b) * r_median(bits).  The
advice rests on a variance-matching hypothesis and is never applied
silently; callers opt in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .ema_engine import EmaConfig, EmaState, ema_init, ema_read, ema_step
from .levels import DE_SIGNED_R_MEDIAN, build_de_levels, build_log_levels
from .quantizer import BlockQuantization, RoundingMode

__all__ = [
    "OptimizerSpec",
    "ParamSlot",
    "PRESET_NAMES",
    "init_slot",
    "adam_step",
    "beta_prime",
    "gradient_variance_bound",
    "adaptive_lr_variance",
    "preset",
]

_FAMILIES = ("adam", "adamw", "adabelief")


@dataclass(frozen=True)
class OptimizerSpec:
    """Full optimizer configuration, including per-stream quantization."""

    family: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    signed_state_cfg: BlockQuantization | None = None
    unsigned_state_cfg: BlockQuantization | None = None
    bias_correction: bool = True

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.signed_state_cfg is not None and not self.signed_state_cfg.scheme.signed:
            raise ValueError("the first-moment stream needs a signed (or full-precision) scheme")
        if self.unsigned_state_cfg is not None and self.unsigned_state_cfg.scheme.signed:
            raise ValueError("the second-moment stream needs an unsigned (or full-precision) scheme")

    @property
    def full_precision(self) -> bool:
        return self.signed_state_cfg is None and self.unsigned_state_cfg is None


@dataclass(frozen=True, eq=False)
class ParamSlot:
    """One parameter tensor with its two optimizer state streams.

    Slots are value objects; distinct slots update independently and may
    run concurrently, while a single slot's step is exclusive.
    """

    weights: np.ndarray
    m_state: EmaState
    v_state: EmaState
    step: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size != len(self.m_state) or w.size != len(self.v_state):
            raise ValueError("weights and state lengths disagree")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def init_slot(weights, spec: OptimizerSpec,
              rng: np.random.Generator | None = None) -> ParamSlot:
    """Fresh slot with zero-initialized moment states."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    zeros = np.zeros_like(w)
    m = ema_init(zeros, EmaConfig(spec.beta1, spec.signed_state_cfg), rng)
    v = ema_init(zeros, EmaConfig(spec.beta2, spec.unsigned_state_cfg), rng)
    return ParamSlot(w, m, v, 0)


def adam_step(slot: ParamSlot, grad, spec: OptimizerSpec,
              rng: np.random.Generator | None = None) -> ParamSlot:
    """One optimizer step; returns the advanced slot.

    The first-moment EMA consumes the gradient, the second-moment EMA the
    squared gradient (AdaBelief: the squared deviation from the freshly
    dequantized first moment).  Both streams requantize through their
    configured schemes before the weight update reads them back.
    """
    g = np.asarray(grad, dtype=np.float64).ravel()
    if g.size != slot.weights.size:
        raise ValueError(f"gradient length {g.size} does not match weights {slot.weights.size}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    w = slot.weights
    if spec.family in ("adam", "adabelief") and spec.weight_decay:
        g = g + spec.weight_decay * w
    t = slot.step + 1

    m_state = ema_step(slot.m_state, g, EmaConfig(spec.beta1, spec.signed_state_cfg), rng)
    m_hat = ema_read(m_state)
    v_signal = (g - m_hat) ** 2 if spec.family == "adabelief" else g * g
    v_state = ema_step(slot.v_state, v_signal, EmaConfig(spec.beta2, spec.unsigned_state_cfg), rng)
    v_hat = ema_read(v_state)

    if spec.bias_correction:
        m_hat = m_hat / (1.0 - spec.beta1**t)
        v_hat = v_hat / (1.0 - spec.beta2**t)
    if spec.family == "adamw" and spec.weight_decay:
        w = w - spec.lr * spec.weight_decay * w
    w = w - spec.lr * m_hat / (np.sqrt(v_hat) + spec.epsilon)
    return ParamSlot(w, m_state, v_state, t)


def beta_prime(beta: float, bits_from: int, bits_to: int,
               r_median_source: Mapping[int, float] | None = None) -> float:
    """Reduced momentum that keeps the quantization-noise budget when shrinking bits.

    Solves  b'/(1-b') * r_med(bits_to) = beta/(1-beta) * r_med(bits_from).
    ``r_median_source`` maps bit width to median radius; the built-in
    signed dynamic-exponent constants are used when omitted.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    source = DE_SIGNED_R_MEDIAN if r_median_source is None else r_median_source
    try:
        r_from, r_to = source[bits_from], source[bits_to]
    except KeyError as exc:
        raise ValueError(f"no median radius for {exc.args[0]}-bit width") from exc
    rho = beta / (1.0 - beta) * (r_from / r_to)
    return rho / (1.0 + rho)


def gradient_variance_bound(beta: float, r_max: float, scale: float) -> float:
    """Upper bound on the extra gradient variance injected by stochastic state
    quantization: (beta / (1 - beta) * r_max * scale) ** 2."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    return (beta / (1.0 - beta) * r_max * scale) ** 2


def adaptive_lr_variance(x_over_scale: float, scale: float,
                         y_lo: float, y_hi: float) -> float:
    """Variance of the adaptive learning rate under stochastic rounding.

    A second-moment value bracketed by levels y_lo <= x/scale <= y_hi lands
    on y_lo with probability p = (y_hi - x/scale) / (y_hi - y_lo), so the
    reciprocal square root is a two-point random variable with variance
    p * (1-p) * (scale/sqrt(y_lo) - scale/sqrt(y_hi)) ** 2.  This diverges
    as the lower level approaches zero, which is exactly why evenly spaced
    levels misbehave near the origin.
    """
    if y_lo <= 0.0:
        raise ValueError("y_lo must be positive: a zero level makes the variance infinite")
    if not y_lo <= x_over_scale <= y_hi:
        raise ValueError("x_over_scale must lie in [y_lo, y_hi]")
    if y_hi == y_lo:
        return 0.0
    p = (y_hi - x_over_scale) / (y_hi - y_lo)
    spread = scale / np.sqrt(y_lo) - scale / np.sqrt(y_hi)
    return float(p * (1.0 - p) * spread**2)


# Preset name -> (signed DE bits, beta1).  All presets pair the signed
# stream with 2-bit dithered logarithmic quantization of the unsigned
# stream at block size 128 and p-quantile 0.1, and leave beta2 untouched.
_PRESET_TABLE: dict[str, tuple[int, float]] = {
    "solo_4_2_finetune": (4, 0.8),
    "solo_4_2_scratch": (4, 0.3),
    "solo_2_finetune": (2, 0.5),
    "solo_2_scratch": (2, 0.1),
}

PRESET_NAMES = tuple(_PRESET_TABLE)


def preset(name: str, base: OptimizerSpec) -> OptimizerSpec:
    """A named ultra-low-bit configuration derived from a base spec.

    Overwrites beta1 and both state quantization configs; everything else
    (family, lr, beta2, epsilon, weight decay) is inherited, so applying a
    preset twice is a no-op.
    """
    try:
        signed_bits, beta1 = _PRESET_TABLE[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}") from None
    signed_cfg = BlockQuantization(
        table=build_de_levels(signed_bits, signed=True),
        mode=RoundingMode.STOCHASTIC,
        block_size=128,
    )
    unsigned_cfg = BlockQuantization(
        table=build_log_levels(2, 0.5),  # base recomputed per block
        mode=RoundingMode.LOG_DITHER,
        block_size=128,
        p_quantile=0.1,
    )
    return replace(base, beta1=beta1, signed_state_cfg=signed_cfg, unsigned_state_cfg=unsigned_cfg)

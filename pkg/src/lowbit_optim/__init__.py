"""Ultra-low-bit quantized optimizer state for Adam-style optimizers.

The package splits into layers, lowest first:

* :mod:`~lowbit_optim.levels`: quantization level tables (linear, dynamic
  exponent, logarithmic) and their radius statistics;
* :mod:`~lowbit_optim.quantizer`: value <-> code mapping under nearest,
  stochastic, and dithered-logarithmic rounding, block by block;
* :mod:`~lowbit_optim.packed_state`: bit-packed storage, checkpoint
  serialization, and footprint accounting;
* :mod:`~lowbit_optim.ema_engine`: the quantized EMA update cycle and the
  signal-swamping predicates;
* :mod:`~lowbit_optim.optimizers`: Adam/AdamW/AdaBelief with pluggable
  low-bit state, the reduced-momentum advisor, and variance calculators;
* :mod:`~lowbit_optim.harness`: seeded desk-scale experiments;
* :mod:`~lowbit_optim.acceptance`: the reproduction suite behind
  ``lowbit-optim repro``.
"""

from .levels import (
    DE_SIGNED_R_MEDIAN,
    GOLDEN_DE_TABLES,
    LevelTable,
    RadiusStats,
    SchemeKind,
    build_de_levels,
    build_linear_levels,
    build_log_levels,
    radius_stats,
    table_for,
)
from .quantizer import (
    BlockQuantization,
    RoundingMode,
    compute_log_base,
    compute_scale,
    dequantize,
    dequantize_block,
    quantize_block,
    quantize_log_dither,
    quantize_nearest,
    quantize_stochastic,
    tensor_quantile,
)
from .packed_state import (
    BlockQuantizedTensor,
    PackedCodes,
    StateFormatError,
    StateVersionError,
    deserialize,
    footprint_bytes,
    footprint_report,
    pack,
    serialize,
    unpack,
)
from .ema_engine import (
    EmaConfig,
    EmaState,
    ema_init,
    ema_read,
    ema_step,
    swamping_beta_threshold,
    swamping_guaranteed_mask,
    swamping_holds,
)
from .optimizers import (
    OptimizerSpec,
    ParamSlot,
    PRESET_NAMES,
    adam_step,
    adaptive_lr_variance,
    beta_prime,
    gradient_variance_bound,
    init_slot,
    preset,
)

__version__ = "0.1.0"

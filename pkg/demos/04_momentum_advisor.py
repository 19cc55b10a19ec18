"""Momentum adjustment for low-bit signed states.

A stochastically quantized first-moment update is equivalent to an exact
EMA over a noisier gradient, with extra variance bounded by
(beta/(1-beta) * r_max * scale)^2.  Fewer bits mean larger radii, so the
same momentum buys more noise.  The advisor picks the reduced momentum
whose noise budget matches the reference configuration.
"""

import numpy as np

from lowbit_optim import (
    beta_prime,
    build_de_levels,
    dequantize,
    gradient_variance_bound,
    quantize_stochastic,
    radius_stats,
)

print("=== advised momentum when shrinking signed DE states (beta = 0.9) ===")
print(f"{'':>6}" + "".join(f"{f'from {b} bits':>14}" for b in (8, 7, 6, 5)))
for bits_to in (4, 3, 2):
    row = [beta_prime(0.9, b, bits_to) for b in (8, 7, 6, 5)]
    print(f"to {bits_to}b " + "".join(f"{v:>14.3f}" for v in row))
print()
print("Reading the 'from 5 bits' column: 0.820 replaces 0.9 for 4-bit")
print("fine-tuning, 0.527 for 2-bit.  The advice is a hypothesis to opt")
print("into, never applied silently.")
print()

print("=== the variance bound it regulates, empirically ===")
rng = np.random.default_rng(1)
table = build_de_levels(2, signed=True)
r_max = radius_stats(table).r_max
scale, n = 1.0, 200_000
x = 0.31  # an arbitrary representable-range state value
codes = quantize_stochastic(np.full(n, x), scale, table, rng.uniform(0, 1, n))
noise = dequantize(codes, scale, table) - x
for beta in (0.9, 0.820, 0.527, 0.3):
    amplified = beta / (1 - beta) * noise
    bound = gradient_variance_bound(beta, r_max, scale)
    print(f"beta {beta:5.3f}: measured variance {np.var(amplified):9.4f}   "
          f"bound {bound:9.4f}")
print()
print("Dropping the momentum from 0.9 to 0.527 shrinks the injected")
print("variance by two orders of magnitude at identical bit width.")

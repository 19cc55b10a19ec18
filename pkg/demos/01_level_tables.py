"""Quantization level tables and their radii.

A b-bit code can represent 2^b normalized values.  How those values are
placed decides everything downstream: evenly spaced (linear), powers of
ten with a linear fraction (dynamic exponent), or powers of a base in
(0, 1) (logarithmic).  This script prints the low-width tables and the
radius statistics that drive the swamping and variance analysis.
"""

import numpy as np

from lowbit_optim import (
    build_de_levels,
    build_linear_levels,
    build_log_levels,
    radius_stats,
)

np.set_printoptions(precision=4, suppress=True)

print("=== 2-bit tables ===")
for name, table in [
    ("linear unsigned ", build_linear_levels(2)),
    ("linear no-zero  ", build_linear_levels(2, exclude_zero=True)),
    ("linear signed   ", build_linear_levels(2, signed=True)),
    ("DE unsigned     ", build_de_levels(2)),
    ("DE signed       ", build_de_levels(2, signed=True)),
    ("log base 0.5    ", build_log_levels(2, 0.5)),
]:
    print(f"{name} {table.levels}")

print()
print("The signed linear table has only three distinct values: the formula")
print("yields 2^b - 1 levels, so one zero is carried by two codes.")
print()

# The radius of a level is half its smaller neighbor gap: the largest EMA
# update that nearest rounding is guaranteed to absorb.  The aggregate
# statistics below are over all adjacent-pair half-gaps.
print("=== radius statistics (r_min / r_median / r_max) ===")
header = f"{'table':<18}" + "".join(f"{b:>22}" for b in (2, 3, 4, 8))
print(header)
for name, builder in [
    ("linear unsigned", lambda b: build_linear_levels(b)),
    ("linear signed", lambda b: build_linear_levels(b, signed=True)),
    ("DE unsigned", lambda b: build_de_levels(b)),
    ("DE signed", lambda b: build_de_levels(b, signed=True)),
]:
    cells = []
    for bits in (2, 3, 4, 8):
        s = radius_stats(builder(bits))
        cells.append(f"{s.r_min:.3f}/{s.r_median:.3f}/{s.r_max:.3f}")
    print(f"{name:<18}" + "".join(f"{c:>22}" for c in cells))

print()
print("Linear tables have one radius everywhere.  DE tables concentrate")
print("levels near zero, so their radii span two orders of magnitude; the")
print("large top-end radii are what swamp incoming signals at high momentum.")

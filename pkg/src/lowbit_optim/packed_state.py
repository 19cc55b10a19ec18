"""Bit-exact packed storage of code arrays with per-block metadata.

Codes are packed little-endian within each byte: code i occupies bit
positions [i*bits, (i+1)*bits) of the buffer, least-significant bits
first, bytes in index order, padding bits zero.  Only widths 2, 4, and 8
pack cleanly into bytes; 3-bit (and 5-7 bit) tables are supported
analytically but materialize at the next packable width.

A :class:`BlockQuantizedTensor` is the persistent form of one optimizer
state tensor: packed codes plus one 32-bit scale per block (and one 32-bit
logarithmic base per block for log-quantized states).  The checkpoint
container is a little-endian byte stream::

    offset  0  magic           4s   b"LBQ1"
    offset  4  version         u16  1
    offset  6  scheme id       u8
    offset  7  bits (logical)  u8
    offset  8  storage bits    u8
    offset  9  flags           u8   bit 0: bases present
    offset 10  block size      u32
    offset 14  length          u64
    offset 22  reserved        10 bytes, zero
    offset 32  scales          f32 * n_blocks
               bases           f32 * n_blocks   (if flag bit 0)
               packed codes    ceil(length * storage_bits / 8) bytes

Deserialization is strict: wrong magic or trailing/truncated bytes raise
:class:`StateFormatError`, an unknown version raises
:class:`StateVersionError`, and invariant violations (negative scales,
bases outside (0, 1)) are rejected on load.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .levels import SchemeKind, table_for
from .quantizer import (
    BlockQuantization,
    compute_log_base,
    compute_scale,
    dequantize,
    tensor_quantile,
    _log_table,
    _quantize_with_scale,
)

__all__ = [
    "PackedCodes",
    "BlockQuantizedTensor",
    "StateFormatError",
    "StateVersionError",
    "PACKABLE_BITS",
    "STORAGE_BITS",
    "HEADER_BYTES",
    "pack",
    "unpack",
    "serialize",
    "deserialize",
    "footprint_bytes",
    "footprint_report",
    "from_values",
    "to_values",
    "state_codes",
]

PACKABLE_BITS = (2, 4, 8)
# Widths that do not divide a byte are stored at the next packable width.
STORAGE_BITS = {2: 2, 3: 4, 4: 4, 5: 8, 6: 8, 7: 8, 8: 8}

MAGIC = b"LBQ1"
VERSION = 1
HEADER_BYTES = 32
_HEADER_STRUCT = struct.Struct("<4sHBBBBIQ10x")
_FLAG_HAS_BASES = 0x01

_SCHEME_IDS = {scheme: i for i, scheme in enumerate(SchemeKind)}
_SCHEMES_BY_ID = {i: scheme for scheme, i in _SCHEME_IDS.items()}


class StateFormatError(ValueError):
    """Raised when a serialized state is corrupt or malformed."""


class StateVersionError(StateFormatError):
    """Raised when a serialized state has an unsupported version."""


@dataclass(frozen=True)
class PackedCodes:
    """A bit-packed sequence of ``count`` codes of the given width."""

    bits: int
    count: int
    buffer: bytes

    def __post_init__(self):
        if self.bits not in PACKABLE_BITS:
            raise ValueError(f"packable widths are {PACKABLE_BITS}, got {self.bits}")
        expected = _buffer_bytes(self.count, self.bits)
        if len(self.buffer) != expected:
            raise ValueError(f"buffer holds {len(self.buffer)} bytes, expected {expected}")


def _buffer_bytes(count: int, bits: int) -> int:
    return math.ceil(count * bits / 8)


def pack(codes, bits: int) -> PackedCodes:
    """Pack integer codes into bytes, little-endian within each byte."""
    if bits not in PACKABLE_BITS:
        raise ValueError(f"packable widths are {PACKABLE_BITS}, got {bits}")
    arr = np.asarray(codes)
    if arr.size and (np.any(arr < 0) or np.any(arr >= (1 << bits))):
        raise ValueError(f"codes out of range for {bits}-bit packing")
    arr = arr.astype(np.uint8)
    if bits == 8:
        return PackedCodes(bits, arr.size, arr.tobytes())
    per_byte = 8 // bits
    padded = np.zeros(_buffer_bytes(arr.size, bits) * per_byte, dtype=np.uint8)
    padded[: arr.size] = arr
    groups = padded.reshape(-1, per_byte)
    shifts = (np.arange(per_byte, dtype=np.uint8) * bits).astype(np.uint8)
    packed = np.bitwise_or.reduce(groups << shifts, axis=1).astype(np.uint8)
    return PackedCodes(bits, arr.size, packed.tobytes())


def unpack(packed: PackedCodes) -> np.ndarray:
    """Exact inverse of :func:`pack`; returns a uint8 array of codes."""
    raw = np.frombuffer(packed.buffer, dtype=np.uint8)
    if raw.size != _buffer_bytes(packed.count, packed.bits):
        raise StateFormatError("buffer length inconsistent with code count")
    if packed.bits == 8:
        return raw[: packed.count].copy()
    per_byte = 8 // packed.bits
    shifts = np.arange(per_byte, dtype=np.uint8) * packed.bits
    mask = np.uint8((1 << packed.bits) - 1)
    codes = ((raw[:, None] >> shifts[None, :]) & mask).reshape(-1)
    return codes[: packed.count].copy()


@dataclass(frozen=True, eq=False)
class BlockQuantizedTensor:
    """Packed codes plus per-block metadata for one state tensor.

    Immutable after construction; any number of readers may share one.
    """

    packed: PackedCodes
    scales: np.ndarray  # float32, one per block
    bases: np.ndarray | None  # float32, one per block; LOG_UNSIGNED only
    block_size: int
    length: int
    scheme: SchemeKind
    bits: int

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float32)
        n_blocks = math.ceil(self.length / self.block_size) if self.length else 0
        if scales.size != n_blocks:
            raise ValueError(f"expected {n_blocks} scales, got {scales.size}")
        if np.any(scales < 0):
            raise ValueError("scales must be non-negative")
        scales.setflags(write=False)
        object.__setattr__(self, "scales", scales)
        if self.scheme.is_log:
            if self.bases is None:
                raise ValueError("logarithmic states need per-block bases")
            bases = np.asarray(self.bases, dtype=np.float32)
            if bases.size != n_blocks:
                raise ValueError(f"expected {n_blocks} bases, got {bases.size}")
            if np.any((bases <= 0) | (bases >= 1)):
                raise ValueError("bases must lie in (0, 1)")
            bases.setflags(write=False)
            object.__setattr__(self, "bases", bases)
        elif self.bases is not None:
            raise ValueError("only logarithmic states carry bases")
        if self.packed.count != self.length:
            raise ValueError("packed code count does not match tensor length")
        if self.packed.bits != STORAGE_BITS[self.bits]:
            raise ValueError(
                f"{self.bits}-bit codes must be stored at {STORAGE_BITS[self.bits]} bits"
            )

    @property
    def n_blocks(self) -> int:
        return self.scales.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockQuantizedTensor):
            return NotImplemented
        same_bases = (
            (self.bases is None and other.bases is None)
            or (self.bases is not None and other.bases is not None
                and np.array_equal(self.bases, other.bases))
        )
        return (
            self.packed == other.packed
            and np.array_equal(self.scales, other.scales)
            and same_bases
            and self.block_size == other.block_size
            and self.length == other.length
            and self.scheme == other.scheme
            and self.bits == other.bits
        )


def from_values(values, config: BlockQuantization,
                rng: np.random.Generator | None = None) -> BlockQuantizedTensor:
    """Quantize a whole tensor block-wise into packed storage.

    Scales (and bases) are rounded to float32 before quantization so the
    stored metadata and the codes are mutually consistent.  Zero-scale
    blocks store code 0 everywhere and, for log schemes, a 0.5 sentinel
    base that is never used on the read path.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    n_blocks = math.ceil(arr.size / config.block_size) if arr.size else 0
    codes = np.empty(arr.size, dtype=np.uint8)
    scales = np.empty(n_blocks, dtype=np.float32)
    bases = np.empty(n_blocks, dtype=np.float32) if config.scheme.is_log else None
    x_p = None
    if config.scheme.is_log and arr.size:
        if np.any(arr < 0):
            raise ValueError("unsigned scheme cannot represent negative values")
        x_p = tensor_quantile(arr, config.p_quantile)
    for b in range(n_blocks):
        sl = slice(b * config.block_size, min((b + 1) * config.block_size, arr.size))
        block = arr[sl]
        with np.errstate(over="ignore"):  # overflow detected explicitly below
            scale32 = np.float32(compute_scale(block))
        if not np.isfinite(scale32):  # scales are stored as float32
            raise ValueError("block scale overflows float32")
        scales[b] = scale32
        scale = float(scale32)
        if scale == 0.0:
            codes[sl] = 0
            if bases is not None:
                bases[b] = 0.5
            continue
        base = None
        if bases is not None:
            base = compute_log_base(x_p, scale, config.bits)
            bases[b] = np.float32(base)
            base = float(bases[b])
        codes[sl] = _quantize_with_scale(block, scale, config, rng, base)
    return BlockQuantizedTensor(
        packed=pack(codes, STORAGE_BITS[config.bits]),
        scales=scales,
        bases=bases,
        block_size=config.block_size,
        length=arr.size,
        scheme=config.scheme,
        bits=config.bits,
    )


def to_values(state: BlockQuantizedTensor) -> np.ndarray:
    """Dequantize a packed tensor back to float64 values."""
    codes = unpack(state.packed)
    out = np.empty(state.length, dtype=np.float64)
    table = None if state.scheme.is_log else table_for(state.scheme, state.bits)
    for b in range(state.n_blocks):
        sl = slice(b * state.block_size, min((b + 1) * state.block_size, state.length))
        scale = float(state.scales[b])
        if scale == 0.0:
            out[sl] = 0.0
        elif state.scheme.is_log:
            out[sl] = dequantize(codes[sl], scale, _log_table(state.bits, float(state.bases[b])))
        else:
            out[sl] = dequantize(codes[sl], scale, table)
    return out


def state_codes(state: BlockQuantizedTensor) -> np.ndarray:
    """Unpacked logical codes of a stored tensor."""
    return unpack(state.packed)


def serialize(state: BlockQuantizedTensor) -> bytes:
    """Write a state to the checkpoint container format (see module docstring)."""
    flags = _FLAG_HAS_BASES if state.bases is not None else 0
    header = _HEADER_STRUCT.pack(
        MAGIC, VERSION, _SCHEME_IDS[state.scheme], state.bits,
        state.packed.bits, flags, state.block_size, state.length,
    )
    parts = [header, state.scales.astype("<f4").tobytes()]
    if state.bases is not None:
        parts.append(state.bases.astype("<f4").tobytes())
    parts.append(state.packed.buffer)
    return b"".join(parts)


def deserialize(stream: bytes) -> BlockQuantizedTensor:
    """Read a state back from the container format, validating invariants."""
    if len(stream) < HEADER_BYTES:
        raise StateFormatError("stream shorter than the fixed header")
    magic, version, scheme_id, bits, storage_bits, flags, block_size, length = (
        _HEADER_STRUCT.unpack(stream[:HEADER_BYTES])
    )
    if magic != MAGIC:
        raise StateFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StateVersionError(f"unsupported container version {version}")
    if scheme_id not in _SCHEMES_BY_ID:
        raise StateFormatError(f"unknown scheme id {scheme_id}")
    scheme = _SCHEMES_BY_ID[scheme_id]
    if bits not in STORAGE_BITS or STORAGE_BITS[bits] != storage_bits:
        raise StateFormatError(f"inconsistent widths: bits={bits}, storage={storage_bits}")
    if block_size < 1:
        raise StateFormatError("block size must be positive")
    has_bases = bool(flags & _FLAG_HAS_BASES)
    if has_bases != scheme.is_log:
        raise StateFormatError("bases flag inconsistent with scheme")
    n_blocks = math.ceil(length / block_size) if length else 0
    meta_arrays = 2 if has_bases else 1
    expected = HEADER_BYTES + 4 * n_blocks * meta_arrays + _buffer_bytes(length, storage_bits)
    if len(stream) != expected:
        raise StateFormatError(f"stream holds {len(stream)} bytes, expected {expected}")
    offset = HEADER_BYTES
    scales = np.frombuffer(stream, dtype="<f4", count=n_blocks, offset=offset).copy()
    offset += 4 * n_blocks
    bases = None
    if has_bases:
        bases = np.frombuffer(stream, dtype="<f4", count=n_blocks, offset=offset).copy()
        offset += 4 * n_blocks
    packed = PackedCodes(storage_bits, length, stream[offset:])
    try:
        return BlockQuantizedTensor(packed, scales, bases, block_size, length, scheme, bits)
    except ValueError as exc:
        raise StateFormatError(f"invariant violation on load: {exc}") from exc


def footprint_bytes(state: BlockQuantizedTensor) -> int:
    """Exact storage cost: header + packed codes + 4 bytes per scale and base."""
    base_bytes = 4 * state.n_blocks if state.bases is not None else 0
    return HEADER_BYTES + len(state.packed.buffer) + 4 * state.n_blocks + base_bytes


def footprint_report(state: BlockQuantizedTensor) -> dict:
    """Itemized footprint accounting, amortized bits per element included."""
    packed_bytes = len(state.packed.buffer)
    scale_bytes = 4 * state.n_blocks
    base_bytes = 4 * state.n_blocks if state.bases is not None else 0
    total = HEADER_BYTES + packed_bytes + scale_bytes + base_bytes
    report = {
        "header_bytes": HEADER_BYTES,
        "packed_bytes": packed_bytes,
        "scale_bytes": scale_bytes,
        "base_bytes": base_bytes,
        "total_bytes": total,
    }
    if state.length:
        report["bits_per_element"] = 8.0 * (packed_bytes + scale_bytes + base_bytes) / state.length
    return report

"""Shared primitives: geometry, security parameters, version arithmetic, randomness.

Version numbers are split into two fields.  The low ``stealth_bits`` (S) live
in a trusted device and wrap modulo 2**S; the high ``upper_bits`` (U) live in
spare bits of MAC blocks in ordinary memory and only ever grow.  The full
nonce used for encryption and MACs is the concatenation ``upper || stealth``
with the upper field in the high bits.  All widths are configurable so the
probabilistic machinery can be exercised at reduced scale.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


class SimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimError):
    """Invalid geometry, parameter, or run configuration."""


class AddressRangeError(SimError):
    """Address outside the protected range."""


class EncodingError(SimError):
    """A field value does not fit its configured width."""


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Geometry:
    """Page/block shape and MAC packing of the protected memory.

    Defaults: 4 KiB pages of 64-byte blocks, 56-bit MACs packed eight to a
    64-byte MAC block.  Eight 56-bit MACs occupy 448 of the 512 bits of a MAC
    block; the remaining spare bits carry the page's upper version field.
    """

    page_bytes: int = 4096
    block_bytes: int = 64
    mac_bits: int = 56
    macs_per_block: int = 8

    def __post_init__(self) -> None:
        if not is_power_of_two(self.page_bytes):
            raise ConfigError(f"page_bytes must be a power of two, got {self.page_bytes}")
        if not is_power_of_two(self.block_bytes):
            raise ConfigError(f"block_bytes must be a power of two, got {self.block_bytes}")
        if self.block_bytes > self.page_bytes:
            raise ConfigError("block_bytes cannot exceed page_bytes")
        if self.mac_bits <= 0 or self.macs_per_block <= 0:
            raise ConfigError("mac_bits and macs_per_block must be positive")
        if self.macs_per_block * self.mac_bits > self.block_bytes * 8:
            raise ConfigError(
                f"{self.macs_per_block} MACs of {self.mac_bits} bits do not fit a "
                f"{self.block_bytes}-byte MAC block"
            )

    @property
    def blocks_per_page(self) -> int:
        return self.page_bytes // self.block_bytes

    @property
    def spare_bits(self) -> int:
        """Bits left in a MAC block after packing the MACs (holds the UV)."""
        return self.block_bytes * 8 - self.macs_per_block * self.mac_bits


@dataclass(frozen=True)
class SecurityParams:
    """Width of the version fields and the reset probability exponent.

    ``reset_exp`` (R) makes each leading-version advance reset the page's
    stealth versions with probability 2**-R.  R must stay below S or resets
    could not keep up with wraparound.
    """

    stealth_bits: int = 27
    upper_bits: int = 37
    reset_exp: int = 20

    def __post_init__(self) -> None:
        if self.stealth_bits <= 0:
            raise ConfigError("stealth_bits must be positive")
        if self.upper_bits <= 0:
            raise ConfigError("upper_bits must be positive")
        if not 0 < self.reset_exp < self.stealth_bits:
            raise ConfigError(
                f"reset_exp must satisfy 0 < R < stealth_bits, got R={self.reset_exp} "
                f"S={self.stealth_bits}"
            )

    @property
    def full_bits(self) -> int:
        return self.stealth_bits + self.upper_bits

    @property
    def stealth_mask(self) -> int:
        return (1 << self.stealth_bits) - 1


def stealth_add(value: int, delta: int, stealth_bits: int) -> int:
    """Add ``delta`` to a stealth version, wrapping modulo 2**stealth_bits."""
    if value < 0 or delta < 0:
        raise EncodingError("stealth versions and deltas are unsigned")
    mask = (1 << stealth_bits) - 1
    if value > mask:
        raise EncodingError(f"stealth value {value} exceeds {stealth_bits} bits")
    return (value + delta) & mask


def pack_full(upper: int, stealth: int, params: SecurityParams) -> int:
    """Concatenate the upper and stealth fields into one full version.

    The upper field occupies the high bits, so full versions sort first by
    upper version and then by stealth value.
    """
    if not 0 <= upper < (1 << params.upper_bits):
        raise EncodingError(f"upper version {upper} does not fit {params.upper_bits} bits")
    if not 0 <= stealth < (1 << params.stealth_bits):
        raise EncodingError(
            f"stealth version {stealth} does not fit {params.stealth_bits} bits"
        )
    return (upper << params.stealth_bits) | stealth


def unpack_full(full: int, params: SecurityParams) -> tuple[int, int]:
    """Split a full version back into (upper, stealth)."""
    if not 0 <= full < (1 << params.full_bits):
        raise EncodingError(f"full version {full} does not fit {params.full_bits} bits")
    return full >> params.stealth_bits, full & params.stealth_mask


def addr_decompose(addr: int, geometry: Geometry, protected_bytes: int | None = None) -> tuple[int, int]:
    """Map a byte address to (page index, block index within the page)."""
    if addr < 0:
        raise AddressRangeError(f"negative address {addr:#x}")
    if protected_bytes is not None and addr >= protected_bytes:
        raise AddressRangeError(
            f"address {addr:#x} outside protected range of {protected_bytes} bytes"
        )
    page = addr // geometry.page_bytes
    block = (addr // geometry.block_bytes) % geometry.blocks_per_page
    return page, block


class RandomSource:
    """Deterministic seeded source of uniform k-bit draws.

    Stands in for the device's hardware entropy source.  Two instances built
    from the same seed produce identical draw sequences, which the tests rely
    on to run an independent reference model in lockstep with the store.
    """

    __slots__ = ("seed", "_rng")

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._rng = random.Random(seed)

    def draw(self, bits: int) -> int:
        """Uniform integer in [0, 2**bits)."""
        if bits <= 0:
            raise ConfigError(f"draw width must be positive, got {bits}")
        return self._rng.getrandbits(bits)

    def chance(self, exponent: int) -> bool:
        """True with probability exactly 2**-exponent (one k-bit draw)."""
        return self.draw(exponent) == 0


def pack_bitfields(values: list[int], width: int) -> bytes:
    """Pack equal-width unsigned fields into little-endian bytes, LSB first."""
    acc = 0
    mask = (1 << width) - 1
    for i, v in enumerate(values):
        if not 0 <= v <= mask:
            raise EncodingError(f"field value {v} does not fit {width} bits")
        acc |= v << (i * width)
    nbytes = (len(values) * width + 7) // 8
    return acc.to_bytes(nbytes, "little")


def unpack_bitfields(data: bytes, width: int, count: int) -> list[int]:
    """Inverse of :func:`pack_bitfields`."""
    if len(data) * 8 < width * count:
        raise EncodingError(
            f"{len(data)} bytes cannot hold {count} fields of {width} bits"
        )
    acc = int.from_bytes(data, "little")
    mask = (1 << width) - 1
    return [(acc >> (i * width)) & mask for i in range(count)]

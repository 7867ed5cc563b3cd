"""Device-side version store with tri-level page entries.

Every protected 4 KiB page owns one 12-byte entry in a static flat array.
A page starts ``flat``: a shared S-bit base version plus a 64-bit coverage
vector, one bit per block, encoding per-block versions of base or base+1.
When a block is written a second time within the same base the page upgrades
to ``uneven`` (a 56-byte line of 64 seven-bit offsets from the base) and,
once any offset would pass 127, to ``full`` (a 216-byte line of 64 raw S-bit
versions).  Uneven and full lines live in a dynamic region carved into
56-byte slots; a full line occupies four contiguous slots.

Entry layout (12 bytes at the default S=27, least-significant bits first):

    bits [0, 2)       format tag (0 flat, 1 uneven, 2 full)
    bits [2, 2+S)     base field: shared base (flat/uneven) or the page's
                      leading version (full)
    bits [2+S, 2+S+67) payload:
        flat    64-bit coverage vector
        uneven  locator (48 bits) | min_off (7) | max_off (7)
        full    locator (48 bits)

Resets: an update that advances the page's leading version triggers a check
that, with probability 2**-R, discards the page's stealth state: the entry
drops back to flat with a fresh uniformly random base and an empty coverage
vector, and the caller is told to bump the page's upper version.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .core import (
    AddressRangeError,
    ConfigError,
    EncodingError,
    Geometry,
    RandomSource,
    SecurityParams,
    SimError,
    addr_decompose,
    pack_bitfields,
    stealth_add,
    unpack_bitfields,
)

FLAT, UNEVEN, FULL = 0, 1, 2
FORMAT_NAMES = {FLAT: "flat", UNEVEN: "uneven", FULL: "full"}

OFFSET_BITS = 7
OFFSET_MAX = (1 << OFFSET_BITS) - 1  # 127; a required offset of 128 forces full
LOCATOR_BITS = 48
PAYLOAD_BITS = 67
TAG_BITS = 2
SLOT_BYTES = 56
FULL_SLOTS = 4  # full line is allocated as 4 contiguous slots (224 B reserved)

SNAPSHOT_MAGIC = b"TRIP"
SNAPSHOT_VERSION = 1


class CapacityError(SimError):
    """Dynamic region exhausted; the update was rejected without effect."""


def flat_entry_bytes(params: SecurityParams) -> int:
    """Packed size of one static entry: tag + base + payload, byte-rounded."""
    return (TAG_BITS + params.stealth_bits + PAYLOAD_BITS + 7) // 8


def uneven_entry_bytes(geometry: Geometry) -> int:
    return (geometry.blocks_per_page * OFFSET_BITS + 7) // 8


def full_entry_bytes(geometry: Geometry, params: SecurityParams) -> int:
    return (geometry.blocks_per_page * params.stealth_bits + 7) // 8


def entry_cost_bytes(fmt: int, geometry: Geometry, params: SecurityParams) -> int:
    """Total bytes a page in the given format consumes (static + dynamic)."""
    flat = flat_entry_bytes(params)
    if fmt == FLAT:
        return flat
    if fmt == UNEVEN:
        return flat + uneven_entry_bytes(geometry)
    if fmt == FULL:
        return flat + full_entry_bytes(geometry, params)
    raise ConfigError(f"unknown format {fmt}")


def compression_ratio(fmt: int, geometry: Geometry, params: SecurityParams) -> int:
    """Page bytes per metadata byte, rounded to the nearest integer."""
    return round(geometry.page_bytes / entry_cost_bytes(fmt, geometry, params))


def flat_array_bytes(protected_bytes: int, geometry: Geometry, params: SecurityParams) -> int:
    """Size of the static flat array covering the whole protected range."""
    if protected_bytes <= 0 or protected_bytes % geometry.page_bytes:
        raise ConfigError("protected_bytes must be a positive multiple of the page size")
    return (protected_bytes // geometry.page_bytes) * flat_entry_bytes(params)


def decode_entry_image(image: bytes, params: SecurityParams) -> tuple[int, int, int]:
    """Unpack a packed static entry into (tag, base field, payload bits)."""
    acc = int.from_bytes(image, "little")
    tag = acc & ((1 << TAG_BITS) - 1)
    base = (acc >> TAG_BITS) & params.stealth_mask
    payload = (acc >> (TAG_BITS + params.stealth_bits)) & ((1 << PAYLOAD_BITS) - 1)
    return tag, base, payload


def decode_uneven_line(line: bytes, geometry: Geometry) -> list[int]:
    return unpack_bitfields(line, OFFSET_BITS, geometry.blocks_per_page)


def decode_full_lines(lines: list[bytes], geometry: Geometry, params: SecurityParams) -> list[int]:
    return unpack_bitfields(b"".join(lines), params.stealth_bits, geometry.blocks_per_page)


class _Entry:
    """Mutable per-page state.  Offsets and versions are plain int lists."""

    __slots__ = ("tag", "base", "bitvec", "offsets", "max_off", "min_off",
                 "versions", "slot")

    def __init__(self, base: int) -> None:
        self.tag = FLAT
        self.base = base          # shared base, or leading version when full
        self.bitvec = 0
        self.offsets: list[int] | None = None
        self.max_off = 0
        self.min_off = 0
        self.versions: list[int] | None = None
        self.slot = -1            # dynamic-region slot index, -1 when flat


@dataclass(frozen=True, slots=True)
class UpdateResult:
    """Outcome of one version update.

    ``new_version`` is the block's stealth version after the whole operation
    (post-reset when a reset fired).  ``events`` is a tuple drawn from
    {"upgraded_to_uneven", "normalized", "upgraded_to_full", "reset_triggered"}.
    ``leading_advance`` records whether this update advanced the page's
    leading version (and therefore rolled the reset dice).
    """

    new_version: int
    format_after: int
    events: tuple[str, ...]
    leading_advance: bool

    @property
    def reset_triggered(self) -> bool:
        return "reset_triggered" in self.events


_NO_EVENTS: tuple[str, ...] = ()


class VersionStore:
    """The trusted device: static flat array plus a slotted dynamic region.

    Pages materialize lazily: the first touch of a page (read or update)
    draws its random initial base.  This keeps tera-scale protected ranges
    cheap while preserving the distribution; the draw order is part of the
    deterministic contract shared with the tests' reference model.
    """

    def __init__(
        self,
        protected_bytes: int,
        device_capacity_bytes: int,
        rng: RandomSource,
        geometry: Geometry | None = None,
        params: SecurityParams | None = None,
    ) -> None:
        self.geometry = geometry or Geometry()
        self.params = params or SecurityParams()
        if protected_bytes <= 0 or protected_bytes % self.geometry.page_bytes:
            raise ConfigError("protected_bytes must be a positive multiple of the page size")
        self.protected_bytes = protected_bytes
        self.total_pages = protected_bytes // self.geometry.page_bytes
        self.static_bytes = self.total_pages * flat_entry_bytes(self.params)
        if device_capacity_bytes < self.static_bytes:
            raise ConfigError(
                f"device capacity {device_capacity_bytes} cannot hold the "
                f"{self.static_bytes}-byte flat array"
            )
        self.device_capacity_bytes = device_capacity_bytes
        self.dynamic_capacity_slots = (device_capacity_bytes - self.static_bytes) // SLOT_BYTES
        self.rng = rng

        self._entries: dict[int, _Entry] = {}
        self._free_slots: list[int] = []   # recycled slot indices
        self._next_slot = 0                # bump pointer into never-used slots
        self._used_slots = 0

        self.dynamic_bytes = 0
        self.peak_dynamic_bytes = 0
        self.pages_uneven = 0
        self.pages_full = 0
        self.resets = 0
        self._uv_queue: list[int] = []

        self._uneven_bytes = uneven_entry_bytes(self.geometry)
        self._full_bytes = full_entry_bytes(self.geometry, self.params)
        self._smask = self.params.stealth_mask
        self._full_vector = (1 << self.geometry.blocks_per_page) - 1

    # -- page materialization -------------------------------------------------

    def _entry(self, page: int) -> _Entry:
        e = self._entries.get(page)
        if e is None:
            e = _Entry(self.rng.draw(self.params.stealth_bits))
            self._entries[page] = e
        return e

    @property
    def pages_touched(self) -> int:
        return len(self._entries)

    @property
    def pages_flat(self) -> int:
        return len(self._entries) - self.pages_uneven - self.pages_full

    # -- slot allocator --------------------------------------------------------

    def _tail_run(self, free_sorted: list[int]) -> int:
        # contiguous free slots ending right below the bump pointer
        run = 0
        want = self._next_slot - 1
        for s in reversed(free_sorted):
            if s == want:
                run += 1
                want -= 1
            elif s < want:
                break
        return run

    def _can_alloc(self, slots: int, freeing: tuple[int, ...] = ()) -> bool:
        if self._used_slots - len(freeing) + slots > self.dynamic_capacity_slots:
            return False
        if slots == 1:
            return True
        # contiguous run: recycled holes, possibly spilling into the bump region
        free = sorted(set(self._free_slots).union(freeing))
        run = 1
        for a, b in zip(free, free[1:]):
            run = run + 1 if b == a + 1 else 1
            if run >= slots:
                return True
        tail = self._tail_run(free)
        return self._next_slot - tail + slots <= self.dynamic_capacity_slots

    def _alloc(self, slots: int) -> int:
        if slots == 1:
            if self._free_slots:
                s = self._free_slots.pop()
            elif self._next_slot < self.dynamic_capacity_slots:
                s = self._next_slot
                self._next_slot += 1
            else:
                raise CapacityError("dynamic region exhausted")
            self._used_slots += 1
            return s
        free = sorted(self._free_slots)
        run = 1
        for i in range(1, len(free)):
            run = run + 1 if free[i] == free[i - 1] + 1 else 1
            if run == slots:
                start = free[i] - slots + 1
                chosen = set(range(start, start + slots))
                self._free_slots = [s for s in self._free_slots if s not in chosen]
                self._used_slots += slots
                return start
        # take the free tail below the bump pointer plus fresh bump slots
        k = min(self._tail_run(free), slots)
        if self._next_slot - k + slots <= self.dynamic_capacity_slots:
            start = self._next_slot - k
            if k:
                chosen = set(range(start, self._next_slot))
                self._free_slots = [s for s in self._free_slots if s not in chosen]
            self._next_slot = start + slots
            self._used_slots += slots
            return start
        raise CapacityError("dynamic region exhausted")

    def _free(self, start: int, slots: int) -> None:
        self._free_slots.extend(range(start, start + slots))
        self._used_slots -= slots

    def _bump_dynamic(self, delta: int) -> None:
        self.dynamic_bytes += delta
        if self.dynamic_bytes > self.peak_dynamic_bytes:
            self.peak_dynamic_bytes = self.dynamic_bytes

    # -- reads -----------------------------------------------------------------

    def read_version(self, addr: int) -> int:
        """Current stealth version of the block holding ``addr``."""
        page, block = addr_decompose(addr, self.geometry, self.protected_bytes)
        e = self._entry(page)
        if e.tag == FLAT:
            return stealth_add(e.base, (e.bitvec >> block) & 1, self.params.stealth_bits)
        if e.tag == UNEVEN:
            return stealth_add(e.base, e.offsets[block], self.params.stealth_bits)
        return e.versions[block]

    def page_format(self, page: int) -> int:
        if not 0 <= page < self.total_pages:
            raise AddressRangeError(f"page {page} outside protected range")
        e = self._entries.get(page)
        return FLAT if e is None else e.tag

    def page_base(self, page: int) -> int:
        """Base field of the page entry (leading version for full pages)."""
        return self._entry(page).base

    # -- updates ---------------------------------------------------------------

    def update_version(self, addr: int) -> UpdateResult:
        """Increment the version of one block, applying format transitions.

        Rejection on dynamic-region exhaustion happens before any state
        changes, so a failed update leaves the store (and its randomness)
        untouched and the caller may retry after freeing pages.
        """
        page, block = addr_decompose(addr, self.geometry, self.protected_bytes)
        e = self._entry(page)
        events: list[str] | None = None
        smask = self._smask

        if e.tag == FLAT:
            bit = (e.bitvec >> block) & 1
            advance = bit == (1 if e.bitvec else 0)
            if bit == 0:
                e.bitvec |= 1 << block
                if e.bitvec == self._full_vector:
                    # all blocks one ahead: fold into the base, never at rest
                    e.base = (e.base + 1) & smask
                    e.bitvec = 0
            else:
                if not self._can_alloc(1):
                    raise CapacityError(
                        f"page {page}: no slot free for uneven upgrade"
                    )
                e.slot = self._alloc(1)
                e.tag = UNEVEN
                e.offsets = [(e.bitvec >> i) & 1 for i in range(self.geometry.blocks_per_page)]
                e.offsets[block] = 2
                e.max_off = 2
                e.min_off = 0
                e.bitvec = 0
                self.pages_uneven += 1
                self._bump_dynamic(self._uneven_bytes)
                events = ["upgraded_to_uneven"]

        elif e.tag == UNEVEN:
            off = e.offsets[block]
            advance = off == e.max_off
            if off - e.min_off + 1 > OFFSET_MAX:
                # normalization cannot rescue a 128-wide spread: go full.
                # (given offsets <= 127 this only fires with min 0, off 127)
                if not self._can_alloc(FULL_SLOTS, freeing=(e.slot,)):
                    raise CapacityError(
                        f"page {page}: no contiguous slots free for full upgrade"
                    )
                base = e.base
                offsets = e.offsets
                self._free(e.slot, 1)
                e.slot = self._alloc(FULL_SLOTS)
                e.tag = FULL
                e.versions = [(base + o) & smask for o in offsets]
                e.versions[block] = (e.versions[block] + 1) & smask
                lead = (base + e.max_off) & smask
                e.base = e.versions[block] if advance else lead
                e.offsets = None
                self.pages_uneven -= 1
                self.pages_full += 1
                self._bump_dynamic(self._full_bytes - self._uneven_bytes)
                events = ["upgraded_to_full"]
            else:
                if off + 1 > OFFSET_MAX:
                    # slide the window down by the minimum offset
                    m = e.min_off
                    e.base = (e.base + m) & smask
                    e.offsets = [o - m for o in e.offsets]
                    e.max_off -= m
                    e.min_off = 0
                    off -= m
                    events = ["normalized"]
                new_off = off + 1
                e.offsets[block] = new_off
                if new_off > e.max_off:
                    e.max_off = new_off
                if off == e.min_off and new_off > e.min_off:
                    e.min_off = min(e.offsets)

        else:  # FULL
            v = e.versions[block]
            advance = v == e.base
            v = (v + 1) & smask
            e.versions[block] = v
            if advance:
                e.base = v

        if advance and self.rng.draw(self.params.reset_exp) == 0:
            self._reset_entry(page, e)
            events = (events or []) + ["reset_triggered"]

        if e.tag == FLAT:
            new_version = stealth_add(e.base, (e.bitvec >> block) & 1, self.params.stealth_bits)
        elif e.tag == UNEVEN:
            new_version = stealth_add(e.base, e.offsets[block], self.params.stealth_bits)
        else:
            new_version = e.versions[block]
        return UpdateResult(
            new_version=new_version,
            format_after=e.tag,
            events=tuple(events) if events else _NO_EVENTS,
            leading_advance=advance,
        )

    # -- resets ----------------------------------------------------------------

    def _reset_entry(self, page: int, e: _Entry) -> None:
        if e.tag == UNEVEN:
            self._free(e.slot, 1)
            self.pages_uneven -= 1
            self._bump_dynamic(-self._uneven_bytes)
        elif e.tag == FULL:
            self._free(e.slot, FULL_SLOTS)
            self.pages_full -= 1
            self._bump_dynamic(-self._full_bytes)
        e.tag = FLAT
        e.base = self.rng.draw(self.params.stealth_bits)
        e.bitvec = 0
        e.offsets = None
        e.versions = None
        e.slot = -1
        e.max_off = 0
        e.min_off = 0
        self.resets += 1
        self._uv_queue.append(page)

    def reset_page(self, page: int) -> int:
        """Explicit reset (page free / remap): downgrade to flat, new base.

        Returns the fresh base.  The page index is also queued as an
        upper-version update notice for the host (see ``drain_uv_updates``).
        """
        if not 0 <= page < self.total_pages:
            raise AddressRangeError(f"page {page} outside protected range")
        e = self._entry(page)
        self._reset_entry(page, e)
        return e.base

    def drain_uv_updates(self) -> list[int]:
        """Page indices whose upper version must be bumped, in reset order."""
        out = self._uv_queue
        self._uv_queue = []
        return out

    # -- accounting ------------------------------------------------------------

    def usage_stats(self) -> dict:
        touched = self.pages_touched
        total = self.static_bytes + self.dynamic_bytes
        return {
            "pages_flat": self.pages_flat,
            "pages_uneven": self.pages_uneven,
            "pages_full": self.pages_full,
            "pages_touched": touched,
            "static_bytes": self.static_bytes,
            "dynamic_bytes": self.dynamic_bytes,
            "peak_bytes": self.static_bytes + self.peak_dynamic_bytes,
            "avg_bytes_per_page": (total / touched) if touched else 0.0,
            "resets": self.resets,
        }

    # -- packed images ----------------------------------------------------------

    def entry_image(self, page: int) -> bytes:
        """The page's packed static entry, as the host would cache it."""
        e = self._entry(page)
        s = self.params.stealth_bits
        if e.tag == FLAT:
            payload = e.bitvec
        elif e.tag == UNEVEN:
            payload = e.slot | (e.min_off << LOCATOR_BITS) | (e.max_off << (LOCATOR_BITS + OFFSET_BITS))
        else:
            payload = e.slot
        acc = e.tag | (e.base << TAG_BITS) | (payload << (TAG_BITS + s))
        return acc.to_bytes(flat_entry_bytes(self.params), "little")

    def entry_lines(self, page: int) -> list[bytes]:
        """Dynamic-region lines backing the page: [] / one 56 B / four 56 B."""
        e = self._entry(page)
        if e.tag == FLAT:
            return []
        if e.tag == UNEVEN:
            return [pack_bitfields(e.offsets, OFFSET_BITS)]
        raw = pack_bitfields(e.versions, self.params.stealth_bits)
        raw = raw.ljust(FULL_SLOTS * SLOT_BYTES, b"\x00")
        return [raw[i * SLOT_BYTES:(i + 1) * SLOT_BYTES] for i in range(FULL_SLOTS)]

    # -- snapshots ---------------------------------------------------------------

    def to_snapshot(self) -> bytes:
        """Serialize header, touched flat-array entries, and dynamic payloads.

        Only materialized pages are recorded; untouched pages have no drawn
        base yet.  Randomness state is not captured, so a loaded store serves
        reads verbatim but continues updating under its own seed.
        """
        head = SNAPSHOT_MAGIC + struct.pack(
            "<HBBQQ",
            SNAPSHOT_VERSION,
            self.params.stealth_bits,
            self.params.upper_bits,
            self.total_pages,
            len(self._entries),
        )
        parts = [head]
        for page in sorted(self._entries):
            e = self._entries[page]
            parts.append(struct.pack("<QB", page, e.tag))
            parts.append(struct.pack("<Q", e.base))
            if e.tag == FLAT:
                parts.append(struct.pack("<Q", e.bitvec))
            elif e.tag == UNEVEN:
                parts.append(struct.pack("<q", e.slot))
                parts.append(pack_bitfields(e.offsets, OFFSET_BITS))
            else:
                parts.append(struct.pack("<q", e.slot))
                parts.append(pack_bitfields(e.versions, self.params.stealth_bits))
        return b"".join(parts)

    @classmethod
    def from_snapshot(
        cls,
        data: bytes,
        device_capacity_bytes: int,
        rng: RandomSource,
        geometry: Geometry | None = None,
        reset_exp: int = 20,
    ) -> "VersionStore":
        if data[:4] != SNAPSHOT_MAGIC:
            raise EncodingError("bad snapshot magic")
        version, s_bits, u_bits, total_pages, count = struct.unpack_from("<HBBQQ", data, 4)
        if version != SNAPSHOT_VERSION:
            raise EncodingError(f"unsupported snapshot version {version}")
        geometry = geometry or Geometry()
        params = SecurityParams(stealth_bits=s_bits, upper_bits=u_bits, reset_exp=reset_exp)
        store = cls(
            protected_bytes=total_pages * geometry.page_bytes,
            device_capacity_bytes=device_capacity_bytes,
            rng=rng,
            geometry=geometry,
            params=params,
        )
        pos = 4 + struct.calcsize("<HBBQQ")
        bpp = geometry.blocks_per_page
        uneven_len = uneven_entry_bytes(geometry)
        full_len = full_entry_bytes(geometry, params)
        max_slot = -1
        for _ in range(count):
            page, tag = struct.unpack_from("<QB", data, pos)
            pos += 9
            (base,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            e = _Entry(base)
            if tag == FLAT:
                (e.bitvec,) = struct.unpack_from("<Q", data, pos)
                pos += 8
            elif tag == UNEVEN:
                (e.slot,) = struct.unpack_from("<q", data, pos)
                pos += 8
                e.tag = UNEVEN
                e.offsets = unpack_bitfields(data[pos:pos + uneven_len], OFFSET_BITS, bpp)
                pos += uneven_len
                e.max_off = max(e.offsets)
                e.min_off = min(e.offsets)
                store.pages_uneven += 1
                store._used_slots += 1
                store._bump_dynamic(store._uneven_bytes)
                max_slot = max(max_slot, e.slot)
            elif tag == FULL:
                (e.slot,) = struct.unpack_from("<q", data, pos)
                pos += 8
                e.tag = FULL
                e.versions = unpack_bitfields(
                    data[pos:pos + full_len], params.stealth_bits, bpp
                )
                pos += full_len
                store.pages_full += 1
                store._used_slots += FULL_SLOTS
                store._bump_dynamic(store._full_bytes)
                max_slot = max(max_slot, e.slot + FULL_SLOTS - 1)
            else:
                raise EncodingError(f"bad entry tag {tag} for page {page}")
            store._entries[page] = e
        # recycled holes below the high-water mark are forgotten on load;
        # only future allocation order differs, never read results
        store._next_slot = max_slot + 1
        store.peak_dynamic_bytes = store.dynamic_bytes
        if store._used_slots > store.dynamic_capacity_slots:
            raise ConfigError(
                "snapshot needs more dynamic slots than the given capacity provides"
            )
        return store

"""Host-side protection engine backed by the device version store.

The host keeps three small caches of freshness metadata:

* a fully associative cache of packed flat entries (one per hot page),
* an overflow buffer of 56-byte dynamic lines (uneven offsets and the four
  quarters of a full entry), inclusive with the flat cache,
* a set-associative write-back cache of 64-byte MAC blocks.

Reads decode the block's version from cached metadata when they can; any
missing piece costs one device READ.  Writes are write-through: every write
issues exactly one device UPDATE whose response carries the refreshed entry
and any dynamic lines, so one round trip keeps the caches coherent.

Read latency is modeled analytically: the data fetch on its channel (local
DRAM or a CXL-attached pool), plus the slowest outstanding metadata fetch
(device or MAC, issued in parallel), plus a fixed cipher-pipeline delay.

An optional functional layer actually enciphers block payloads under a keyed
pseudorandom transform of (key, full version, address) and MACs them, which
lets tests replay stale records and watch verification fail.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .caches import LruCache, SetAssocCache
from .core import (
    AddressRangeError,
    ConfigError,
    Geometry,
    RandomSource,
    SecurityParams,
    SimError,
    addr_decompose,
    pack_full,
)
from .version_store import (
    FLAT,
    FULL,
    FULL_SLOTS,
    SLOT_BYTES,
    UNEVEN,
    CapacityError,
    VersionStore,
    decode_entry_image,
    decode_full_lines,
    decode_uneven_line,
    flat_array_bytes,
)

TIB = 1 << 40
GIB = 1 << 30


class LayoutError(SimError):
    """Address falls outside the data partition."""


class UvOverflowError(SimError):
    """A page's upper version hit 2**U; the memory's lifetime is exhausted."""


class FreshnessViolation(SimError):
    """MAC verification failed: stale or tampered data was served."""


class SimulationHalted(SimError):
    """The engine is in a terminal state (kill switch or capacity)."""


@dataclass(frozen=True)
class MemoryLayout:
    """Split of one memory node into a data partition and a MAC partition.

    MAC blocks sit above the data partition on the same node: one 64-byte
    MAC block per ``macs_per_block`` data blocks, its spare bits carrying the
    page's upper version.
    """

    data_bytes: int
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self) -> None:
        if self.data_bytes <= 0 or self.data_bytes % self.geometry.page_bytes:
            raise ConfigError("data partition must be a positive multiple of the page size")

    @property
    def mac_bytes(self) -> int:
        blocks = self.data_bytes // self.geometry.block_bytes
        mac_blocks = -(-blocks // self.geometry.macs_per_block)
        return mac_blocks * self.geometry.block_bytes

    @property
    def total_bytes(self) -> int:
        return self.data_bytes + self.mac_bytes

    @property
    def mac_base(self) -> int:
        return self.data_bytes

    @classmethod
    def from_total(cls, total_bytes: int, geometry: Geometry | None = None) -> "MemoryLayout":
        """Largest page-aligned data partition fitting total_bytes with MACs."""
        g = geometry or Geometry()
        data = total_bytes * g.macs_per_block // (g.macs_per_block + 1)
        data -= data % g.page_bytes
        return cls(data_bytes=data, geometry=g)


def mac_block_addr(addr: int, layout: MemoryLayout) -> int:
    """Address of the MAC block guarding the data block at ``addr``."""
    g = layout.geometry
    if addr < 0 or addr >= layout.total_bytes:
        raise AddressRangeError(f"address {addr:#x} outside the node")
    if addr >= layout.data_bytes:
        raise LayoutError(f"address {addr:#x} lies in the MAC partition")
    mac_index = addr // g.block_bytes // g.macs_per_block
    return layout.mac_base + mac_index * g.block_bytes


@dataclass(frozen=True)
class EngineConfig:
    """Every knob of a simulation run; defaults match the reference platform:
    2.25 GHz cores, 40-cycle cipher pipeline, 95 ns CXL hop, 15 ns device
    DRAM, 256-entry flat cache, 28 KiB overflow buffer, 1 MiB MAC cache
    (32 KiB per core across 32 cores)."""

    geometry: Geometry = field(default_factory=Geometry)
    params: SecurityParams = field(default_factory=SecurityParams)
    protected_bytes: int = 1 * GIB
    device_capacity_bytes: int | None = None
    local_bytes: int = 3 * TIB
    local_ns: float = 50.0
    cxl_ns: float = 95.0
    pool_dram_ns: float = 50.0
    device_dram_ns: float = 15.0
    cipher_cycles: int = 40
    clock_ghz: float = 2.25
    flat_cache_entries: int = 256
    overflow_bytes: int = 28672
    overflow_assoc: int = 16
    mac_cache_bytes: int = 32 * 1024 * 32
    mac_assoc: int = 16
    device_message_bytes: int = 64
    functional: bool = False
    debug: bool = False
    seed: int = 1

    def __post_init__(self) -> None:
        if self.geometry.spare_bits < self.params.upper_bits:
            raise ConfigError(
                f"MAC-block spare bits ({self.geometry.spare_bits}) cannot hold a "
                f"{self.params.upper_bits}-bit upper version"
            )
        if self.overflow_bytes % SLOT_BYTES:
            raise ConfigError("overflow_bytes must be a multiple of the 56-byte line")

    @property
    def cipher_ns(self) -> float:
        return self.cipher_cycles / self.clock_ghz

    @property
    def pool_ns(self) -> float:
        return self.cxl_ns + self.pool_dram_ns

    @property
    def device_ns(self) -> float:
        return self.cxl_ns + self.device_dram_ns

    def resolved_device_capacity(self) -> int:
        if self.device_capacity_bytes is not None:
            return self.device_capacity_bytes
        return flat_array_bytes(self.protected_bytes, self.geometry, self.params) + (8 << 20)


@dataclass(slots=True)
class AccessOutcome:
    """Per-event accounting record.

    Byte fields mirror exactly what the event added to the engine's channel
    counters, so summing outcomes over a run reproduces the totals.
    """

    op: str
    addr: int
    channel: str
    local_bytes: int = 0
    pool_bytes: int = 0
    mac_bytes: int = 0
    device_bytes: int = 0
    device_transactions: int = 0
    tree_fetches: int = 0
    latency_ns: float = 0.0
    flat_hit: bool | None = None
    overflow_hit: bool | None = None
    mac_hit: bool | None = None
    events: tuple = ()
    reencrypted_blocks: int = 0


@dataclass(slots=True)
class Record:
    """One enciphered block as it sits in untrusted memory.

    ``uv`` rides along because upper versions are stored next to the MACs in
    ordinary memory; an adversary replays them together.  ``stealth`` is kept
    so page re-encryption can recover the plaintext; verification never
    consults it.
    """

    cipher: bytes
    mac: bytes
    uv: int
    stealth: int


class FunctionalBlockStore:
    """Keyed cipher + MAC layer over block payloads.

    cipher = plaintext XOR PRF(key, full_version, address)
    mac    = keyed_hash(full_version, address, cipher), truncated to mac_bits
    """

    def __init__(self, geometry: Geometry, params: SecurityParams, seed: int) -> None:
        self.geometry = geometry
        self.params = params
        seed_bytes = seed.to_bytes(16, "little", signed=False)
        self._enc_key = hashlib.blake2b(b"enc", key=seed_bytes, digest_size=32).digest()
        self._mac_key = hashlib.blake2b(b"mac", key=seed_bytes, digest_size=32).digest()
        self.records: dict[int, Record] = {}

    def _tweak(self, full_version: int, addr: int) -> bytes:
        return full_version.to_bytes(16, "little") + addr.to_bytes(8, "little")

    def _keystream(self, full_version: int, addr: int) -> bytes:
        out = b""
        counter = 0
        tweak = self._tweak(full_version, addr)
        while len(out) < self.geometry.block_bytes:
            out += hashlib.blake2b(
                tweak + counter.to_bytes(4, "little"),
                key=self._enc_key,
                digest_size=64,
            ).digest()
            counter += 1
        return out[: self.geometry.block_bytes]

    def compute_mac(self, full_version: int, addr: int, cipher: bytes) -> bytes:
        bits = self.geometry.mac_bits
        nbytes = (bits + 7) // 8
        digest = hashlib.blake2b(
            self._tweak(full_version, addr) + cipher,
            key=self._mac_key,
            digest_size=max(nbytes, 1),
        ).digest()
        if bits % 8:
            # truncate the top byte to the configured tag width
            head = digest[-1] & ((1 << (bits % 8)) - 1)
            digest = digest[:-1] + bytes([head])
        return digest

    def seal(self, addr: int, plaintext: bytes, uv: int, stealth: int) -> Record:
        if len(plaintext) != self.geometry.block_bytes:
            raise ConfigError(f"plaintext must be {self.geometry.block_bytes} bytes")
        full = pack_full(uv, stealth, self.params)
        ks = self._keystream(full, addr)
        cipher = bytes(p ^ k for p, k in zip(plaintext, ks))
        return Record(cipher=cipher, mac=self.compute_mac(full, addr, cipher),
                      uv=uv, stealth=stealth)

    def open(self, addr: int, record: Record, current_stealth: int) -> bytes:
        """Verify and decrypt under the record's UV and the device's stealth.

        The UV is taken from the record because it lives in untrusted memory;
        only the stealth version comes from the trusted device.  Raises
        FreshnessViolation on MAC mismatch.
        """
        full = pack_full(record.uv, current_stealth, self.params)
        if self.compute_mac(full, addr, record.cipher) != record.mac:
            raise FreshnessViolation(
                f"MAC mismatch at {addr:#x}: stored version is stale or forged"
            )
        ks = self._keystream(full, addr)
        return bytes(c ^ k for c, k in zip(record.cipher, ks))


class HostEngine:
    """Device-backed protection engine (mode tag ``toleo``)."""

    mode = "toleo"

    def __init__(self, config: EngineConfig, store: VersionStore | None = None) -> None:
        self.config = config
        g = config.geometry
        if store is None:
            store = VersionStore(
                protected_bytes=config.protected_bytes,
                device_capacity_bytes=config.resolved_device_capacity(),
                rng=RandomSource(config.seed),
                geometry=g,
                params=config.params,
            )
        self.store = store
        self.layout = MemoryLayout(data_bytes=store.protected_bytes, geometry=g)
        self.flat_cache = LruCache(config.flat_cache_entries)
        self.overflow = SetAssocCache(
            lines=config.overflow_bytes // SLOT_BYTES, assoc=config.overflow_assoc
        )
        self.mac_cache = SetAssocCache(
            lines=config.mac_cache_bytes // g.block_bytes, assoc=config.mac_assoc
        )
        self.functional = (
            FunctionalBlockStore(g, config.params, config.seed) if config.functional else None
        )
        self.uv: dict[int, int] = {}
        self.killed: str | None = None
        self.halted: str | None = None

        self.events = 0
        self.reads = 0
        self.writes = 0
        self.local_bytes = 0
        self.pool_bytes = 0
        self.mac_bytes = 0
        self.device_bytes = 0
        self.device_transactions = 0
        self.device_reads = 0
        self.device_updates = 0
        self.resets = 0
        self.reencrypted_blocks = 0
        self.read_latency_total = 0.0

    # -- helpers ---------------------------------------------------------------

    def channel_of(self, addr: int) -> str:
        return "local" if addr < self.config.local_bytes else "pool"

    def _data_latency(self, channel: str) -> float:
        return self.config.local_ns if channel == "local" else self.config.pool_ns

    def _charge_data(self, out: AccessOutcome, nbytes: int) -> None:
        if out.channel == "local":
            out.local_bytes += nbytes
            self.local_bytes += nbytes
        else:
            out.pool_bytes += nbytes
            self.pool_bytes += nbytes

    def _charge_mac(self, out: AccessOutcome, nbytes: int) -> None:
        out.mac_bytes += nbytes
        self.mac_bytes += nbytes

    def _charge_device(self, out: AccessOutcome, messages: int) -> None:
        nbytes = messages * self.config.device_message_bytes
        out.device_bytes += nbytes
        self.device_bytes += nbytes

    def _line_keys(self, page: int, fmt: int) -> list[int]:
        if fmt == UNEVEN:
            return [page * FULL_SLOTS]
        if fmt == FULL:
            return [page * FULL_SLOTS + q for q in range(FULL_SLOTS)]
        return []

    def _fill_flat(self, page: int, image: bytes) -> None:
        evicted = self.flat_cache.put(page, image)
        if evicted is not None:
            # inclusive pair: dropping a page's flat image kills its lines
            epage = evicted[0]
            for q in range(FULL_SLOTS):
                self.overflow.invalidate(epage * FULL_SLOTS + q)

    def _invalidate_page(self, page: int) -> None:
        self.flat_cache.invalidate(page)
        for q in range(FULL_SLOTS):
            self.overflow.invalidate(page * FULL_SLOTS + q)
        g = self.config.geometry
        base_addr = page * g.page_bytes
        mac_lines = g.blocks_per_page // g.macs_per_block
        first = mac_block_addr(base_addr, self.layout)
        for i in range(mac_lines):
            self.mac_cache.invalidate((first + i * g.block_bytes) // g.block_bytes)

    def _mac_read(self, out: AccessOutcome) -> float:
        """Probe the MAC cache for the event's address; returns fetch latency."""
        g = self.config.geometry
        key = mac_block_addr(out.addr, self.layout) // g.block_bytes
        if self.mac_cache.get(key) is not None:
            out.mac_hit = True
            return 0.0
        out.mac_hit = False
        self._charge_mac(out, g.block_bytes)
        evicted = self.mac_cache.put(key)
        if evicted is not None and evicted[2]:
            self._charge_mac(out, g.block_bytes)  # dirty write-back
        return self._data_latency(out.channel)

    def _mac_write(self, out: AccessOutcome) -> None:
        g = self.config.geometry
        key = mac_block_addr(out.addr, self.layout) // g.block_bytes
        if self.mac_cache.get(key) is not None:
            out.mac_hit = True
            self.mac_cache.mark_dirty(key)
            return
        out.mac_hit = False
        self._charge_mac(out, g.block_bytes)  # fetch for ownership
        evicted = self.mac_cache.put(key, dirty=True)
        if evicted is not None and evicted[2]:
            self._charge_mac(out, g.block_bytes)

    def _debug_checks(self, addr: int, decoded_version: int | None) -> None:
        for key in self.overflow.resident_keys():
            assert key // FULL_SLOTS in self.flat_cache, "overflow line without flat image"
        if decoded_version is not None:
            assert decoded_version == self.store.read_version(addr), "cache decode drift"

    # -- the main entry point ----------------------------------------------------

    def process_access(self, op: str, addr: int) -> AccessOutcome:
        """Run one trace event through the engine.  ``op`` is "R" or "W"."""
        if self.halted:
            raise SimulationHalted(self.halted)
        if self.killed:
            raise SimulationHalted(self.killed)
        if addr >= self.layout.data_bytes:
            raise AddressRangeError(
                f"address {addr:#x} outside the {self.layout.data_bytes}-byte data partition"
            )
        out = AccessOutcome(op=op, addr=addr, channel=self.channel_of(addr))
        g = self.config.geometry
        page, block = addr_decompose(addr, g, self.store.protected_bytes)
        self.events += 1

        if op == "R":
            self.reads += 1
            self._charge_data(out, g.block_bytes)
            version = self._read_version_via_caches(out, page, block)
            mac_lat = self._mac_read(out)
            device_lat = self.config.device_ns if out.device_transactions else 0.0
            out.latency_ns = (
                self._data_latency(out.channel)
                + max(mac_lat, device_lat)
                + self.config.cipher_ns
            )
            self.read_latency_total += out.latency_ns
            if self.config.debug:
                self._debug_checks(addr, version)
            return out

        if op != "W":
            raise ConfigError(f"unknown op {op!r}")
        self.writes += 1
        self._charge_data(out, g.block_bytes)
        try:
            result = self.store.update_version(addr)
        except CapacityError as exc:
            self.halted = f"device capacity exhausted at page {page}: {exc}"
            raise SimulationHalted(self.halted) from exc
        self.device_transactions += 1
        self.device_updates += 1
        out.device_transactions += 1
        lines = self.store.entry_lines(page)
        self._charge_device(out, 2 + len(lines))  # request + entry + lines
        self._fill_flat(page, self.store.entry_image(page))
        for key, payload in zip(self._line_keys(page, result.format_after), lines):
            self.overflow.put(key, payload)
        self._mac_write(out)
        out.events = result.events
        out.latency_ns = self._data_latency(out.channel) + self.config.cipher_ns
        for reset_page in self.store.drain_uv_updates():
            cost = self.handle_uv_update(reset_page, _out=out)
            out.reencrypted_blocks += cost["reencrypted_blocks"]
        if self.config.debug:
            self._debug_checks(addr, None)
        return out

    def _read_version_via_caches(self, out: AccessOutcome, page: int, block: int) -> int:
        """Decode the block's stealth version, fetching from the device on miss."""
        g = self.config.geometry
        params = self.config.params
        image = self.flat_cache.get(page)
        out.flat_hit = image is not None
        line_payloads: list[bytes] | None = None
        need_fetch = image is None
        if image is not None:
            tag, base, payload = decode_entry_image(image, params)
            keys = self._line_keys(page, tag)
            if keys:
                probed = [self.overflow.get(k) for k in keys]
                out.overflow_hit = all(p is not None for p in probed)
                if out.overflow_hit:
                    line_payloads = [p[0] for p in probed]
                else:
                    need_fetch = True
        if need_fetch:
            self.device_transactions += 1
            self.device_reads += 1
            out.device_transactions += 1
            image = self.store.entry_image(page)
            lines = self.store.entry_lines(page)
            self._charge_device(out, 2 + len(lines))
            self._fill_flat(page, image)
            tag, base, payload = decode_entry_image(image, params)
            for key, data in zip(self._line_keys(page, tag), lines):
                self.overflow.put(key, data)
            line_payloads = lines
        if tag == FLAT:
            return (base + ((payload >> block) & 1)) & params.stealth_mask
        if tag == UNEVEN:
            offsets = decode_uneven_line(line_payloads[0], g)
            return (base + offsets[block]) & params.stealth_mask
        versions = decode_full_lines(line_payloads, g, params)
        return versions[block]

    # -- page-level operations -----------------------------------------------------

    def handle_uv_update(self, page: int, _out: AccessOutcome | None = None) -> dict:
        """Bump the page's upper version and re-encrypt the whole page.

        Charged as 64 data-block writes plus 8 MAC-block writes; the page's
        cached metadata is dropped and refills lazily.  Raises
        UvOverflowError when the upper version would pass 2**U.
        """
        params = self.config.params
        g = self.config.geometry
        uv = self.uv.get(page, 0) + 1
        if uv >= (1 << params.upper_bits):
            raise UvOverflowError(
                f"page {page} exhausted its {params.upper_bits}-bit upper version"
            )
        self.uv[page] = uv
        page_addr = page * g.page_bytes
        channel = self.channel_of(page_addr)
        data_write_bytes = g.blocks_per_page * g.block_bytes
        mac_lines = g.blocks_per_page // g.macs_per_block
        mac_write_bytes = mac_lines * g.block_bytes
        tmp = AccessOutcome(op="U", addr=page_addr, channel=channel)
        self._charge_data(tmp, data_write_bytes)
        self._charge_mac(tmp, mac_write_bytes)
        if _out is not None:
            _out.local_bytes += tmp.local_bytes
            _out.pool_bytes += tmp.pool_bytes
            _out.mac_bytes += tmp.mac_bytes
        self.resets += 1
        self.reencrypted_blocks += g.blocks_per_page
        if self.functional is not None:
            self._reencrypt_page(page, uv)
        self._invalidate_page(page)
        return {
            "page": page,
            "uv": uv,
            "data_block_writes": g.blocks_per_page,
            "mac_block_writes": mac_lines,
            "reencrypted_blocks": g.blocks_per_page,
        }

    def _reencrypt_page(self, page: int, new_uv: int) -> None:
        g = self.config.geometry
        fn = self.functional
        lo = page * g.page_bytes
        hi = lo + g.page_bytes
        for addr in list(fn.records):
            if lo <= addr < hi:
                rec = fn.records[addr]
                plaintext = fn.open(addr, rec, rec.stealth)
                stealth = self.store.read_version(addr)
                fn.records[addr] = fn.seal(addr, plaintext, new_uv, stealth)

    def os_free_page(self, page: int) -> AccessOutcome:
        """Free/remap a page: bump its UV and reset its versions, nothing more.

        The page is not re-encrypted, so any stale contents fail their MAC on
        the next verified read; that is the cheap scrambling the OS relies on.
        """
        if self.halted:
            raise SimulationHalted(self.halted)
        g = self.config.geometry
        params = self.config.params
        uv = self.uv.get(page, 0) + 1
        if uv >= (1 << params.upper_bits):
            raise UvOverflowError(
                f"page {page} exhausted its {params.upper_bits}-bit upper version"
            )
        self.uv[page] = uv
        page_addr = page * g.page_bytes
        out = AccessOutcome(op="F", addr=page_addr, channel=self.channel_of(page_addr))
        mac_lines = g.blocks_per_page // g.macs_per_block
        self._charge_mac(out, mac_lines * g.block_bytes)  # UV lives in the MAC lines
        self.store.reset_page(page)
        self.store.drain_uv_updates()  # the bump above already covers it
        self._invalidate_page(page)
        out.events = ("page_freed",)
        return out

    # -- functional layer ------------------------------------------------------------

    def _require_functional(self) -> FunctionalBlockStore:
        if self.functional is None:
            raise ConfigError("engine was built without the functional layer")
        return self.functional

    def functional_write(self, addr: int, plaintext: bytes) -> tuple[Record, AccessOutcome]:
        fn = self._require_functional()
        out = self.process_access("W", addr)
        page, _ = addr_decompose(addr, self.config.geometry, self.store.protected_bytes)
        record = fn.seal(
            addr, plaintext, self.uv.get(page, 0), self.store.read_version(addr)
        )
        fn.records[addr] = record
        return record, out

    def functional_read(self, addr: int) -> tuple[bytes, AccessOutcome]:
        fn = self._require_functional()
        out = self.process_access("R", addr)
        record = fn.records.get(addr)
        if record is None:
            raise ConfigError(f"no record was ever written at {addr:#x}")
        try:
            plaintext = fn.open(addr, record, self.store.read_version(addr))
        except FreshnessViolation as exc:
            self.killed = str(exc)
            raise
        return plaintext, out

    def inject_replay(self, addr: int, old_record: Record) -> str:
        """Substitute a captured record and read it back.

        Returns "detected" (MAC failed under the current version; the kill
        switch latches) or "silent_success" (the captured stealth version
        matches the current one, so the stale data verifies).  Metadata
        traffic is not charged for the injected read.
        """
        fn = self._require_functional()
        fn.records[addr] = old_record
        current = self.store.read_version(addr)
        try:
            fn.open(addr, old_record, current)
        except FreshnessViolation as exc:
            self.killed = str(exc)
            return "detected"
        return "silent_success"

    def rearm_kill_switch(self) -> None:
        """Test/experiment hook: clear the terminal detection state."""
        self.killed = None

    # -- statistics --------------------------------------------------------------------

    def stats(self) -> dict:
        usage = self.store.usage_stats()
        return {
            "mode": self.mode,
            "events": self.events,
            "reads": self.reads,
            "writes": self.writes,
            "channels": {
                "local_bytes": self.local_bytes,
                "pool_bytes": self.pool_bytes,
                "mac_bytes": self.mac_bytes,
                "device_bytes": self.device_bytes,
            },
            "caches": {
                "flat": {"hits": self.flat_cache.hits, "misses": self.flat_cache.misses},
                "overflow": {"hits": self.overflow.hits, "misses": self.overflow.misses},
                "mac": {"hits": self.mac_cache.hits, "misses": self.mac_cache.misses},
            },
            "resets": self.resets,
            "reencrypted_blocks": self.reencrypted_blocks,
            "avg_read_latency_ns": (
                self.read_latency_total / self.reads if self.reads else 0.0
            ),
            "page_formats": {
                "flat": usage["pages_flat"],
                "uneven": usage["pages_uneven"],
                "full": usage["pages_full"],
            },
            "device": {
                "static_bytes": usage["static_bytes"],
                "dynamic_bytes": usage["dynamic_bytes"],
                "peak_bytes": usage["peak_bytes"],
                "transactions": self.device_transactions,
                "reads": self.device_reads,
                "updates": self.device_updates,
            },
        }

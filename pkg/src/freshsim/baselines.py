"""Baseline protection schemes the device-backed engine is compared against.

* ``none``: raw memory, no metadata at all.
* ``ci``: confidentiality and integrity only (cipher + MAC cache), no
  freshness, so writes cost no metadata traffic beyond MAC dirtying.
* ``merkle``: a counter hash tree over the protected range.  Only access
  counts are modeled, never hash values: each verification walks leaf to
  root until a counter-cache hit, each step one 64-byte node fetch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .caches import SetAssocCache
from .core import AddressRangeError, ConfigError, Geometry
from .engine import AccessOutcome, EngineConfig, MemoryLayout, SimulationHalted, mac_block_addr


class _BaselineCore:
    """Data-channel and MAC-cache plumbing shared by the baseline engines."""

    mode = "none"
    uses_mac = False
    uses_cipher = False

    def __init__(self, config: EngineConfig) -> None:
        self.config = config
        self.layout = MemoryLayout(
            data_bytes=config.protected_bytes, geometry=config.geometry
        )
        self.mac_cache = SetAssocCache(
            lines=config.mac_cache_bytes // config.geometry.block_bytes,
            assoc=config.mac_assoc,
        )
        self.halted: str | None = None
        self.events = 0
        self.reads = 0
        self.writes = 0
        self.local_bytes = 0
        self.pool_bytes = 0
        self.mac_bytes = 0
        self.device_bytes = 0
        self.read_latency_total = 0.0

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

    def _mac_access(self, out: AccessOutcome, is_write: bool) -> float:
        g = self.config.geometry
        key = mac_block_addr(out.addr, self.layout) // g.block_bytes
        if self.mac_cache.get(key) is not None:
            out.mac_hit = True
            if is_write:
                self.mac_cache.mark_dirty(key)
            return 0.0
        out.mac_hit = False
        self._charge_mac(out, g.block_bytes)
        evicted = self.mac_cache.put(key, dirty=is_write)
        if evicted is not None and evicted[2]:
            self._charge_mac(out, g.block_bytes)
        return self._data_latency(out.channel)

    def _freshness(self, out: AccessOutcome, is_write: bool) -> float:
        """Hook: extra metadata latency for the freshness scheme, if any."""
        return 0.0

    def process_access(self, op: str, addr: int) -> AccessOutcome:
        if self.halted:
            raise SimulationHalted(self.halted)
        if addr >= self.layout.data_bytes:
            raise AddressRangeError(
                f"address {addr:#x} outside the {self.layout.data_bytes}-byte data partition"
            )
        out = AccessOutcome(op=op, addr=addr, channel=self.channel_of(addr))
        g = self.config.geometry
        self.events += 1
        cipher_ns = self.config.cipher_ns if self.uses_cipher else 0.0
        if op == "R":
            self.reads += 1
            self._charge_data(out, g.block_bytes)
            mac_lat = self._mac_access(out, is_write=False) if self.uses_mac else 0.0
            fresh_lat = self._freshness(out, is_write=False)
            out.latency_ns = self._data_latency(out.channel) + max(mac_lat, fresh_lat) + cipher_ns
            self.read_latency_total += out.latency_ns
        elif op == "W":
            self.writes += 1
            self._charge_data(out, g.block_bytes)
            if self.uses_mac:
                self._mac_access(out, is_write=True)
            self._freshness(out, is_write=True)
            out.latency_ns = self._data_latency(out.channel) + cipher_ns
        else:
            raise ConfigError(f"unknown op {op!r}")
        return out

    def stats(self) -> dict:
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
                "flat": {"hits": 0, "misses": 0},
                "overflow": {"hits": 0, "misses": 0},
                "mac": {"hits": self.mac_cache.hits, "misses": self.mac_cache.misses},
            },
            "resets": 0,
            "reencrypted_blocks": 0,
            "avg_read_latency_ns": (
                self.read_latency_total / self.reads if self.reads else 0.0
            ),
            "page_formats": {"flat": 0, "uneven": 0, "full": 0},
            "device": {"static_bytes": 0, "dynamic_bytes": 0, "peak_bytes": 0,
                       "transactions": 0, "reads": 0, "updates": 0},
        }


class NoneEngine(_BaselineCore):
    """Unprotected memory: data traffic and raw latency only."""

    mode = "none"
    uses_mac = False
    uses_cipher = False


class CiEngine(_BaselineCore):
    """Confidentiality + integrity: cipher latency and a MAC cache, no
    freshness metadata, and therefore never any device traffic."""

    mode = "ci"
    uses_mac = True
    uses_cipher = True


# -- counter hash tree ---------------------------------------------------------------


@dataclass(frozen=True)
class CounterTreeConfig:
    """Shape of the counter tree and its on-chip root region.

    Each 64-byte leaf node packs counters for ``counters_per_leaf_node``
    data blocks; interior nodes fan out ``arity`` children.  The root region
    pins ``root_bytes / (node_bytes / arity)`` child counters on chip, so any
    level with no more nodes than that verifies without leaving the chip.
    """

    protected_bytes: int
    arity: int = 8
    node_bytes: int = 64
    counters_per_leaf_node: int = 8
    root_bytes: int = 3072
    counter_cache_bytes: int = 32 * 1024
    counter_cache_assoc: int = 16
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self) -> None:
        if self.arity < 2:
            raise ConfigError("tree arity must be at least 2")
        if self.protected_bytes < self.geometry.block_bytes:
            raise ConfigError("protected range smaller than one block")
        if self.root_bytes < self.node_bytes // self.arity:
            raise ConfigError("root region cannot hold even one child counter")

    @property
    def root_coverage(self) -> int:
        return self.root_bytes // (self.node_bytes // self.arity)

    @property
    def leaf_nodes(self) -> int:
        blocks = self.protected_bytes // self.geometry.block_bytes
        return -(-blocks // self.counters_per_leaf_node)


def tree_depth(config: CounterTreeConfig) -> int:
    """Off-chip node levels on a worst-case (cold) verification walk.

    Starting from the leaf-counter level, every level with more nodes than
    the root region covers must be fetched; the first level small enough to
    be verified on chip ends the walk.  The leaf level is always fetched
    (it holds the counter being checked), hence the minimum of 1.
    """
    depth = 0
    count = config.leaf_nodes
    while count > config.root_coverage:
        depth += 1
        count = -(-count // config.arity)
    return max(depth, 1)


class CounterTreeState:
    """Counter cache plus sparse per-level node version maps."""

    def __init__(self, config: CounterTreeConfig) -> None:
        self.config = config
        self.depth = tree_depth(config)
        lines = max(config.counter_cache_bytes // config.node_bytes, 1)
        assoc = min(config.counter_cache_assoc, lines)
        if lines % assoc:
            assoc = 1
        self.cache = SetAssocCache(lines=lines, assoc=assoc)
        self.node_versions: list[dict[int, int]] = [dict() for _ in range(self.depth)]
        self.fetches = 0
        self.dirty_writebacks = 0

    def _node_key(self, level: int, index: int) -> int:
        # levels are sparse (< 64), so interleave them below the index bits
        return index * 64 + level

    def access(self, addr: int, is_write: bool) -> int:
        """Verify (and on write, bump) the counter path for ``addr``.

        Returns the number of node fetches: the walk climbs leaf to root and
        stops at the first counter-cache hit, or at the root region.  All
        fetched nodes are filled; a write dirties every touched level, and
        dirty evictions count as write-back traffic.
        """
        cfg = self.config
        if addr < 0 or addr >= cfg.protected_bytes:
            raise AddressRangeError(f"address {addr:#x} outside the protected range")
        leaf = addr // cfg.geometry.block_bytes // cfg.counters_per_leaf_node
        fetched = 0
        index = leaf
        for level in range(self.depth):
            key = self._node_key(level, index)
            hit = self.cache.get(key) is not None
            if is_write:
                lvl_map = self.node_versions[level]
                lvl_map[index] = lvl_map.get(index, 0) + 1
            if hit:
                if is_write:
                    self.cache.mark_dirty(key)
                break
            fetched += 1
            evicted = self.cache.put(key, dirty=is_write)
            if evicted is not None and evicted[2]:
                self.dirty_writebacks += 1
            index //= cfg.arity
        self.fetches += fetched
        return fetched


def merkle_access(state: CounterTreeState, addr: int, is_write: bool) -> int:
    return state.access(addr, is_write)


class MerkleEngine(_BaselineCore):
    """CI plus a counter hash tree for freshness.

    Tree-node traffic is reported on the ``device_bytes`` channel so that the
    freshness-metadata column lines up across modes in comparisons.
    """

    mode = "merkle"
    uses_mac = True
    uses_cipher = True

    def __init__(self, config: EngineConfig, tree_config: CounterTreeConfig | None = None) -> None:
        super().__init__(config)
        if tree_config is None:
            tree_config = CounterTreeConfig(
                protected_bytes=config.protected_bytes, geometry=config.geometry
            )
        if tree_config.protected_bytes != config.protected_bytes:
            raise ConfigError("tree must cover exactly the protected range")
        self.tree = CounterTreeState(tree_config)
        self.tree_fetches = 0
        self.first_access_fetches: int | None = None

    def _freshness(self, out: AccessOutcome, is_write: bool) -> float:
        before = self.tree.dirty_writebacks
        fetched = self.tree.access(out.addr, is_write)
        wb = self.tree.dirty_writebacks - before
        nbytes = (fetched + wb) * self.tree.config.node_bytes
        out.device_bytes += nbytes
        self.device_bytes += nbytes
        out.tree_fetches = fetched
        self.tree_fetches += fetched
        if self.first_access_fetches is None:
            self.first_access_fetches = fetched
        # dependent chain: each level's verification needs the next node
        return fetched * self._data_latency(out.channel)

    def stats(self) -> dict:
        s = super().stats()
        s["tree"] = {
            "depth": self.tree.depth,
            "fetches": self.tree_fetches,
            "dirty_writebacks": self.tree.dirty_writebacks,
            "first_access_fetches": self.first_access_fetches or 0,
        }
        return s

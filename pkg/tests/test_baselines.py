import numpy as np
import pytest

from freshsim.baselines import (
    CiEngine,
    CounterTreeConfig,
    CounterTreeState,
    MerkleEngine,
    NoneEngine,
    merkle_access,
    tree_depth,
)
from freshsim.core import AddressRangeError, ConfigError, Geometry
from freshsim.engine import EngineConfig, HostEngine

G = Geometry()
PAGE = G.page_bytes
BLOCK = G.block_bytes
CIPHER_NS = 40 / 2.25
TIB = 1 << 40
MIB = 1 << 20


class TestTreeGeometry:
    def test_root_region_covers_384_counters(self):
        cfg = CounterTreeConfig(protected_bytes=4 * MIB)
        assert cfg.root_coverage == 384
        assert cfg.leaf_nodes == 4 * MIB // 64 // 8

    def test_depth_at_datacenter_scale(self):
        cfg = CounterTreeConfig(protected_bytes=28 * TIB)
        assert tree_depth(cfg) == 10

    def test_depth_with_tiny_root(self):
        cfg = CounterTreeConfig(protected_bytes=128 * MIB, root_bytes=64)
        assert tree_depth(cfg) == 5

    def test_leaf_level_always_fetched(self):
        # root region covers every leaf counter, yet the leaf node itself
        # still has to come from memory
        cfg = CounterTreeConfig(protected_bytes=PAGE)
        assert cfg.leaf_nodes <= cfg.root_coverage
        assert tree_depth(cfg) == 1

    def test_depth_shrinks_with_wider_fanout(self):
        narrow = CounterTreeConfig(protected_bytes=1 * TIB, arity=2)
        wide = CounterTreeConfig(protected_bytes=1 * TIB, arity=64)
        assert tree_depth(narrow) > tree_depth(wide)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            CounterTreeConfig(protected_bytes=4 * MIB, arity=1)
        with pytest.raises(ConfigError):
            CounterTreeConfig(protected_bytes=32)
        with pytest.raises(ConfigError):
            CounterTreeConfig(protected_bytes=4 * MIB, root_bytes=4)


class TestTreeWalk:
    def make_state(self, **kw):
        kw.setdefault("protected_bytes", 4 * MIB)  # depth 2 with defaults
        return CounterTreeState(CounterTreeConfig(**kw))

    def test_cold_walk_touches_every_level(self):
        st = self.make_state()
        assert st.depth == 2
        assert merkle_access(st, 0, is_write=False) == st.depth

    def test_repeat_access_hits_leaf(self):
        st = self.make_state()
        merkle_access(st, 0, False)
        assert merkle_access(st, 0, False) == 0
        assert merkle_access(st, 5 * BLOCK, False) == 0  # same leaf node

    def test_sibling_stops_at_shared_parent(self):
        st = self.make_state()
        merkle_access(st, 0, False)
        # next leaf node over: new leaf, cached parent
        assert merkle_access(st, 8 * BLOCK, False) == 1

    def test_walk_never_exceeds_depth(self):
        st = self.make_state(protected_bytes=64 * MIB)
        rng = np.random.default_rng(2)
        for addr in (rng.integers(0, 64 * MIB // 64, size=3000) * 64).tolist():
            assert 0 <= st.access(addr, is_write=bool(addr & 64)) <= st.depth

    def test_write_bumps_leaf_counter(self):
        st = self.make_state()
        st.access(0, True)
        st.access(0, True)
        assert st.node_versions[0][0] == 2
        assert st.node_versions[1][0] == 1  # parent only saw the cold walk

    def test_dirty_evictions_are_counted(self):
        st = self.make_state(counter_cache_bytes=2 * 64)
        for leaf in range(64):
            st.access(leaf * 8 * BLOCK, True)
        assert st.dirty_writebacks > 0

    def test_out_of_range_rejected(self):
        st = self.make_state()
        with pytest.raises(AddressRangeError):
            st.access(4 * MIB, False)


def run_trace(engine, events):
    for op, addr in events:
        engine.process_access(op, addr)
    return engine.stats()


def sample_trace(pages=32, n=2000, seed=4):
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, pages * 64, size=n)
    writes = rng.random(n) < 0.3
    return [("W" if w else "R", int(b) * BLOCK) for b, w in zip(blocks, writes)]


class TestBaselineEngines:
    def test_none_is_pure_data_traffic(self):
        e = NoneEngine(EngineConfig(protected_bytes=32 * PAGE))
        s = run_trace(e, sample_trace())
        assert s["mode"] == "none"
        assert s["channels"]["mac_bytes"] == 0
        assert s["channels"]["device_bytes"] == 0
        assert s["avg_read_latency_ns"] == pytest.approx(50.0)
        assert s["channels"]["local_bytes"] == s["events"] * BLOCK

    def test_ci_adds_cipher_and_macs_only(self):
        e = CiEngine(EngineConfig(protected_bytes=32 * PAGE))
        cold = e.process_access("R", 0)
        assert cold.latency_ns == pytest.approx(50 + 50 + CIPHER_NS)
        warm = e.process_access("R", 0)
        assert warm.latency_ns == pytest.approx(50 + CIPHER_NS)
        s = e.stats()
        assert s["channels"]["mac_bytes"] == BLOCK
        assert s["channels"]["device_bytes"] == 0

    def test_ci_mac_traffic_matches_protected_engine(self):
        # one write per page up front so the protected engine's flat cache is
        # warm and the only latency difference could come from the MAC side
        trace = [("W", p * PAGE) for p in range(32)] + sample_trace()
        ci = run_trace(CiEngine(EngineConfig(protected_bytes=32 * PAGE)), trace)
        toleo = run_trace(HostEngine(EngineConfig(protected_bytes=32 * PAGE)), trace)
        assert ci["channels"]["mac_bytes"] == toleo["channels"]["mac_bytes"]
        assert ci["caches"]["mac"] == toleo["caches"]["mac"]
        assert ci["avg_read_latency_ns"] == pytest.approx(toleo["avg_read_latency_ns"])

    def test_unknown_op_rejected(self):
        e = NoneEngine(EngineConfig(protected_bytes=PAGE))
        with pytest.raises(ConfigError):
            e.process_access("Z", 0)
        with pytest.raises(AddressRangeError):
            e.process_access("R", PAGE)


class TestMerkleEngine:
    def make(self, protected=4 * MIB, **tree_kw):
        cfg = EngineConfig(protected_bytes=protected)
        tree = CounterTreeConfig(protected_bytes=protected, **tree_kw) if tree_kw else None
        return MerkleEngine(cfg, tree)

    def test_cold_read_walks_and_charges_tree(self):
        e = self.make()
        depth = e.tree.depth
        out = e.process_access("R", 0)
        assert out.tree_fetches == depth
        assert out.device_bytes == depth * 64
        assert out.latency_ns == pytest.approx(50 + depth * 50 + CIPHER_NS)
        assert e.first_access_fetches == depth

    def test_warm_read_skips_tree(self):
        e = self.make()
        e.process_access("R", 0)
        out = e.process_access("R", 0)
        assert out.tree_fetches == 0
        assert out.device_bytes == 0
        assert out.latency_ns == pytest.approx(50 + CIPHER_NS)

    def test_tree_must_cover_protected_range(self):
        with pytest.raises(ConfigError):
            MerkleEngine(
                EngineConfig(protected_bytes=4 * MIB),
                CounterTreeConfig(protected_bytes=2 * MIB),
            )

    def test_writeback_traffic_lands_on_device_channel(self):
        e = self.make(counter_cache_bytes=2 * 64)
        for leaf in range(64):
            e.process_access("W", leaf * 8 * BLOCK)
        s = e.stats()
        fetch_bytes = s["tree"]["fetches"] * 64
        wb_bytes = s["tree"]["dirty_writebacks"] * 64
        assert s["tree"]["dirty_writebacks"] > 0
        assert s["channels"]["device_bytes"] == fetch_bytes + wb_bytes

    def test_stats_schema_adds_tree_section(self):
        e = self.make()
        e.process_access("R", 0)
        s = e.stats()
        assert set(s["tree"]) == {"depth", "fetches", "dirty_writebacks", "first_access_fetches"}
        base_keys = {
            "mode", "events", "reads", "writes", "channels", "caches",
            "resets", "reencrypted_blocks", "avg_read_latency_ns",
            "page_formats", "device", "tree",
        }
        assert set(s) == base_keys
        assert s["mode"] == "merkle"

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from heatlab.baselines import RandomUniformPolicy
from heatlab.engine import DeploymentConfig
from heatlab.env import (
    BufferFormatError, HistoryTracker, HybridBuffer, MdpController, NodeState, NotReady, ReplayBuffer, Transition,
    collect_offline, encode_states, load_buffer, reward, save_buffer, state_dim,
)
from heatlab.node import Action, ActionSpace
from heatlab.pipeline import collect_behaviour_buffer

SPACE = ActionSpace()


def test_reward_examples():
    assert reward(0, 1, 0.0) == 0.0
    assert reward(1, 1, 0.0, 0.5) == 2.0
    assert reward(1, 1, 1.0) == -2.0 * math.log2(1e-6)
    assert reward(1, 1, 1.0) == pytest.approx(39.863, abs=1e-3)


def test_reward_zero_sent_uses_history():
    assert reward(0, 0, 0.5, 0.5) == reward(1, 2, 0.5, 0.5)
    with pytest.raises(ValueError):
        reward(0, -1, 0.5)


def test_reward_monotone_grid():
    grid = np.linspace(0.0, 0.999, 100)
    for h in (0.0, 0.3, 0.6):
        r = [reward(p, 1.0, h) for p in grid]
        assert all(a < b for a, b in zip(r, r[1:]))
    for p in (0.0, 0.3, 0.6):
        r = [reward(p, 1.0, h) for h in grid]
        assert all(a < b for a, b in zip(r, r[1:]))


@given(p=st.floats(0, 1), h=st.floats(0, 1), lam=st.floats(0, 1))
def test_reward_range(p, h, lam):
    r = reward(p, 1.0, h, lam)
    assert 0.0 <= r <= -2 * math.log2(1e-6) + 1e-12


def test_history_tracker():
    h = HistoryTracker()
    cell = (7, 2.0, 7, 8)
    assert h.value(cell) == 0.5
    for i in range(10):
        h.update(cell, i != 0)
    assert h.value(cell) == pytest.approx(10 / 12)
    # pooled across nodes: order and source do not matter
    h2 = HistoryTracker()
    for i in range(10):
        h2.update(cell, i != 9)
    assert h2.value(cell) == h.value(cell)


def test_history_converges():
    rng = np.random.default_rng(0)
    h = HistoryTracker()
    for ok in rng.random(10_000) < 0.73:
        h.update((8, 5.0, 8, 16), ok)
    assert abs(h.value((8, 5.0, 8, 16)) - 0.73) < 0.01


def test_state_encoding():
    s = [NodeState(1000.0, 8, 5.0, 12, 64), NodeState(0.0, 7, 2.0, 7, 8)]
    x = encode_states(s, SPACE, 2000.0)
    assert x.shape == (2, state_dim(SPACE)) == (2, 23)
    assert x[0, 0] == 0.5 and x[0, 1:].sum() == 4
    assert x[0, 1 + 1] == 1 and x[0, 7 + 1] == 1 and x[0, 13 + 5] == 1 and x[0, 19 + 3] == 1


def tr(node, t, time, r=1.0, origin="online"):
    s = NodeState(100.0 * (node + 1), 7, 2.0, 7, 8)
    return Transition(node, s, Action(8, 5.0, 8, 16), r, s, t, time, origin)


def scan_oracle(transitions, n_nodes, cut):
    rows = []
    for node in range(n_nodes):
        best = None
        for x in transitions:
            if x.node_id == node and x.time <= cut:
                best = x
        rows.append(best)
    return rows


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_nodes=st.integers(1, 5), n=st.integers(1, 100))
def test_global_batch_matches_scan(seed, n_nodes, n):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n_nodes)
    steps = [0] * n_nodes
    all_tr = []
    t = 0.0
    for _ in range(n):
        t += float(rng.exponential(1.0))
        node = int(rng.integers(n_nodes))
        steps[node] += 1
        x = tr(node, steps[node], t)
        buf.append(x)
        all_tr.append(x)
    if any(s == 0 for s in steps):
        with pytest.raises(NotReady):
            buf.sample_global_batch(rng)
        return
    for _ in range(5):
        batch = buf.sample_global_batch(rng)
        assert len(batch) == n_nodes
        assert batch.transitions == scan_oracle(all_tr, n_nodes, batch.cut)
        assert all(x.time <= batch.cut for x in batch.transitions)
    latest = buf.batch_at(t)
    assert [x.t_index for x in latest.transitions] == steps


def test_single_node_batch_is_uniform():
    buf = ReplayBuffer(1)
    for i in range(5):
        buf.append(tr(0, i + 1, float(i)))
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(5000):
        counts[buf.sample_global_batch(rng).transitions[0].t_index - 1] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_ring_eviction_and_ordering():
    buf = ReplayBuffer(2, capacity=3)
    for i in range(5):
        buf.append(tr(i % 2, i // 2 + 1, float(i)))
    assert len(buf) == 3
    with pytest.raises(ValueError):
        buf.append(tr(0, 9, 1.0))
    with pytest.raises(ValueError):
        buf.append(tr(0, 1, 10.0))
    with pytest.raises(ValueError):
        buf.append(tr(5, 1, 10.0))


def test_hybrid_draws_from_both_sources():
    off, on = ReplayBuffer(2, origin="offline"), ReplayBuffer(2)
    for i in range(40):
        off.append(tr(i % 2, i // 2 + 1, float(i), origin="offline"))
    for i in range(10):
        on.append(tr(i % 2, i // 2 + 1, float(i)))
    hyb = HybridBuffer(off, on)
    rng = np.random.default_rng(1)
    origins = [hyb.sample_global_batch(rng).transitions[0].origin for _ in range(4000)]
    frac = origins.count("online") / len(origins)
    # snapshot counts are 39 offline vs 9 online
    assert abs(frac - 9 / 48) < 0.03
    with pytest.raises(NotReady):
        HybridBuffer(None, ReplayBuffer(2)).sample_global_batch(rng)


def test_buffer_roundtrip_bytes(tmp_path):
    buf = ReplayBuffer(3, capacity=50, origin="offline")
    for i in range(12):
        buf.append(tr(i % 3, i // 3 + 1, i * 0.1 + 1 / 3, r=i / 7, origin="offline"))
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_buffer(buf, p1)
    loaded = load_buffer(p1)
    save_buffer(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert list(loaded) == list(buf)


def test_buffer_errors(tmp_path):
    buf = ReplayBuffer(2)
    for i in range(4):
        buf.append(tr(i % 2, i // 2 + 1, float(i)))
    p = tmp_path / "b.jsonl"
    save_buffer(buf, p)
    lines = p.read_text().splitlines()
    (tmp_path / "trunc.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(BufferFormatError, match="truncated"):
        load_buffer(tmp_path / "trunc.jsonl")
    header = json.loads(lines[0])
    header["version"] = "0"
    (tmp_path / "v.jsonl").write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(BufferFormatError, match="'0'.*'1'"):
        load_buffer(tmp_path / "v.jsonl")
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(BufferFormatError):
        load_buffer(tmp_path / "e.jsonl")


def test_empty_buffer_loads_and_refuses(tmp_path):
    p = tmp_path / "empty.jsonl"
    save_buffer(ReplayBuffer(4), p)
    buf = load_buffer(p)
    assert len(buf) == 0
    with pytest.raises(NotReady):
        buf.sample_global_batch(np.random.default_rng(0))


def test_collect_offline_properties():
    cfg = DeploymentConfig(8, 2000.0, 2.0, 0.0, 3)
    buf, sim = collect_offline(cfg, RandomUniformPolicy(SPACE, 0), minutes=25)
    assert len(buf) == sum(n.n_sent for n in sim.nodes)
    assert all(x.origin == "offline" for x in buf)
    acts = np.array([SPACE.indices(x.a) for x in buf])
    for k, size in enumerate(SPACE.sizes):
        counts = np.bincount(acts[:, k], minlength=size)
        assert stats.chisquare(counts).pvalue > 0.01


def test_transitions_follow_downlink_outcomes():
    # busy enough that the half-duplex transmitter drops some commands
    cfg = DeploymentConfig(48, 2000.0, 3.0, 0.0, 1)
    buf = collect_behaviour_buffer(cfg, 10)
    adopted = kept = 0
    for x in buf:
        if x.s_next.params == x.a:
            adopted += 1
        else:
            assert x.s_next.params == x.s.params
            kept += 1
        assert x.s_next.d == x.s.d and math.isfinite(x.r)
    assert adopted > 0 and kept > 0

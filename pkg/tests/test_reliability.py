import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unosim.config import ConfigError
from unosim.engine import RngStream
from unosim.reliability import (BlockState, BlockStatus, EcmpLB, PlbLB, UnoLB, block_deadline,
                                frame_blocks, lb_baseline, on_block_packet, wire_overhead)
from unosim.topology import build_two_dc_fattree

MTU = 4096
MiB = 1 << 20
G100 = 100_000_000_000
RTT = 14_000


class _Pkt:
    subflow = None


def topo(k=4, links=8):
    return build_two_dc_fattree(k=k, border_links=links)


def make(kind, t, src="h0_0_0_0", dst="h1_1_1_0", seed=3, **kw):
    return lb_baseline(kind, t, src, dst, 7, RTT, RngStream(f"routing:{kind}", seed), seed, **kw)


# ---------------------------------------------------------------- framing

def test_five_mib_framing():
    blocks = frame_blocks(5 * MiB, 8, 2, MTU)
    assert len(blocks) == 160
    assert all(b.n == 10 for b in blocks)
    assert wire_overhead(blocks, MTU, 5 * MiB) == pytest.approx(1.25)


def test_no_parity_is_plain_segmentation():
    blocks = frame_blocks(100_000, 8, 0, MTU)
    assert sum(b.n for b in blocks) == -(-100_000 // (8 * MTU)) * 8
    assert sum(b.data_bytes for b in blocks) == 100_000


def test_one_byte_message_is_one_padded_block():
    (b,) = frame_blocks(1, 8, 2, MTU)
    assert b.n == 10 and b.data_bytes == 1


def test_framing_rejects_bad_params():
    with pytest.raises(ValueError):
        frame_blocks(10, 0, 2, MTU)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50 * MiB), st.integers(1, 16), st.integers(0, 4))
def test_framing_covers_message_exactly(size, x, y):
    blocks = frame_blocks(size, x, y, MTU)
    assert len(blocks) == -(-size // (x * MTU))
    assert sum(b.data_bytes for b in blocks) == size
    assert [b.block_id for b in blocks] == list(range(len(blocks)))


# ---------------------------------------------------------------- receiver block state

def test_decoded_at_eighth_arrival_and_rest_ignored():
    s = BlockState(0, 8, 10)
    results = [on_block_packet(s, i) for i in range(10)]
    assert results[:7] == [BlockStatus.PENDING] * 7
    assert results[7] is BlockStatus.DECODED
    assert results[8:] == [None, None]


def test_duplicates_are_idempotent():
    s = BlockState(0, 8, 10)
    for _ in range(5):
        on_block_packet(s, 3)
    assert s.count == 1 and s.status is BlockStatus.PENDING


def test_seven_arrivals_leave_block_short():
    s = BlockState(0, 8, 10)
    for i in range(7):
        on_block_packet(s, i)
    assert s.status is BlockStatus.PENDING
    assert s.missing() == [7, 8, 9]


def test_mds_predicate_exhaustive_over_all_loss_patterns():
    for mask in range(1 << 10):
        arrived = [i for i in range(10) if mask >> i & 1]
        s = BlockState(0, 8, 10)
        for i in arrived:
            on_block_packet(s, i)
        assert (s.status is BlockStatus.DECODED) == (len(arrived) >= 8)
    assert sum(1 for m in range(1 << 10) if bin(m).count("1") >= 8) == 56


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 9), max_size=40))
def test_decoded_exactly_once(arrivals):
    s = BlockState(0, 8, 10)
    decodes = sum(on_block_packet(s, i) is BlockStatus.DECODED for i in arrivals)
    assert decodes == (1 if len(set(arrivals)) >= 8 else 0)


# ---------------------------------------------------------------- deadline

def test_block_deadline_example():
    d = block_deadline(10, MTU, G100, 5, MiB, G100, 2.0)
    ser = 10 * math.ceil(MTU * 8 / 100)  # per-packet wire time is whole ns
    queue = 5 * MiB * 8 / 100
    assert d == pytest.approx(2 * (ser + queue), abs=2)
    assert d == pytest.approx(845_000, rel=0.01)


def test_block_deadline_linear_in_factor():
    a = block_deadline(10, MTU, G100, 5, MiB, G100, 2.0)
    b = block_deadline(10, MTU, G100, 5, MiB, G100, 4.0)
    assert abs(b - 2 * a) <= 1


# ---------------------------------------------------------------- UnoLB

def test_round_robin_over_a_block():
    lb = make("unolb", topo())
    seq = []
    for _ in range(10):
        p = _Pkt()
        lb.on_send(p)
        seq.append(p.subflow)
    assert seq == [0, 1, 2, 3, 4, 5, 6, 7, 0, 1]


def test_single_subflow_pins_one_path():
    lb = make("unolb", topo(), n_subflows=1)
    paths = {lb.on_send(_Pkt()) for _ in range(50)}
    assert len(paths) == 1


def test_inter_subflows_start_on_distinct_border_links():
    t = topo(k=8, links=8)
    src, dst = "h0_0_0_0", "h1_2_1_3"
    lb = make("unolb", t, src, dst)
    links = [t.border_link_of(src, dst, s.path_idx) for s in lb.table.subflows]
    assert len(set(links)) == 8


def test_one_dead_border_link_costs_at_most_parity_per_block():
    t = topo(k=8, links=8)
    src, dst = "h0_0_0_0", "h1_2_1_3"
    for seed in range(10):
        lb = make("unolb", t, src, dst, seed=seed)
        dead = t.border_link_ids[seed % 8]
        lost = 0
        for _ in range(10):
            path = lb.on_send(_Pkt())
            lost += any(p.link_id == dead for p in path)
        assert lost <= 2


def test_second_nack_within_half_rtt_is_rate_limited():
    lb = make("unolb", topo())
    now = 10 * RTT
    for s in lb.table.subflows:
        s.last_ack_time = now
    assert lb.on_nack_or_timeout(0, now)
    assert not lb.on_nack_or_timeout(1, now + RTT // 2)
    assert lb.reroutes == [now]
    assert lb.on_nack_or_timeout(1, now + RTT + 1)


def test_reroute_picks_among_recently_acked_subflows():
    lb = make("unolb", topo())
    now = 10 * RTT
    recent = {2, 4, 6}
    for i, s in enumerate(lb.table.subflows):
        s.path_idx = 100 + i
        s.last_ack_time = now - 1 if i in recent else 0
    picks = Counter()
    for trial in range(300):
        lb.table.subflows[0].path_idx = 100
        lb.table.last_reroute = -(1 << 62)
        assert lb.on_nack_or_timeout(0, now)
        picks[lb.table.subflows[0].path_idx] += 1
    assert set(picks) == {102, 104, 106}


def test_reroute_without_recent_acks_picks_unassigned_path():
    t = topo()
    lb = make("unolb", t)
    used = {s.path_idx for s in lb.table.subflows}
    assert lb.on_nack_or_timeout(3, 10 * RTT)
    new = lb.table.subflows[3].path_idx
    assert new not in used or len(used) == lb.count


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3 * RTT), st.integers(0, 7), st.booleans()), max_size=80))
def test_reroute_spacing_and_round_robin_between_reroutes(ops):
    lb = make("unolb", topo())
    now = 0
    expected = 0
    for gap, sf, nack in ops:
        now += gap
        if nack:
            lb.on_nack_or_timeout(sf, now)
        else:
            p = _Pkt()
            lb.on_send(p)
            assert p.subflow == expected
            expected = (expected + 1) % 8
        lb.on_ack(sf, False, now)
        assert 0 <= lb.table.index < 8
    for a, b in zip(lb.reroutes, lb.reroutes[1:]):
        assert b - a > RTT


# ---------------------------------------------------------------- baselines

def test_ecmp_is_sticky_and_deterministic():
    t = topo()
    a, b = make("ecmp", t), make("ecmp", t)
    assert isinstance(a, EcmpLB)
    assert a.idx == b.idx
    assert len({a.on_send(_Pkt()) for _ in range(100)}) == 1


class _EightPaths:
    def path_count(self, src, dst):
        return 8

    def path_at(self, src, dst, idx):
        return idx


def test_spray_is_uniform_over_eight_paths():
    lb = make("spray", _EightPaths())
    n = 10**5
    hist = Counter(lb.on_send(_Pkt()) for _ in range(n))
    assert sorted(hist) == list(range(8))
    for i in range(8):
        assert abs(hist[i] / n - 0.125) <= 0.01


def test_plb_repaths_within_three_rtts_of_persistent_marking():
    lb = make("plb", topo())
    assert isinstance(lb, PlbLB)
    for r in range(1, 4):
        lb.on_round(10, 10, r * RTT + 1)
    assert lb.repaths >= 1
    assert lb.reroutes and lb.reroutes[0] <= 3 * RTT + 1


def test_plb_ignores_light_marking():
    lb = make("plb", topo())
    for r in range(1, 20):
        lb.on_round(4, 10, r * RTT)
    assert lb.repaths == 0


def test_unknown_lb_rejected():
    with pytest.raises(ConfigError):
        make("flowlet", topo())

import itertools
import random
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from dagconsensus.hashgraph import (
    Fame,
    GossipSchedule,
    HashgraphNode,
    HashgraphView,
    StuckElection,
    WireEventSize,
    gossip_sync,
    lower_median,
    make_event,
    order_events,
)
from helpers import BruteHashgraph, global_view, gossip_run, scheduled_run

ROUND_ROBIN = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 0), (2, 1), (3, 2), (0, 3)]


# -- wire budget and sync --------------------------------------------------------


def test_three_event_delta_costs_504_bytes():
    a, b, c = (HashgraphNode(i, 3) for i in range(3))
    gossip_sync(b, a, now=1.0)
    res = gossip_sync(a, c, now=2.0)
    assert res.delta == 3
    assert res.bytes == 3 * (4 + 64 + 100) == 504


def test_wire_size_bounds():
    assert WireEventSize(positional_bytes=6).per_event == 170
    with pytest.raises(ValueError):
        WireEventSize(positional_bytes=2)
    with pytest.raises(ValueError):
        GossipSchedule(0.0)


def test_redundant_sync_still_links_heads():
    a, b = HashgraphNode(0, 2), HashgraphNode(1, 2)
    gossip_sync(a, b, now=1.0)
    before = len(b.view)
    res = gossip_sync(a, b, now=2.0)
    assert res.delta == 0 and res.bytes == 0
    assert len(b.view) == before + 1
    assert res.event.self_parent == b.created[-2]
    assert res.event.other_parent == a.created[-1]


def test_sync_requires_distinct_nodes():
    a = HashgraphNode(0, 2)
    with pytest.raises(ValueError):
        gossip_sync(a, a, now=1.0)


def test_chain_dissemination_in_n_minus_one_syncs():
    nodes, _ = scheduled_run(4, [(0, 1), (1, 2), (2, 3)])
    g0 = nodes[0].created[0]
    assert all(g0 in nd.view for nd in nodes)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_views_grow_and_stay_ancestor_closed(seed):
    rng = random.Random(seed)
    nodes = [HashgraphNode(i, 4) for i in range(4)]
    for k in range(40):
        s, r = rng.sample(range(4), 2)
        seen = set(nodes[r].view.events)
        gossip_sync(nodes[s], nodes[r], now=float(k + 1))
        assert seen <= set(nodes[r].view.events)
    for nd in nodes:
        for e in nd.view.events.values():
            for p in (e.self_parent, e.other_parent):
                assert p is None or p in nd.view


def test_parent_creator_rules():
    v = HashgraphView(2)
    g0 = make_event(0, None, None, (), 0.0)
    g1 = make_event(1, None, None, (), 0.0)
    v.add(g0)
    v.add(g1)
    with pytest.raises(ValueError):
        v.add(make_event(0, g1.id, None, (), 1.0))
    with pytest.raises(ValueError):
        v.add(make_event(0, g0.id, g0.id, (), 1.0))
    with pytest.raises(ValueError):
        v.add(make_event(5, None, None, (), 0.0))


# -- rounds and strongly-sees against brute force ---------------------------------


def test_genesis_events_are_round_one_witnesses():
    nodes, log = scheduled_run(4, [])
    v = global_view(4, log)
    for e in log:
        assert v.round(e.id) == 1 and v.is_witness(e.id)


def test_round_two_needs_three_of_four_round_one_witnesses():
    nodes, log = scheduled_run(4, ROUND_ROBIN)
    v = global_view(4, log)
    brute = BruteHashgraph(4, log)
    g = {e.creator: e.id for e in log[:4]}
    for e in log[4:]:
        seen = sum(brute.strongly_sees(e.id, g[c]) for c in range(4))
        assert (v.round(e.id) == 2) == (seen >= 3)
    # the first round-2 event of each creator is a witness, later ones are not
    per_creator = {}
    for e in log:
        if v.round(e.id) == 2:
            per_creator.setdefault(e.creator, []).append(e.id)
    assert per_creator
    for ids in per_creator.values():
        assert v.is_witness(ids[0])
        assert not any(v.is_witness(i) for i in ids[1:])


def test_strongly_sees_matches_explicit_path_enumeration():
    _, log = gossip_run(4, 18, seed=7)
    v = global_view(4, log)
    brute = BruteHashgraph(4, log)
    for x, y in itertools.product(log, log):
        paths = brute.paths(x.id, y.id)
        creators = {brute.ev[s].creator for p in paths for s in p}
        expected = bool(paths) and 3 * len(creators) > 2 * 4
        assert v.strongly_sees(x.id, y.id) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_rounds_and_strongly_sees_match_brute_force(seed, with_forker):
    _, log = gossip_run(4, 56, seed, forkers=(3,) if with_forker else ())
    assert len(log) == 60
    v = global_view(4, log)
    brute = BruteHashgraph(4, log)
    for x in log:
        assert v.round(x.id) == brute.round[x.id]
        assert v.is_witness(x.id) == brute.witness[x.id]
        for y in log:
            assert v.sees(x.id, y.id) == brute.sees(x.id, y.id)
            assert v.strongly_sees(x.id, y.id) == brute.strongly_sees(x.id, y.id)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_monotone_along_self_chains(seed):
    _, log = gossip_run(4, 60, seed, forkers=(0,))
    v = global_view(4, log)
    for e in log:
        for p in (e.self_parent, e.other_parent):
            if p is not None:
                assert v.round(e.id) >= v.round(p)


# -- fame -------------------------------------------------------------------------


def _solo_chain(k):
    v = HashgraphView(1)
    prev = make_event(0, None, None, (), 0.0)
    v.add(prev)
    ids = [prev.id]
    for t in range(1, k):
        e = make_event(0, prev.id, None, (), float(t))
        v.add(e)
        ids.append(e.id)
        prev = e
    return v, ids


def test_single_node_witnesses_are_famous():
    v, ids = _solo_chain(4)
    assert [v.round(i) for i in ids] == [1, 2, 3, 4]
    v.run_consensus()
    assert [v.fame(i) for i in ids[:2]] == [Fame.FAMOUS, Fame.FAMOUS]


def test_single_event_consensus_time_is_its_own_time():
    v, ids = _solo_chain(3)
    order = order_events(v)
    assert order[0] == ids[0]
    assert v.consensus_time(ids[0]) == 0.0
    assert v.order_index(ids[0]) == 0


def test_full_gossip_makes_witnesses_famous_and_matches_tally():
    nodes, log = scheduled_run(4, ROUND_ROBIN * 5)
    v = global_view(4, log)
    v.decide_fame()
    brute = BruteHashgraph(4, log)
    top = v.max_round
    assert top >= 4
    for r in range(1, top - 1):
        for w in v.witnesses(r):
            assert v.fame(w) is Fame.FAMOUS
            assert brute.fame(w) is True


def test_isolated_witness_is_not_famous():
    sched = [(0, 1), (1, 2), (2, 0), (1, 0), (2, 1), (0, 2)] * 5
    nodes, log = scheduled_run(4, sched)
    v = global_view(4, log)
    v.decide_fame()
    g3 = nodes[3].created[0]
    assert v.fame(g3) is Fame.NOT_FAMOUS
    assert BruteHashgraph(4, log).fame(g3) is False


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_fame_matches_brute_tally(seed, with_forker):
    _, log = gossip_run(4, 56, seed, forkers=(2,) if with_forker else ())
    v = global_view(4, log)
    v.decide_fame()
    brute = BruteHashgraph(4, log)
    for r in range(1, v.max_round + 1):
        for w in v.witnesses(r):
            f = v.fame(w)
            expected = brute.fame(w)
            assert f is {True: Fame.FAMOUS, False: Fame.NOT_FAMOUS, None: Fame.UNDECIDED}[expected]


def test_stuck_election_warns(monkeypatch):
    import dagconsensus.hashgraph as hg

    v, ids = _solo_chain(2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", StuckElection)
        v.decide_fame()
    assert v.fame(ids[0]) is Fame.UNDECIDED
    monkeypatch.setattr(hg, "STUCK_ELECTION_ROUNDS", 0)
    with pytest.warns(StuckElection):
        v.decide_fame()


# -- ordering -----------------------------------------------------------------


def test_median_of_first_seeing_times():
    # g3 reaches creators 0, 1, 2 at t = 1, 2, 9; creator 3 stays silent afterwards
    head = [(3, 0), (0, 1), (1, 2)]
    tail = [(0, 1), (1, 2), (2, 0), (1, 0), (2, 1), (0, 2)] * 4
    times = [1.0, 2.0, 9.0] + [10.0 + k for k in range(len(tail))]
    nodes, log = scheduled_run(4, head + tail, times)
    v = global_view(4, log)
    v.run_consensus()
    g3 = nodes[3].created[0]
    assert v.received_round(g3) == 2
    famous = [w for w in v.witnesses(2) if v.fame(w) is Fame.FAMOUS]
    assert sorted(v.events[w].creator for w in famous) == [0, 1, 2]
    assert v.consensus_time(g3) == 2.0


def test_lower_median():
    assert lower_median([9.0, 1.0, 2.0]) == 2.0
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0


def test_order_key_is_round_time_id():
    _, log = gossip_run(4, 80, seed=3)
    v = global_view(4, log)
    order = order_events(v)
    assert order
    keys = [(v.received_round(e), v.consensus_time(e), e) for e in order]
    assert keys == sorted(keys)
    assert [v.order_index(e) for e in order] == list(range(len(order)))


def _honest_agreement(nodes, honest):
    for nd in nodes:
        nd.view.run_consensus()
    for a, b in itertools.combinations(honest, 2):
        va, vb = nodes[a].view, nodes[b].view
        common = set(va.order) & set(vb.order)
        for e in common:
            assert va.order_index(e) == vb.order_index(e)
            assert va.consensus_time(e) == vb.consensus_time(e)
    return nodes


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_honest_nodes_agree_with_one_forker(seed):
    nodes, _ = gossip_run(4, 150, seed, forkers=(3,), payload_every=3)
    _honest_agreement(nodes, [0, 1, 2])
    assert any(nodes[i].view.order for i in range(3))


def test_fault_free_events_decided_within_six_rounds():
    nodes, log = gossip_run(4, 200, seed=11)
    v = global_view(4, log)
    v.run_consensus()
    for e in log:
        rr = v.received_round(e.id)
        if v.round(e.id) <= v.max_round - 6:
            assert rr is not None
        if rr is not None:
            assert rr - v.round(e.id) <= 6


def test_two_nodes_agree():
    nodes, _ = gossip_run(2, 60, seed=5, payload_every=2)
    _honest_agreement(nodes, [0, 1])
    common = set(nodes[0].view.order) & set(nodes[1].view.order)
    assert common


def test_export_lines_format():
    _, log = gossip_run(3, 60, seed=1)
    v = global_view(3, log)
    v.run_consensus()
    lines = v.export_lines()
    assert len(lines) == len(log)
    first = lines[0].split(",")
    assert len(first) == 9
    assert first[2] == "-" and first[3] == "-"
    assert first[6] == "1" and first[7] in "UFN"
    ordered = [ln for ln in lines if ln.split(",")[8] != "-"]
    assert ordered

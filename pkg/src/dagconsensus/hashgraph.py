"""Hashgraph: gossip-about-gossip event graphs and virtual voting.

Each simulated node owns a :class:`HashgraphView`. Rounds, witnesses and
votes are functions of an event's ancestry only, so every view that holds
an event computes the same values for it; fame decisions and the final
order then agree across honest views.

Definitions used throughout:

* x *sees* y: y is an ancestor of x (or x itself) and x's ancestry holds
  no fork by y's creator (two events by one creator, neither an ancestor
  of the other).
* x *strongly sees* y: x sees y and events by more than 2n/3 distinct
  creators lie between them (seen by x, seeing y).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .dag import Transaction, encode_payload
from .encoding import DEFAULT_KEYRING, Keyring, digest, i64, millis, u64
from .encoding import field as lp

EventId = bytes

STUCK_ELECTION_ROUNDS = 10


class StuckElection(UserWarning):
    """A fame election stayed undecided for too many rounds."""


class UnknownEvent(KeyError):
    pass


class Fame(Enum):
    UNDECIDED = "U"
    FAMOUS = "F"
    NOT_FAMOUS = "N"


@dataclass(frozen=True)
class Event:
    id: EventId
    creator: int
    self_parent: Optional[EventId]
    other_parent: Optional[EventId]
    payload: tuple[Transaction, ...]
    claimed_time: float
    signature: bytes = b""

    def preimage(self) -> bytes:
        return event_preimage(self.creator, self.self_parent, self.other_parent, self.payload, self.claimed_time)


def event_preimage(creator, self_parent, other_parent, payload, claimed_time) -> bytes:
    return (
        lp(u64(creator))
        + lp(self_parent or b"")
        + lp(other_parent or b"")
        + lp(b"".join(encode_payload(t) for t in payload))
        + lp(i64(millis(claimed_time)))
    )


def make_event(
    creator: int,
    self_parent: Optional[EventId],
    other_parent: Optional[EventId],
    payload: Iterable[Transaction],
    claimed_time: float,
    keyring: Keyring = DEFAULT_KEYRING,
) -> Event:
    payload = tuple(payload)
    pre = event_preimage(creator, self_parent, other_parent, payload, claimed_time)
    return Event(digest(pre), creator, self_parent, other_parent, payload, claimed_time, keyring.sign(creator, pre))


@dataclass(frozen=True)
class WireEventSize:
    positional_bytes: int = 4
    signature_bytes: int = 64
    payload_bytes: int = 100

    def __post_init__(self):
        if not 3 <= self.positional_bytes <= 6:
            raise ValueError("positional_bytes must be in [3, 6]")

    @property
    def per_event(self) -> int:
        return self.positional_bytes + self.signature_bytes + self.payload_bytes


@dataclass(frozen=True)
class GossipSchedule:
    sync_interval: float

    def __post_init__(self):
        if not self.sync_interval > 0:
            raise ValueError("sync_interval must be > 0")


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def lower_median(values: list[float]) -> float:
    s = sorted(values)
    return s[(len(s) - 1) // 2]


class HashgraphView:
    def __init__(self, population: int):
        if population < 1:
            raise ValueError("population must be >= 1")
        self.n = population
        self.events: dict[EventId, Event] = {}
        self._index: dict[EventId, int] = {}
        self._ev: list[Event] = []
        self._sp: list[int] = []
        self._anc: list[int] = []
        self._seq: list[int] = []
        self._last: list[list[int]] = []
        self._forks: list[int] = []
        self._round: list[int] = []
        self._witness: list[bool] = []
        self._creator_mask = [0] * population
        self._keys: dict[tuple[int, int], list[int]] = {}
        self._dup_keys: list[tuple[int, int]] = []
        self._witnesses: dict[int, list[int]] = {}
        self.max_round = 0

        self._fame: dict[int, bool] = {}
        self._votes: dict[tuple[int, int], bool] = {}
        self._ss: dict[int, list[int]] = {}
        self._warned: set[int] = set()

        self._next_round = 1
        self._unordered = 0
        self.order: list[EventId] = []
        self._received: dict[int, int] = {}
        self._ctime: dict[int, float] = {}
        self._order_pos: dict[int, int] = {}

    # -- insertion and per-event attributes --------------------------------

    def __contains__(self, eid: object) -> bool:
        return eid in self._index

    def __len__(self) -> int:
        return len(self._ev)

    def index_of(self, eid: EventId) -> int:
        try:
            return self._index[eid]
        except KeyError:
            raise UnknownEvent(eid.hex()) from None

    def add(self, event: Event) -> int:
        if event.id in self._index:
            return self._index[event.id]
        if not 0 <= event.creator < self.n:
            raise ValueError(f"creator {event.creator} outside population")
        sp = self._index[event.self_parent] if event.self_parent is not None else -1
        op = self._index[event.other_parent] if event.other_parent is not None else -1
        if sp >= 0 and self._ev[sp].creator != event.creator:
            raise ValueError("self-parent by a different creator")
        if op >= 0 and self._ev[op].creator == event.creator:
            raise ValueError("other-parent by the same creator")

        i = len(self._ev)
        c = event.creator
        anc = 1 << i
        forks = 0
        last = [-1] * self.n
        for p in (sp, op):
            if p < 0:
                continue
            anc |= self._anc[p]
            forks |= self._forks[p]
            for k, e in enumerate(self._last[p]):
                cur = last[k]
                if e >= 0 and (cur < 0 or self._seq[e] > self._seq[cur]):
                    last[k] = e
        seq = self._seq[sp] + 1 if sp >= 0 else 0
        last[c] = i

        self._index[event.id] = i
        self.events[event.id] = event
        self._ev.append(event)
        self._sp.append(sp)
        self._anc.append(anc)
        self._seq.append(seq)
        self._last.append(last)
        self._creator_mask[c] |= 1 << i

        members = self._keys.setdefault((c, seq), [])
        members.append(i)
        if len(members) == 2:
            self._dup_keys.append((c, seq))
        for kc, ks in self._dup_keys:
            if (forks >> kc) & 1:
                continue
            hits = sum((anc >> m) & 1 for m in self._keys[(kc, ks)])
            if hits >= 2:
                forks |= 1 << kc
        self._forks.append(forks)

        if sp < 0 and op < 0:
            r = 1
        else:
            r = max(self._round[p] for p in (sp, op) if p >= 0)
            seen = {self._ev[w].creator for w in self._witnesses.get(r, ()) if self._strongly_sees(i, w)}
            if 3 * len(seen) > 2 * self.n:
                r += 1
        self._round.append(r)
        witness = sp < 0 or self._round[sp] < r
        self._witness.append(witness)
        if witness:
            self._witnesses.setdefault(r, []).append(i)
        self.max_round = max(self.max_round, r)
        self._unordered |= 1 << i
        return i

    def _sees(self, x: int, y: int) -> bool:
        return bool((self._anc[x] >> y) & 1) and not (self._forks[x] >> self._ev[y].creator) & 1

    def _strongly_sees(self, x: int, y: int) -> bool:
        if not self._sees(x, y):
            return False
        fx = self._forks[x]
        count = 0
        for c, s in enumerate(self._last[x]):
            if s >= 0 and not (fx >> c) & 1 and (self._anc[s] >> y) & 1:
                count += 1
        return 3 * count > 2 * self.n

    def sees(self, x: EventId, y: EventId) -> bool:
        return self._sees(self.index_of(x), self.index_of(y))

    def strongly_sees(self, x: EventId, y: EventId) -> bool:
        return self._strongly_sees(self.index_of(x), self.index_of(y))

    def is_ancestor(self, x: EventId, y: EventId) -> bool:
        return bool((self._anc[self.index_of(x)] >> self.index_of(y)) & 1)

    def round(self, eid: EventId) -> int:
        return self._round[self.index_of(eid)]

    def is_witness(self, eid: EventId) -> bool:
        return self._witness[self.index_of(eid)]

    def witnesses(self, r: int) -> list[EventId]:
        return [self._ev[i].id for i in self._witnesses.get(r, ())]

    def fame(self, eid: EventId) -> Fame:
        i = self.index_of(eid)
        if i not in self._fame:
            return Fame.UNDECIDED
        return Fame.FAMOUS if self._fame[i] else Fame.NOT_FAMOUS

    def received_round(self, eid: EventId) -> Optional[int]:
        return self._received.get(self.index_of(eid))

    def consensus_time(self, eid: EventId) -> Optional[float]:
        return self._ctime.get(self.index_of(eid))

    def order_index(self, eid: EventId) -> Optional[int]:
        return self._order_pos.get(self.index_of(eid))

    def latest(self, creator: int) -> Optional[EventId]:
        """Most recent event by ``creator`` in insertion order."""
        m = self._creator_mask[creator]
        return self._ev[m.bit_length() - 1].id if m else None

    def ancestors_in_order(self, eid: EventId) -> list[Event]:
        return [self._ev[i] for i in _bits(self._anc[self.index_of(eid)])]

    def missing_from(self, other: "HashgraphView", head: EventId) -> list[Event]:
        """Ancestor-closed delta: ancestors of ``head`` that ``other`` lacks."""
        return [e for e in self.ancestors_in_order(head) if e.id not in other._index]

    # -- virtual voting ------------------------------------------------------

    def _strongly_seen_witnesses(self, y: int) -> list[int]:
        s = self._ss.get(y)
        if s is None:
            s = [w for w in self._witnesses.get(self._round[y] - 1, ()) if self._strongly_sees(y, w)]
            self._ss[y] = s
        return s

    def _elect(self, x: int) -> None:
        rx = self._round[x]
        supermajority = 2 * self.n
        for R in range(rx + 1, self.max_round + 1):
            for y in self._witnesses.get(R, ()):
                key = (y, x)
                if key in self._votes:
                    continue
                if R == rx + 1:
                    self._votes[key] = self._sees(y, x)
                    continue
                S = self._strongly_seen_witnesses(y)
                yes = sum(self._votes[(s, x)] for s in S)
                no = len(S) - yes
                v = yes >= no
                if 3 * (yes if v else no) > supermajority:
                    self._fame[x] = v
                    return
                self._votes[key] = v
        if self.max_round - rx > STUCK_ELECTION_ROUNDS and x not in self._warned:
            self._warned.add(x)
            warnings.warn(
                f"fame of witness {self._ev[x].id.hex()[:12]} (round {rx}) undecided after "
                f"{self.max_round - rx} rounds",
                StuckElection,
                stacklevel=2,
            )

    def decide_fame(self) -> None:
        for r in range(self._next_round, self.max_round + 1):
            for x in self._witnesses.get(r, ()):
                if x not in self._fame:
                    self._elect(x)

    def round_decided(self, r: int) -> bool:
        ws = self._witnesses.get(r)
        return bool(ws) and all(w in self._fame for w in ws)

    @property
    def rounds_decided(self) -> int:
        return self._next_round - 1

    def find_order(self) -> list[EventId]:
        """Order every event received in newly decided rounds; returns them."""
        new: list[EventId] = []
        while self.round_decided(self._next_round):
            r = self._next_round
            self._next_round += 1
            famous = [w for w in self._witnesses[r] if self._fame[w]]
            if not famous:
                continue
            mask = self._unordered
            for w in famous:
                mask &= self._anc[w]
                for c in _bits(self._forks[w]):
                    mask &= ~self._creator_mask[c]
            batch = []
            for x in _bits(mask):
                times = []
                for w in famous:
                    z = w
                    while self._sp[z] >= 0 and (self._anc[self._sp[z]] >> x) & 1:
                        z = self._sp[z]
                    times.append(self._ev[z].claimed_time)
                batch.append((lower_median(times), self._ev[x].id, x))
            batch.sort()
            for t, eid, x in batch:
                self._received[x] = r
                self._ctime[x] = t
                self._order_pos[x] = len(self.order)
                self.order.append(eid)
                self._unordered &= ~(1 << x)
                new.append(eid)
        return new

    def run_consensus(self) -> list[EventId]:
        self.decide_fame()
        return self.find_order()

    # -- export ---------------------------------------------------------------

    def export_lines(self) -> list[str]:
        pos = self._order_pos
        lines = []
        for i, e in enumerate(self._ev):
            fame = Fame.UNDECIDED.value
            if i in self._fame:
                fame = Fame.FAMOUS.value if self._fame[i] else Fame.NOT_FAMOUS.value
            lines.append(
                ",".join(
                    [
                        e.id.hex(),
                        str(e.creator),
                        e.self_parent.hex() if e.self_parent else "-",
                        e.other_parent.hex() if e.other_parent else "-",
                        f"{e.claimed_time:.3f}",
                        str(self._round[i]),
                        "1" if self._witness[i] else "0",
                        fame if self._witness[i] else "-",
                        str(pos[i]) if i in pos else "-",
                    ]
                )
            )
        return lines


def assign_rounds(view: HashgraphView) -> HashgraphView:
    """Rounds and witness flags are computed on insertion; kept for symmetry."""
    return view


def elect_fame(view: HashgraphView) -> HashgraphView:
    view.decide_fame()
    return view


def order_events(view: HashgraphView) -> list[EventId]:
    view.run_consensus()
    return list(view.order)


# -- nodes and gossip ---------------------------------------------------------


@dataclass
class SyncMessage:
    sender: int
    head: EventId
    events: list[Event]
    bytes: int


@dataclass
class HashgraphNode:
    """A gossiping participant; ``forker`` nodes keep two self-parent chains."""

    node_id: int
    population: int
    keyring: Keyring = DEFAULT_KEYRING
    forker: bool = False
    view: HashgraphView = field(init=False)
    heads: list[EventId] = field(init=False)
    pending: list[Transaction] = field(default_factory=list)
    created: list[EventId] = field(default_factory=list)
    _branch: int = 0

    def __post_init__(self):
        self.view = HashgraphView(self.population)
        genesis = make_event(self.node_id, None, None, (), 0.0, self.keyring)
        self.view.add(genesis)
        self.created.append(genesis.id)
        self.heads = [genesis.id, genesis.id] if self.forker else [genesis.id]

    def head_for(self, peer: int) -> EventId:
        return self.heads[peer % len(self.heads)]

    def prepare_sync(self, receiver_view: HashgraphView, receiver_id: int, wire: WireEventSize) -> SyncMessage:
        head = self.head_for(receiver_id)
        delta = self.view.missing_from(receiver_view, head)
        return SyncMessage(self.node_id, head, delta, len(delta) * wire.per_event)

    def deliver(self, msg: SyncMessage, now: float) -> Event:
        for e in msg.events:
            self.view.add(e)
        k = self._branch
        if self.forker:
            self._branch = 1 - self._branch
        ev = make_event(self.node_id, self.heads[k], msg.head, self.pending, now, self.keyring)
        self.pending = []
        self.view.add(ev)
        self.heads[k] = ev.id
        self.created.append(ev.id)
        return ev


@dataclass
class SyncResult:
    event: Event
    delta: int
    bytes: int


def gossip_sync(
    sender: HashgraphNode, receiver: HashgraphNode, now: float, wire: WireEventSize = WireEventSize()
) -> SyncResult:
    """Instantaneous sync: receiver merges the delta and records a new event."""
    if sender.node_id == receiver.node_id:
        raise ValueError("sender and receiver must differ")
    msg = sender.prepare_sync(receiver.view, receiver.node_id, wire)
    ev = receiver.deliver(msg, now)
    return SyncResult(ev, len(msg.events), msg.bytes)

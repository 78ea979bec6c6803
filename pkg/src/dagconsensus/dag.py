"""Hash-identified DAG ledger: storage, tips, reachability, cumulative weight.

Every unit gets a dense insertion index. Its past cone (itself plus every
unit it approves directly or indirectly) is kept as a Python ``int`` bitset
over those indices, so reachability is a single bit test and the weight
update on insertion is one vectorised add over the new unit's past cone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Union

import numpy as np
from numba import njit

from .encoding import digest, field, i64, millis, u64

UnitId = bytes


class LedgerError(Exception):
    pass


class UnknownParent(LedgerError):
    pass


class DuplicateUnit(LedgerError):
    pass


class UnknownUnit(LedgerError, KeyError):
    pass


@dataclass(frozen=True)
class Transaction:
    sender: int
    consumed_output: int
    amount: int = 0


@dataclass(frozen=True)
class ZeroValue:
    """Marker payload of coordinator and filler units."""


ZERO_VALUE = ZeroValue()

Payload = Union[Transaction, ZeroValue]


def encode_payload(payload: Payload) -> bytes:
    if isinstance(payload, Transaction):
        return b"\x01" + u64(payload.sender) + u64(payload.consumed_output) + u64(payload.amount)
    return b"\x00"


def preimage_head(issuer: int, parents: Iterable[UnitId], payload: Payload, own_weight: int) -> bytes:
    """Serialization of the fields preceding the nonce."""
    return (
        field(u64(issuer))
        + field(b"".join(sorted(parents)))
        + field(encode_payload(payload))
        + field(u64(own_weight))
    )


def preimage_tail(nonce: int, issued_at: float) -> bytes:
    return field(u64(nonce)) + field(i64(millis(issued_at)))


@dataclass(frozen=True)
class TangleUnit:
    id: UnitId
    issuer: int
    parents: tuple[UnitId, ...]
    payload: Payload
    own_weight: int = 1
    nonce: int = 0
    signature: bytes = b""
    issued_at: float = 0.0

    @property
    def is_genesis(self) -> bool:
        return not self.parents

    @property
    def is_zero_value(self) -> bool:
        return not isinstance(self.payload, Transaction)

    def preimage(self) -> bytes:
        return preimage_head(self.issuer, self.parents, self.payload, self.own_weight) + preimage_tail(
            self.nonce, self.issued_at
        )

    def computed_id(self) -> UnitId:
        return digest(self.preimage())

    def conflicts_with(self, other: "TangleUnit") -> bool:
        return (
            isinstance(self.payload, Transaction)
            and isinstance(other.payload, Transaction)
            and self.payload.consumed_output == other.payload.consumed_output
            and self.id != other.id
        )


def make_genesis(issued_at: float = 0.0) -> TangleUnit:
    head = preimage_head(0, (), ZERO_VALUE, 1)
    uid = digest(head + preimage_tail(0, issued_at))
    return TangleUnit(id=uid, issuer=0, parents=(), payload=ZERO_VALUE, issued_at=issued_at)


@njit(cache=True)
def _add_weight(raw, weight, own, threshold):
    """Add ``own`` to every index set in the little-endian bitset ``raw``.

    Returns the indices whose weight crossed ``threshold``.
    """
    crossed = []
    for b in range(len(raw)):
        byte = raw[b]
        if byte == 0:
            continue
        for k in range(8):
            if byte & (1 << k):
                i = b * 8 + k
                before = weight[i]
                weight[i] = before + own
                if before < threshold <= before + own:
                    crossed.append(i)
    return crossed


class TangleLedger:
    """Append-only Tangle DAG with incrementally maintained cumulative weights."""

    def __init__(self, genesis: TangleUnit, confirmation_threshold: int = 1):
        if confirmation_threshold < 1:
            raise ValueError("confirmation_threshold must be positive")
        self.confirmation_threshold = confirmation_threshold
        self.genesis = genesis.id
        self.units: dict[UnitId, TangleUnit] = {}
        self.tips: set[UnitId] = set()
        self.arrived_at: dict[UnitId, float] = {}
        # arrival time of the unit whose insertion pushed each member over the threshold
        self.confirmed_at: dict[UnitId, float] = {}

        self._index: dict[UnitId, int] = {}
        self._order: list[UnitId] = []
        self._parents: list[tuple[int, ...]] = []
        self._children: list[list[int]] = []
        self._past: list[int] = []
        self._weight = np.zeros(64, dtype=np.int64)
        # dense child table for compiled walks: row i holds the first _child_cnt[i] children
        self._child_tab = np.zeros((64, 4), dtype=np.int64)
        self._child_cnt = np.zeros(64, dtype=np.int64)
        self._parent_tab = np.zeros((64, 2), dtype=np.int64)
        self._parent_cnt = np.zeros(64, dtype=np.int64)
        self._by_output: dict[int, list[int]] = {}
        self._conflicted: list[int] = []
        self._weight_list: list[int] | None = None

        self.insert(genesis, at=genesis.issued_at)

    # -- mutation --------------------------------------------------------

    def insert(self, unit: TangleUnit, at: float | None = None) -> int:
        """Store ``unit``; returns its insertion index.

        Structural checks only. Signature/PoW validation is the engine's job
        (``tangle.validate_unit``) and happens before this is called.
        """
        if unit.id in self._index:
            raise DuplicateUnit(unit.id.hex())
        try:
            pidx = tuple(dict.fromkeys(self._index[p] for p in unit.parents))
        except KeyError as exc:
            raise UnknownParent(exc.args[0].hex()) from None
        if not pidx and self._order:
            raise UnknownParent("non-genesis unit without parents")

        i = len(self._order)
        past = 1 << i
        for p in pidx:
            past |= self._past[p]
            self._children[p].append(i)
            self.tips.discard(self._order[p])

        self._index[unit.id] = i
        self._order.append(unit.id)
        self._parents.append(pidx)
        self._children.append([])
        self._past.append(past)
        self.units[unit.id] = unit
        self.tips.add(unit.id)
        self.arrived_at[unit.id] = unit.issued_at if at is None else at

        n = i + 1
        if n > len(self._weight):
            cap = 2 * len(self._weight)
            grown = np.zeros(cap, dtype=np.int64)
            grown[: len(self._weight)] = self._weight
            self._weight = grown
            tab = np.zeros((cap, self._child_tab.shape[1]), dtype=np.int64)
            tab[: len(self._child_tab)] = self._child_tab
            self._child_tab = tab
            cnt = np.zeros(cap, dtype=np.int64)
            cnt[: len(self._child_cnt)] = self._child_cnt
            self._child_cnt = cnt
            ptab = np.zeros((cap, self._parent_tab.shape[1]), dtype=np.int64)
            ptab[: len(self._parent_tab)] = self._parent_tab
            self._parent_tab = ptab
            pcnt = np.zeros(cap, dtype=np.int64)
            pcnt[: len(self._parent_cnt)] = self._parent_cnt
            self._parent_cnt = pcnt
        if len(pidx) > self._parent_tab.shape[1]:
            wider = np.zeros((len(self._parent_tab), len(pidx)), dtype=np.int64)
            wider[:, : self._parent_tab.shape[1]] = self._parent_tab
            self._parent_tab = wider
        self._parent_tab[i, : len(pidx)] = pidx
        self._parent_cnt[i] = len(pidx)
        for p in pidx:
            c = self._child_cnt[p]
            if c == self._child_tab.shape[1]:
                wider = np.zeros((len(self._child_tab), 2 * c), dtype=np.int64)
                wider[:, :c] = self._child_tab
                self._child_tab = wider
            self._child_tab[p, c] = i
            self._child_cnt[p] = c + 1
        self._weight_list = None
        raw = np.frombuffer(past.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
        crossed = _add_weight(raw, self._weight, unit.own_weight, self.confirmation_threshold)
        when = self.arrived_at[unit.id]
        for c in crossed:
            self.confirmed_at[self._order[c]] = when

        if isinstance(unit.payload, Transaction):
            group = self._by_output.setdefault(unit.payload.consumed_output, [])
            group.append(i)
            if len(group) == 2:
                self._conflicted.append(unit.payload.consumed_output)
        return i

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, uid: object) -> bool:
        return uid in self._index

    def __iter__(self) -> Iterator[UnitId]:
        return iter(self._order)

    def index_of(self, uid: UnitId) -> int:
        try:
            return self._index[uid]
        except KeyError:
            raise UnknownUnit(uid.hex()) from None

    def id_at(self, i: int) -> UnitId:
        return self._order[i]

    def unit(self, uid: UnitId) -> TangleUnit:
        try:
            return self.units[uid]
        except KeyError:
            raise UnknownUnit(uid.hex()) from None

    def parent_indices(self, i: int) -> tuple[int, ...]:
        return self._parents[i]

    def child_indices(self, i: int) -> list[int]:
        return self._children[i]

    def past_mask(self, i: int) -> int:
        return self._past[i]

    def weight_at(self, i: int) -> int:
        return int(self._weight[i])

    def weight_list(self) -> list[int]:
        """Cumulative weights by index as a plain list (cached until the next insert)."""
        if self._weight_list is None:
            self._weight_list = self._weight[: len(self._order)].tolist()
        return self._weight_list

    def child_lists(self) -> list[list[int]]:
        return self._children

    def parent_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self._parent_tab, self._parent_cnt

    def child_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(children, child counts, weights) as arrays for compiled walks."""
        return self._child_tab, self._child_cnt, self._weight

    def children(self, uid: UnitId) -> set[UnitId]:
        return {self._order[c] for c in self._children[self.index_of(uid)]}

    def cumulative_weight(self, target: UnitId) -> int:
        return int(self._weight[self.index_of(target)])

    def approves(self, source: UnitId, target: UnitId) -> bool:
        """True iff ``source`` reaches ``target`` through parent links (reflexive)."""
        a = self.index_of(source)
        b = self.index_of(target)
        return bool((self._past[a] >> b) & 1)

    def is_confirmed(self, target: UnitId) -> bool:
        return self.cumulative_weight(target) >= self.confirmation_threshold

    def conflict_groups(self) -> list[list[int]]:
        """Index groups of units spending the same output (size >= 2)."""
        return [self._by_output[o] for o in self._conflicted]

    def spenders(self, consumed_output: int) -> list[UnitId]:
        return [self._order[i] for i in self._by_output.get(consumed_output, ())]

    # -- export ------------------------------------------------------------

    def snapshot_lines(self) -> list[str]:
        lines = []
        for uid in self._order:
            u = self.units[uid]
            if isinstance(u.payload, Transaction):
                kind, out = "tx", str(u.payload.consumed_output)
            else:
                kind, out = "zero", "-"
            parents = ";".join(p.hex() for p in u.parents)
            lines.append(f"{uid.hex()},{u.issuer},{parents},{kind},{out},{u.own_weight},{u.issued_at:.3f}")
        return lines


# Convenience wrappers mirroring the operation names used in the docs.


def insert_unit(ledger: TangleLedger, unit: TangleUnit) -> TangleLedger:
    ledger.insert(unit)
    return ledger


def cumulative_weight(ledger: TangleLedger, target: UnitId) -> int:
    return ledger.cumulative_weight(target)


def reachability(ledger: TangleLedger, source: UnitId, target: UnitId) -> bool:
    return ledger.approves(source, target)


def is_confirmed(ledger: TangleLedger, target: UnitId) -> bool:
    return ledger.is_confirmed(target)

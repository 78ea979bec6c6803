"""Tangle protocol on top of :mod:`dagconsensus.dag`.

Issuance follows the usual four steps: build and sign a unit, pick parents
by tip selection, grind a nonce for the low-difficulty puzzle, broadcast.
Receivers run :func:`validate_unit` before inserting.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from .dag import (
    ZERO_VALUE,
    Payload,
    TangleLedger,
    TangleUnit,
    Transaction,
    UnitId,
    preimage_head,
    preimage_tail,
)
from .encoding import DEFAULT_KEYRING, Keyring, digest, field, leading_zero_bits, u64

import numpy as np
from numba import njit

UNIFORM = "uniform"
MCMC = "mcmc"

# Attempts per walker after the first one lands on a conflict-tainted tip.
MAX_WALK_RETRIES = 10

ConflictFilter = Callable[[int], bool]


class NoValidTips(Exception):
    pass


class EmptyConflictSet(ValueError):
    pass


@dataclass(frozen=True)
class TipSelectionAlgo:
    variant: str = MCMC
    mcmc_alpha: float = 0.1
    walk_start_depth: int = 20
    walker_count: int = 2

    def __post_init__(self):
        if self.variant not in (UNIFORM, MCMC):
            raise ValueError(f"unknown tip selection variant {self.variant!r}")
        if self.mcmc_alpha < 0:
            raise ValueError("mcmc_alpha must be >= 0")
        if self.walker_count < 1 or self.walk_start_depth < 1:
            raise ValueError("walker_count and walk_start_depth must be >= 1")


@dataclass(frozen=True)
class PoWPuzzle:
    difficulty_bits: int = 8

    def __post_init__(self):
        if not 0 < self.difficulty_bits <= 32:
            raise ValueError("difficulty_bits must be in 1..32")

    def satisfied(self, unit_digest: bytes) -> bool:
        return leading_zero_bits(unit_digest[:4]) >= self.difficulty_bits


@dataclass
class Coordinator:
    interval: float
    enabled: bool = True
    last_tick: Optional[float] = None

    def __post_init__(self):
        if self.enabled and not self.interval > 0:
            raise ValueError("coordinator interval must be > 0")

    def due(self, now: float) -> bool:
        if not self.enabled:
            return False
        return self.last_tick is None or now >= self.last_tick + self.interval - 1e-9


@dataclass(frozen=True)
class NodeIdentity:
    node: int
    keyring: Keyring = DEFAULT_KEYRING

    def sign(self, preimage: bytes) -> bytes:
        return self.keyring.sign(self.node, preimage)


class Verdict(Enum):
    ACCEPT = "accept"
    BAD_SIGNATURE = "bad_signature"
    BAD_NONCE = "bad_nonce"
    UNKNOWN_PARENT = "unknown_parent"
    CONFLICTING_PARENTS = "conflicting_parents"

    @property
    def ok(self) -> bool:
        return self is Verdict.ACCEPT


# -- tip selection ----------------------------------------------------------


def generation(ledger: TangleLedger, depth: int) -> list[int]:
    """Units exactly ``depth`` BFS generations behind the tip frontier.

    Generation 0 is the tip set; generation k+1 holds the not yet visited
    parents of generation k. Falls back to genesis once the frontier runs out.
    """
    tips = np.array(sorted(ledger.index_of(t) for t in ledger.tips), dtype=np.int64)
    tab, cnt = ledger.parent_table()
    return _generation_compiled(tips, depth, tab, cnt, len(ledger)).tolist()


@njit(cache=True)
def _generation_compiled(tips, depth, tab, cnt, n):
    seen = np.zeros(n, dtype=np.bool_)
    current = tips.copy()
    for u in current:
        seen[u] = True
    for _ in range(depth):
        nxt = np.empty(n, dtype=np.int64)
        m = 0
        for u in current:
            for j in range(cnt[u]):
                p = tab[u, j]
                if not seen[p]:
                    seen[p] = True
                    nxt[m] = p
                    m += 1
        if m == 0:
            return np.zeros(1, dtype=np.int64)
        current = np.sort(nxt[:m])
    return current


def walk(ledger: TangleLedger, start: int, alpha: float, rng: random.Random) -> int:
    """Child-ward random walk from ``start`` until it reaches a tip.

    A step to child c has probability proportional to exp(alpha * W(c)),
    W being cumulative weight.
    """
    children = ledger.child_lists()
    weight = ledger.weight_list() if alpha else None
    exp = math.exp
    i = start
    while True:
        ch = children[i]
        k = len(ch)
        if k == 0:
            return i
        if k == 1:
            i = ch[0]
        elif alpha == 0:
            i = ch[rng.randrange(k)]
        elif k == 2:
            a, b = ch
            d = alpha * (weight[b] - weight[a])
            if d >= 0:
                e = exp(-d)
                pa = e / (1.0 + e)
            else:
                pa = 1.0 / (1.0 + exp(d))
            i = a if rng.random() < pa else b
        else:
            w = [weight[c] for c in ch]
            top = max(w)
            ps = [exp(alpha * (x - top)) for x in w]
            r = rng.random() * sum(ps)
            acc = 0.0
            i = ch[-1]
            for c, p in zip(ch, ps):
                acc += p
                if r < acc:
                    i = c
                    break


@njit(cache=True)
def _walk_compiled(start, alpha, tab, cnt, weight, seed):
    np.random.seed(seed)
    i = start
    while True:
        k = cnt[i]
        if k == 0:
            return i
        if k == 1:
            i = tab[i, 0]
            continue
        if alpha == 0.0:
            i = tab[i, min(int(np.random.random() * k), k - 1)]
            continue
        top = weight[tab[i, 0]]
        for j in range(1, k):
            top = max(top, weight[tab[i, j]])
        total = 0.0
        for j in range(k):
            total += np.exp(alpha * (weight[tab[i, j]] - top))
        r = np.random.random() * total
        acc = 0.0
        nxt = tab[i, k - 1]
        for j in range(k):
            acc += np.exp(alpha * (weight[tab[i, j]] - top))
            if r < acc:
                nxt = tab[i, j]
                break
        i = nxt


def fast_walk(ledger: TangleLedger, start: int, alpha: float, rng: random.Random) -> int:
    """Same walk as :func:`walk`, compiled; randomness is seeded from ``rng``."""
    tab, cnt, weight = ledger.child_table()
    return int(_walk_compiled(start, float(alpha), tab, cnt, weight, rng.getrandbits(32)))


def select_tips(
    ledger: TangleLedger,
    algo: TipSelectionAlgo,
    rng: random.Random,
    conflict_filter: Optional[ConflictFilter] = None,
) -> list[UnitId]:
    """Pick up to ``walker_count`` distinct tips to approve.

    ``conflict_filter(index)`` returns True for tips that must not be
    approved. Duplicate picks collapse, so the result may be shorter than
    ``walker_count`` (always so while only one tip exists).
    """
    tips = sorted(ledger.index_of(t) for t in ledger.tips)
    starts = generation(ledger, algo.walk_start_depth) if algo.variant == MCMC else None

    def draw() -> int:
        if starts is None:
            return tips[rng.randrange(len(tips))]
        start = starts[rng.randrange(len(starts))] if len(starts) > 1 else starts[0]
        return fast_walk(ledger, start, algo.mcmc_alpha, rng)

    picked: list[int] = []
    for _ in range(algo.walker_count):
        chosen = None
        for _attempt in range(1 + MAX_WALK_RETRIES):
            t = draw()
            if conflict_filter is None or not conflict_filter(t):
                chosen = t
                break
        if chosen is None:
            clean = [t for t in tips if not conflict_filter(t)]
            if not clean:
                raise NoValidTips("every tip is conflict-tainted")
            chosen = clean[rng.randrange(len(clean))]
        picked.append(chosen)
    return [ledger.id_at(i) for i in dict.fromkeys(picked)]


def select_old_units(ledger: TangleLedger, depth: int, count: int, rng: random.Random) -> list[UnitId]:
    """Parents for a lazy issuer: units ``depth`` generations behind the tips."""
    pool = generation(ledger, depth)
    picked = [pool[rng.randrange(len(pool))] for _ in range(count)]
    return [ledger.id_at(i) for i in dict.fromkeys(picked)]


def loser_filter(ledger: TangleLedger) -> Optional[ConflictFilter]:
    """Filter rejecting tips whose past cone holds a losing double-spend.

    None when the ledger has no conflicts (the common case).
    """
    groups = ledger.conflict_groups()
    if not groups:
        return None
    losers = 0
    for group in groups:
        ids = [ledger.id_at(i) for i in group]
        win = resolve_conflicts(ledger, ids)
        for i, uid in zip(group, ids):
            if uid != win:
                losers |= 1 << i
    return lambda t: bool(ledger.past_mask(t) & losers)


def ancestry_filter(ledger: TangleLedger, avoid: Sequence[UnitId]) -> ConflictFilter:
    """Filter rejecting tips that approve (directly or not) any of ``avoid``."""
    mask = 0
    for uid in avoid:
        if uid in ledger:
            mask |= 1 << ledger.index_of(uid)
    return lambda t: bool(ledger.past_mask(t) & mask)


# -- issuance and validation ------------------------------------------------


def solve_nonce(head: bytes, issued_at: float, puzzle: PoWPuzzle) -> tuple[int, bytes]:
    """Smallest nonce whose unit digest has the required leading zero bits."""
    base = hashlib.sha256(head)
    when = preimage_tail(0, issued_at)[12:]
    nonce = 0
    while True:
        h = base.copy()
        h.update(field(u64(nonce)) + when)
        d = h.digest()
        if puzzle.satisfied(d):
            return nonce, d
        nonce += 1


def build_unit(
    identity: NodeIdentity,
    parents: Sequence[UnitId],
    payload: Payload,
    puzzle: PoWPuzzle,
    now: float,
    own_weight: int = 1,
) -> TangleUnit:
    parents = tuple(dict.fromkeys(parents))
    head = preimage_head(identity.node, parents, payload, own_weight)
    nonce, uid = solve_nonce(head, now, puzzle)
    signature = identity.sign(head + preimage_tail(nonce, now))
    return TangleUnit(
        id=uid,
        issuer=identity.node,
        parents=parents,
        payload=payload,
        own_weight=own_weight,
        nonce=nonce,
        signature=signature,
        issued_at=now,
    )


def issue_unit(
    identity: NodeIdentity,
    ledger: TangleLedger,
    payload: Payload,
    algo: TipSelectionAlgo,
    puzzle: PoWPuzzle,
    rng: random.Random,
    now: float,
    conflict_filter: Optional[ConflictFilter] = None,
) -> TangleUnit:
    parents = select_tips(ledger, algo, rng, conflict_filter)
    return build_unit(identity, parents, payload, puzzle, now)


def validate_unit(
    ledger: TangleLedger, unit: TangleUnit, puzzle: PoWPuzzle, keyring: Keyring = DEFAULT_KEYRING
) -> Verdict:
    pre = unit.preimage()
    if not keyring.verify(unit.issuer, pre, unit.signature):
        return Verdict.BAD_SIGNATURE
    d = digest(pre)
    if d != unit.id or not puzzle.satisfied(d):
        return Verdict.BAD_NONCE
    if not unit.parents or any(p not in ledger for p in unit.parents):
        return Verdict.UNKNOWN_PARENT
    groups = ledger.conflict_groups()
    spent = unit.payload.consumed_output if isinstance(unit.payload, Transaction) else None
    if groups or spent is not None:
        past = 0
        for p in unit.parents:
            past |= ledger.past_mask(ledger.index_of(p))
        for group in groups:
            if sum((past >> i) & 1 for i in group) > 1:
                return Verdict.CONFLICTING_PARENTS
        if spent is not None:
            for uid in ledger.spenders(spent):
                if (past >> ledger.index_of(uid)) & 1:
                    return Verdict.CONFLICTING_PARENTS
    return Verdict.ACCEPT


def resolve_conflicts(ledger: TangleLedger, conflict_set) -> UnitId:
    """Heaviest member wins; equal weights go to the smaller id."""
    members = list(conflict_set)
    if not members:
        raise EmptyConflictSet("no units to resolve")
    return min(members, key=lambda uid: (-ledger.cumulative_weight(uid), uid))


# -- coordinator ------------------------------------------------------------


def coordinator_tick(
    ledger: TangleLedger,
    coordinator: Coordinator,
    now: float,
    identity: NodeIdentity,
    puzzle: PoWPuzzle,
) -> Optional[TangleUnit]:
    """Issue one zero-value unit covering the oldest unconfirmed tips, if due.

    The returned unit is not inserted; the caller owns ledger mutation.
    """
    if not coordinator.due(now):
        return None
    tips = [ledger.units[t] for t in ledger.tips]
    unconfirmed = sorted(
        (u for u in tips if not ledger.is_confirmed(u.id)), key=lambda u: (u.issued_at, u.id)
    )
    picked = [u.id for u in unconfirmed[:2]]
    if len(picked) < 2:
        newest = sorted(tips, key=lambda u: (-u.issued_at, u.id))
        for u in newest:
            if len(picked) == 2:
                break
            if u.id not in picked:
                picked.append(u.id)
    coordinator.last_tick = now
    return build_unit(identity, picked, ZERO_VALUE, puzzle, now)

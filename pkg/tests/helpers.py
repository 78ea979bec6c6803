"""Shared builders and brute-force oracles for the test-suite."""

import itertools
import math
import random

from dagconsensus.dag import ZERO_VALUE, TangleLedger, TangleUnit, Transaction, make_genesis
from dagconsensus.encoding import digest

_counter = itertools.count()


def raw_unit(parents, issuer=1, payload=ZERO_VALUE, own_weight=1, t=0.0):
    """Unit with a unique id and no PoW; fine for structural ledger tests."""
    uid = digest(b"test-unit" + next(_counter).to_bytes(8, "big"))
    return TangleUnit(id=uid, issuer=issuer, parents=tuple(parents), payload=payload,
                      own_weight=own_weight, issued_at=t)


def random_dag(n, seed, threshold=1, max_parents=2, weights=False):
    rng = random.Random(seed)
    g = make_genesis()
    ledger = TangleLedger(g, threshold)
    ids = [g.id]
    for k in range(n - 1):
        tips = sorted(ledger.tips)
        if rng.random() < 0.6:
            pool = tips
        else:
            pool = ids
        parents = [rng.choice(pool) for _ in range(rng.randint(1, max_parents))]
        u = raw_unit(parents, own_weight=rng.randint(1, 3) if weights else 1, t=float(k))
        ledger.insert(u)
        ids.append(u.id)
    return ledger, ids


def parent_map(ledger):
    return {uid: tuple(dict.fromkeys(ledger.units[uid].parents)) for uid in ledger}


def approvers_bruteforce(parents, target):
    """Every unit whose parent-closure contains target (excluding target)."""
    out = set()
    for uid in parents:
        if uid == target:
            continue
        stack, seen = [uid], set()
        while stack:
            x = stack.pop()
            if x == target:
                out.add(uid)
                break
            for p in parents[x]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
    return out


def weight_bruteforce(ledger, target):
    parents = parent_map(ledger)
    own = ledger.units[target].own_weight
    return own + sum(ledger.units[u].own_weight for u in approvers_bruteforce(parents, target))


def transitive_closure(ledger):
    """Floyd-Warshall closure over the parent relation (reflexive)."""
    ids = list(ledger)
    pos = {u: i for i, u in enumerate(ids)}
    n = len(ids)
    reach = [[i == j for j in range(n)] for i in range(n)]
    for u in ids:
        for p in ledger.units[u].parents:
            reach[pos[u]][pos[p]] = True
    for k in range(n):
        rk = reach[k]
        for i in range(n):
            if reach[i][k]:
                ri = reach[i]
                for j in range(n):
                    if rk[j]:
                        ri[j] = True
    return ids, reach


def walk_distribution(children, weight, start, alpha):
    """Exact tip distribution of the weighted walk by path enumeration."""
    dist = {}

    def go(node, prob):
        ch = children.get(node, [])
        if not ch:
            dist[node] = dist.get(node, 0.0) + prob
            return
        ws = [math.exp(alpha * weight[c]) for c in ch]
        z = sum(ws)
        for c, w in zip(ch, ws):
            go(c, prob * w / z)

    go(start, 1.0)
    return dist


def tx(output, sender=1, amount=1):
    return Transaction(sender=sender, consumed_output=output, amount=amount)


def direct_transition(mean, q, k, m_max=50):
    """P[w][w+k] as the explicit sum over m arrivals of Poisson x Binomial."""
    total = 0.0
    for m in range(k, m_max + 1):
        pois = math.exp(-mean) * mean**m / math.factorial(m)
        total += pois * math.comb(m, k) * q**k * (1 - q) ** (m - k)
    return total


def mc_absorption_steps(mean, qtab, finality, n, rng, max_steps=100_000):
    """Monte Carlo steps-to-finality of the arrivals-then-thinning process."""
    import numpy as np

    qtab = np.asarray(qtab, dtype=float)
    state = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for _ in range(max_steps):
        if active.size == 0:
            break
        arrivals = rng.poisson(mean, size=active.size)
        gained = rng.binomial(arrivals, qtab[np.minimum(state[active], len(qtab) - 1)])
        state[active] += gained
        steps[active] += 1
        active = active[state[active] < finality]
    return steps


# -- hashgraph oracles ---------------------------------------------------------


def gossip_run(n, syncs, seed, forkers=(), payload_every=0):
    """Random instantaneous gossip; returns nodes and every event in creation order."""
    from dagconsensus.hashgraph import HashgraphNode, gossip_sync

    rng = random.Random(seed)
    nodes = [HashgraphNode(i, n, forker=i in forkers) for i in range(n)]
    log = [nd.view.events[nd.created[0]] for nd in nodes]
    for k in range(syncs):
        s = rng.randrange(n)
        r = rng.randrange(n - 1)
        r += r >= s
        if payload_every and k % payload_every == 0:
            nodes[r].pending.append(Transaction(sender=r, consumed_output=1000 + k))
        log.append(gossip_sync(nodes[s], nodes[r], now=float(k + 1)).event)
    return nodes, log


def scheduled_run(n, schedule, times=None):
    """Deterministic gossip along an explicit (sender, receiver) list."""
    from dagconsensus.hashgraph import HashgraphNode, gossip_sync

    nodes = [HashgraphNode(i, n) for i in range(n)]
    log = [nd.view.events[nd.created[0]] for nd in nodes]
    for k, (s, r) in enumerate(schedule):
        t = float(k + 1) if times is None else times[k]
        log.append(gossip_sync(nodes[s], nodes[r], now=t).event)
    return nodes, log


def global_view(n, log):
    from dagconsensus.hashgraph import HashgraphView

    v = HashgraphView(n)
    for e in log:
        v.add(e)
    return v


class BruteHashgraph:
    """Definitions evaluated directly on id sets, no incremental state."""

    def __init__(self, n, events):
        self.n = n
        self.ev = {e.id: e for e in events}
        self.order = [e.id for e in events]
        self.anc = {}
        for e in events:
            a = {e.id}
            for p in (e.self_parent, e.other_parent):
                if p is not None:
                    a |= self.anc[p]
            self.anc[e.id] = a
        self.round = {}
        self.witness = {}
        for eid in self.order:
            e = self.ev[eid]
            if e.self_parent is None and e.other_parent is None:
                r = 1
            else:
                r = max(self.round[p] for p in (e.self_parent, e.other_parent) if p is not None)
                ws = [w for w in self.order if self.witness.get(w) and self.round[w] == r]
                creators = {self.ev[w].creator for w in ws if self.strongly_sees(eid, w)}
                if 3 * len(creators) > 2 * n:
                    r += 1
            self.round[eid] = r
            sp = e.self_parent
            self.witness[eid] = sp is None or self.round[sp] < r

    def forked(self, x, creator):
        memo = self.__dict__.setdefault("_forked", {})
        if (x, creator) not in memo:
            memo[(x, creator)] = self._forked_scan(x, creator)
        return memo[(x, creator)]

    def _forked_scan(self, x, creator):
        mine = [a for a in self.anc[x] if self.ev[a].creator == creator]
        for a, b in itertools.combinations(mine, 2):
            if a not in self.self_ancestors(b) and b not in self.self_ancestors(a):
                return True
        return False

    def self_ancestors(self, x):
        out = set()
        while x is not None:
            out.add(x)
            x = self.ev[x].self_parent
        return out

    def sees(self, x, y):
        return y in self.anc[x] and not self.forked(x, self.ev[y].creator)

    def between(self, x, y):
        """Events lying on some parent path from x down to y."""
        return {s for s in self.anc[x] if y in self.anc[s]}

    def strongly_sees(self, x, y):
        if not self.sees(x, y):
            return False
        creators = {self.ev[s].creator for s in self.between(x, y) if self.sees(x, s)}
        return 3 * len(creators) > 2 * self.n

    def paths(self, x, y):
        """Every parent path from x to y, enumerated explicitly."""
        if x == y:
            return [[x]]
        if y not in self.anc[x]:
            return []
        out = []
        e = self.ev[x]
        for p in (e.self_parent, e.other_parent):
            if p is not None:
                out.extend([x] + rest for rest in self.paths(p, y))
        return out

    def witnesses(self, r):
        return [w for w in self.order if self.witness[w] and self.round[w] == r]

    def vote(self, y, x):
        """Vote of witness y on witness x (majority carried forward)."""
        memo = self.__dict__.setdefault("_votes", {})
        if (y, x) not in memo:
            memo[(y, x)] = self._vote(y, x)
        return memo[(y, x)]

    def _vote(self, y, x):
        ry, rx = self.round[y], self.round[x]
        if ry == rx + 1:
            return self.sees(y, x)
        prev = [s for s in self.witnesses(ry - 1) if self.strongly_sees(y, s)]
        votes = [self.vote(s, x) for s in prev]
        yes = sum(votes)
        no = len(votes) - yes
        return yes >= no

    def fame(self, x):
        rx = self.round[x]
        for R in range(rx + 2, max(self.round.values()) + 1):
            for y in self.witnesses(R):
                prev = [s for s in self.witnesses(R - 1) if self.strongly_sees(y, s)]
                votes = [self.vote(s, x) for s in prev]
                yes = sum(votes)
                no = len(votes) - yes
                if 3 * yes > 2 * self.n:
                    return True
                if 3 * no > 2 * self.n:
                    return False
        return None

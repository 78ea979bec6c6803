"""Discrete-event simulation driver for both engines.

One scenario is a single sequential pass over a time-ordered event queue.
Every random draw comes from streams seeded by ``config.seed``, so a
(config, seed) pair fully determines the report.
"""

from __future__ import annotations

import heapq
import itertools
import math
import os
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .config import HASHGRAPH, TANGLE, ConfigError, ScenarioConfig
from .dag import ZERO_VALUE, TangleLedger, TangleUnit, Transaction, UnitId, make_genesis
from .hashgraph import HashgraphNode, WireEventSize
from .tangle import (
    UNIFORM,
    Coordinator,
    NodeIdentity,
    NoValidTips,
    PoWPuzzle,
    TipSelectionAlgo,
    Verdict,
    build_unit,
    coordinator_tick,
    loser_filter,
    resolve_conflicts,
    select_old_units,
    select_tips,
    validate_unit,
)

ARRIVAL = "arrival"
DELIVERY = "delivery"
COORDINATOR_TICK = "coordinator"
GOSSIP_TICK = "gossip"
SAMPLE = "sample"
TIP_SAMPLE = "tips"
ATTACK = "attack"


class IoFailure(Exception):
    pass


class EventQueue:
    """Min-heap of (time, seq, kind, data); equal times pop in push order."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, time: float, kind: str, data: Any = None) -> None:
        heapq.heappush(self._heap, (time, next(self._seq), kind, data))

    def pop(self) -> tuple[float, str, Any]:
        time, _, kind, data = heapq.heappop(self._heap)
        return time, kind, data

    def peek_time(self) -> float:
        return self._heap[0][0]

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class MetricsReport:
    protocol: str
    nodes: int
    arrival_rate: float
    duration: float
    w_star: int
    coordinator: bool
    attacker_power: float
    seed: int
    confirmed_tps: float = 0.0
    offered_tps: float = 0.0
    mean_confirmation_delay: float = math.nan
    p95_confirmation_delay: float = math.nan
    tip_count_series: list[tuple[float, int]] = field(default_factory=list)
    # (tx id hex, [(age since issuance, cumulative weight), ...])
    weight_trajectories: list[tuple[str, list[tuple[float, int]]]] = field(default_factory=list)
    attack_won: bool = False
    bytes_gossiped: int = 0
    rounds_decided: int = 0
    issued: int = 0
    confirmed: int = 0
    pending: int = 0
    orphaned: int = 0
    max_rounds_to_decide: int = 0
    # hashgraph: per honest node, the decided order as (event id hex, consensus time)
    honest_orders: list[list[tuple[str, float]]] = field(default_factory=list)


def _streams(seed: int) -> dict[str, random.Random]:
    return {name: random.Random(f"{seed}/{name}") for name in ("arrivals", "latency", "tips", "gossip")}


def _delays(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(np.percentile(a, 95))


# -- tangle -------------------------------------------------------------------


@dataclass
class _Node:
    node_id: int
    ledger: TangleLedger
    identity: NodeIdentity
    role: str
    waiting: dict[UnitId, list[tuple[TangleUnit, float, float]]] = field(default_factory=dict)


class _TangleRun:
    def __init__(self, cfg: ScenarioConfig, trace: Optional[list] = None):
        self.cfg = cfg
        self.trace = trace
        self.rng = _streams(cfg.seed)
        self.queue = EventQueue()
        self.puzzle = PoWPuzzle(cfg.puzzle_bits)
        self.algo = TipSelectionAlgo(cfg.tip_algo, cfg.mcmc_alpha, cfg.walk_start_depth, cfg.walker_count)
        self.genesis = make_genesis()
        self.report = MetricsReport(
            TANGLE,
            cfg.node_count,
            cfg.arrival_rate,
            cfg.duration,
            cfg.confirmation_threshold,
            cfg.coordinator_enabled,
            cfg.attacker_power_fraction if cfg.attacker_enabled else 0.0,
            cfg.seed,
        )

        n = cfg.node_count
        n_lazy = round(cfg.lazy_fraction * n) if cfg.lazy_enabled else 0
        self.nodes: list[_Node] = []
        for i in range(n):
            self._add_node(i, "lazy" if i >= n - n_lazy else "honest")
        self.honest = list(range(n))
        self.attacker = self._add_node(len(self.nodes), "attacker") if cfg.attacker_enabled else None
        self.coordinator = None
        if cfg.coordinator_enabled:
            self.coordinator = self._add_node(len(self.nodes), "coordinator")
            self.coord_state = Coordinator(cfg.coordinator_interval)

        self.outputs = itertools.count(10_000_000)
        # (unit id, issuer, issued_at) for every value transaction
        self.issued: list[tuple[UnitId, int, float]] = []
        self.targets: list[float] = []
        self.next_target = 0
        self.tracked: list[tuple[str, list[tuple[float, int]]]] = []
        self.honest_spend: Optional[UnitId] = None
        self.double_spend: Optional[UnitId] = None
        self.attack_started = False

    def _add_node(self, i: int, role: str) -> _Node:
        node = _Node(i, TangleLedger(self.genesis, self.cfg.confirmation_threshold), NodeIdentity(i), role)
        self.nodes.append(node)
        return node

    # scheduling

    def plan(self) -> None:
        cfg = self.cfg
        if cfg.arrival_rate > 0:
            self.queue.push(self.rng["arrivals"].expovariate(cfg.arrival_rate), ARRIVAL)
        if self.coordinator is not None:
            self.queue.push(cfg.coordinator_interval, COORDINATOR_TICK)
        if self.attacker is not None:
            self.queue.push(cfg.warmup, ATTACK)
        k = 0
        while k * cfg.sample_interval <= cfg.duration + 1e-9:
            self.queue.push(k * cfg.sample_interval, TIP_SAMPLE)
            k += 1
        if cfg.trajectory_count > 0:
            span = max(0.0, cfg.duration - cfg.trajectory_horizon - cfg.warmup)
            self.targets = [cfg.warmup + span * j / cfg.trajectory_count for j in range(cfg.trajectory_count)]

    def run(self) -> MetricsReport:
        self.plan()
        end = self.cfg.duration
        q = self.queue
        while q and q.peek_time() <= end:
            now, kind, data = q.pop()
            if kind == DELIVERY:
                self.deliver(data[0], data[1], now, data[2], data[3])
            elif kind == ARRIVAL:
                self.arrival(now)
            elif kind == SAMPLE:
                node, idx, issued_at, points = data
                points.append((round(now - issued_at, 9), self.nodes[node].ledger.weight_at(idx)))
            elif kind == TIP_SAMPLE:
                self.report.tip_count_series.append((now, len(self.nodes[0].ledger.tips)))
            elif kind == COORDINATOR_TICK:
                self.coordinator_tick(now)
            elif kind == ATTACK:
                self.start_attack(now)
        return self.finish()

    # behaviours

    def arrival(self, now: float) -> None:
        cfg = self.cfg
        r = self.rng["arrivals"]
        self.queue.push(now + r.expovariate(cfg.arrival_rate), ARRIVAL)
        if self.attacker is not None and r.random() < cfg.attacker_power_fraction:
            if self.attack_started:
                self.private_extension(now)
            else:
                self.issue_honest(self.attacker, now)
            return
        self.issue_honest(self.nodes[self.honest[r.randrange(len(self.honest))]], now)

    def _parents(self, node: _Node) -> list[UnitId]:
        rng = self.rng["tips"]
        if node.role == "lazy":
            return select_old_units(node.ledger, self.cfg.lazy_depth, self.algo.walker_count, rng)
        return select_tips(node.ledger, self.algo, rng, loser_filter(node.ledger))

    def issue_honest(self, node: _Node, now: float, output: Optional[int] = None) -> TangleUnit:
        payload = Transaction(node.node_id, next(self.outputs) if output is None else output, 1)
        unit = build_unit(node.identity, self._parents(node), payload, self.puzzle, now)
        self.publish(node, unit, now)
        self.issued.append((unit.id, node.node_id, now))
        if node.role != "attacker":
            self.maybe_track(node, unit, now)
        return unit

    def publish(self, node: _Node, unit: TangleUnit, now: float) -> None:
        node.ledger.insert(unit, at=now)
        self.after_insert(node, unit.id, now)
        lat = self.rng["latency"]
        latency = self.cfg.latency_model
        for other in self.nodes:
            if other is not node:
                d = latency.sample(lat)
                self.queue.push(now + d, DELIVERY, (other.node_id, unit, now, d))

    def deliver(self, receiver: int, unit: TangleUnit, now: float, sent_at: float, latency: float) -> None:
        node = self.nodes[receiver]
        if unit.id in node.ledger:
            return
        verdict = validate_unit(node.ledger, unit, self.puzzle)
        if self.trace is not None:
            self.trace.append((unit.id, receiver, unit.issued_at, sent_at, latency, now, verdict))
        if verdict is Verdict.UNKNOWN_PARENT and unit.parents:
            missing = next(p for p in unit.parents if p not in node.ledger)
            node.waiting.setdefault(missing, []).append((unit, sent_at, latency))
            return
        if not verdict.ok:
            return
        node.ledger.insert(unit, at=now)
        self.after_insert(node, unit.id, now)
        for held, s, d in node.waiting.pop(unit.id, ()):
            self.deliver(receiver, held, now, s, d)

    def maybe_track(self, node: _Node, unit: TangleUnit, now: float) -> None:
        if self.next_target >= len(self.targets) or now < self.targets[self.next_target]:
            return
        while self.next_target < len(self.targets) and self.targets[self.next_target] <= now:
            self.next_target += 1
        cfg = self.cfg
        points: list[tuple[float, int]] = []
        self.tracked.append((unit.id.hex(), points))
        idx = node.ledger.index_of(unit.id)
        k = 0
        while k * cfg.sample_interval <= cfg.trajectory_horizon + 1e-9:
            t = now + k * cfg.sample_interval
            if t > cfg.duration:
                break
            self.queue.push(t, SAMPLE, (node.node_id, idx, now, points))
            k += 1

    def coordinator_tick(self, now: float) -> None:
        self.queue.push(now + self.cfg.coordinator_interval, COORDINATOR_TICK)
        node = self.coordinator
        unit = coordinator_tick(node.ledger, self.coord_state, now, node.identity, self.puzzle)
        if unit is not None:
            self.publish(node, unit, now)

    # double spend

    def start_attack(self, now: float) -> None:
        cfg = self.cfg
        honest = self.issue_honest(self.nodes[0], now, output=cfg.attacker_target_output)
        self.honest_spend = honest.id
        att = self.attacker
        avoid = self._avoid_mask(att.ledger, lambda past: False)
        parents = self._private_parents(att.ledger, avoid)
        unit = build_unit(att.identity, parents, Transaction(att.node_id, cfg.attacker_target_output, 1), self.puzzle, now)
        att.ledger.insert(unit, at=now)
        self.double_spend = unit.id
        self.issued.append((unit.id, att.node_id, now))
        self.attack_started = True

    def _avoid_mask(self, ledger: TangleLedger, extra) -> Any:
        h = self.honest_spend
        hbit = 1 << ledger.index_of(h) if h is not None and h in ledger else 0

        def tainted(t: int) -> bool:
            past = ledger.past_mask(t)
            return bool(past & hbit) or extra(past)

        return tainted

    def _private_parents(self, ledger: TangleLedger, tainted) -> list[UnitId]:
        algo = TipSelectionAlgo(UNIFORM, walker_count=self.algo.walker_count)
        try:
            return select_tips(ledger, algo, self.rng["tips"], tainted)
        except NoValidTips:
            return [ledger.genesis]

    def private_extension(self, now: float) -> None:
        att = self.attacker
        ledger = att.ledger
        dbit = 1 << ledger.index_of(self.double_spend)
        tainted = self._avoid_mask(ledger, lambda past: not past & dbit)
        unit = build_unit(att.identity, self._private_parents(ledger, tainted), ZERO_VALUE, self.puzzle, now)
        ledger.insert(unit, at=now)
        self.check_attack()

    def after_insert(self, node: _Node, uid: UnitId, now: float) -> None:
        if self.attack_started and node.node_id == 0:
            self.check_attack()

    def check_attack(self) -> None:
        if self.report.attack_won or self.honest_spend is None:
            return
        honest_view = self.nodes[0].ledger
        if self.honest_spend not in honest_view.confirmed_at:
            return
        if self.attacker.ledger.cumulative_weight(self.double_spend) > honest_view.cumulative_weight(self.honest_spend):
            self.report.attack_won = True

    # metrics

    def finish(self) -> MetricsReport:
        cfg = self.cfg
        rep = self.report
        window = cfg.duration - cfg.warmup
        delays = []
        in_window = confirmed_in_window = 0
        for uid, issuer, issued_at in self.issued:
            ledger = self.nodes[issuer].ledger
            payload = ledger.units[uid].payload
            rivals = ledger.spenders(payload.consumed_output)
            if len(rivals) > 1 and resolve_conflicts(ledger, rivals) != uid:
                rep.orphaned += 1
                state = "orphaned"
            elif uid in ledger.confirmed_at:
                rep.confirmed += 1
                state = "confirmed"
            else:
                rep.pending += 1
                state = "pending"
            if issued_at >= cfg.warmup:
                in_window += 1
                if state == "confirmed":
                    confirmed_in_window += 1
                    delays.append(ledger.confirmed_at[uid] - issued_at)
        rep.issued = len(self.issued)
        rep.offered_tps = in_window / window
        rep.confirmed_tps = confirmed_in_window / window
        rep.mean_confirmation_delay, rep.p95_confirmation_delay = _delays(delays)
        rep.weight_trajectories = self.tracked
        return rep


def run_scenario(config: ScenarioConfig, trace: Optional[list] = None) -> MetricsReport:
    """Simulate a Tangle scenario (or dispatch hashgraph configs)."""
    config.validate()
    if config.protocol == HASHGRAPH:
        return run_hashgraph_scenario(config)
    return _TangleRun(config, trace).run()


def run_double_spend(config: ScenarioConfig) -> MetricsReport:
    if config.protocol != TANGLE:
        raise ConfigError("double-spend scenarios need protocol = tangle", "protocol")
    if not config.attacker_enabled:
        raise ConfigError("double-spend scenario needs attacker_enabled = true", "attacker_enabled")
    return run_scenario(config)


# -- hashgraph ----------------------------------------------------------------


def run_hashgraph_scenario(config: ScenarioConfig) -> MetricsReport:
    cfg = config.validate()
    if cfg.protocol != HASHGRAPH:
        raise ConfigError("needs protocol = hashgraph", "protocol")
    if cfg.node_count < 2:
        raise ConfigError("hashgraph scenarios need node_count >= 2", "node_count")
    rng = _streams(cfg.seed)
    n = cfg.node_count
    forkers = set(range(n - cfg.byzantine_fork_nodes, n))
    honest = [i for i in range(n) if i not in forkers]
    observer = honest[0]
    nodes = [HashgraphNode(i, n, forker=i in forkers) for i in range(n)]
    wire = WireEventSize(cfg.positional_bytes)
    rep = MetricsReport(HASHGRAPH, n, cfg.arrival_rate, cfg.duration, 0, False, 0.0, cfg.seed)

    q = EventQueue()
    for i in range(n):
        q.push(rng["gossip"].uniform(0, cfg.gossip_interval), GOSSIP_TICK, i)
        if cfg.arrival_rate > 0:
            q.push(rng["arrivals"].expovariate(cfg.arrival_rate), ARRIVAL, i)
    link_clock: dict[tuple[int, int], float] = {}
    outputs = itertools.count(10_000_000)
    decided_at: dict[bytes, float] = {}

    while q and q.peek_time() <= cfg.duration:
        now, kind, data = q.pop()
        if kind == ARRIVAL:
            q.push(now + rng["arrivals"].expovariate(cfg.arrival_rate), ARRIVAL, data)
            nodes[data].pending.append(Transaction(data, next(outputs), 1))
        elif kind == GOSSIP_TICK:
            q.push(now + cfg.gossip_interval, GOSSIP_TICK, data)
            peer = rng["gossip"].randrange(n - 1)
            peer += peer >= data
            msg = nodes[data].prepare_sync(nodes[peer].view, peer, wire)
            rep.bytes_gossiped += msg.bytes
            # links deliver in order, like a stream connection
            at = max(now + cfg.latency_model.sample(rng["latency"]), link_clock.get((data, peer), 0.0))
            link_clock[(data, peer)] = at
            q.push(at, DELIVERY, (peer, msg))
        elif kind == DELIVERY:
            peer, msg = data
            nodes[peer].deliver(msg, now)
            if peer == observer:
                for eid in nodes[observer].view.run_consensus():
                    decided_at[eid] = now

    for i in honest:
        nodes[i].view.run_consensus()
    view = nodes[observer].view
    window = cfg.duration - cfg.warmup
    latencies = []
    tx_done = tx_offered = 0
    for eid in view.order:
        ev = view.events[eid]
        rep.max_rounds_to_decide = max(rep.max_rounds_to_decide, view.received_round(eid) - view.round(eid))
        if eid in decided_at and ev.claimed_time >= cfg.warmup:
            latencies.append(decided_at[eid] - ev.claimed_time)
            tx_done += len(ev.payload)
    for ev in view.events.values():
        if ev.claimed_time >= cfg.warmup:
            tx_offered += len(ev.payload)
    rep.issued = sum(len(e.payload) for e in view.events.values())
    rep.confirmed = sum(len(view.events[e].payload) for e in view.order)
    rep.pending = rep.issued - rep.confirmed
    rep.confirmed_tps = tx_done / window
    rep.offered_tps = tx_offered / window
    rep.mean_confirmation_delay, rep.p95_confirmation_delay = _delays(latencies)
    rep.rounds_decided = view.rounds_decided
    rep.honest_orders = [
        [(e.hex(), nodes[i].view.consensus_time(e)) for e in nodes[i].view.order] for i in honest
    ]
    return rep


# -- export ---------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "protocol",
    "nodes",
    "lambda",
    "duration_s",
    "w_star",
    "coordinator",
    "attacker_power",
    "confirmed_tps",
    "mean_delay_s",
    "p95_delay_s",
    "attack_won",
    "bytes_gossiped",
    "seed",
)


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _flag(b: bool) -> str:
    return "true" if b else "false"


def summary_row(rep: MetricsReport) -> list[str]:
    return [
        rep.protocol,
        str(rep.nodes),
        f"{rep.arrival_rate:g}",
        f"{rep.duration:g}",
        str(rep.w_star),
        _flag(rep.coordinator),
        f"{rep.attacker_power:g}",
        _num(rep.confirmed_tps),
        _num(rep.mean_confirmation_delay),
        _num(rep.p95_confirmation_delay),
        _flag(rep.attack_won),
        str(rep.bytes_gossiped),
        str(rep.seed),
    ]


def atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def _csv(header, rows) -> str:
    return "".join(",".join(r) + "\n" for r in itertools.chain([header], rows))


def export_metrics(rep: MetricsReport, prefix) -> list[Path]:
    prefix = str(prefix)
    paths = [Path(prefix + s) for s in ("_summary.csv", "_tips.csv", "_weights.csv")]
    atomic_write(paths[0], _csv(SUMMARY_COLUMNS, [summary_row(rep)]))
    atomic_write(paths[1], _csv(("time_s", "tip_count"), ([f"{t:.3f}", str(c)] for t, c in rep.tip_count_series)))
    weight_rows = ([tx, f"{t:.3f}", str(w)] for tx, pts in rep.weight_trajectories for t, w in pts)
    atomic_write(paths[2], _csv(("tx_id", "time_s", "cumulative_weight"), weight_rows))
    return paths

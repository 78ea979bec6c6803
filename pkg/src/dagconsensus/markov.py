"""Markov-chain model of a single transaction's cumulative-weight growth.

State ``w`` is the weight a transaction has gained from approvers (its
cumulative weight minus its own weight). Per time step ``dt`` the number of
new arrivals is Poisson(lambda * dt) and each approves the target with
probability ``q(w)``. Once ``w`` reaches ``w_star - 1`` the cumulative
weight meets the threshold, so those levels collapse into one absorbing
Finality state. The chain therefore has ``w_star`` states: transient
``0 .. w_star - 2`` and Finality at index ``w_star - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import poisson


class InvalidParameters(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ConstantQ:
    q: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise InvalidParameters("q must be in [0, 1]")

    def __call__(self, w: int) -> float:
        return self.q

    @property
    def label(self) -> str:
        return f"constant_q:{self.q:g}"


@dataclass(frozen=True)
class TwoPhase:
    """Slow adaptation below ``adaptation_weight``, then ``q_high``."""

    adaptation_weight: int
    q_low: float
    q_high: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.q_low <= 1.0 and 0.0 <= self.q_high <= 1.0):
            raise InvalidParameters("probabilities must be in [0, 1]")
        if self.adaptation_weight < 0:
            raise InvalidParameters("adaptation_weight must be >= 0")

    def __call__(self, w: int) -> float:
        return self.q_low if w < self.adaptation_weight else self.q_high

    @property
    def label(self) -> str:
        return f"two_phase:{self.adaptation_weight}:{self.q_low:g}:{self.q_high:g}"


@dataclass(frozen=True)
class Empirical:
    """Per-state approval probabilities estimated from simulation traces."""

    table: tuple[float, ...]

    def __call__(self, w: int) -> float:
        if not self.table:
            return 0.0
        return self.table[min(w, len(self.table) - 1)]

    @property
    def label(self) -> str:
        return "empirical"


ApprovalModel = Union[ConstantQ, TwoPhase, Empirical]


@dataclass
class WeightMarkovChain:
    arrival_rate: float
    time_step: float
    w_star: int
    approval: ApprovalModel
    matrix: np.ndarray

    @property
    def n_states(self) -> int:
        return self.w_star

    @property
    def finality(self) -> int:
        return self.w_star - 1

    def state_of(self, gained_weight: int) -> int:
        return min(int(gained_weight), self.finality)


def build_transition_matrix(
    arrival_rate: float, time_step: float, w_star: int, approval: ApprovalModel
) -> WeightMarkovChain:
    if arrival_rate < 0 or not math.isfinite(arrival_rate):
        raise InvalidParameters("arrival rate must be a finite non-negative number")
    if not time_step > 0:
        raise InvalidParameters("time step must be positive")
    if w_star < 1:
        raise InvalidParameters("w_star must be >= 1")
    F = w_star - 1
    P = np.zeros((w_star, w_star))
    mean = arrival_rate * time_step
    for w in range(F):
        # thinning: Poisson(m; mean) arrivals, each approving w.p. q -> Poisson(mean * q)
        rate = mean * approval(w)
        ks = np.arange(F - w)
        P[w, w : F] = poisson.pmf(ks, rate)
        P[w, F] = poisson.sf(F - w - 1, rate)
    P[F, F] = 1.0
    return WeightMarkovChain(arrival_rate, time_step, w_star, approval, P)


def n_step_distribution(chain: WeightMarkovChain, n: int, start_state: int = 0) -> np.ndarray:
    if n < 0:
        raise InvalidParameters("n must be >= 0")
    if not 0 <= start_state < chain.n_states:
        raise InvalidParameters(f"start state {start_state} out of range")
    v = np.zeros(chain.n_states)
    v[start_state] = 1.0
    for _ in range(n):
        v = v @ chain.matrix
    return v


def finality_reachable(chain: WeightMarkovChain, start_state: int = 0) -> bool:
    """Every state reachable from ``start_state`` can also leave it."""
    P = chain.matrix
    F = chain.finality
    seen = {start_state}
    stack = [start_state]
    while stack:
        s = stack.pop()
        if s != F and P[s, s] >= 1.0:
            return False
        for t in np.nonzero(P[s] > 0)[0]:
            t = int(t)
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return True


def expected_absorption_steps(chain: WeightMarkovChain) -> np.ndarray:
    """Expected steps to Finality from each transient state: (I - Q)^-1 @ 1."""
    F = chain.finality
    Q = chain.matrix[:F, :F]
    return np.linalg.solve(np.eye(F) - Q, np.ones(F))


def expected_confirmation_delay(chain: WeightMarkovChain, start_state: int = 0) -> float:
    """Seconds until Finality; ``inf`` when Finality cannot be reached."""
    if start_state >= chain.finality:
        return 0.0
    if not finality_reachable(chain, start_state):
        return math.inf
    steps = expected_absorption_steps(chain)
    return float(chain.time_step * steps[start_state])


# -- calibration ----------------------------------------------------------


@dataclass
class WeightTrace:
    """One transaction's cumulative weight sampled every ``dt`` from issuance.

    ``arrivals[j]`` counts arrivals during step j; ``None`` means the
    expected count ``arrival_rate * dt`` is used instead.
    """

    weights: Sequence[float]
    arrivals: Optional[Sequence[float]] = None


MIN_TRAJECTORIES = 100
MIN_BUCKET_ARRIVALS = 10


def calibrate_from_traces(
    traces: Sequence[WeightTrace],
    w_star: int,
    dt: float,
    arrival_rate: Optional[float] = None,
    min_trajectories: int = MIN_TRAJECTORIES,
) -> Empirical:
    """Estimate q(w) = weight increments / arrivals observed at state w.

    Buckets with fewer than ``MIN_BUCKET_ARRIVALS`` arrivals borrow the
    estimate of the nearest bucket that has enough (lower state on ties).
    """
    if len(traces) < max(1, min_trajectories):
        raise InsufficientData(f"need at least {min_trajectories} trajectories, got {len(traces)}")
    F = w_star - 1
    if F < 1:
        return Empirical(())
    inc = np.zeros(F)
    arr = np.zeros(F)
    for tr in traces:
        ws = np.asarray(tr.weights, dtype=float)
        if len(ws) < 2:
            continue
        if tr.arrivals is None:
            if arrival_rate is None:
                raise InvalidParameters("arrival_rate required when traces carry no arrival counts")
            a = np.full(len(ws) - 1, arrival_rate * dt)
        else:
            a = np.asarray(tr.arrivals, dtype=float)[: len(ws) - 1]
        gained = ws - ws[0]
        for j in range(len(a)):
            w = int(gained[j])
            if w >= F:
                break
            inc[w] += ws[j + 1] - ws[j]
            arr[w] += a[j]
    good = [w for w in range(F) if arr[w] >= MIN_BUCKET_ARRIVALS]
    if not good:
        raise InsufficientData("no state bucket has enough arrival observations")
    table = []
    for w in range(F):
        src = w if arr[w] >= MIN_BUCKET_ARRIVALS else min(good, key=lambda g: (abs(g - w), g))
        table.append(float(min(1.0, max(0.0, inc[src] / arr[src]))))
    return Empirical(tuple(table))


def resample(points: Sequence[tuple[float, float]], dt: float) -> list[float]:
    """Step-hold resampling of (age, weight) points onto the grid 0, dt, 2dt, ..."""
    pts = sorted(points)
    if not pts:
        return []
    out = []
    horizon = pts[-1][0]
    j = 0
    k = 0
    while k * dt <= horizon + 1e-9:
        t = k * dt
        while j + 1 < len(pts) and pts[j + 1][0] <= t + 1e-9:
            j += 1
        out.append(pts[j][1])
        k += 1
    return out


# -- export -----------------------------------------------------------------


def matrix_csv(chain: WeightMarkovChain) -> str:
    lines = [f"# states={chain.n_states} lambda={chain.arrival_rate:g} dt={chain.time_step:g}"]
    for row in chain.matrix:
        lines.append(",".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


DELAY_COLUMNS = ("lambda", "dt", "W_star", "model", "expected_delay_s")


def delay_row(chain: WeightMarkovChain, delay: float) -> list[str]:
    d = "inf" if math.isinf(delay) else f"{delay:.6f}"
    return [f"{chain.arrival_rate:g}", f"{chain.time_step:g}", str(chain.w_star), chain.approval.label, d]

"""Scenario configuration: flat ``key = value`` files.

Keys are exactly the :class:`ScenarioConfig` field names. ``#`` starts a
comment, unknown keys are rejected, missing keys keep their defaults.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

TANGLE = "tangle"
HASHGRAPH = "hashgraph"


class ConfigError(ValueError):
    """Bad configuration; ``key`` and ``line`` locate the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None, source: str = ""):
        self.key = key
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        if key is not None:
            where += f" {key}:"
        super().__init__(f"{where} {message}".strip())


InvalidConfig = ConfigError


@dataclass(frozen=True)
class LatencyModel:
    """Per-link delay in seconds: ``fixed:d``, ``uniform:lo:hi`` or ``exponential:mean``."""

    kind: str = "uniform"
    a: float = 0.05
    b: float = 0.2

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "exponential"):
            raise ValueError(f"unknown latency model {self.kind!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.a < 0 or self.b < 0:
            raise ValueError("latency parameters must be finite and >= 0")
        if self.kind == "uniform" and self.b < self.a:
            raise ValueError("uniform latency needs lo <= hi")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.a
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b)
        return rng.expovariate(1.0 / self.a) if self.a > 0 else 0.0

    @property
    def mean(self) -> float:
        return (self.a + self.b) / 2 if self.kind == "uniform" else self.a

    def __str__(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.a!r}:{self.b!r}"
        return f"{self.kind}:{self.a!r}"

    @classmethod
    def parse(cls, text: str) -> "LatencyModel":
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise ValueError(f"bad latency model {text!r}") from None
        want = {"fixed": 1, "uniform": 2, "exponential": 1}.get(kind)
        if want is None or len(nums) != want:
            raise ValueError(f"bad latency model {text!r}")
        if kind == "uniform":
            return cls(kind, nums[0], nums[1])
        return cls(kind, nums[0], 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str = TANGLE
    node_count: int = 4
    arrival_rate: float = 10.0
    duration: float = 600.0
    seed: int = 0
    latency_model: LatencyModel = LatencyModel()
    confirmation_threshold: int = 50
    tip_algo: str = "mcmc"
    mcmc_alpha: float = 0.1
    walk_start_depth: int = 20
    walker_count: int = 2
    puzzle_bits: int = 8
    coordinator_enabled: bool = False
    coordinator_interval: float = 5.0
    attacker_enabled: bool = False
    attacker_power_fraction: float = 0.0
    attacker_target_output: int = 1
    lazy_enabled: bool = False
    lazy_fraction: float = 0.0
    lazy_depth: int = 10
    gossip_interval: float = 1.0
    byzantine_fork_nodes: int = 0
    positional_bytes: int = 4
    sample_interval: float = 1.0
    trajectory_horizon: float = 60.0
    trajectory_count: int = 100

    @property
    def honest_fraction(self) -> float:
        return 1.0 - (self.attacker_power_fraction if self.attacker_enabled else 0.0)

    @property
    def warmup(self) -> float:
        return 0.1 * self.duration

    def problems(self) -> list[tuple[str, str]]:
        """(key, message) for every violated constraint."""
        out = []

        def need(ok, key, msg):
            if not ok:
                out.append((key, msg))

        need(self.protocol in (TANGLE, HASHGRAPH), "protocol", "must be tangle or hashgraph")
        need(self.node_count >= 1, "node_count", "must be >= 1")
        need(math.isfinite(self.arrival_rate) and self.arrival_rate >= 0, "arrival_rate", "must be finite and >= 0")
        need(math.isfinite(self.duration) and self.duration > 0, "duration", "must be > 0")
        need(0 <= self.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
        need(self.confirmation_threshold >= 1, "confirmation_threshold", "must be >= 1")
        need(self.tip_algo in ("uniform", "mcmc"), "tip_algo", "must be uniform or mcmc")
        need(math.isfinite(self.mcmc_alpha) and self.mcmc_alpha >= 0, "mcmc_alpha", "must be >= 0")
        need(self.walk_start_depth >= 1, "walk_start_depth", "must be >= 1")
        need(self.walker_count >= 1, "walker_count", "must be >= 1")
        need(1 <= self.puzzle_bits <= 32, "puzzle_bits", "must be in 1..32")
        need(self.coordinator_interval > 0, "coordinator_interval", "must be > 0")
        need(0 <= self.attacker_power_fraction < 1, "attacker_power_fraction", "must be in [0, 1)")
        need(self.attacker_target_output >= 0, "attacker_target_output", "must be >= 0")
        need(0 <= self.lazy_fraction <= 1, "lazy_fraction", "must be in [0, 1]")
        need(self.lazy_depth >= 1, "lazy_depth", "must be >= 1")
        need(self.gossip_interval > 0, "gossip_interval", "must be > 0")
        need(0 <= self.byzantine_fork_nodes < max(1, self.node_count), "byzantine_fork_nodes", "must be in [0, node_count)")
        need(3 <= self.positional_bytes <= 6, "positional_bytes", "must be in [3, 6]")
        need(self.sample_interval > 0, "sample_interval", "must be > 0")
        need(self.trajectory_horizon > 0, "trajectory_horizon", "must be > 0")
        need(self.trajectory_count >= 0, "trajectory_count", "must be >= 0")
        return out

    def validate(self, lines: Optional[dict[str, int]] = None, source: str = "") -> "ScenarioConfig":
        bad = self.problems()
        if bad:
            key, msg = bad[0]
            raise ConfigError(msg, key, (lines or {}).get(key), source)
        return self

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key: str, raw: str):
    default = getattr(ScenarioConfig(), key)
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw, 10)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, LatencyModel):
        return LatencyModel.parse(raw)
    return raw


def parse_config(text: str, source: str = "") -> ScenarioConfig:
    values = {}
    lines: dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", None, number, source)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError("unknown key", key, number, source)
        if key in values:
            raise ConfigError("duplicate key", key, number, source)
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(str(exc), key, number, source) from None
        lines[key] = number
    return ScenarioConfig(**values).validate(lines, source)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
    return parse_config(text, str(p))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: ScenarioConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))

"""Side-by-side comparison of consensus mechanisms.

Bitcoin and Nxt rows are fixed published figures; Tangle and Hashgraph rows
come from simulation reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .harness import MetricsReport

COLUMNS = ("mechanism", "throughput", "confirmation_delay", "fee", "resource", "finality", "source", "seed")


@dataclass(frozen=True)
class ComparisonRow:
    mechanism: str
    throughput: str
    confirmation_delay: str
    fee: str
    resource: str
    finality: str
    source: str = "paper"
    seed: str = "-"

    def cells(self) -> list[str]:
        return [getattr(self, c) for c in COLUMNS]


BITCOIN = ComparisonRow("Bitcoin", "7 TPS", "60 min", "0.0001 BTC", "Enormous computing power",
                        "Six cumulative blocks at least")
NXT = ComparisonRow("Nxt", "4 TPS", "10 min", "1 Nxt", "Coin age", "Ten cumulative blocks at least")


def _delay(seconds: float) -> str:
    return "nan" if math.isnan(seconds) else f"{seconds:.2f} s"


def simulated_row(mechanism: str, rep: MetricsReport) -> ComparisonRow:
    if mechanism == "Tangle":
        resource, finality = "Low computing power", "Cumulative weight reaches confirmation threshold"
    else:
        resource, finality = "Low computing power and bandwidth", "Seen by all famous witnesses in a later round"
    return ComparisonRow(mechanism, f"{rep.confirmed_tps:.2f} TPS", _delay(rep.mean_confirmation_delay), "0",
                         resource, finality, "sim", str(rep.seed))


def comparison_rows(tangle: MetricsReport, hashgraph: MetricsReport) -> list[ComparisonRow]:
    return [BITCOIN, NXT, simulated_row("Tangle", tangle), simulated_row("Hashgraph", hashgraph)]


def comparison_csv(rows: list[ComparisonRow]) -> str:
    lines = [",".join(COLUMNS)] + [",".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"

"""Discrete-event simulation and analysis of DAG-based ledger consensus.

Subpackages cover the Tangle ledger (``dag``, ``tangle``), Hashgraph
gossip and virtual voting (``hashgraph``), the cumulative-weight Markov
model (``markov``) and the scenario harness used by the ``dagsim`` CLI.
"""

__version__ = "0.1.0"

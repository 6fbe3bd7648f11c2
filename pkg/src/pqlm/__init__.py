"""pqlm: a desk-scale pipeline for running transformer attention under FHE.

The package stacks four layers:

* :mod:`pqlm.fhe` — toy-parameter LWE/ring encryption with programmable
  bootstrapping and an auditable noise ledger.
* :mod:`pqlm.quant` + :mod:`pqlm.model` — an integer-quantizable toy
  decoder-only transformer with grouped-query attention.
* :mod:`pqlm.circuit` + :mod:`pqlm.encattn` — a static integer circuit
  compiler that turns attention blocks into bootstrap schedules, with
  interchangeable clear/simulated/encrypted executors.
* :mod:`pqlm.protocol` + :mod:`pqlm.bench` — a client/server wire format
  and a benchmark harness for accuracy, latency, and bootstrap counts.
"""

__version__ = "0.1.0"

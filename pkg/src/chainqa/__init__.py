"""Multi-hop QA with iterative dense retrieval and semantic-graph reasoning chains.

The library is organized by pipeline stage:

- :mod:`chainqa.amr` — PENMAN parsing and serialization of AMR graphs.
- :mod:`chainqa.semgraph` — merging hypothesis and evidence AMRs into one
  semantic graph with question/answer/evidence node partitions.
- :mod:`chainqa.chains` — depth-first enumeration of question-to-answer paths
  and their mapping to evidence-level reasoning chains.
- :mod:`chainqa.retriever` — exact inner-product search, query reformulation,
  and iterative beam-search retrieval over a fixed evidence index.
- :mod:`chainqa.losses` — chain likelihoods, the supervised / distantly
  supervised training losses, and their analytic gradients.
- :mod:`chainqa.reader` — a linear scorer over pooled embeddings that ranks
  answer choices and supplies the 0/1 policy-gradient reward.
- :mod:`chainqa.trainer` — the end-to-end pipeline, mini-batch training loop,
  and evaluation metrics.
- :mod:`chainqa.synth` — the synthetic benchmark generator.
- :mod:`chainqa.dot` — Graphviz DOT export of semantic graphs and chains.
- :mod:`chainqa.cli` — the command-line surface.
"""

from chainqa.amr import AmrEdge, AmrGraph, AmrNode, parse_penman, root_var, serialize

__all__ = [
    "AmrEdge",
    "AmrGraph",
    "AmrNode",
    "parse_penman",
    "root_var",
    "serialize",
]

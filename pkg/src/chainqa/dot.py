"""Graphviz DOT export of semantic graphs with optional chain highlighting."""

from __future__ import annotations

from chainqa.chains import ChainSet
from chainqa.semgraph import ANSWER, QUESTION, SemanticGraph

_KIND_FILL = {QUESTION: "lightskyblue", ANSWER: "palegreen", "evidence": "white"}
_ORIGIN_STYLE = {"inner": "solid", "inter": "dashed"}
_CHAIN_COLOR = "deeppink"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def semantic_graph_dot(
    g: SemanticGraph,
    chain_set: ChainSet | None = None,
    name: str = "semantic_graph",
) -> str:
    """Render the graph as undirected DOT.

    Nodes are colored by kind (question blue, answer green, evidence white)
    and labeled with their concept plus source fact ids; edge style follows
    the edge origin.  Edges on any reasoning-chain path are drawn in pink on
    top, matching the usual chain illustration convention.
    """
    chain_edges: set[frozenset[int]] = set()
    if chain_set is not None:
        for chain in chain_set.chains:
            for a, b in zip(chain.node_path, chain.node_path[1:]):
                chain_edges.add(frozenset((a, b)))

    lines = [f"graph {_quote(name)} {{"]
    lines.append("  node [shape=ellipse, style=filled];")
    for i, node in enumerate(g.nodes):
        facts = ", ".join(sorted(node.fact_sources))
        label = node.label if not facts else f"{node.label}\\n[{facts}]"
        fill = _KIND_FILL.get(node.kind, "white")
        lines.append(f"  n{i} [label={_quote(label)}, fillcolor={_quote(fill)}];")
    for edge in g.edges:
        style = _ORIGIN_STYLE.get(edge.origin, "solid")
        attrs = [f"style={style}"]
        if frozenset((edge.a, edge.b)) in chain_edges:
            attrs.append(f"color={_CHAIN_COLOR}")
            attrs.append("penwidth=2.5")
        lines.append(f"  n{edge.a} -- n{edge.b} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

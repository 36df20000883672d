"""Build a merged semantic graph from hypothesis and evidence AMRs.

One graph is built per (question, answer choice).  Concept nodes from the
choice's hypothesis AMR and from every evidence-fact AMR become graph nodes,
with over-general concepts replaced by their constant attributes.  Hypothesis
nodes are partitioned into question nodes (concepts shared by all choices'
hypotheses) and answer nodes (the rest).  Nodes with equal labels are unified
across graphs — except AMR roots, which stay separate so that frequent root
verbs cannot create shortcut paths — and every node records which evidence
facts it came from.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache

from chainqa.amr import AmrGraph, AmrNode

#: Marker used in ``SemNode.sources`` for nodes originating in the hypothesis.
HYPOTHESIS = "HYPOTHESIS"

#: Concepts too generic to serve as graph nodes; replaced by their first
#: constant attribute when one exists.  Overridable per call.
DEFAULT_OVERGENERAL = frozenset({"name", "thing", "person", "amr-unknown", "multi-sentence"})

QUESTION = "question"
ANSWER = "answer"
EVIDENCE = "evidence"


class DegenerateSplit(ValueError):
    """All answer choices share every hypothesis concept, so no choice has
    answer nodes of its own."""


class EmptyPoolWarning(UserWarning):
    """The evidence pool is empty; the graph is hypothesis-only and no
    reasoning chain can exist downstream."""


@dataclass(frozen=True)
class SemNode:
    """A semantic-graph node.

    ``sources`` holds the ids of the evidence facts contributing the node,
    plus the :data:`HYPOTHESIS` marker for hypothesis-origin nodes.
    ``merged_from`` records every (origin graph id, AMR variable) unified into
    this node.  Labels compare case-insensitively for merging.
    """

    label: str
    kind: str  # QUESTION, ANSWER, or EVIDENCE
    sources: frozenset[str]
    merged_from: frozenset[tuple[str, str]]

    @property
    def fact_sources(self) -> frozenset[str]:
        return self.sources - {HYPOTHESIS}


@dataclass(frozen=True)
class SemEdge:
    """An undirected edge; ``witnesses`` are the fact ids whose AMRs
    contributed it (empty for hypothesis-only edges)."""

    a: int
    b: int
    origin: str = "inner"  # "inner" or "inter"
    witnesses: frozenset[str] = frozenset()


@dataclass(frozen=True)
class SemanticGraph:
    nodes: tuple[SemNode, ...]
    edges: tuple[SemEdge, ...]
    qnodes: frozenset[int]
    anodes: frozenset[int]

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        neighbors: dict[int, set[int]] = defaultdict(set)
        for edge in self.edges:
            neighbors[edge.a].add(edge.b)
            neighbors[edge.b].add(edge.a)
        return {node: tuple(sorted(theirs)) for node, theirs in neighbors.items()}

    @cached_property
    def edge_map(self) -> dict[frozenset[int], SemEdge]:
        return {frozenset((e.a, e.b)): e for e in self.edges}

    def edge_witnesses(self, a: int, b: int) -> frozenset[str]:
        edge = self.edge_map.get(frozenset((a, b)))
        return edge.witnesses if edge is not None else frozenset()


def substitute_overgeneral(
    node: AmrNode, overgeneral: frozenset[str] = DEFAULT_OVERGENERAL
) -> str:
    """Return the node's graph label: its concept, or — for an over-general
    concept with at least one constant attribute — the first attribute value."""
    if node.concept in overgeneral and node.attributes:
        return node.attributes[0][1]
    return node.concept


@lru_cache(maxsize=8192)
def _node_summaries(
    graph: AmrGraph, overgeneral: frozenset[str]
) -> tuple[tuple[str, str, str, bool], ...]:
    """(var, label, casefolded label, is root) per node, substitution applied."""
    out = []
    for node in graph.nodes:
        label = substitute_overgeneral(node, overgeneral)
        out.append((node.var, label, label.casefold(), node.var == graph.root))
    return tuple(out)


@lru_cache(maxsize=4096)
def _label_sets(graph: AmrGraph, overgeneral: frozenset[str]) -> frozenset[str]:
    return frozenset(folded for _, _, folded, _ in _node_summaries(graph, overgeneral))


def split_qa_nodes(
    hypothesis_amrs: list[AmrGraph],
    j: int,
    overgeneral: frozenset[str] = DEFAULT_OVERGENERAL,
) -> tuple[set[str], set[str]]:
    """Partition choice ``j``'s hypothesis concepts into question and answer labels.

    Question labels are those shared by all hypotheses (one per answer
    choice); the remaining labels of hypothesis ``j`` are its answer labels.
    Labels are post-substitution and compared case-insensitively; the returned
    spellings are those of hypothesis ``j``.

    Raises :class:`DegenerateSplit` when choice ``j`` ends up with no answer
    labels (every choice shares every concept).
    """
    if len(hypothesis_amrs) < 2:
        raise ValueError("need at least two hypothesis AMRs, one per answer choice")
    shared = frozenset.intersection(
        *(_label_sets(h, overgeneral) for h in hypothesis_amrs)
    )
    qnodes: set[str] = set()
    anodes: set[str] = set()
    for _, label, folded, _ in _node_summaries(hypothesis_amrs[j], overgeneral):
        if folded in shared:
            qnodes.add(label)
        else:
            anodes.add(label)
    if not anodes:
        raise DegenerateSplit(f"choice {j} has no answer labels of its own")
    return qnodes, anodes


def build_graph(
    hyp: AmrGraph,
    all_hyps: list[AmrGraph],
    pool: list[tuple[str, AmrGraph]],
    overgeneral: frozenset[str] = DEFAULT_OVERGENERAL,
) -> SemanticGraph:
    """Merge one hypothesis AMR and the evidence-pool AMRs into a semantic graph.

    Rules applied, in order:

    1. every AMR node gets a substituted label with provenance;
    2. nodes with equal labels (case-insensitive) are unified into one node,
       except that no AMR's root node ever unifies with anything;
    3. a node unified across the hypothesis and a fact keeps its hypothesis
       kind (question or answer);
    4. all AMR edges are preserved undirected with their source fact as
       witness, except that no edge may join a question node to an answer
       node; self-loops produced by unification are dropped and parallel
       edges are collapsed with their witness sets merged.

    ``pool`` entries are (fact id, AMR) pairs; fact ids must not equal the
    :data:`HYPOTHESIS` marker.  An empty pool produces a hypothesis-only graph
    and emits :class:`EmptyPoolWarning`.
    """
    try:
        j = all_hyps.index(hyp)
    except ValueError:
        raise ValueError("hyp must be one of all_hyps") from None
    try:
        qlabels, alabels = split_qa_nodes(all_hyps, j, overgeneral)
    except DegenerateSplit:
        # Fall back to the hypothesis root as the sole answer node so chain
        # generation still has a target.
        root_label = substitute_overgeneral(hyp.node_map[hyp.root], overgeneral)
        alabels = {root_label}
        qlabels = {
            label
            for _, label, folded, _ in _node_summaries(hyp, overgeneral)
            if folded != root_label.casefold()
        }
    qfold = {label.casefold() for label in qlabels}
    afold = {label.casefold() for label in alabels}

    if not pool:
        warnings.warn(
            "empty evidence pool: building a hypothesis-only graph",
            EmptyPoolWarning,
            stacklevel=2,
        )
    for fact_id, _ in pool:
        if fact_id == HYPOTHESIS:
            raise ValueError(f"fact id collides with the {HYPOTHESIS!r} marker")

    origins: list[tuple[str, AmrGraph]] = [(HYPOTHESIS, hyp)] + list(pool)

    # Group AMR nodes into semantic nodes: one group per (casefolded) label,
    # except that each root node forms its own group.
    group_of: dict[tuple[str, str], int] = {}
    group_labels: list[str] = []
    group_members: list[list[tuple[str, str]]] = []
    by_label: dict[str, int] = {}
    for origin_id, graph in origins:
        for var, label, folded, is_root in _node_summaries(graph, overgeneral):
            if is_root:
                group = len(group_labels)
                group_labels.append(label)
                group_members.append([])
            elif folded in by_label:
                group = by_label[folded]
            else:
                group = len(group_labels)
                group_labels.append(label)
                group_members.append([])
                by_label[folded] = group
            group_of[(origin_id, var)] = group
            group_members[group].append((origin_id, var))

    sem_nodes: list[SemNode] = []
    for label, members in zip(group_labels, group_members):
        origin_ids = {origin for origin, _ in members}
        folded = label.casefold()
        if HYPOTHESIS in origin_ids:
            kind = ANSWER if folded in afold else QUESTION
        else:
            kind = EVIDENCE
        sem_nodes.append(
            SemNode(
                label=label,
                kind=kind,
                sources=frozenset(origin_ids),
                merged_from=frozenset(members),
            )
        )

    # Undirected edges, deduplicated with merged witnesses; question-answer
    # pairs are never connected, so reasoning paths must leave the hypothesis.
    witnesses: dict[tuple[int, int], set[str]] = {}
    edge_order: list[tuple[int, int]] = []
    for origin_id, graph in origins:
        for edge in graph.edges:
            a = group_of[(origin_id, edge.src)]
            b = group_of[(origin_id, edge.dst)]
            if a == b:
                continue
            kind_a, kind_b = sem_nodes[a].kind, sem_nodes[b].kind
            if (kind_a == QUESTION and kind_b == ANSWER) or (
                kind_a == ANSWER and kind_b == QUESTION
            ):
                continue
            key = (min(a, b), max(a, b))
            if key not in witnesses:
                witnesses[key] = set()
                edge_order.append(key)
            if origin_id != HYPOTHESIS:
                witnesses[key].add(origin_id)

    sem_edges = tuple(
        SemEdge(a=a, b=b, origin="inner", witnesses=frozenset(witnesses[(a, b)]))
        for a, b in edge_order
    )
    return SemanticGraph(
        nodes=tuple(sem_nodes),
        edges=sem_edges,
        qnodes=frozenset(
            i for i, node in enumerate(sem_nodes) if node.kind == QUESTION
        ),
        anodes=frozenset(i for i, node in enumerate(sem_nodes) if node.kind == ANSWER),
    )

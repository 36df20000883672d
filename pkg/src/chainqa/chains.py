"""Enumerate reasoning chains on a semantic graph.

A reasoning chain is an ordered sequence of evidence-fact ids whose concepts
connect a question node to an answer node.  Chains are found by depth-first
search for simple node paths that start at a question node, end at an answer
node, and pass only through evidence nodes in between (at least one), then
mapped from node paths to fact sequences using per-edge fact witnesses.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import product

from chainqa.semgraph import EVIDENCE, SemanticGraph

#: Ceiling on the number of fact sequences one node path may expand into when
#: nodes or edges have several source facts.
EXPANSION_CAP = 4

#: Safety ceiling on raw source-assignment combinations per node path.
_MAX_COMBINATIONS = 65536


@dataclass(frozen=True)
class ReasoningChain:
    """An ordered fact sequence plus the node path that witnesses it."""

    facts: tuple[str, ...]
    node_path: tuple[int, ...]


@dataclass(frozen=True)
class ChainSet:
    """All chains for one (question, choice) plus their union of fact ids."""

    chains: tuple[ReasoningChain, ...]
    active_facts: frozenset[str]


def _collapse(assignment: tuple[str, ...]) -> tuple[str, ...] | None:
    """Collapse consecutive duplicates; reject sequences that revisit a fact."""
    collapsed: list[str] = []
    for fact in assignment:
        if collapsed and collapsed[-1] == fact:
            continue
        if fact in collapsed:
            return None
        collapsed.append(fact)
    return tuple(collapsed)


def _expand(source_sets: list[list[str]], cap: int) -> list[list[str]]:
    total = 1
    for sources in source_sets:
        total *= len(sources)
        if total > _MAX_COMBINATIONS:
            raise ValueError("source-assignment expansion is too large")
    results: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    for assignment in product(*source_sets):
        collapsed = _collapse(assignment)
        if collapsed and collapsed not in seen:
            seen.add(collapsed)
            results.append(collapsed)
    results.sort(key=lambda facts: (len(facts), facts))
    return [list(facts) for facts in results[:cap]]


def map_to_facts(
    node_path: list[int], g: SemanticGraph, cap: int = EXPANSION_CAP
) -> list[list[str]]:
    """Map a node path to its evidence-fact sequences.

    Each consecutive node pair is witnessed by the facts whose AMRs
    contributed that edge; one fact is chosen per step, consecutive duplicates
    collapse, and multi-witness steps expand into one chain per combination,
    capped at ``cap`` chains preferring the shortest.  When edge witnesses are
    unavailable (edges not fact-backed), the mapping falls back to assigning
    one source fact per node that has any.
    """
    if len(node_path) < 2:
        return []
    edge_sets = [
        sorted(g.edge_witnesses(a, b)) for a, b in zip(node_path, node_path[1:])
    ]
    if all(edge_sets):
        return _expand(edge_sets, cap)
    node_sets = [
        sorted(g.nodes[n].fact_sources)
        for n in node_path
        if g.nodes[n].fact_sources
    ]
    if not node_sets:
        return []
    return _expand(node_sets, cap)


def generate_chains(g: SemanticGraph, max_path_len: int = 8) -> ChainSet:
    """Find every reasoning chain on ``g``.

    Enumerates all simple node paths from any question node to any answer node
    whose interior nodes are all evidence nodes, with at most ``max_path_len``
    nodes, maps each to fact sequences, deduplicates fact sequences keeping
    the first-found witness path, and sorts chains by (length, fact ids).
    """
    if max_path_len < 2:
        raise ValueError("max_path_len must be at least 2")
    adjacency = g.adjacency
    chains: list[ReasoningChain] = []
    seen: set[tuple[str, ...]] = set()

    def visit(path: list[int], on_path: set[int]) -> None:
        for neighbor in adjacency.get(path[-1], ()):
            if neighbor in on_path:
                continue
            kind = g.nodes[neighbor].kind
            if neighbor in g.anodes and len(path) >= 2:
                full = path + [neighbor]
                for facts in map_to_facts(full, g):
                    key = tuple(facts)
                    if key not in seen:
                        seen.add(key)
                        chains.append(ReasoningChain(key, tuple(full)))
            elif kind == EVIDENCE and len(path) + 1 <= max_path_len - 1:
                path.append(neighbor)
                on_path.add(neighbor)
                visit(path, on_path)
                path.pop()
                on_path.discard(neighbor)

    for qnode in sorted(g.qnodes):
        visit([qnode], {qnode})

    chains.sort(key=lambda chain: (len(chain.facts), chain.facts))
    active = frozenset(fact for chain in chains for fact in chain.facts)
    return ChainSet(chains=tuple(chains), active_facts=active)


def chain_length_histogram(cs: ChainSet) -> tuple[dict[int, int], int]:
    """Count chains by fact-sequence length; the modal length breaks ties
    toward the smaller length and is 0 for an empty chain set."""
    counts = Counter(len(chain.facts) for chain in cs.chains)
    if not counts:
        return {}, 0
    best = max(counts.values())
    modal = min(length for length, count in counts.items() if count == best)
    return dict(sorted(counts.items())), modal

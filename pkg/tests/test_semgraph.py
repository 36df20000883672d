import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainqa.amr import parse_penman
from chainqa.semgraph import (
    ANSWER,
    DEFAULT_OVERGENERAL,
    EVIDENCE,
    HYPOTHESIS,
    QUESTION,
    DegenerateSplit,
    EmptyPoolWarning,
    SemanticGraph,
    build_graph,
    split_qa_nodes,
    substitute_overgeneral,
)
from helpers import random_amr, solar_fixture

WEASEL_HYP = "(m / move-01 :ARG0 (w / weasel) :ARG1 (e / energy))"
WILLOW_HYP = "(m / move-01 :ARG0 (w / willow) :ARG1 (e / energy))"


def label_sets_oracle(hyps, overgeneral=DEFAULT_OVERGENERAL):
    """Independent set-algebra oracle over substituted, casefolded labels."""
    sets = [
        {substitute_overgeneral(n, overgeneral).casefold() for n in h.nodes}
        for h in hyps
    ]
    shared = set.intersection(*sets)
    return sets, shared


class TestSubstituteOvergeneral:
    def test_name_with_attribute_becomes_the_attribute(self):
        g = parse_penman('(n / name :op1 "Earth")')
        assert substitute_overgeneral(g.nodes[0]) == "Earth"

    def test_concept_without_substitution(self):
        g = parse_penman("(p / planet)")
        assert substitute_overgeneral(g.nodes[0]) == "planet"

    def test_overgeneral_without_attribute_keeps_concept(self):
        g = parse_penman("(n / name)")
        assert substitute_overgeneral(g.nodes[0]) == "name"

    def test_custom_list(self):
        g = parse_penman('(p / planet :wiki "Q2")')
        assert substitute_overgeneral(g.nodes[0], frozenset({"planet"})) == "Q2"


class TestSplitQaNodes:
    def test_weasel_willow_split(self):
        hyps = [parse_penman(WEASEL_HYP), parse_penman(WILLOW_HYP)]
        sets, shared = label_sets_oracle(hyps)
        qnodes, anodes = split_qa_nodes(hyps, 0)
        assert {q.casefold() for q in qnodes} == shared == {"move-01", "energy"}
        assert {a.casefold() for a in anodes} == sets[0] - shared == {"weasel"}

    def test_identical_hypotheses_are_degenerate(self):
        hyps = [parse_penman(WEASEL_HYP), parse_penman(WEASEL_HYP)]
        with pytest.raises(DegenerateSplit):
            split_qa_nodes(hyps, 1)

    def test_four_choices_intersection(self):
        hyps = [
            parse_penman("(s / state-01 :ARG0 (c / common) :ARG1 (a / alpha))"),
            parse_penman("(s / state-01 :ARG0 (c / common) :ARG1 (b / beta))"),
            parse_penman("(s / state-01 :ARG0 (c / common) :ARG1 (g / gamma))"),
            parse_penman("(s / state-01 :ARG0 (c / common) :ARG1 (d / delta))"),
        ]
        _, shared = label_sets_oracle(hyps)
        for j in range(4):
            qnodes, anodes = split_qa_nodes(hyps, j)
            assert {q.casefold() for q in qnodes} == shared
            assert len(anodes) == 1

    def test_case_insensitive_sharing(self):
        hyps = [
            parse_penman("(m / Move-01 :ARG0 (w / weasel))"),
            parse_penman("(m / move-01 :ARG0 (w / willow))"),
        ]
        qnodes, _ = split_qa_nodes(hyps, 0)
        assert qnodes == {"Move-01"}

    def test_requires_two_hypotheses(self):
        with pytest.raises(ValueError):
            split_qa_nodes([parse_penman(WEASEL_HYP)], 0)


def node_by_label(g: SemanticGraph, label: str):
    matches = [n for n in g.nodes if n.label.casefold() == label.casefold()]
    assert matches, f"no node labeled {label!r}"
    return matches


class TestBuildGraph:
    def test_solar_fixture_merges(self):
        fx = solar_fixture()
        g = build_graph(fx.hyps[2], fx.hyps, fx.pool)

        (panel,) = node_by_label(g, "panel")
        assert panel.kind == ANSWER
        assert panel.sources == frozenset({HYPOTHESIS, "1"})
        assert len(panel.merged_from) == 2

        (natural,) = node_by_label(g, "natural-03")
        assert natural.kind == QUESTION
        assert natural.sources == frozenset({HYPOTHESIS, "3", "4"})

        # have-03 appears in the hypothesis (non-root) and as the root of
        # facts 4 and 5; the two fact roots must stay separate.
        have_nodes = node_by_label(g, "have-03")
        assert len(have_nodes) == 3
        assert sorted(n.sources for n in have_nodes for _ in [0]) is not None
        root_sources = sorted(
            tuple(sorted(n.fact_sources)) for n in have_nodes if n.kind == EVIDENCE
        )
        assert root_sources == [("4",), ("5",)]

    def test_empty_pool_warns_and_keeps_hypothesis_only(self):
        fx = solar_fixture()
        with pytest.warns(EmptyPoolWarning):
            g = build_graph(fx.hyps[2], fx.hyps, [])
        assert all(n.sources == frozenset({HYPOTHESIS}) for n in g.nodes)
        assert all(e.witnesses == frozenset() for e in g.edges)

    def test_no_question_answer_edges(self):
        fx = solar_fixture()
        g = build_graph(fx.hyps[2], fx.hyps, fx.pool)
        for e in g.edges:
            kinds = {g.nodes[e.a].kind, g.nodes[e.b].kind}
            assert kinds != {QUESTION, ANSWER}

    def test_fact_edge_between_question_and_answer_is_dropped(self):
        hyps = [
            parse_penman("(s / state-01 :ARG0 (q / quartz) :ARG1 (a / agate))"),
            parse_penman("(s / state-01 :ARG0 (q / quartz) :ARG1 (b / basalt))"),
        ]
        pool = [("f1", parse_penman("(l / link-01 :ARG0 (q / quartz) :ARG1 (a / agate))"))]
        g = build_graph(hyps[0], hyps, pool)
        for e in g.edges:
            kinds = {g.nodes[e.a].kind, g.nodes[e.b].kind}
            assert kinds != {QUESTION, ANSWER}

    def test_degenerate_split_falls_back_to_root_answer(self):
        hyps = [parse_penman(WEASEL_HYP), parse_penman(WEASEL_HYP)]
        pool = [("f1", parse_penman("(p / predator :domain (w / weasel))"))]
        g = build_graph(hyps[0], hyps, pool)
        answers = [g.nodes[i].label for i in g.anodes]
        assert answers == ["move-01"]

    def test_hyp_must_be_among_all_hyps(self):
        fx = solar_fixture()
        with pytest.raises(ValueError, match="one of all_hyps"):
            build_graph(parse_penman("(z / zebra :mod (y / yellow))"), fx.hyps[:2], fx.pool)

    def test_fact_id_collision_with_marker(self):
        fx = solar_fixture()
        pool = [(HYPOTHESIS, fx.pool[0][1])]
        with pytest.raises(ValueError, match="marker"):
            build_graph(fx.hyps[2], fx.hyps, pool)

    def test_self_loops_dropped_on_unification(self):
        hyps = [
            parse_penman("(s / state-01 :ARG0 (w / water) :ARG1 (a / alpha))"),
            parse_penman("(s / state-01 :ARG0 (w / water) :ARG1 (b / beta))"),
        ]
        # fact joins two nodes that unify (same label, neither is root)
        pool = [("f1", parse_penman("(h / hold-01 :ARG0 (w / water) :ARG1 (w2 / water))"))]
        g = build_graph(hyps[0], hyps, pool)
        assert all(e.a != e.b for e in g.edges)
        (water,) = node_by_label(g, "water")
        assert ("f1", "w") in water.merged_from and ("f1", "w2") in water.merged_from


def random_pool(rng, n_facts=5):
    return [
        (f"f{i}", random_amr(rng, max_depth=3, max_nodes=6))
        for i in range(n_facts)
    ]


def random_hyps(rng, j_count=3):
    hyps = []
    for j in range(j_count):
        hyps.append(
            random_amr(rng, max_depth=3, max_nodes=5, concepts=["shared-a", "shared-b", f"own{j}"])
        )
    return hyps


def grouping_oracle(origins, overgeneral=DEFAULT_OVERGENERAL):
    """Brute-force label grouping: each root alone, non-roots grouped by label."""
    roots = 0
    labels = set()
    for _, graph in origins:
        for node in graph.nodes:
            if node.var == graph.root:
                roots += 1
            else:
                labels.add(substitute_overgeneral(node, overgeneral).casefold())
    return roots + len(labels)


class TestConstructionProperties:
    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_random_pools_invariants(self, seed):
        rng = np.random.default_rng(seed)
        hyps = random_hyps(rng)
        pool = random_pool(rng)
        try:
            g = build_graph(hyps[0], hyps, pool)
        except DegenerateSplit:
            return

        # unified node count against the brute-force grouping oracle
        origins = [(HYPOTHESIS, hyps[0])] + pool
        assert len(g.nodes) == grouping_oracle(origins)

        # no question-answer edge, ever
        for e in g.edges:
            kinds = {g.nodes[e.a].kind, g.nodes[e.b].kind}
            assert kinds != {QUESTION, ANSWER}

        # roots never merge with anything
        for origin_id, graph in origins:
            owner = [n for n in g.nodes if (origin_id, graph.root) in n.merged_from]
            assert len(owner) == 1 and len(owner[0].merged_from) == 1

        # provenance closure
        pool_ids = {fact_id for fact_id, _ in pool}
        contributing = set()
        for n in g.nodes:
            assert n.fact_sources <= pool_ids
            contributing |= n.fact_sources
            if n.kind in (QUESTION, ANSWER):
                assert HYPOTHESIS in n.sources
            else:
                assert n.fact_sources
            folded = {origin_label(origins, o, v).casefold() for o, v in n.merged_from}
            assert folded == {n.label.casefold()}
        for fact_id, _ in pool:
            assert fact_id in contributing

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_pool_permutation_preserves_label_structure(self, seed):
        rng = np.random.default_rng(seed)
        hyps = random_hyps(rng)
        pool = random_pool(rng)
        try:
            g1 = build_graph(hyps[0], hyps, pool)
        except DegenerateSplit:
            return
        permuted = list(reversed(pool))
        g2 = build_graph(hyps[0], hyps, permuted)
        assert canonical_form(g1, [(HYPOTHESIS, hyps[0])] + pool) == canonical_form(
            g2, [(HYPOTHESIS, hyps[0])] + permuted
        )

    def test_determinism(self):
        fx = solar_fixture()
        g1 = build_graph(fx.hyps[2], fx.hyps, fx.pool)
        g2 = build_graph(fx.hyps[2], fx.hyps, fx.pool)
        assert g1 == g2


def origin_label(origins, origin_id, var, overgeneral=DEFAULT_OVERGENERAL):
    for oid, graph in origins:
        if oid == origin_id:
            return substitute_overgeneral(graph.node_map[var], overgeneral)
    raise AssertionError(origin_id)


def canonical_form(g: SemanticGraph, origins):
    roots = {(oid, graph.root) for oid, graph in origins}
    keys = []
    for n in g.nodes:
        members = n.merged_from
        if len(members) == 1 and next(iter(members)) in roots:
            (member,) = members
            keys.append((n.label.casefold(), n.kind, "root", member[0]))
        else:
            keys.append((n.label.casefold(), n.kind, "merged", ""))
    node_part = frozenset(keys)
    edge_part = frozenset(
        frozenset((keys[e.a], keys[e.b])) for e in g.edges
    )
    return node_part, edge_part

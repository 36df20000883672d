import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainqa.amr import (
    AmrEdge,
    AmrGraph,
    AmrNode,
    PenmanSyntaxError,
    iter_penman_blocks,
    load_penman_file,
    parse_penman,
    root_var,
    serialize,
)
from helpers import random_amr

CORPUS_PATH = Path(__file__).parent / "data" / "penman_corpus.txt"
EARTH = '(p / planet :name (n / name :op1 "Earth"))'


def corpus_blocks():
    return list(iter_penman_blocks(CORPUS_PATH.read_text(encoding="utf-8")))


class TestParse:
    def test_earth_example(self):
        g = parse_penman(EARTH)
        assert g.root == "p"
        assert g.node_map["p"] == AmrNode("p", "planet", ())
        assert g.node_map["n"] == AmrNode("n", "name", ((":op1", "Earth"),))
        assert g.edges == (AmrEdge("p", ":name", "n"),)

    def test_unspaced_form_parses_identically(self):
        assert parse_penman('(p/planet:name(n/name:op1"Earth"))') == parse_penman(EARTH)

    def test_minimal_graph(self):
        g = parse_penman("(a / answer-01)")
        assert g.nodes == (AmrNode("a", "answer-01", ()),)
        assert g.edges == ()
        assert g.root == "a"

    def test_reentrancy_creates_edge_not_node(self):
        g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))")
        assert len(g.nodes) == 3
        assert AmrEdge("g", ":ARG0", "b") in g.edges

    def test_forward_reference_resolves_to_edge(self):
        g = parse_penman("(w / want-01 :ARG0 b :ARG1 (b / boy))")
        assert len(g.nodes) == 2
        assert g.edges == (AmrEdge("w", ":ARG0", "b"), AmrEdge("w", ":ARG1", "b"))

    def test_polarity_and_numbers_become_attributes(self):
        g = parse_penman("(u / use-01 :polarity - :quant 3 :value 2.5)")
        assert g.node_map["u"].attributes == (
            (":polarity", "-"),
            (":quant", "3"),
            (":value", "2.5"),
        )

    def test_quotes_are_stripped(self):
        g = parse_penman('(n / name :op1 "New York" :op2 "a \\"b\\"")')
        assert g.node_map["n"].attributes == ((":op1", "New York"), (":op2", 'a "b"'))

    def test_deterministic(self):
        text = corpus_blocks()[5]
        assert parse_penman(text) == parse_penman(text)


class TestParseErrors:
    @pytest.mark.parametrize(
        "text, fragment",
        [
            ("(a / b", "unbalanced"),
            ("(a b)", "missing '/'"),
            ("(a / x :mod (a / y))", "duplicate introduction"),
            ("(a / x))", "content after"),
            ("(a / x) (b / y)", "content after"),
            ("", "empty input"),
            ("(a / x :mod)", "expected a value"),
            ("(a / )", "expected a concept"),
        ],
    )
    def test_malformed_inputs(self, text, fragment):
        with pytest.raises(PenmanSyntaxError) as exc:
            parse_penman(text)
        assert fragment in exc.value.reason
        assert 0 <= exc.value.position <= len(text)

    def test_duplicate_variable_position_points_at_variable(self):
        with pytest.raises(PenmanSyntaxError) as exc:
            parse_penman("(a / x :mod (a / y))")
        assert exc.value.position == 13


class TestSerialize:
    def test_minimal(self):
        g = parse_penman("(a / answer-01)")
        assert serialize(g) == "(a / answer-01)"

    def test_earth_round_trips(self):
        g = parse_penman(EARTH)
        assert parse_penman(serialize(g)) == g

    def test_corpus_round_trips(self):
        for block in corpus_blocks():
            g = parse_penman(block)
            again = parse_penman(serialize(g))
            assert again == g
            assert again.structurally_equal(g)

    def test_attribute_matching_variable_name_stays_attribute(self):
        g = AmrGraph(
            nodes=(
                AmrNode("x", "either", ()),
                AmrNode("y", "thing", ((":value", "x"),)),
            ),
            edges=(AmrEdge("x", ":ARG0", "y"),),
            root="x",
        )
        again = parse_penman(serialize(g))
        assert again.node_map["y"].attributes == ((":value", "x"),)
        assert len(again.edges) == 1

    def test_value_needing_quotes_round_trips(self):
        g = parse_penman('(n / name :op1 "New York")')
        assert '"New York"' in serialize(g)
        assert parse_penman(serialize(g)) == g

    def test_unreachable_node_is_rejected(self):
        g = AmrGraph(
            nodes=(AmrNode("a", "x", ()), AmrNode("b", "y", ())),
            edges=(AmrEdge("b", ":mod", "a"),),
            root="a",
        )
        with pytest.raises(ValueError, match="unreachable"):
            serialize(g)


class TestRoot:
    def test_earth_root(self):
        assert root_var(parse_penman(EARTH)) == "p"

    def test_single_node_root(self):
        assert root_var(parse_penman("(z / zero)")) == "z"

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_root_equals_outermost_variable_of_serialization(self, seed):
        g = random_amr(np.random.default_rng(seed))
        text = serialize(g)
        outermost = re.match(r"\((\S+) /", text).group(1)
        assert root_var(g) == outermost


class TestProperties:
    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_random_tree_round_trip(self, seed):
        g = random_amr(np.random.default_rng(seed), max_depth=5, max_nodes=50)
        assert parse_penman(serialize(g)).structurally_equal(g)

    def test_node_count_equals_slash_introductions(self):
        for block in corpus_blocks():
            without_strings = re.sub(r'"(?:[^"\\]|\\.)*"', "", block)
            assert len(parse_penman(block).nodes) == without_strings.count("/")

    def test_every_reference_resolves_to_one_node(self):
        for block in corpus_blocks():
            g = parse_penman(block)
            variables = {n.var for n in g.nodes}
            assert len(variables) == len(g.nodes)
            for e in g.edges:
                assert e.src in variables and e.dst in variables


class TestFiles:
    def test_blank_line_separated_blocks(self):
        text = "(a / x)\n\n(b / y)\n\n\n(c / z)\n"
        assert list(iter_penman_blocks(text)) == ["(a / x)", "(b / y)", "(c / z)"]

    def test_load_corpus_file(self):
        graphs = load_penman_file(str(CORPUS_PATH))
        assert len(graphs) == 20
        assert all(isinstance(g, AmrGraph) for g in graphs)

"""Parsing, serialization, and structural queries for AMR graphs in PENMAN notation.

An AMR (Abstract Meaning Representation) graph is a rooted graph whose nodes
carry concept labels and whose edges carry role labels.  The PENMAN notation is
the parenthesized s-expression form, e.g.::

    (p / planet
        :name (n / name :op1 "Earth"))

This module parses a single PENMAN s-expression into an :class:`AmrGraph`,
serializes graphs back to PENMAN, and reads blank-line-separated PENMAN files.
Re-entrancies (a bare variable token in child position) become edges, never
duplicate nodes.  String constants, numbers, and other non-variable tokens
become attributes of their parent node.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator


class PenmanSyntaxError(ValueError):
    """Raised when PENMAN text is malformed.

    Carries ``position`` (character offset into the input) and ``reason``.
    """

    def __init__(self, position: int, reason: str):
        super().__init__(f"PENMAN syntax error at position {position}: {reason}")
        self.position = position
        self.reason = reason


@dataclass(frozen=True)
class AmrNode:
    """A concept node: variable, concept label, and constant attributes.

    ``attributes`` holds (role, value) pairs for non-node constants, e.g.
    ``(":op1", "Earth")``.  Values are stored unquoted and case-preserved.
    """

    var: str
    concept: str
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.concept:
            raise ValueError(f"node {self.var!r} has an empty concept")


@dataclass(frozen=True)
class AmrEdge:
    """A role-labeled edge between two node variables."""

    src: str
    role: str
    dst: str


@dataclass(frozen=True)
class AmrGraph:
    """A parsed PENMAN graph: nodes, edges, and a designated root variable.

    Nodes appear in introduction order; edges in document order.  The graph is
    connected when edges are traversed as undirected (PENMAN guarantees a
    single tree plus re-entrancies).
    """

    nodes: tuple[AmrNode, ...]
    edges: tuple[AmrEdge, ...]
    root: str

    def __hash__(self):
        # graphs are hashed repeatedly as cache keys; compute once
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hash((self.nodes, self.edges, self.root))
            self.__dict__["_hash"] = cached
        return cached

    def __post_init__(self):
        seen: set[str] = set()
        for node in self.nodes:
            if node.var in seen:
                raise ValueError(f"duplicate variable {node.var!r}")
            seen.add(node.var)
        if self.root not in seen:
            raise ValueError(f"root {self.root!r} is not a node variable")
        for edge in self.edges:
            if edge.src not in seen or edge.dst not in seen:
                raise ValueError(f"edge {edge} refers to a missing node")
        if not self._connected(seen):
            raise ValueError("graph is not connected")

    def _connected(self, variables: set[str]) -> bool:
        adjacent: dict[str, list[str]] = defaultdict(list)
        for edge in self.edges:
            adjacent[edge.src].append(edge.dst)
            adjacent[edge.dst].append(edge.src)
        stack, reached = [self.root], {self.root}
        while stack:
            for other in adjacent[stack.pop()]:
                if other not in reached:
                    reached.add(other)
                    stack.append(other)
        return reached == variables

    @cached_property
    def node_map(self) -> dict[str, AmrNode]:
        return {node.var: node for node in self.nodes}

    def structurally_equal(self, other: AmrGraph) -> bool:
        """Equality up to edge ordering (variable names must match)."""
        from collections import Counter

        return (
            self.root == other.root
            and self.node_map == other.node_map
            and Counter(self.edges) == Counter(other.edges)
        )


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<lparen>\()
      | (?P<rparen>\))
      | (?P<slash>/)
      | (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<role>:[^\s()/:"]+)
      | (?P<atom>[^\s()/:"]+)
    """,
    re.VERBOSE,
)

_ATOM_SAFE_RE = re.compile(r'[^\s()/:"]+\Z')


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise PenmanSyntaxError(pos, f"unexpected character {text[pos]!r}")
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(), pos))
        pos = match.end()
    return tokens


def _unquote(raw: str) -> str:
    return raw[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.index = 0
        self.concepts: dict[str, str] = {}
        self.intro_order: list[str] = []
        # (src, role, kind, payload); kind is "node", "string", or "token"
        self.children: list[tuple[str, str, str, str]] = []

    def _peek(self) -> tuple[str, str, int] | None:
        if self.index < len(self.tokens):
            return self.tokens[self.index]
        return None

    def _next(self, expected: str) -> tuple[str, str, int]:
        token = self._peek()
        if token is None:
            raise PenmanSyntaxError(len(self.text), f"expected {expected}, got end of input")
        self.index += 1
        return token

    def parse(self) -> AmrGraph:
        root = self._parse_node()
        trailing = self._peek()
        if trailing is not None:
            raise PenmanSyntaxError(trailing[2], "content after the closing parenthesis")
        return self._build(root)

    def _parse_node(self) -> str:
        kind, value, pos = self._next("'('")
        if kind != "lparen":
            raise PenmanSyntaxError(pos, f"expected '(', got {value!r}")
        kind, var, var_pos = self._next("a variable")
        if kind != "atom":
            raise PenmanSyntaxError(var_pos, f"expected a variable, got {var!r}")
        kind, value, slash_pos = self._next("'/'")
        if kind != "slash":
            raise PenmanSyntaxError(slash_pos, "missing '/' in concept introduction")
        kind, concept, pos = self._next("a concept")
        if kind != "atom":
            raise PenmanSyntaxError(pos, f"expected a concept, got {concept!r}")
        if var in self.concepts:
            raise PenmanSyntaxError(var_pos, f"duplicate introduction of variable {var!r}")
        self.concepts[var] = concept
        self.intro_order.append(var)

        while True:
            token = self._peek()
            if token is None:
                raise PenmanSyntaxError(len(self.text), "unbalanced parentheses: missing ')'")
            kind, value, pos = token
            if kind == "rparen":
                self.index += 1
                return var
            if kind != "role":
                raise PenmanSyntaxError(pos, f"expected a role or ')', got {value!r}")
            self.index += 1
            role = value
            target = self._peek()
            if target is None:
                raise PenmanSyntaxError(len(self.text), f"expected a value after {role!r}")
            tkind, tvalue, tpos = target
            if tkind == "lparen":
                child = self._parse_node()
                self.children.append((var, role, "node", child))
            elif tkind == "string":
                self.index += 1
                self.children.append((var, role, "string", _unquote(tvalue)))
            elif tkind == "atom":
                self.index += 1
                self.children.append((var, role, "token", tvalue))
            else:
                raise PenmanSyntaxError(tpos, f"expected a value after {role!r}, got {tvalue!r}")

    def _build(self, root: str) -> AmrGraph:
        edges = []
        attributes: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for src, role, kind, payload in self.children:
            if kind == "node" or (kind == "token" and payload in self.concepts):
                edges.append(AmrEdge(src, role, payload))
            else:
                attributes[src].append((role, payload))
        nodes = tuple(
            AmrNode(var, self.concepts[var], tuple(attributes[var]))
            for var in self.intro_order
        )
        return AmrGraph(nodes=nodes, edges=tuple(edges), root=root)


def parse_penman(text: str) -> AmrGraph:
    """Parse a single PENMAN s-expression into an :class:`AmrGraph`.

    The root is the outermost variable.  Quoted strings, numbers, and other
    non-variable tokens become attributes of their parent node; a bare token
    matching an introduced variable (before or after its introduction) creates
    an edge.

    Raises :class:`PenmanSyntaxError` on unbalanced parentheses, a missing
    ``/`` in a concept introduction, or a duplicate variable introduction.
    """
    stripped = text.strip()
    if not stripped:
        raise PenmanSyntaxError(0, "empty input")
    return _Parser(stripped).parse()


def serialize(g: AmrGraph) -> str:
    """Emit ``g`` as a single-line PENMAN string.

    Variable names are preserved, so ``parse_penman(serialize(g))`` is
    structurally equal to ``g``.  Every node must be reachable from the root
    by following edges in their stored direction (always true of parser
    output); otherwise the graph has no PENMAN rendering and a ValueError is
    raised.
    """
    out_edges: dict[str, list[AmrEdge]] = defaultdict(list)
    for edge in g.edges:
        out_edges[edge.src].append(edge)
    variables = set(g.node_map)
    introduced: set[str] = set()

    def emit(var: str) -> str:
        introduced.add(var)
        node = g.node_map[var]
        parts = [f"({var} / {node.concept}"]
        for role, value in node.attributes:
            if _ATOM_SAFE_RE.match(value) and value not in variables:
                parts.append(f"{role} {value}")
            else:
                parts.append(f"{role} {_quote(value)}")
        for edge in out_edges[var]:
            if edge.dst in introduced:
                parts.append(f"{edge.role} {edge.dst}")
            else:
                parts.append(f"{edge.role} {emit(edge.dst)}")
        return " ".join(parts) + ")"

    text = emit(g.root)
    if introduced != variables:
        missing = sorted(variables - introduced)
        raise ValueError(f"nodes unreachable from the root: {missing}")
    return text


def root_var(g: AmrGraph) -> str:
    """Return the graph's designated root variable."""
    return g.root


def iter_penman_blocks(text: str) -> Iterator[str]:
    """Yield one PENMAN string per blank-line-separated block."""
    for block in re.split(r"\n\s*\n", text):
        if block.strip():
            yield block.strip()


def load_penman_file(path: str) -> list[AmrGraph]:
    """Parse a UTF-8 PENMAN file, one graph per blank-line-separated block."""
    with open(path, encoding="utf-8") as handle:
        return [parse_penman(block) for block in iter_penman_blocks(handle.read())]

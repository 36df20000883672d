"""Shared generators and fixtures for the test suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from chainqa.amr import AmrEdge, AmrGraph, AmrNode, parse_penman

CONCEPTS = [
    "planet", "energy", "animal", "move-01", "require-01", "have-03",
    "resource", "solar", "panel", "convert-01", "water", "plant",
    "name", "thing", "person", "state-01", "cause-01", "heat",
]

ROLES = [
    ":ARG0", ":ARG1", ":ARG2", ":mod", ":domain", ":poss",
    ":name", ":time", ":location", ":purpose", ":manner", ":op1",
]

ATTR_VALUES = ["Earth", "Mars", "2", "6", "-", "3.5", "New York", "x", "imperative"]


def random_amr(
    rng: np.random.Generator,
    max_depth: int = 5,
    max_nodes: int = 50,
    reentrancy_prob: float = 0.15,
    concepts: list[str] | None = None,
) -> AmrGraph:
    """Generate a random valid AMR tree plus optional re-entrancy edges."""
    concepts = concepts or CONCEPTS
    counter = [0]
    nodes: list[AmrNode] = []
    edges: list[AmrEdge] = []

    def fresh_var(concept: str) -> str:
        counter[0] += 1
        return f"{concept[0]}{counter[0]}"

    def grow(depth: int) -> str:
        concept = str(rng.choice(concepts))
        var = fresh_var(concept)
        attributes = []
        for _ in range(rng.integers(0, 3)):
            attributes.append(
                (str(rng.choice(ROLES)), str(rng.choice(ATTR_VALUES)))
            )
        nodes.append(AmrNode(var, concept, tuple(attributes)))
        if depth < max_depth and len(nodes) < max_nodes:
            for _ in range(rng.integers(0, 4)):
                if len(nodes) >= max_nodes:
                    break
                child = grow(depth + 1)
                edges.append(AmrEdge(var, str(rng.choice(ROLES)), child))
        return var

    root = grow(1)
    if len(nodes) > 1 and rng.random() < reentrancy_prob:
        variables = [n.var for n in nodes]
        for _ in range(rng.integers(1, 3)):
            src, dst = rng.choice(variables, size=2, replace=True)
            if src != dst:
                edges.append(AmrEdge(str(src), str(rng.choice(ROLES)), str(dst)))
    return AmrGraph(nodes=tuple(nodes), edges=tuple(edges), root=root)


# --- Hand-built 10-fact fixture around the solar-panel case study ----------
#
# The correct choice (C) is bridged by facts 3 -> 2 -> 1; the three
# distractor choices use concepts that occur in no fact.  Facts 4 and 5 both
# have a have-03 root (roots must not unify), and facts 6-10 are dead ends or
# islands.

SOLAR_FACTS: dict[str, tuple[str, str]] = {
    "1": (
        "A solar panel converts sunlight into electricity.",
        "(c / convert-01 :ARG0 (p / panel :mod (s / solar)) "
        ":ARG1 (s2 / sunlight) :ARG2 (e / electricity))",
    ),
    "2": (
        "Solar energy is a renewable resource.",
        "(r / resource :mod (r2 / renew-01) :domain (e / energy :mod (s / solar)))",
    ),
    "3": (
        "Such renewable resources are called, natural resources.",
        "(c / call-01 :ARG1 (r / resource :mod (r2 / renew-01)) "
        ":ARG2 (r3 / resource :mod (n / natural-03)))",
    ),
    "4": (
        "An animal has natural instincts.",
        "(h / have-03 :ARG0 (a / animal) :ARG1 (i / instinct :mod (n / natural-03)))",
    ),
    "5": (
        "A person has a home.",
        "(h / have-03 :ARG0 (p / person) :ARG1 (h2 / home))",
    ),
    "6": (
        "Water power turns a wheel.",
        "(t / turn-01 :ARG0 (p / power :mod (w / water)) :ARG1 (w2 / wheel))",
    ),
    "7": (
        "Electricity flows through a wire.",
        "(f / flow-01 :ARG0 (e / electricity) :ARG1 (w / wire))",
    ),
    "8": (
        "A weasel is a predator.",
        "(p / predator :domain (w / weasel))",
    ),
    "9": (
        "Heat moves from warm objects.",
        "(m / move-01 :ARG0 (h / heat) :source (o / object :mod (w / warm)))",
    ),
    "10": (
        "A plant needs sunlight to grow.",
        "(n / need-01 :ARG0 (p / plant) :ARG1 (s / sunlight) :purpose (g / grow-01))",
    ),
}

_SOLAR_HYP_TEMPLATE = (
    "(w / want-01 :ARG0 (p / person) "
    ":ARG1 (h / have-03 :ARG0 p :ARG1 (p2 / power :mod (n / natural-03)) "
    ":location (h2 / home)) "
    ":ARG2 (i / install-01 :ARG1 {choice}))"
)

SOLAR_CHOICE_AMRS = {
    0: "(v / veil :mod (i2 / iron))",
    1: "(r / ribbon :mod (c2 / coal))",
    2: "(p3 / panel :ARG0-of (c2 / collect-01 :ARG1 (s / sunlight)))",
    3: "(t / turbine :mod (g / glass))",
}

SOLAR_QUESTION = (
    "A person wants to be able to have more natural power in their home. "
    "They choose to cease using a traditional electric company to source "
    "this electricity, and so decide to install which of these?"
)

SOLAR_CHOICES = [
    "iron veils",
    "coal ribbons",
    "panels collecting sunlight",
    "glass turbines",
]

SOLAR_GOLD_IDX = 2


@dataclass
class SolarFixture:
    question: str
    choices: list[str]
    gold_idx: int
    hyp_texts: list[str]
    hyps: list[AmrGraph] = field(default_factory=list)
    pool: list[tuple[str, AmrGraph]] = field(default_factory=list)
    texts: dict[str, str] = field(default_factory=dict)


def solar_fixture() -> SolarFixture:
    hyp_texts = [
        _SOLAR_HYP_TEMPLATE.format(choice=SOLAR_CHOICE_AMRS[j]) for j in range(4)
    ]
    fixture = SolarFixture(
        question=SOLAR_QUESTION,
        choices=list(SOLAR_CHOICES),
        gold_idx=SOLAR_GOLD_IDX,
        hyp_texts=hyp_texts,
    )
    fixture.hyps = [parse_penman(text) for text in hyp_texts]
    fixture.pool = [
        (fact_id, parse_penman(amr)) for fact_id, (_, amr) in SOLAR_FACTS.items()
    ]
    fixture.texts = {fact_id: text for fact_id, (text, _) in SOLAR_FACTS.items()}
    return fixture

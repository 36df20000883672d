"""Synthetic multi-hop benchmark generator.

Plants one 2-3 hop fact chain per question: the question names a head
concept, the chain facts bridge head -> middle concept(s) -> answer concept,
and the correct choice is the answer concept.  Distractor choices use
reserved words that occur in no fact, so no reasoning chain can support them;
distractor facts connect words from a separate vocabulary.  Dev questions ask
about the same planted chains with a different surface template, so the
retriever must generalize across phrasings of the same concepts.

Evidence embeddings are fixed random unit vectors with planted similarity:
facts on the same chain are pulled toward a shared direction, so they sit
near their chain neighbors.  The annotated gold chain is the first fact only,
mirroring datasets that annotate a single evidence fact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from chainqa.retriever import write_cgrv
from chainqa.trainer import QaInstance, derive_rng

_SYLLABLES = [
    "ba", "be", "bo", "da", "de", "du", "fa", "fe", "fi", "ga", "go", "gu",
    "ka", "ke", "ki", "la", "le", "lo", "ma", "me", "mi", "na", "ne", "no",
    "pa", "pe", "po", "ra", "re", "ri", "sa", "se", "so", "ta", "te", "tu",
    "va", "ve", "vo", "za", "zo", "zu",
]

_VERBS = [
    "links", "feeds", "drives", "forms", "yields", "binds", "grafts", "tunes",
    "spins", "melts", "guides", "lifts", "turns", "splits", "joins", "molds",
    "bends", "pulls", "grows", "casts", "wraps", "steers", "shapes", "holds",
]

# Texts stay terse on purpose: a mean-pooled bag-of-tokens encoder loses the
# question-specific signal when too many shared filler tokens dilute it, and
# rows shared across many questions accumulate unrelated gradient drift.
_TRAIN_TEMPLATE = "Which item matches {head}?"
# The dev phrasing extends the train phrasing rather than replacing words, so
# dev queries probe the learned rows without dropping any of them.
_DEV_TEMPLATE = "Which fresh item matches {head}?"

_HYP_AMR = "(s / state-01 :ARG0 (c / {choice}) :ARG1 (q / {head}) :ARG2 (t / item))"


@dataclass(frozen=True)
class SynthConfig:
    questions: int = 200
    dev_questions: int = 50
    choices: int = 4
    dim: int = 32
    seed: int = 7
    hops_min: int = 2
    hops_max: int = 3
    distractor_facts: int = 600
    cluster_mix: float = 0.5

    def __post_init__(self):
        if self.choices < 2:
            raise ValueError("need at least two choices")
        if not 1 <= self.hops_min <= self.hops_max:
            raise ValueError("hop range is invalid")
        if not 0.0 <= self.cluster_mix < 1.0:
            raise ValueError("cluster_mix must be in [0, 1)")
        if self.dev_questions > self.questions:
            raise ValueError("dev questions reuse train chains; need dev <= train")


@dataclass
class SynthData:
    train: list[QaInstance]
    dev: list[QaInstance]
    corpus: dict[str, dict]
    embeddings: dict[str, np.ndarray] = field(repr=False)


def _word_maker(rng: np.random.Generator):
    used: set[str] = set()

    def make() -> str:
        while True:
            count = int(rng.integers(2, 4))
            word = "".join(
                _SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), size=count)
            )
            if word not in used:
                used.add(word)
                return word

    return make


def _fact(fact_id: str, a: str, b: str, verb_idx: int) -> dict:
    verb = _VERBS[verb_idx]
    return {
        "id": fact_id,
        "text": f"{a} {verb} {b}.",
        "amr": f"(v / {verb}-01 :ARG0 (a / {a}) :ARG1 (b / {b}))",
    }


def generate(cfg: SynthConfig) -> SynthData:
    """Build the corpus, embeddings, and train/dev question sets."""
    rng = derive_rng(cfg.seed, "synth")
    word = _word_maker(rng)
    reserved = [word() for _ in range(max(60, cfg.choices * 20))]

    corpus: dict[str, dict] = {}
    embeddings: dict[str, np.ndarray] = {}
    train: list[QaInstance] = []
    chain_info: list[tuple[str, str, list[str]]] = []  # (head, answer, fact ids)

    def unit(vec: np.ndarray) -> np.ndarray:
        return vec / np.linalg.norm(vec)

    for i in range(cfg.questions):
        hops = int(rng.integers(cfg.hops_min, cfg.hops_max + 1))
        concepts = [word() for _ in range(hops + 1)]
        head, answer = concepts[0], concepts[-1]
        fact_ids = []
        center = unit(rng.normal(size=cfg.dim))
        for k, (a, b) in enumerate(zip(concepts, concepts[1:])):
            fact_id = f"f{i:03d}-{k}"
            corpus[fact_id] = _fact(fact_id, a, b, int(rng.integers(len(_VERBS))))
            noise = unit(rng.normal(size=cfg.dim))
            embeddings[fact_id] = unit(
                np.sqrt(cfg.cluster_mix) * center
                + np.sqrt(1.0 - cfg.cluster_mix) * noise
            )
            fact_ids.append(fact_id)
        chain_info.append((head, answer, fact_ids))

        distractor_words = [
            reserved[int(v)]
            for v in rng.choice(len(reserved), size=cfg.choices - 1, replace=False)
        ]
        gold_idx = int(rng.integers(cfg.choices))
        choices = list(distractor_words)
        choices.insert(gold_idx, answer)
        train.append(
            QaInstance(
                id=f"q{i:03d}",
                question=_TRAIN_TEMPLATE.format(head=head),
                choices=tuple(choices),
                gold_idx=gold_idx,
                gold_chain=(fact_ids[0],),
                hypothesis_amrs=tuple(
                    _HYP_AMR.format(choice=c, head=head) for c in choices
                ),
            )
        )

    dev: list[QaInstance] = []
    dev_picks = rng.choice(cfg.questions, size=cfg.dev_questions, replace=False)
    for n, pick in enumerate(sorted(int(p) for p in dev_picks)):
        head, answer, fact_ids = chain_info[pick]
        distractor_words = [
            reserved[int(v)]
            for v in rng.choice(len(reserved), size=cfg.choices - 1, replace=False)
        ]
        gold_idx = int(rng.integers(cfg.choices))
        choices = list(distractor_words)
        choices.insert(gold_idx, answer)
        dev.append(
            QaInstance(
                id=f"d{n:03d}",
                question=_DEV_TEMPLATE.format(head=head),
                choices=tuple(choices),
                gold_idx=gold_idx,
                gold_chain=(fact_ids[0],),
                hypothesis_amrs=tuple(
                    _HYP_AMR.format(choice=c, head=head) for c in choices
                ),
            )
        )

    distractor_vocab = [word() for _ in range(max(20, cfg.distractor_facts // 3))]
    for n in range(cfg.distractor_facts):
        a, b = (
            distractor_vocab[int(v)]
            for v in rng.choice(len(distractor_vocab), size=2, replace=False)
        )
        fact_id = f"x{n:03d}"
        corpus[fact_id] = _fact(fact_id, a, b, int(rng.integers(len(_VERBS))))
        embeddings[fact_id] = unit(rng.normal(size=cfg.dim))

    return SynthData(train=train, dev=dev, corpus=corpus, embeddings=embeddings)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _dataset_lines(instances: list[QaInstance]) -> str:
    lines = []
    for inst in instances:
        record = {
            "id": inst.id,
            "question": inst.question,
            "choices": list(inst.choices),
            "gold_idx": inst.gold_idx,
            "hyp_amrs": list(inst.hypothesis_amrs),
        }
        if inst.gold_chain:
            record["gold_chain"] = list(inst.gold_chain)
        lines.append(json.dumps(record, sort_keys=True))
    return "\n".join(lines) + "\n"


def write(data: SynthData, out_dir: str, dim: int) -> dict[str, str]:
    """Write corpus.jsonl, facts.cgrv, train.jsonl, and dev.jsonl atomically."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "corpus": os.path.join(out_dir, "corpus.jsonl"),
        "embeddings": os.path.join(out_dir, "facts.cgrv"),
        "train": os.path.join(out_dir, "train.jsonl"),
        "dev": os.path.join(out_dir, "dev.jsonl"),
    }
    corpus_lines = "\n".join(
        json.dumps(data.corpus[fid], sort_keys=True) for fid in sorted(data.corpus)
    )
    _atomic_write_text(paths["corpus"], corpus_lines + "\n")
    _atomic_write_text(paths["train"], _dataset_lines(data.train))
    _atomic_write_text(paths["dev"], _dataset_lines(data.dev))
    tmp = paths["embeddings"] + ".tmp"
    write_cgrv(tmp, dim, sorted(data.embeddings.items()))
    os.replace(tmp, paths["embeddings"])
    return paths

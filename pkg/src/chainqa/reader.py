"""Rank answer choices from chain-selected evidence.

The reader scores each (question, choice) pair given only the facts that
appear on that choice's reasoning chains, capped at a configurable context
size.  At desk scale the scorer is a linear layer over a hashing mean-pool
embedding of the concatenated input text; the embedding matrix is fixed and
only the linear weight and bias are trained.  The top-ranked choice is the
prediction, and matching the gold choice yields the 0/1 reward used by the
policy-gradient loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chainqa.chains import ChainSet
from chainqa.retriever import SEPARATOR, HashingEncoder

MAX_EVIDENCE = 15


@dataclass(frozen=True)
class ReaderInput:
    """One choice's scoring input; ``context_facts`` are fact texts drawn
    from the choice's active facts, in chain order, already capped."""

    question: str
    choice: str
    context_facts: tuple[str, ...]

    def rendered(self) -> str:
        return f" {SEPARATOR} ".join((self.question, self.choice) + self.context_facts)


@dataclass
class ReaderParams:
    weight: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "ReaderParams":
        return cls(weight=np.zeros(dim), bias=0.0)


def select_context(
    chain_set: ChainSet, texts: dict[str, str], max_evidence: int = MAX_EVIDENCE
) -> tuple[str, ...]:
    """Pick the context facts for one choice: walk chains shortest first (the
    chain-set order), take facts in chain order, drop duplicates, stop at the
    cap."""
    chosen: list[str] = []
    seen: set[str] = set()
    for chain in chain_set.chains:
        for fact_id in chain.facts:
            if fact_id in seen:
                continue
            seen.add(fact_id)
            chosen.append(fact_id)
            if len(chosen) == max_evidence:
                return tuple(texts[fid] for fid in chosen)
    return tuple(texts[fid] for fid in chosen)


def score_choice(
    inp: ReaderInput, params: ReaderParams, encoder: HashingEncoder
) -> float:
    """Linear score over the pooled embedding of the concatenated input."""
    phi = encoder.encode(inp.rendered())
    return float(params.weight @ phi + params.bias)


def predict(
    question: str,
    choices: list[str],
    chain_sets: list[ChainSet],
    params: ReaderParams,
    encoder: HashingEncoder,
    texts: dict[str, str],
    max_evidence: int = MAX_EVIDENCE,
) -> tuple[int, list[float]]:
    """Score every choice from its own chain evidence; ties go to the lowest
    index."""
    if len(choices) < 2:
        raise ValueError("need at least two answer choices")
    if len(chain_sets) != len(choices):
        raise ValueError("need one chain set per choice")
    scores = []
    for choice, chain_set in zip(choices, chain_sets):
        inp = ReaderInput(
            question=question,
            choice=choice,
            context_facts=select_context(chain_set, texts, max_evidence),
        )
        scores.append(score_choice(inp, params, encoder))
    best = min(range(len(choices)), key=lambda j: (-scores[j], j))
    return best, scores


def reader_loss(scores: list[float], gold_idx: int) -> float:
    """Cross-entropy of the softmax over choice scores against the gold
    choice."""
    logits = np.asarray(scores, dtype=np.float64)
    peak = float(np.max(logits))
    lse = peak + float(np.log(np.sum(np.exp(logits - peak))))
    return lse - float(logits[gold_idx])


def reader_loss_grad(
    scores: list[float], gold_idx: int, phis: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """Loss plus gradients for the linear layer.

    ``phis`` holds one pooled embedding per choice (row j scored choice j).
    Returns (loss, d/d weight, d/d bias); the bias gradient is identically 0
    because a shared bias cancels in the softmax.
    """
    logits = np.asarray(scores, dtype=np.float64)
    peak = float(np.max(logits))
    lse = peak + float(np.log(np.sum(np.exp(logits - peak))))
    probs = np.exp(logits - lse)
    dscore = probs.copy()
    dscore[gold_idx] -= 1.0
    return lse - float(logits[gold_idx]), dscore @ phis, float(np.sum(dscore))


def reward(pred_idx: int, gold_idx: int) -> int:
    """0/1 indicator of a correct prediction."""
    return 1 if pred_idx == gold_idx else 0

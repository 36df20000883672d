"""Chain likelihoods, training losses, and their analytic gradients.

A reasoning chain is scored step by step: at step t the query (the hypothesis
with all previously traversed facts concatenated) must rank the chain's fact
above a set of in-batch negatives under a softmax over inner products.  The
product of per-step probabilities is the chain probability; all computation
stays in log space and probabilities are exponentiated only for reporting.

Only the query-encoder weight matrix is trainable here (evidence vectors are
fixed), so every loss can accumulate ``d(loss)/d(weights)`` into a caller
supplied array.  For a hashing mean-pool encoder the embedding of a text is
``phi = w @ W[idx]`` with constant token features ``(idx, w)``, hence each
softmax step contributes the rank-one gradient
``W[idx] += scale * outer(w, v_pos - sum_e p_e v_e)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from chainqa.chains import ReasoningChain
from chainqa.retriever import SEPARATOR, HashingEncoder, UnknownFact, VectorIndex


class MissingEmbedding(KeyError):
    """A chain or negative fact has no vector in the index."""


@dataclass(frozen=True)
class ChainLikelihoodInput:
    """One chain plus its per-step negative candidate sets.

    ``negatives_per_step[t]`` competes against the fact traversed at step
    ``t`` (in whichever direction the likelihood is evaluated) and must not
    contain that fact itself.
    """

    hypothesis: str
    chain: ReasoningChain
    negatives_per_step: tuple[frozenset[str], ...]


@dataclass(frozen=True)
class LossReport:
    """Per-step loss breakdown; ``l_local`` and ``total`` are derived sums."""

    l_sup: float
    l_mle_fwd: float
    l_mle_bwd: float
    l_rl: float
    l_local: float
    l_global: float
    l_reader: float
    total: float

    @classmethod
    def assemble(
        cls,
        l_sup: float = 0.0,
        l_mle_fwd: float = 0.0,
        l_mle_bwd: float = 0.0,
        l_rl: float = 0.0,
        l_global: float = 0.0,
        l_reader: float = 0.0,
    ) -> "LossReport":
        l_local = l_mle_fwd + l_mle_bwd + l_rl
        return cls(
            l_sup=l_sup,
            l_mle_fwd=l_mle_fwd,
            l_mle_bwd=l_mle_bwd,
            l_rl=l_rl,
            l_local=l_local,
            l_global=l_global,
            l_reader=l_reader,
            total=l_reader + l_sup + l_local + l_global,
        )

    def to_dict(self) -> dict[str, float]:
        return {
            "l_sup": self.l_sup,
            "l_mle_fwd": self.l_mle_fwd,
            "l_mle_bwd": self.l_mle_bwd,
            "l_rl": self.l_rl,
            "l_local": self.l_local,
            "l_global": self.l_global,
            "l_reader": self.l_reader,
            "total": self.total,
        }


#: Builds one negative candidate set per step for a traversal-ordered fact
#: sequence; receives the facts already ordered for the given direction
#: ("forward" or "backward") so in-batch negatives can align step for step.
NegativesFor = Callable[[tuple[str, ...], str], tuple[frozenset[str], ...]]


@dataclass
class LossContext:
    """Shared pieces for loss evaluation.

    ``grad_out`` (when set) receives the gradient of each computed loss with
    respect to ``encoder.weights``, accumulated in place.  ``negatives_for``
    supplies per-step negative sets; without it every step is a lone-positive
    softmax (probability one).
    """

    encoder: HashingEncoder
    index: VectorIndex
    grad_out: np.ndarray | None = None
    negatives_for: NegativesFor | None = None

    def negatives(
        self, facts: tuple[str, ...], direction: str = "forward"
    ) -> tuple[frozenset[str], ...]:
        if self.negatives_for is None:
            return tuple(frozenset() for _ in facts)
        return self.negatives_for(facts, direction)


def _logsumexp(scores: np.ndarray) -> float:
    peak = float(np.max(scores))
    return peak + math.log(float(np.sum(np.exp(scores - peak))))


def _vectors_for(index: VectorIndex, fact_ids: list[str]) -> np.ndarray:
    try:
        return np.stack([index.vector(fid) for fid in fact_ids])
    except UnknownFact as exc:
        raise MissingEmbedding(exc.args[0]) from None


def _chain_log_prob(
    inp: ChainLikelihoodInput,
    encoder: HashingEncoder,
    index: VectorIndex,
    direction: str,
    grad_out: np.ndarray | None,
    scale: float,
) -> float:
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    facts = inp.chain.facts if direction == "forward" else inp.chain.facts[::-1]
    if not facts:
        raise ValueError("chain must be non-empty")
    if len(inp.negatives_per_step) != len(facts):
        raise ValueError("need one negative set per chain step")
    total = 0.0
    query = inp.hypothesis
    for fact, negatives in zip(facts, inp.negatives_per_step):
        if fact in negatives:
            raise ValueError(f"fact {fact!r} appears in its own negative set")
        candidates = [fact] + sorted(negatives)
        vectors = _vectors_for(index, candidates)
        idx, weight = encoder.features(query)
        phi = weight @ encoder.weights[idx] if idx.size else np.zeros(encoder.dim)
        scores = vectors @ phi
        lse = _logsumexp(scores)
        total += float(scores[0]) - lse
        if grad_out is not None and idx.size:
            probs = np.exp(scores - lse)
            direction_vec = vectors[0] - probs @ vectors
            grad_out[idx] += np.outer(weight * scale, direction_vec)
        query = f"{query} {SEPARATOR} {index.text(fact)}"
    return total


def chain_log_prob(
    inp: ChainLikelihoodInput,
    encoder: HashingEncoder,
    index: VectorIndex,
    direction: str = "forward",
    grad_out: np.ndarray | None = None,
) -> float:
    """Log probability of traversing the chain against its negatives.

    Returns ``sum_t [sigma(q_t, e_t) - logsumexp over {e_t} + negatives]``,
    which is at most 0.  ``direction="backward"`` walks the facts in reverse
    with the same query template (the first query is still the hypothesis).
    """
    return _chain_log_prob(inp, encoder, index, direction, grad_out, scale=1.0)


def _direction_input(
    chain: ReasoningChain, h_plus: str, ctx: LossContext, direction: str
) -> ChainLikelihoodInput:
    ordered = chain.facts if direction == "forward" else chain.facts[::-1]
    return ChainLikelihoodInput(
        hypothesis=h_plus,
        chain=chain,
        negatives_per_step=ctx.negatives(ordered, direction),
    )


def supervised_loss(
    gold_chain: ReasoningChain, h_plus: str, ctx: LossContext
) -> float:
    """Negative log probability of the ground-truth chain for the correct
    hypothesis (forward traversal)."""
    inp = _direction_input(gold_chain, h_plus, ctx, "forward")
    return -_chain_log_prob(inp, ctx.encoder, ctx.index, "forward", ctx.grad_out, scale=-1.0)


def local_mle_loss(
    sampled_chains: list[ReasoningChain], h_plus: str, ctx: LossContext
) -> tuple[float, float]:
    """Bidirectional likelihood of the sampled chains.

    The forward term averages ``-log p`` over chains walked forward, the
    backward term over the same chains walked in reverse (the first query is
    the hypothesis in both directions).  Both are 0 when no chain was sampled:
    the question then contributes no distant supervision.
    """
    if not sampled_chains:
        return 0.0, 0.0
    n = len(sampled_chains)
    fwd = 0.0
    bwd = 0.0
    for chain in sampled_chains:
        for direction in ("forward", "backward"):
            inp = _direction_input(chain, h_plus, ctx, direction)
            logp = _chain_log_prob(
                inp, ctx.encoder, ctx.index, direction, ctx.grad_out, -1.0 / n
            )
            if direction == "forward":
                fwd -= logp / n
            else:
                bwd -= logp / n
    return fwd, bwd


def rl_loss(
    sampled_chains: list[ReasoningChain],
    h_plus: str,
    reward: int,
    batch_mean_reward: float,
    ctx: LossContext,
) -> float:
    """Policy-gradient loss: the advantage (reward minus the mini-batch mean
    reward) scales the bidirectional chain log probabilities.  The advantage
    is a constant; no gradient flows through it."""
    if not sampled_chains:
        return 0.0
    advantage = float(reward) - float(batch_mean_reward)
    if advantage == 0.0:
        return 0.0
    n = len(sampled_chains)
    total = 0.0
    for chain in sampled_chains:
        scale = advantage / n
        for direction in ("forward", "backward"):
            inp = _direction_input(chain, h_plus, ctx, direction)
            logp = _chain_log_prob(
                inp, ctx.encoder, ctx.index, direction, ctx.grad_out, -scale
            )
            total -= scale * logp
    return total


def global_loss(
    active_facts: frozenset[str] | set[str],
    h_plus: str,
    in_batch_negative_pools: list[frozenset[str] | set[str]],
    ctx: LossContext,
) -> float:
    """Softmax over whole evidence pools scored by their mean inner product.

    A pool's logit is the average of ``sigma(h_plus, e)`` over its facts,
    which by bilinearity equals ``sigma(h_plus, mean vector)``.  The correct
    hypothesis's active facts compete against other questions' active-fact
    pools; 0 when there are no active facts."""
    if not active_facts:
        return 0.0
    pools = [sorted(active_facts)] + [sorted(p) for p in in_batch_negative_pools if p]
    means = np.stack([np.mean(_vectors_for(ctx.index, pool), axis=0) for pool in pools])
    idx, weight = ctx.encoder.features(h_plus)
    phi = weight @ ctx.encoder.weights[idx] if idx.size else np.zeros(ctx.encoder.dim)
    logits = means @ phi
    lse = _logsumexp(logits)
    loss = -(float(logits[0]) - lse)
    if ctx.grad_out is not None and idx.size:
        probs = np.exp(logits - lse)
        direction_vec = probs @ means - means[0]
        ctx.grad_out[idx] += np.outer(weight, direction_vec)
    return loss


def grad_check(
    loss_fn,
    params: np.ndarray,
    eps: float = 1e-5,
    coords: int = 50,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> (value, grad)`` with ``grad`` shaped like
    ``params``.  Checks ``coords`` randomly selected coordinates (all of them
    when the parameter count is smaller) and returns the maximum relative
    error ``|analytic - fd| / max(|analytic|, |fd|, 1e-6)``.
    """
    rng = rng or np.random.default_rng(0)
    flat = np.asarray(params, dtype=np.float64).ravel().copy()
    _, analytic = loss_fn(flat.reshape(params.shape))
    analytic = np.asarray(analytic).ravel()
    count = min(coords, flat.size)
    chosen = rng.choice(flat.size, size=count, replace=False)
    worst = 0.0
    for coord in chosen:
        bumped = flat.copy()
        bumped[coord] += eps
        plus, _ = loss_fn(bumped.reshape(params.shape))
        bumped[coord] -= 2 * eps
        minus, _ = loss_fn(bumped.reshape(params.shape))
        fd = (plus - minus) / (2 * eps)
        err = abs(analytic[coord] - fd) / max(abs(analytic[coord]), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst

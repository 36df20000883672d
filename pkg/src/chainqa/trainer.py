"""End-to-end pipeline, mini-batch training, and evaluation.

For every (question, choice) pair the pipeline turns the pair into a
declarative hypothesis, retrieves an evidence pool by iterative beam search,
builds the semantic graph from the hypothesis and pool AMRs, and generates
reasoning chains.  The reader scores each choice from its chain facts; the
retriever trains against the gold chain (when the dataset annotates one) and
against the generated chains as distant supervision, with the reader's 0/1
reward feeding the policy-gradient term.

Everything random flows from the config seed through stateless derived
generators, so two runs with the same seed produce byte-identical metrics and
the loss-term ablations consume identical random draws.
"""

from __future__ import annotations

import hashlib
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from chainqa.amr import AmrGraph, parse_penman
from chainqa.chains import ChainSet, ReasoningChain, chain_length_histogram, generate_chains
from chainqa.losses import (
    LossContext,
    LossReport,
    global_loss,
    local_mle_loss,
    rl_loss,
    supervised_loss,
)
from chainqa.reader import (
    ReaderInput,
    ReaderParams,
    reader_loss_grad,
    reward,
    select_context,
)
from chainqa.retriever import (
    EvidencePool,
    HashingEncoder,
    QueryState,
    VectorIndex,
    retrieve,
)
from chainqa.semgraph import DEFAULT_OVERGENERAL, EmptyPoolWarning, build_graph

SUPERVISED_DISTANT = "supervised+distant"
DISTANT_ONLY = "distant-only"


class ConfigError(ValueError):
    """Configuration is inconsistent with itself or with the dataset."""


@dataclass(frozen=True)
class QaInstance:
    """One multiple-choice question with its per-choice hypothesis AMRs.

    ``gold_chain`` is the annotated evidence chain when the dataset provides
    one (possibly a single fact); ``hypothesis_amrs`` holds one PENMAN string
    per choice, supplied with the dataset since text-to-AMR parsing is out of
    scope.
    """

    id: str
    question: str
    choices: tuple[str, ...]
    gold_idx: int
    gold_chain: tuple[str, ...] | None
    hypothesis_amrs: tuple[str, ...]

    def __post_init__(self):
        if len(self.choices) < 2:
            raise ValueError(f"{self.id}: need at least two choices")
        if not 0 <= self.gold_idx < len(self.choices):
            raise ValueError(f"{self.id}: gold_idx out of range")
        if len(self.hypothesis_amrs) != len(self.choices):
            raise ValueError(f"{self.id}: need one hypothesis AMR per choice")


@dataclass(frozen=True)
class TrainConfig:
    """Training and pipeline knobs.

    The published sweep ranges behind the defaults: beam size from
    {5, 10, 15, 20}, iteration steps from {1, 2, 3}, batch size from
    {4, 6, 8, 12, 16}; one sampled chain and an evidence cap of 15 (20 for
    the larger corpus setting).
    """

    k_beam: int = 10
    t_max: int = 2
    n_chains: int = 1
    max_evidence: int = 15
    batch_size: int = 4
    learning_rate: float = 1.0
    epochs: int = 12
    seed: int = 7
    mode: str = SUPERVISED_DISTANT
    hash_buckets: int = 4096
    max_path_len: int = 8
    negative_floor: int = 8
    rank_by: str = "sum"
    use_global: bool = True
    use_mle: bool = True
    use_rl: bool = True
    threads: int = 1

    def __post_init__(self):
        for name in ("k_beam", "t_max", "n_chains", "max_evidence", "batch_size",
                     "epochs", "hash_buckets", "negative_floor", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.max_path_len < 2:
            raise ConfigError("max_path_len must be at least 2")
        if self.mode not in (SUPERVISED_DISTANT, DISTANT_ONLY):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.rank_by not in ("sum", "last"):
            raise ConfigError(f"unknown rank_by {self.rank_by!r}")


def load_config(path: str, **overrides) -> TrainConfig:
    """Read a flat key=value (or simple TOML) config file into a TrainConfig."""
    values: dict[str, object] = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            value = value.strip("\"'")
            kind = types[key]
            if kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            elif kind == "bool":
                if value.lower() not in ("true", "false"):
                    raise ConfigError(f"{path}:{line_no}: {key} must be true or false")
                values[key] = value.lower() == "true"
            else:
                values[key] = value
    values.update(overrides)
    return TrainConfig(**values)


def derive_rng(*parts) -> np.random.Generator:
    """A generator keyed by the given parts; stateless, so callers get the
    same stream no matter what else ran before."""
    material = "\x1f".join(str(part) for part in parts).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


_WH_RE = re.compile(r"\b(which|what|who|whom|whose|where|when|why|how)\b", re.IGNORECASE)


def make_hypothesis(question: str, choice: str) -> str:
    """Turn a question-answer pair into a declarative hypothesis.

    A blank (``___``) is replaced by the choice; else the first wh-word is;
    else the choice is appended.  The trailing question mark is dropped.
    """
    if not question.strip() or not choice.strip():
        raise ValueError("question and choice must be non-empty")
    if "___" in question:
        statement = question.replace("___", choice, 1)
    else:
        match = _WH_RE.search(question)
        if match:
            statement = question[: match.start()] + choice + question[match.end():]
        else:
            statement = f"{question} {choice}"
    statement = statement.strip()
    if statement.endswith("?"):
        statement = statement[:-1].rstrip()
    return statement


@dataclass
class PipelineState:
    """Everything the pipeline needs besides the instance itself."""

    corpus: dict[str, dict]
    index: VectorIndex
    encoder: HashingEncoder
    reader_encoder: HashingEncoder
    reader_params: ReaderParams
    openbook: VectorIndex | None = None
    overgeneral: frozenset[str] = DEFAULT_OVERGENERAL
    fact_amrs: dict[str, AmrGraph] = field(default_factory=dict)
    texts: dict[str, str] = field(default_factory=dict)
    _hyp_cache: dict[str, AmrGraph] = field(default_factory=dict)

    def __post_init__(self):
        if not self.texts:
            self.texts = {fid: rec["text"] for fid, rec in self.corpus.items()}

    def hypothesis_graph(self, penman_text: str) -> AmrGraph:
        graph = self._hyp_cache.get(penman_text)
        if graph is None:
            graph = parse_penman(penman_text)
            self._hyp_cache[penman_text] = graph
        return graph


def make_state(
    corpus: dict[str, dict],
    index: VectorIndex,
    cfg: TrainConfig,
    openbook: VectorIndex | None = None,
) -> PipelineState:
    """Parse fact AMRs once and initialize the trainable parameters.

    The query-encoder matrix starts at zero (every fact ties, broken by id,
    until training moves it).  The reader's feature encoder is a fixed,
    seed-derived random matrix; only the reader's linear layer trains.
    """
    fact_amrs: dict[str, AmrGraph] = {}
    for fact_id in sorted(corpus):
        amr_text = corpus[fact_id].get("amr")
        if amr_text:
            fact_amrs[fact_id] = parse_penman(amr_text)
    reader_rng = derive_rng(cfg.seed, "reader-encoder")
    reader_encoder = HashingEncoder(
        index.dim,
        cfg.hash_buckets,
        weights=reader_rng.normal(size=(cfg.hash_buckets, index.dim))
        / np.sqrt(index.dim),
    )
    return PipelineState(
        corpus=corpus,
        index=index,
        encoder=HashingEncoder(index.dim, cfg.hash_buckets),
        reader_encoder=reader_encoder,
        reader_params=ReaderParams.zeros(index.dim),
        openbook=openbook,
        fact_amrs=fact_amrs,
    )


@dataclass(frozen=True)
class PipelineResult:
    hypothesis: str
    pool: EvidencePool
    beams: tuple[QueryState, ...]
    chain_set: ChainSet

    @property
    def active_facts(self) -> frozenset[str]:
        return self.chain_set.active_facts


def run_pipeline(
    inst: QaInstance, choice_idx: int, cfg: TrainConfig, state: PipelineState
) -> PipelineResult:
    """Hypothesis -> retrieval -> semantic graph -> chains for one choice.

    Pool facts without an AMR stay in the pool but are dropped from the
    graph.  Module errors propagate with the instance id attached.
    """
    try:
        hypothesis = make_hypothesis(inst.question, inst.choices[choice_idx])
        pool, beams = retrieve(
            hypothesis,
            state.index,
            state.encoder,
            k_beam=cfg.k_beam,
            t_max=cfg.t_max,
            extra_first_iter_index=state.openbook,
            rank_by=cfg.rank_by,
        )
        pool_amrs = [
            (fact_id, state.fact_amrs[fact_id])
            for fact_id in sorted(pool.facts)
            if fact_id in state.fact_amrs
        ]
        hyps = [state.hypothesis_graph(text) for text in inst.hypothesis_amrs]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyPoolWarning)
            graph = build_graph(hyps[choice_idx], hyps, pool_amrs, state.overgeneral)
        chain_set = generate_chains(graph, cfg.max_path_len)
    except Exception as exc:
        exc.args = (f"[instance {inst.id}] {exc}",) + exc.args[1:]
        raise
    return PipelineResult(
        hypothesis=hypothesis, pool=pool, beams=tuple(beams), chain_set=chain_set
    )


def _run_all_choices(
    instances: list[QaInstance], cfg: TrainConfig, state: PipelineState
) -> list[list[PipelineResult]]:
    jobs = [(i, j) for i, inst in enumerate(instances) for j in range(len(inst.choices))]
    results: dict[tuple[int, int], PipelineResult] = {}
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = pool.map(
                lambda job: run_pipeline(instances[job[0]], job[1], cfg, state), jobs
            )
            for job, outcome in zip(jobs, outputs):
                results[job] = outcome
    else:
        for i, j in jobs:
            results[(i, j)] = run_pipeline(instances[i], j, cfg, state)
    return [
        [results[(i, j)] for j in range(len(inst.choices))]
        for i, inst in enumerate(instances)
    ]


def _predict_choice(
    inst: QaInstance,
    per_choice: list[PipelineResult],
    cfg: TrainConfig,
    state: PipelineState,
) -> tuple[int, list[float], np.ndarray]:
    phis = []
    scores = []
    for choice, result in zip(inst.choices, per_choice):
        context = select_context(result.chain_set, state.texts, cfg.max_evidence)
        rendered = ReaderInput(inst.question, choice, context)
        phi = state.reader_encoder.encode(rendered.rendered())
        phis.append(phi)
        scores.append(float(state.reader_params.weight @ phi + state.reader_params.bias))
    best = min(range(len(inst.choices)), key=lambda j: (-scores[j], j))
    return best, scores, np.stack(phis)


def _sample_chains(
    chain_set: ChainSet, n_chains: int, rng: np.random.Generator
) -> list[ReasoningChain]:
    chains = list(chain_set.chains)
    if len(chains) <= n_chains:
        return chains
    picked = sorted(rng.choice(len(chains), size=n_chains, replace=False))
    return [chains[i] for i in picked]


def _in_batch_negatives(
    own_id: str,
    sampled_by_instance: dict[str, list[ReasoningChain]],
    pool_facts: frozenset[str],
    all_fact_ids: tuple[str, ...],
    cfg: TrainConfig,
    epoch: int,
):
    """Per-step negatives: other questions' sampled-chain facts at the same
    step (aligned with the traversal direction), padded with pool facts to
    the configured floor.  The chain's own facts are positives of other
    steps, never negatives.  Padding draws are keyed by (epoch, instance,
    step, direction, positive), so ablated runs consume identical
    randomness."""

    def build(facts: tuple[str, ...], direction: str) -> tuple[frozenset[str], ...]:
        own_facts = set(facts)
        per_step: list[frozenset[str]] = []
        for t, positive in enumerate(facts):
            negatives: set[str] = set()
            for other_id, chains in sampled_by_instance.items():
                if other_id == own_id:
                    continue
                for chain in chains:
                    ordered = chain.facts if direction == "forward" else chain.facts[::-1]
                    if t < len(ordered):
                        negatives.add(ordered[t])
            negatives -= own_facts
            if len(negatives) < cfg.negative_floor:
                rng = derive_rng(cfg.seed, "negpad", epoch, own_id, direction, t, positive)
                candidates = [
                    fid for fid in sorted(pool_facts)
                    if fid not in own_facts and fid not in negatives
                ]
                if len(candidates) < cfg.negative_floor - len(negatives):
                    extras = [
                        fid for fid in all_fact_ids
                        if fid not in own_facts
                        and fid not in negatives
                        and fid not in candidates
                    ]
                    candidates.extend(extras)
                need = min(cfg.negative_floor - len(negatives), len(candidates))
                if need > 0:
                    chosen = rng.choice(len(candidates), size=need, replace=False)
                    negatives.update(candidates[i] for i in sorted(chosen))
            per_step.append(frozenset(negatives))
        return tuple(per_step)

    return build


@dataclass
class StepOutcome:
    report: LossReport
    rewards: list[int]
    no_chain_count: int


def train_step(
    instances: list[QaInstance],
    cfg: TrainConfig,
    state: PipelineState,
    epoch: int,
) -> StepOutcome:
    """One mini-batch: pipelines, reader update, chain-aware retriever update."""
    results = _run_all_choices(instances, cfg, state)

    # Reader pass: predictions, rewards, and the linear-layer gradient.
    rewards: list[int] = []
    reader_losses: list[float] = []
    weight_grad = np.zeros_like(state.reader_params.weight)
    bias_grad = 0.0
    for inst, per_choice in zip(instances, results):
        pred, scores, phis = _predict_choice(inst, per_choice, cfg, state)
        loss, dweight, dbias = reader_loss_grad(scores, inst.gold_idx, phis)
        reader_losses.append(loss)
        weight_grad += dweight
        bias_grad += dbias
        rewards.append(reward(pred, inst.gold_idx))
    mean_reward = float(np.mean(rewards))

    # Chains sampled for every instance up front: in-batch negatives come
    # from the other questions' samples at the same step.
    sampled_by_instance: dict[str, list[ReasoningChain]] = {}
    for inst, per_choice in zip(instances, results):
        rng = derive_rng(cfg.seed, "sample", epoch, inst.id)
        sampled_by_instance[inst.id] = _sample_chains(
            per_choice[inst.gold_idx].chain_set, cfg.n_chains, rng
        )

    grad = np.zeros_like(state.encoder.weights)
    sup_total = mle_fwd_total = mle_bwd_total = rl_total = global_total = 0.0
    no_chain_count = 0
    for position, (inst, per_choice) in enumerate(zip(instances, results)):
        gold_result = per_choice[inst.gold_idx]
        sampled = sampled_by_instance[inst.id]
        if not sampled:
            no_chain_count += 1
        ctx = LossContext(
            encoder=state.encoder,
            index=state.index,
            grad_out=grad,
            negatives_for=_in_batch_negatives(
                inst.id,
                sampled_by_instance,
                gold_result.pool.facts,
                state.index.ids,
                cfg,
                epoch,
            ),
        )
        if cfg.mode == SUPERVISED_DISTANT and inst.gold_chain:
            gold = ReasoningChain(facts=tuple(inst.gold_chain), node_path=())
            sup_total += supervised_loss(gold, gold_result.hypothesis, ctx)
        if cfg.use_mle:
            fwd, bwd = local_mle_loss(sampled, gold_result.hypothesis, ctx)
            mle_fwd_total += fwd
            mle_bwd_total += bwd
        if cfg.use_rl:
            rl_total += rl_loss(
                sampled, gold_result.hypothesis, rewards[position], mean_reward, ctx
            )
        if cfg.use_global:
            other_pools = [
                other[other_inst.gold_idx].active_facts
                for other_inst, other in zip(instances, results)
                if other_inst.id != inst.id
            ]
            global_total += global_loss(
                gold_result.active_facts, gold_result.hypothesis, other_pools, ctx
            )

    batch = len(instances)
    lr = cfg.learning_rate
    state.encoder.weights -= lr * grad / batch
    state.reader_params.weight = state.reader_params.weight - lr * weight_grad / batch
    state.reader_params.bias = float(state.reader_params.bias - lr * bias_grad / batch)

    report = LossReport.assemble(
        l_sup=sup_total / batch,
        l_mle_fwd=mle_fwd_total / batch,
        l_mle_bwd=mle_bwd_total / batch,
        l_rl=rl_total / batch,
        l_global=global_total / batch,
        l_reader=float(np.mean(reader_losses)),
    )
    return StepOutcome(report=report, rewards=rewards, no_chain_count=no_chain_count)


def _dev_accuracy(
    instances: list[QaInstance], cfg: TrainConfig, state: PipelineState
) -> float:
    if not instances:
        return 0.0
    correct = 0
    for inst, per_choice in zip(instances, _run_all_choices(instances, cfg, state)):
        pred, _, _ = _predict_choice(inst, per_choice, cfg, state)
        correct += int(pred == inst.gold_idx)
    return correct / len(instances)


@dataclass
class TrainResult:
    encoder_params: np.ndarray
    reader_params: ReaderParams
    metrics: list[dict]
    state: PipelineState


def train(
    train_instances: list[QaInstance],
    cfg: TrainConfig,
    corpus: dict[str, dict],
    index: VectorIndex,
    dev_instances: list[QaInstance] | None = None,
    openbook: VectorIndex | None = None,
) -> TrainResult:
    """Mini-batch training of the query encoder and the reader linear layer.

    In distant-only mode the gold chain is never read.  The metrics log has
    one record per step (the loss report plus the batch rewards) and one per
    epoch (dev accuracy); it is deterministic given the seed.
    """
    if cfg.mode == SUPERVISED_DISTANT:
        if not any(inst.gold_chain for inst in train_instances):
            raise ConfigError(
                "supervised+distant mode needs at least one gold chain; "
                "use distant-only for datasets without annotations"
            )
    state = make_state(corpus, index, cfg, openbook)
    metrics: list[dict] = []
    step_counter = 0
    for epoch in range(cfg.epochs):
        order = list(range(len(train_instances)))
        derive_rng(cfg.seed, "shuffle", epoch).shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_instances[i] for i in order[start : start + cfg.batch_size]]
            outcome = train_step(batch, cfg, state, epoch)
            record = {
                "kind": "step",
                "epoch": epoch,
                "step": step_counter,
                "batch_reward": float(np.mean(outcome.rewards)),
                "no_chain": outcome.no_chain_count,
            }
            record.update(outcome.report.to_dict())
            metrics.append(record)
            step_counter += 1
        metrics.append(
            {
                "kind": "epoch",
                "epoch": epoch,
                "dev_accuracy": _dev_accuracy(dev_instances or [], cfg, state),
            }
        )
    return TrainResult(
        encoder_params=state.encoder.weights,
        reader_params=state.reader_params,
        metrics=metrics,
        state=state,
    )


def evaluate(
    instances: list[QaInstance], state: PipelineState, cfg: TrainConfig
) -> dict:
    """Accuracy, gold-fact retrieval accuracy, and chain-length metrics.

    The chain-length histogram counts questions by the modal length of the
    correct choice's chains (0 when none were generated), and accuracy is
    also broken down by that length.  Retrieval accuracy counts a question as
    a hit only if every gold-chain fact landed in the correct choice's pool;
    it is reported only when gold chains are present.
    """
    correct = 0
    retrieval_hits = 0
    retrieval_total = 0
    by_length: dict[int, list[int]] = {}
    results = _run_all_choices(instances, cfg, state)
    for inst, per_choice in zip(instances, results):
        pred, _, _ = _predict_choice(inst, per_choice, cfg, state)
        hit = int(pred == inst.gold_idx)
        correct += hit
        gold_result = per_choice[inst.gold_idx]
        _, modal = chain_length_histogram(gold_result.chain_set)
        by_length.setdefault(modal, []).append(hit)
        if inst.gold_chain:
            retrieval_total += 1
            retrieval_hits += int(set(inst.gold_chain) <= gold_result.pool.facts)
    out = {
        "accuracy": correct / len(instances) if instances else 0.0,
        "chain_length_histogram": {
            length: len(hits) for length, hits in sorted(by_length.items())
        },
        "accuracy_by_chain_length": {
            length: sum(hits) / len(hits) for length, hits in sorted(by_length.items())
        },
    }
    if retrieval_total:
        out["retrieval_accuracy"] = retrieval_hits / retrieval_total
    return out


def save_params(path: str, state: PipelineState) -> None:
    """Persist all trained and fixed parameters to an ``.npz`` archive."""
    np.savez(
        path,
        encoder_weights=state.encoder.weights,
        reader_encoder_weights=state.reader_encoder.weights,
        reader_weight=state.reader_params.weight,
        reader_bias=np.array(state.reader_params.bias),
    )


def load_params(path: str, state: PipelineState) -> None:
    """Load parameters saved by :func:`save_params` into ``state`` in place."""
    archive = np.load(path)
    weights = archive["encoder_weights"]
    if weights.shape != state.encoder.weights.shape:
        raise ValueError(
            f"{path}: encoder weights have shape {weights.shape}, "
            f"state expects {state.encoder.weights.shape}"
        )
    state.encoder.weights[:] = weights
    state.reader_encoder.weights[:] = archive["reader_encoder_weights"]
    state.reader_params.weight = archive["reader_weight"]
    state.reader_params.bias = float(archive["reader_bias"])


def load_dataset(path: str) -> list[QaInstance]:
    """Read a dataset JSONL of {"id", "question", "choices", "gold_idx",
    "gold_chain"?, "hyp_amrs"} records."""
    import json

    instances = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            try:
                instances.append(
                    QaInstance(
                        id=record["id"],
                        question=record["question"],
                        choices=tuple(record["choices"]),
                        gold_idx=int(record["gold_idx"]),
                        gold_chain=tuple(record["gold_chain"])
                        if record.get("gold_chain")
                        else None,
                        hypothesis_amrs=tuple(record["hyp_amrs"]),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
    return instances

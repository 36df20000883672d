"""Command-line surface.

Subcommands cover the whole workflow: ``gen-synthetic`` builds a benchmark,
``index-build`` embeds a corpus, ``hypo`` / ``retrieve`` / ``graph`` /
``chains`` expose the pipeline stages, ``train`` / ``eval`` run experiments,
and ``explain`` renders a question's reasoning chains as a text table plus a
DOT graph.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors.  Errors are
printed to standard error as a single JSON line ``{code, message, context}``.
Output files are written atomically (temp file, then rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from chainqa.chains import ReasoningChain, generate_chains
from chainqa.dot import semantic_graph_dot
from chainqa.losses import MissingEmbedding
from chainqa.retriever import (
    EmptyIndex,
    HashingEncoder,
    LookupEncoder,
    UnknownFact,
    VectorIndex,
    build_index,
    load_corpus,
    read_cgrv,
    retrieve,
    write_cgrv,
)
import warnings

from chainqa.semgraph import (
    DegenerateSplit,
    EmptyPoolWarning,
    SemanticGraph,
    build_graph,
)
from chainqa.synth import SynthConfig, generate, write
from chainqa.trainer import (
    ConfigError,
    PipelineState,
    QaInstance,
    TrainConfig,
    derive_rng,
    evaluate,
    load_config,
    load_dataset,
    load_params,
    make_hypothesis,
    make_state,
    run_pipeline,
    save_params,
    train,
)

USAGE = """\
usage: chainqa <command> [flags]

commands:
  gen-synthetic   generate a synthetic benchmark (corpus, embeddings, datasets)
  index-build     embed a corpus into a .cgrv evidence index
  hypo            print the declarative hypothesis for a question's choices
  retrieve        run iterative beam-search retrieval for a query
  graph           export a (question, choice) semantic graph as DOT
  chains          report the reasoning chains for a (question, choice)
  train           train the retriever and reader on a dataset
  eval            evaluate trained parameters on a dataset
  explain         render a question's reasoning chains (table + DOT)

run `chainqa <command> --help` for the flags of one command.
"""


class UsageError(Exception):
    pass


class UnknownQuestion(KeyError):
    """The requested question id is not in the dataset."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, message: str, **context) -> int:
    print(json.dumps({"code": code, "message": message, "context": context}),
          file=sys.stderr)
    return code


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _add_io_flags(parser: argparse.ArgumentParser, dataset: bool = False) -> None:
    parser.add_argument("--corpus", required=True, help="corpus JSONL file")
    parser.add_argument("--embeddings", required=True, help="evidence .cgrv file")
    if dataset:
        parser.add_argument("--dataset", required=True, help="dataset JSONL file")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--k", type=int, dest="k_beam", help="beam size")
    parser.add_argument("--t", type=int, dest="t_max", help="retrieval iterations")
    parser.add_argument("--n-chains", type=int, dest="n_chains")
    parser.add_argument("--max-evidence", type=int, dest="max_evidence")
    parser.add_argument("--mode", choices=["supervised+distant", "distant-only"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")


def _config_from_args(args) -> TrainConfig:
    overrides = {
        name: getattr(args, name)
        for name in ("k_beam", "t_max", "n_chains", "max_evidence", "mode",
                     "seed", "threads", "epochs", "batch_size", "learning_rate")
        if getattr(args, name, None) is not None
    }
    if getattr(args, "config", None):
        return load_config(args.config, **overrides)
    return TrainConfig(**overrides)


def _load_state(args, cfg: TrainConfig) -> PipelineState:
    corpus = load_corpus(args.corpus)
    dim, records = read_cgrv(args.embeddings)
    index = build_index(corpus, dict(records))
    openbook = None
    if getattr(args, "openbook", None):
        ob_dim, ob_records = read_cgrv(args.openbook)
        if ob_dim != dim:
            raise ValueError(
                f"open-book dimension {ob_dim} does not match evidence dimension {dim}"
            )
        openbook = VectorIndex(
            [fid for fid, _ in ob_records],
            np.stack([vec for _, vec in ob_records]),
            [fid for fid, _ in ob_records],
        )
    state = make_state(corpus, index, cfg, openbook)
    if getattr(args, "params", None):
        load_params(args.params, state)
    return state


def _find_instance(instances: list[QaInstance], question_id: str) -> QaInstance:
    for inst in instances:
        if inst.id == question_id:
            return inst
    raise UnknownQuestion(question_id)


def render_chain(chain: ReasoningChain, g: SemanticGraph, choice_label: str) -> str:
    """Text rendering of one chain: ``Question →concept [fact] → ... (C)``.

    Each path node is shown with the fact that witnesses the step out of it;
    the final node carries the answer-choice letter instead.
    """
    path = chain.node_path
    step_facts: list[str] = []
    cursor = 0
    for a, b in zip(path, path[1:]):
        witnesses = g.edge_witnesses(a, b)
        if cursor < len(chain.facts) and chain.facts[cursor] in witnesses:
            step_facts.append(chain.facts[cursor])
        elif cursor + 1 < len(chain.facts) and chain.facts[cursor + 1] in witnesses:
            cursor += 1
            step_facts.append(chain.facts[cursor])
        elif cursor < len(chain.facts):
            step_facts.append(chain.facts[cursor])
        else:
            step_facts.append(chain.facts[-1])
    parts = ["Question"]
    for node, fact in zip(path, step_facts):
        parts.append(f"→{g.nodes[node].label} [{fact}]")
    parts.append(f"→{g.nodes[path[-1]].label} ({choice_label})")
    return " ".join(parts)


def _build_parser() -> _Parser:
    parser = _Parser(prog="chainqa", add_help=True)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic benchmark")
    p.add_argument("--questions", type=int, default=200)
    p.add_argument("--dev-questions", type=int, default=50)
    p.add_argument("--choices", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--hops-min", type=int, default=2)
    p.add_argument("--hops-max", type=int, default=3)
    p.add_argument("--distractor-facts", type=int, default=600)
    p.add_argument("--cluster-mix", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("index-build", help="embed a corpus into a .cgrv index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True, help="output .cgrv path")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("hypo", help="print declarative hypotheses")
    p.add_argument("--dataset", required=True)
    p.add_argument("--id", required=True, dest="question_id")
    p.add_argument("--choice", type=int, default=None)

    p = sub.add_parser("retrieve", help="iterative beam-search retrieval")
    _add_io_flags(p)
    p.add_argument("--query", help="free-form query text")
    p.add_argument("--dataset")
    p.add_argument("--id", dest="question_id")
    p.add_argument("--choice", type=int, default=0)
    p.add_argument("--openbook", help="extra first-iteration .cgrv index")
    p.add_argument("--params", help="trained parameters (.npz)")
    p.add_argument("--query-embeddings",
                   help=".cgrv of precomputed query embeddings keyed by text")
    _add_config_flags(p)

    for name, help_text in (
        ("graph", "export the semantic graph as DOT"),
        ("chains", "report reasoning chains"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_io_flags(p, dataset=True)
        p.add_argument("--id", required=True, dest="question_id")
        p.add_argument("--choice", type=int, required=True)
        p.add_argument("--params")
        p.add_argument("--out", help="output path (default: stdout)")
        _add_config_flags(p)

    p = sub.add_parser("train", help="train retriever and reader")
    _add_io_flags(p, dataset=True)
    p.add_argument("--dev", help="dev dataset JSONL")
    p.add_argument("--openbook")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate trained parameters")
    _add_io_flags(p, dataset=True)
    p.add_argument("--params", required=True)
    p.add_argument("--openbook")
    _add_config_flags(p)

    p = sub.add_parser("explain", help="render reasoning chains")
    _add_io_flags(p, dataset=True)
    p.add_argument("--id", required=True, dest="question_id")
    p.add_argument("--choice", type=int, default=None,
                   help="choice index (default: the gold choice)")
    p.add_argument("--params")
    p.add_argument("--out", help="write the DOT graph here")
    _add_config_flags(p)

    return parser


def _cmd_gen_synthetic(args) -> int:
    cfg = SynthConfig(
        questions=args.questions,
        dev_questions=args.dev_questions,
        choices=args.choices,
        dim=args.dim,
        seed=args.seed,
        hops_min=args.hops_min,
        hops_max=args.hops_max,
        distractor_facts=args.distractor_facts,
        cluster_mix=args.cluster_mix,
    )
    data = generate(cfg)
    paths = write(data, args.out, cfg.dim)
    print(json.dumps({"written": paths, "facts": len(data.corpus),
                      "train": len(data.train), "dev": len(data.dev)},
                     sort_keys=True))
    return 0


def _cmd_index_build(args) -> int:
    corpus = load_corpus(args.corpus)
    rng = derive_rng(args.seed, "evidence-encoder")
    encoder = HashingEncoder(
        args.dim, 4096, weights=rng.normal(size=(4096, args.dim)) / np.sqrt(args.dim)
    )
    records = [(fid, encoder.encode(corpus[fid]["text"])) for fid in sorted(corpus)]
    tmp = args.embeddings + ".tmp"
    write_cgrv(tmp, args.dim, records)
    os.replace(tmp, args.embeddings)
    print(json.dumps({"written": args.embeddings, "facts": len(records),
                      "dim": args.dim}, sort_keys=True))
    return 0


def _cmd_hypo(args) -> int:
    inst = _find_instance(load_dataset(args.dataset), args.question_id)
    choices = (
        range(len(inst.choices)) if args.choice is None else [args.choice]
    )
    for j in choices:
        print(json.dumps({
            "choice_idx": j,
            "choice": inst.choices[j],
            "hypothesis": make_hypothesis(inst.question, inst.choices[j]),
        }, sort_keys=True))
    return 0


def _cmd_retrieve(args) -> int:
    cfg = _config_from_args(args)
    state = _load_state(args, cfg)
    if args.query:
        query = args.query
    elif args.dataset and args.question_id:
        inst = _find_instance(load_dataset(args.dataset), args.question_id)
        query = make_hypothesis(inst.question, inst.choices[args.choice])
    else:
        raise UsageError("retrieve needs --query or --dataset with --id")
    encoder = state.encoder
    if args.query_embeddings:
        encoder = LookupEncoder.from_cgrv(args.query_embeddings)
    pool, beams = retrieve(
        query, state.index, encoder,
        k_beam=cfg.k_beam, t_max=cfg.t_max,
        extra_first_iter_index=state.openbook, rank_by=cfg.rank_by,
    )
    print(json.dumps({
        "query": query,
        "pool": sorted(pool.facts),
        "per_iteration": [sorted(s) for s in pool.per_iteration],
        "beams": [{"picked": list(b.picked), "score": b.score_so_far} for b in beams],
    }, sort_keys=True))
    return 0


def _graph_for(args, cfg: TrainConfig, state: PipelineState):
    inst = _find_instance(load_dataset(args.dataset), args.question_id)
    choice = args.choice if args.choice is not None else inst.gold_idx
    if not 0 <= choice < len(inst.choices):
        raise ValueError(f"choice index {choice} out of range for {inst.id}")
    result = run_pipeline(inst, choice, cfg, state)
    hyps = [state.hypothesis_graph(text) for text in inst.hypothesis_amrs]
    pool_amrs = [
        (fid, state.fact_amrs[fid])
        for fid in sorted(result.pool.facts)
        if fid in state.fact_amrs
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyPoolWarning)
        graph = build_graph(hyps[choice], hyps, pool_amrs, state.overgeneral)
    return inst, choice, result, graph


def _cmd_graph(args) -> int:
    cfg = _config_from_args(args)
    state = _load_state(args, cfg)
    _, _, result, graph = _graph_for(args, cfg, state)
    text = semantic_graph_dot(graph, result.chain_set)
    if args.out:
        _atomic_write(args.out, text)
    else:
        print(text, end="")
    return 0


def _cmd_chains(args) -> int:
    cfg = _config_from_args(args)
    state = _load_state(args, cfg)
    inst, choice, result, _ = _graph_for(args, cfg, state)
    report = json.dumps({
        "question_id": inst.id,
        "choice_idx": choice,
        "chains": [list(c.facts) for c in result.chain_set.chains],
        "active_facts": sorted(result.chain_set.active_facts),
    }, sort_keys=True)
    if args.out:
        _atomic_write(args.out, report + "\n")
    else:
        print(report)
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    corpus = load_corpus(args.corpus)
    dim, records = read_cgrv(args.embeddings)
    index = build_index(corpus, dict(records))
    openbook = None
    if args.openbook:
        ob_dim, ob_records = read_cgrv(args.openbook)
        openbook = VectorIndex(
            [fid for fid, _ in ob_records],
            np.stack([vec for _, vec in ob_records]),
            [fid for fid, _ in ob_records],
        )
    train_instances = load_dataset(args.dataset)
    dev_instances = load_dataset(args.dev) if args.dev else None
    result = train(train_instances, cfg, corpus, index,
                   dev_instances=dev_instances, openbook=openbook)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    _atomic_write(
        metrics_path,
        "".join(json.dumps(record, sort_keys=True) + "\n" for record in result.metrics),
    )
    params_path = os.path.join(args.out, "params.npz")
    tmp = params_path + ".tmp.npz"
    save_params(tmp, result.state)
    os.replace(tmp, params_path)
    final_dev = [r for r in result.metrics if r["kind"] == "epoch"]
    print(json.dumps({
        "params": params_path,
        "metrics": metrics_path,
        "dev_accuracy": final_dev[-1]["dev_accuracy"] if final_dev else None,
    }, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    state = _load_state(args, cfg)
    instances = load_dataset(args.dataset)
    print(json.dumps(evaluate(instances, state, cfg), sort_keys=True))
    return 0


def _cmd_explain(args) -> int:
    cfg = _config_from_args(args)
    state = _load_state(args, cfg)
    inst, choice, result, graph = _graph_for(args, cfg, state)
    letter = chr(ord("A") + choice)
    if not result.chain_set.chains:
        print("no reasoning chain found")
    else:
        for chain in result.chain_set.chains:
            print(render_chain(chain, graph, letter))
    if args.out:
        _atomic_write(args.out, semantic_graph_dot(graph, result.chain_set))
    return 0


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "index-build": _cmd_index_build,
    "hypo": _cmd_hypo,
    "retrieve": _cmd_retrieve,
    "graph": _cmd_graph,
    "chains": _cmd_chains,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "explain": _cmd_explain,
}


def main(argv: list[str]) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(USAGE, file=sys.stderr)
        return _fail(1, str(exc), argv=argv)
    if not getattr(args, "command", None):
        print(USAGE, file=sys.stderr)
        return _fail(1, "no command given", argv=argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(USAGE, file=sys.stderr)
        return _fail(1, str(exc), command=args.command)
    except (FileNotFoundError, ValueError, KeyError, ConfigError, DegenerateSplit,
            EmptyIndex, UnknownFact, MissingEmbedding, UnknownQuestion) as exc:
        return _fail(2, str(exc), command=args.command, kind=type(exc).__name__)


def run() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()

"""Iterative dense retrieval over a fixed evidence index.

Queries and evidence facts are embedded in the same space; relevance is the
raw inner product.  Retrieval is exact top-k (no approximate structures), run
iteratively: after each step the query is reformulated by concatenating the
newly picked fact's text, and a beam of the best-scoring pick sequences is
kept.  The evidence pool collects every fact any beam retrieved at any
iteration.

Evidence vectors are fixed and cached offline in a binary ``.cgrv`` file:
magic ``CGRV``, little-endian u32 version (=1), u32 dimension, u64 record
count, then per record a u32 id length, the UTF-8 id bytes, and dimension
float32 values.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Protocol

import numpy as np

CGRV_MAGIC = b"CGRV"
CGRV_VERSION = 1
SEPARATOR = "[SEP]"


class DimensionMismatch(ValueError):
    """Query and evidence vectors have different dimensions."""


class UnknownFact(KeyError):
    """A fact id is not present in the index."""


class EmptyIndex(ValueError):
    """The index holds no entries."""


class VectorIndex:
    """Immutable fact-id -> (embedding, text) store with exact inner-product
    top-k lookup."""

    def __init__(self, ids: Iterable[str], vectors: np.ndarray, texts: Iterable[str]):
        self.ids: tuple[str, ...] = tuple(ids)
        self.matrix = np.asarray(vectors, dtype=np.float64)
        self.texts: tuple[str, ...] = tuple(texts)
        if self.matrix.ndim != 2 or len(self.ids) != self.matrix.shape[0]:
            raise ValueError("vectors must be one row per id")
        if len(self.texts) != len(self.ids):
            raise ValueError("texts must be one entry per id")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate fact ids")
        self.dim: int = int(self.matrix.shape[1])
        self._row: dict[str, int] = {fid: i for i, fid in enumerate(self.ids)}
        # integer rank of each row in id order, for fast tie-breaking sorts;
        # when rows are already in id order a single stable argsort suffices
        self._id_rank = np.empty(len(self.ids), dtype=np.intp)
        for rank, fid in enumerate(sorted(self.ids)):
            self._id_rank[self._row[fid]] = rank
        self._ids_presorted = list(self.ids) == sorted(self.ids)
        self.matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, fact_id: str) -> bool:
        return fact_id in self._row

    @cached_property
    def entries(self) -> dict[str, tuple[np.ndarray, str]]:
        return {
            fid: (self.matrix[i], self.texts[i]) for i, fid in enumerate(self.ids)
        }

    def vector(self, fact_id: str) -> np.ndarray:
        try:
            return self.matrix[self._row[fact_id]]
        except KeyError:
            raise UnknownFact(fact_id) from None

    def text(self, fact_id: str) -> str:
        try:
            return self.texts[self._row[fact_id]]
        except KeyError:
            raise UnknownFact(fact_id) from None


def score(query_vec: np.ndarray, fact_vec: np.ndarray) -> float:
    """Inner product between a query vector and an evidence vector."""
    query_vec = np.asarray(query_vec, dtype=np.float64)
    fact_vec = np.asarray(fact_vec, dtype=np.float64)
    if query_vec.shape != fact_vec.shape:
        raise DimensionMismatch(
            f"query has shape {query_vec.shape}, fact has shape {fact_vec.shape}"
        )
    return float(np.dot(query_vec, fact_vec))


def _select_top(
    index: VectorIndex,
    scores: np.ndarray,
    k: int,
    exclude: frozenset[str] | set[str],
) -> list[tuple[str, float]]:
    if index._ids_presorted:
        # row order is id order, so a stable sort breaks ties by id
        order = np.argsort(-scores, kind="stable")
    else:
        # lexsort's last key is primary: sort by -score, then id ascending
        order = np.lexsort((index._id_rank, -scores))
    out: list[tuple[str, float]] = []
    for row in order:
        fid = index.ids[row]
        if fid in exclude:
            continue
        out.append((fid, float(scores[row])))
        if len(out) == k:
            break
    return out


def top_k(
    index: VectorIndex,
    query_vec: np.ndarray,
    k: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> list[tuple[str, float]]:
    """Exact top-k facts by inner product, descending; ties break by fact id
    ascending.  Excluded ids are never returned; fewer than ``k`` results are
    returned when the index is small."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dim,):
        raise DimensionMismatch(
            f"query has shape {query_vec.shape}, index dimension is {index.dim}"
        )
    return _select_top(index, index.matrix @ query_vec, k, exclude)


@dataclass(frozen=True)
class QueryState:
    """One beam: the query text for iteration ``t`` and the facts picked so
    far (``len(picked) == t - 1``)."""

    t: int
    text: str
    score_so_far: float
    picked: tuple[str, ...]
    step_scores: tuple[float, ...] = ()


@dataclass(frozen=True)
class EvidencePool:
    """All facts retrieved across iterations; ``facts`` is the union of the
    per-iteration sets."""

    facts: frozenset[str]
    per_iteration: tuple[frozenset[str], ...]


def reformulate(prev: QueryState, fact: str, index: VectorIndex) -> QueryState:
    """Extend a query by concatenating the picked fact's text.

    The scores are left untouched; :func:`retrieve` accounts for the picked
    fact's inner product itself.
    """
    if fact not in index:
        raise UnknownFact(fact)
    return replace(
        prev,
        t=prev.t + 1,
        text=f"{prev.text} {SEPARATOR} {index.text(fact)}",
        picked=prev.picked + (fact,),
    )


class QueryEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


def _rank_key(state: QueryState, rank_by: str):
    if rank_by == "last":
        return (-state.step_scores[-1] if state.step_scores else 0.0, state.picked)
    return (-state.score_so_far, state.picked)


def retrieve(
    hypothesis: str,
    index: VectorIndex,
    encoder: QueryEncoder,
    k_beam: int = 10,
    t_max: int = 2,
    extra_first_iter_index: VectorIndex | None = None,
    rank_by: str = "sum",
) -> tuple[EvidencePool, list[QueryState]]:
    """Beam-search retrieval: ``t_max`` iterations with beam size ``k_beam``.

    Iteration 1 expands the hypothesis into its top ``k_beam`` facts (plus the
    top ``k_beam`` from ``extra_first_iter_index`` when given).  Every later
    iteration expands each beam with its top ``k_beam`` candidates, excluding
    facts already on that beam's path, then keeps the best ``k_beam`` states
    globally.  States are ranked by the running sum of per-step inner products
    (or by the last step's alone with ``rank_by="last"``); ties break by the
    picked-fact sequence.  The returned pool holds every candidate fact any
    expansion retrieved, whether or not its beam survived.
    """
    if len(index) == 0:
        raise EmptyIndex("the evidence index holds no entries")
    if not hypothesis.strip():
        raise ValueError("hypothesis must be non-empty")
    if k_beam < 1 or t_max < 1:
        raise ValueError("k_beam and t_max must be at least 1")
    if rank_by not in ("sum", "last"):
        raise ValueError(f"unknown rank_by {rank_by!r}")

    def advance(state: QueryState, fact: str, sigma: float, src: VectorIndex) -> QueryState:
        return QueryState(
            t=state.t + 1,
            text=f"{state.text} {SEPARATOR} {src.text(fact)}",
            score_so_far=state.score_so_far + sigma,
            picked=state.picked + (fact,),
            step_scores=state.step_scores + (sigma,),
        )

    initial = QueryState(t=1, text=hypothesis, score_so_far=0.0, picked=())
    query_vec = encoder.encode(hypothesis)
    first = top_k(index, query_vec, k_beam)
    states = [advance(initial, fid, sigma, index) for fid, sigma in first]
    retrieved = {fid for fid, _ in first}
    if extra_first_iter_index is not None and len(extra_first_iter_index) > 0:
        taken = set(retrieved)
        for fid, sigma in top_k(extra_first_iter_index, query_vec, k_beam):
            retrieved.add(fid)
            if fid not in taken:
                states.append(advance(initial, fid, sigma, extra_first_iter_index))
    per_iteration = [frozenset(retrieved)]
    states.sort(key=lambda s: _rank_key(s, rank_by))

    for _ in range(2, t_max + 1):
        # All beams are scored in one matrix product, and candidates are
        # ranked before any full state is built; only the surviving k_beam
        # get their query text materialized.
        queries = np.stack([encoder.encode(state.text) for state in states])
        all_scores = index.matrix @ queries.T
        candidates: list[tuple[float, tuple[str, ...], QueryState, str, float]] = []
        iteration_facts: set[str] = set()
        for column, state in enumerate(states):
            expansion = _select_top(
                index, all_scores[:, column], k_beam, set(state.picked)
            )
            for fid, sigma in expansion:
                iteration_facts.add(fid)
                rank_score = sigma if rank_by == "last" else state.score_so_far + sigma
                candidates.append(
                    (rank_score, state.picked + (fid,), state, fid, sigma)
                )
        per_iteration.append(frozenset(iteration_facts))
        candidates.sort(key=lambda item: (-item[0], item[1]))
        states = [
            advance(parent, fid, sigma, index)
            for _, _, parent, fid, sigma in candidates[:k_beam]
        ]

    facts = frozenset().union(*per_iteration) if per_iteration else frozenset()
    return EvidencePool(facts=facts, per_iteration=tuple(per_iteration)), states


# --- trainable hashing encoder and file-backed lookup -----------------------

_TOKEN_SPLIT = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on everything that is not a letter or digit."""
    return _TOKEN_SPLIT.findall(text.lower())


def hash_bucket(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % buckets


class HashingEncoder:
    """Mean-of-rows bag-of-tokens encoder over a trainable weight matrix.

    Tokens are hashed into one of ``buckets`` rows; the text embedding is the
    mean of the matching rows (unnormalized, matching raw inner-product
    scoring).  Concatenated queries re-encode the full text, so training the
    matrix shifts reformulated queries too.
    """

    def __init__(self, dim: int, buckets: int = 4096, weights: np.ndarray | None = None):
        if weights is None:
            weights = np.zeros((buckets, dim), dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (buckets, dim):
            raise ValueError(f"weights must have shape {(buckets, dim)}")
        self.dim = dim
        self.buckets = buckets
        self.weights = weights
        self._features: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def features(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Bucket indices and their mean weights (counts / token total)."""
        cached = self._features.get(text)
        if cached is not None:
            return cached
        tokens = tokenize(text)
        if not tokens:
            pair = (np.empty(0, dtype=np.intp), np.empty(0))
        else:
            raw = np.fromiter(
                (hash_bucket(token, self.buckets) for token in tokens),
                dtype=np.intp,
                count=len(tokens),
            )
            idx, counts = np.unique(raw, return_counts=True)
            pair = (idx, counts / len(tokens))
        self._features[text] = pair
        return pair

    def encode(self, text: str) -> np.ndarray:
        idx, weight = self.features(text)
        if idx.size == 0:
            return np.zeros(self.dim)
        return weight @ self.weights[idx]


class LookupEncoder:
    """File-backed lookup for precomputed query embeddings, keyed by the
    exact query text."""

    def __init__(self, table: dict[str, np.ndarray], dim: int):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.dim = dim

    @classmethod
    def from_cgrv(cls, path: str) -> "LookupEncoder":
        dim, records = read_cgrv(path)
        return cls({text: vec for text, vec in records}, dim)

    def encode(self, text: str) -> np.ndarray:
        try:
            return self.table[text]
        except KeyError:
            raise KeyError(f"no precomputed embedding for query {text!r}") from None


# --- file formats ------------------------------------------------------------


def write_cgrv(path: str, dim: int, records: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write an embedding file (see the module docstring for the layout)."""
    items = list(records)
    with open(path, "wb") as handle:
        handle.write(CGRV_MAGIC)
        handle.write(struct.pack("<IIQ", CGRV_VERSION, dim, len(items)))
        for fact_id, vector in items:
            vector = np.asarray(vector, dtype=np.float32)
            if vector.shape != (dim,):
                raise ValueError(f"vector for {fact_id!r} has shape {vector.shape}")
            encoded = fact_id.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(vector.astype("<f4").tobytes())


def read_cgrv(path: str) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Read an embedding file; returns (dim, [(id, float64 vector), ...])."""
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != CGRV_MAGIC:
        raise ValueError(f"{path}: not an embedding file (bad magic)")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != CGRV_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 4 + 16
    records: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        fact_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        records.append((fact_id, vector.astype(np.float64)))
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after the last record")
    return dim, records


def load_corpus(path: str) -> dict[str, dict]:
    """Read a JSONL corpus of {"id", "text", "amr"?} records, keyed by id."""
    corpus: dict[str, dict] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "id" not in record or "text" not in record:
                raise ValueError(f"{path}:{line_no}: record needs 'id' and 'text'")
            if record["id"] in corpus:
                raise ValueError(f"{path}:{line_no}: duplicate id {record['id']!r}")
            corpus[record["id"]] = record
    return corpus


def build_index(corpus: dict[str, dict], embeddings: dict[str, np.ndarray]) -> VectorIndex:
    """Pair corpus texts with their embeddings into a :class:`VectorIndex`."""
    ids = sorted(corpus)
    missing = [fid for fid in ids if fid not in embeddings]
    if missing:
        raise ValueError(f"no embedding for fact ids: {missing[:5]}")
    matrix = np.stack([embeddings[fid] for fid in ids]) if ids else np.zeros((0, 0))
    return VectorIndex(ids, matrix, [corpus[fid]["text"] for fid in ids])

"""Exemplar pool, retrieval scoring, state-change similarity, and pair mining.

Everything here is exact search: pools at task scale are small enough that
brute force beats maintaining an index. Pools are immutable after
construction, so all query operations are safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, replace

import numpy as np

from sqldst.prompting import TurnContext, truncate_to_units

RETRIEVER_INPUT_MAX_UNITS = 512.0


@dataclass(frozen=True)
class ExemplarRecord:
    id: str
    context_text: str
    change: dict[str, str]
    embedding: tuple[float, ...] | None = None
    context: TurnContext | None = None  # untruncated source, for prompt assembly


def build_record(id: str, context_text: str, change: dict[str, str],
                 embedding=None, context: TurnContext | None = None) -> ExemplarRecord:
    """Record factory; caps retriever-side context text at 512 length units."""
    text = truncate_to_units(context_text, RETRIEVER_INPUT_MAX_UNITS)
    emb = tuple(float(x) for x in embedding) if embedding is not None else None
    return ExemplarRecord(id=id, context_text=text, change=dict(change),
                          embedding=emb, context=context)


@dataclass(frozen=True)
class ExemplarPool:
    records: tuple[ExemplarRecord, ...]
    _by_id: dict[str, ExemplarRecord] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        dim = None
        for r in self.records:
            if r.id in self._by_id:
                raise ValueError(f"duplicate exemplar id: {r.id}")
            self._by_id[r.id] = r
            if r.embedding is not None:
                if dim is None:
                    dim = len(r.embedding)
                elif len(r.embedding) != dim:
                    raise ValueError(
                        f"ragged embeddings: {r.id} has dim {len(r.embedding)}, expected {dim}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def embedding_dim(self) -> int | None:
        for r in self.records:
            if r.embedding is not None:
                return len(r.embedding)
        return None

    def record(self, id: str) -> ExemplarRecord:
        return self._by_id[id]

    def require_embeddings(self) -> None:
        missing = [r.id for r in self.records if r.embedding is None]
        if missing:
            raise ValueError(f"{len(missing)} records lack embeddings (first: {missing[0]})")


def cosine_score(x, e) -> float:
    if len(x) != len(e):
        raise ValueError(f"dimension mismatch: {len(x)} vs {len(e)}")
    dot = sum(a * b for a, b in zip(x, e))
    nx = math.sqrt(sum(a * a for a in x))
    ne = math.sqrt(sum(b * b for b in e))
    if nx == 0.0 or ne == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return dot / (nx * ne)


def knn(pool: ExemplarPool, query_vec, k: int) -> list[tuple[str, float]]:
    """Top-k records by cosine, descending; ties break by pool index."""
    if k < 0:
        raise ValueError("k must be >= 0")
    pool.require_embeddings()
    scored = [(r.id, cosine_score(query_vec, r.embedding)) for r in pool.records]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i))
    return [scored[i] for i in order[:k]]


def _tokens(text: str) -> list[str]:
    return text.lower().split()


class Bm25Index:
    """Okapi BM25 over record context texts, k1=1.2, b=0.75.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), always positive.
    """

    def __init__(self, pool: ExemplarPool, k1: float = 1.2, b: float = 0.75):
        self.pool = pool
        self.k1 = k1
        self.b = b
        self.doc_tokens = [_tokens(r.context_text) for r in pool.records]
        self.doc_lengths = [len(t) for t in self.doc_tokens]
        n = len(pool.records)
        self.avgdl = sum(self.doc_lengths) / n if n else 0.0
        self.tf: list[dict[str, int]] = []
        df: dict[str, int] = {}
        for toks in self.doc_tokens:
            counts: dict[str, int] = {}
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
            self.tf.append(counts)
            for t in counts:
                df[t] = df.get(t, 0) + 1
        self.idf = {t: math.log(1 + (n - d + 0.5) / (d + 0.5)) for t, d in df.items()}

    def score(self, query_tokens: list[str], doc_index: int) -> float:
        score = 0.0
        dl = self.doc_lengths[doc_index]
        for t in query_tokens:
            if t not in self.idf:
                continue
            tf = self.tf[doc_index].get(t, 0)
            denom = tf + self.k1 * (1 - self.b + self.b * dl / self.avgdl)
            score += self.idf[t] * tf * (self.k1 + 1) / denom
        return score

    def query(self, text: str, k: int) -> list[tuple[str, float]]:
        toks = _tokens(text)
        scored = [(r.id, self.score(toks, i)) for i, r in enumerate(self.pool.records)]
        order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i))
        return [scored[i] for i in order[:k]]


def bm25_query(pool: ExemplarPool, query_text: str, k: int) -> list[tuple[str, float]]:
    return Bm25Index(pool).query(query_text, k)


def _set_f1(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def change_similarity(c_a: dict[str, str], c_b: dict[str, str]) -> float:
    """Mean of slot-set F1 and slot-value-pair F1; deletions count as pairs."""
    f_slot = _set_f1(set(c_a), set(c_b))
    f_pair = _set_f1(set(c_a.items()), set(c_b.items()))
    return (f_slot + f_pair) / 2.0


def oracle_retrieve(pool: ExemplarPool, gold_change: dict[str, str], k: int) -> list[str]:
    """Top-k by state-change similarity against the gold label."""
    if k < 0:
        raise ValueError("k must be >= 0")
    sims = [change_similarity(gold_change, r.change) for r in pool.records]
    order = sorted(range(len(pool.records)), key=lambda i: (-sims[i], i))
    return [pool.records[i].id for i in order[:k]]


def random_retrieve(pool: ExemplarPool, k: int, seed: int) -> list[str]:
    if k > len(pool.records):
        raise ValueError(f"k={k} exceeds pool size {len(pool.records)}")
    rng = random.Random(seed)
    return rng.sample([r.id for r in pool.records], k)


@dataclass(frozen=True)
class MinedPairs:
    """Per query id: positive ids best-first and negative ids worst-first."""

    entries: dict[str, tuple[list[str], list[str]]]

    def __post_init__(self):
        for qid, (pos, neg) in self.entries.items():
            if qid in pos or qid in neg:
                raise ValueError(f"{qid}: query appears among its own pairs")
            if set(pos) & set(neg):
                raise ValueError(f"{qid}: positives and negatives overlap")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class MiningConfig:
    neighbor_frac: float = 0.10
    select_frac: float = 0.05
    select_count: int | None = None  # absolute override for the per-side count


def mine_contrastive_pairs(pool: ExemplarPool, cfg: MiningConfig = MiningConfig()) -> MinedPairs:
    """Hard positive/negative mining for retriever finetuning.

    Per record: take the ceil(neighbor_frac*(N-1)) nearest neighbors by
    cosine over current embeddings, rank them by change similarity to the
    query's label, and keep the top m as positives and bottom m as
    negatives (m = ceil(select_frac*(N-1)) or the absolute override). When
    the neighborhood holds fewer than 2m records it is split in half, the
    middle record dropped on odd sizes. All ties break by pool index.
    """
    n = len(pool.records)
    if n < 2:
        raise ValueError("pool too small to mine pairs")
    pool.require_embeddings()
    n_neighbors = math.ceil(cfg.neighbor_frac * (n - 1))
    m = cfg.select_count if cfg.select_count is not None else math.ceil(cfg.select_frac * (n - 1))
    matrix = np.array([r.embedding for r in pool.records], dtype=float)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine undefined for a zero vector")
    unit = matrix / norms[:, None]
    entries: dict[str, tuple[list[str], list[str]]] = {}
    for qi, q in enumerate(pool.records):
        sims = unit @ unit[qi]
        order = sorted((i for i in range(n) if i != qi), key=lambda i: (-sims[i], i))
        neighborhood = order[:n_neighbors]
        ranked = sorted(neighborhood,
                        key=lambda i: (-change_similarity(q.change, pool.records[i].change), i))
        if len(ranked) >= 2 * m:
            pos, neg = ranked[:m], ranked[-m:]
        else:
            half = len(ranked) // 2
            pos, neg = ranked[:half], ranked[len(ranked) - half:]
        entries[q.id] = ([pool.records[i].id for i in pos],
                         [pool.records[i].id for i in reversed(neg)])
    return MinedPairs(entries)


def export_pairs(pairs: MinedPairs, path) -> None:
    """Line-delimited JSON: a header record, then one record per query."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": "mined-pairs", "version": 1}) + "\n")
        for qid, (pos, neg) in pairs.entries.items():
            f.write(json.dumps({"query_id": qid, "positives": pos, "negatives": neg}) + "\n")


def load_mined_pairs(path) -> MinedPairs:
    entries: dict[str, tuple[list[str], list[str]]] = {}
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("schema") != "mined-pairs":
            raise ValueError(f"{path}: not a mined-pairs file")
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries[rec["query_id"]] = (list(rec["positives"]), list(rec["negatives"]))
    return MinedPairs(entries)


def export_embeddings(pool: ExemplarPool, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in pool.records:
            if r.embedding is not None:
                f.write(json.dumps({"id": r.id, "vector": list(r.embedding)}) + "\n")


def import_embeddings(pool: ExemplarPool, path) -> ExemplarPool:
    """Attach vectors from a line-delimited {id, vector} file."""
    vectors: dict[str, tuple[float, ...]] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = tuple(float(x) for x in rec["vector"])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            vectors[rec["id"]] = vec
    known = {r.id for r in pool.records}
    unknown = set(vectors) - known
    if unknown:
        raise ValueError(f"{path}: embeddings for unknown ids: {sorted(unknown)[:3]}")
    records = tuple(
        replace(r, embedding=vectors.get(r.id, r.embedding)) for r in pool.records)
    return ExemplarPool(records)


class HashingEmbedder:
    """Deterministic token-hashing embedder; a test stand-in for a real model.

    Tokens hash into ``dim`` buckets via sha1 (stable across platforms and
    processes); the vector is L2-normalized token counts. Empty text maps to
    a unit vector on bucket 0 so cosine stays defined.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim

    def __call__(self, text: str) -> tuple[float, ...]:
        vec = [0.0] * self.dim
        for tok in _tokens(text):
            h = int.from_bytes(hashlib.sha1(tok.encode("utf-8")).digest()[:8], "big")
            vec[h % self.dim] += 1.0
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return tuple(vec)
        return tuple(v / norm for v in vec)


def embed_pool(pool: ExemplarPool, embedder) -> ExemplarPool:
    """Fill in missing embeddings with the given embedder."""
    records = tuple(
        r if r.embedding is not None else replace(r, embedding=tuple(embedder(r.context_text)))
        for r in pool.records)
    return ExemplarPool(records)


def save_pool(pool: ExemplarPool, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in pool.records:
            rec = {"id": r.id, "context_text": r.context_text, "change": r.change}
            if r.embedding is not None:
                rec["embedding"] = list(r.embedding)
            if r.context is not None:
                rec["turn"] = {
                    "prev_state": r.context.prev_state,
                    "system": r.context.system_utt,
                    "user": r.context.user_utt,
                    "representation": r.context.representation,
                }
                if r.context.full_history is not None:
                    rec["turn"]["full_history"] = [list(p) for p in r.context.full_history]
            f.write(json.dumps(rec) + "\n")


def load_pool(path) -> ExemplarPool:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            ctx = None
            if "turn" in rec:
                t = rec["turn"]
                history = t.get("full_history")
                ctx = TurnContext(
                    prev_state=t["prev_state"], system_utt=t["system"],
                    user_utt=t["user"],
                    representation=t.get("representation", "prev_state_plus_turn"),
                    full_history=tuple(tuple(p) for p in history) if history is not None else None)
            records.append(ExemplarRecord(
                id=rec["id"], context_text=rec["context_text"], change=rec["change"],
                embedding=tuple(rec["embedding"]) if "embedding" in rec else None,
                context=ctx))
    return ExemplarPool(tuple(records))


@dataclass(frozen=True)
class RetrievalQuery:
    context_text: str
    gold_change: dict[str, str] | None = None  # oracle retrieval only


class EmbeddingRetriever:
    """Cosine retrieval; missing vectors are filled by the embedder."""

    def __init__(self, pool: ExemplarPool, embedder=None):
        self.embedder = embedder or HashingEmbedder()
        self.pool = embed_pool(pool, self.embedder)

    def retrieve(self, query: RetrievalQuery, k: int) -> list[str]:
        vec = tuple(self.embedder(query.context_text))
        return [rid for rid, _ in knn(self.pool, vec, k)]


class Bm25Retriever:
    def __init__(self, pool: ExemplarPool):
        self.pool = pool
        self.index = Bm25Index(pool)

    def retrieve(self, query: RetrievalQuery, k: int) -> list[str]:
        return [rid for rid, _ in self.index.query(query.context_text, k)]


class RandomRetriever:
    """Seeded uniform draws, derived per query text so call order cannot matter."""

    def __init__(self, pool: ExemplarPool, seed: int = 0):
        self.pool = pool
        self.seed = seed

    def retrieve(self, query: RetrievalQuery, k: int) -> list[str]:
        digest = hashlib.sha1(query.context_text.encode("utf-8")).digest()
        call_seed = self.seed * (1 << 64) + int.from_bytes(digest[:8], "big")
        return random_retrieve(self.pool, min(k, len(self.pool.records)), call_seed)


class OracleRetriever:
    """Ranks by state-change similarity to the gold label; an upper bound."""

    def __init__(self, pool: ExemplarPool):
        self.pool = pool

    def retrieve(self, query: RetrievalQuery, k: int) -> list[str]:
        if query.gold_change is None:
            raise ValueError("oracle retrieval needs the gold change on the query")
        return oracle_retrieve(self.pool, query.gold_change, k)


RETRIEVER_KINDS = ("embedding", "bm25", "random", "oracle")


def make_retriever(kind: str, pool: ExemplarPool, seed: int = 0, embedder=None):
    if kind == "embedding":
        return EmbeddingRetriever(pool, embedder)
    if kind == "bm25":
        return Bm25Retriever(pool)
    if kind == "random":
        return RandomRetriever(pool, seed)
    if kind == "oracle":
        return OracleRetriever(pool)
    raise ValueError(f"unknown retriever kind: {kind}")

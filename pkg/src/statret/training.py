"""Training: negative sampling, ranking losses, Adam, early stopping.

Each training instance pairs a query's positive article with ``n_neg``
negatives, a seeded mix of lexically confusable articles (BM25 top ranks,
skipping the query's positives) and uniform random draws.  The ``cnn_dot``
model minimizes a softmax loss over the positive-vs-negatives score vector;
``general_attn_head`` expands each instance into labeled pairs under a
binary cross-entropy on the head logit.

After every epoch the model is validated with the full two-stage pipeline at
``alpha_fuse = 1`` (macro F2@1); the best checkpoint is kept and training
stops after ``patience`` epochs without improvement.  With a fixed seed the
loss curve is identical across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bm25 import InvertedIndex, top_n
from .corpus import ArticleRef, CorpusStore, Query, format_ref
from .encoders import (
    encode_article_general_attention,
    encode_article_sparse_avg,
    general_attention_backward,
    relevance_logit,
    similarity_dot,
    sparse_avg_backward,
)
from .model import RetrievalModel
from .tensor import (
    binary_cross_entropy_backward,
    binary_cross_entropy_with_logit,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)

DEFAULT_NEGATIVE_MIX = {"cnn_dot": 0.5, "general_attn_head": 1.0}


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite."""


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")


@dataclass
class TrainingInstance:
    query_id: str
    positive: ArticleRef
    negatives: list[ArticleRef]
    provenance: list[str]  # "lexical" | "random", aligned with negatives

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "positive": list(self.positive),
            "negatives": [list(r) for r in self.negatives],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingInstance":
        return cls(raw["query_id"], tuple(raw["positive"]),
                   [tuple(r) for r in raw["negatives"]], raw["provenance"])


def save_training_set(path, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True) + "\n")


def load_training_set(path) -> list[TrainingInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TrainingInstance.from_dict(json.loads(line)))
    if not out:
        raise ValueError(f"{path}: empty training set")
    return out


def build_training_set(queries, store: CorpusStore, index: InvertedIndex,
                       n_neg: int = 4, mix: float = 0.5, seed: int = 0,
                       lexical_pool: int = 100) -> list[TrainingInstance]:
    """One instance per (query, positive) with ``n_neg`` distinct negatives.

    ``round(mix * n_neg)`` negatives come from the BM25 top ranks (skipping
    every positive of the query); the rest are uniform draws over the
    remaining corpus.  If the lexical pool runs short the shortfall is filled
    randomly.  Deterministic for a fixed seed; a positive never appears among
    its own negatives.
    """
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    if len(store) < n_neg + 1:
        raise ValueError(
            f"corpus has {len(store)} articles; need at least {n_neg + 1}")
    rng = np.random.default_rng(seed)
    all_refs = store.refs()
    n_lex_target = round(mix * n_neg)
    instances = []
    for query in queries:
        if not query.relevant:
            raise ValueError(f"query {query.query_id!r} has no positives")
        positives = set(query.relevant)
        pool = [c.ref for c in top_n(index, query.token_ids, lexical_pool).candidates
                if c.ref not in positives]
        for positive in query.relevant:
            lexical = pool[:n_lex_target]
            chosen = list(lexical)
            excluded = positives | set(chosen)
            rest = [r for r in all_refs if r not in excluded]
            n_random = n_neg - len(chosen)
            if n_random > 0:
                if len(rest) < n_random:
                    raise ValueError("corpus too small to sample distinct negatives")
                picks = rng.choice(len(rest), size=n_random, replace=False)
                chosen.extend(rest[i] for i in picks.tolist())
            provenance = (["lexical"] * len(lexical)
                          + ["random"] * (len(chosen) - len(lexical)))
            if positive in chosen or len(set(chosen)) != len(chosen):
                raise AssertionError(
                    f"negative sampling invariant violated for {query.query_id!r}")
            instances.append(TrainingInstance(query.query_id, positive,
                                              chosen, provenance))
    return instances


# ---------------------------------------------------------------------------
# losses

def loss_similarity_softmax(positive_score: float, negative_scores):
    """``-log softmax([pos, negs...])[0]``; returns (loss, d_pos, d_negs)."""
    scores = np.concatenate(([positive_score], np.asarray(negative_scores, float)))
    loss, probs = softmax_cross_entropy(scores, 0)
    d = softmax_cross_entropy_backward(probs, 0)
    return loss, float(d[0]), d[1:]


def loss_binary_head(logit: float, label: float):
    """Stable binary cross-entropy on a logit; returns (loss, d_logit)."""
    if label not in (0.0, 1.0):
        raise ValueError("label must be 0 or 1")
    return (binary_cross_entropy_with_logit(logit, label),
            binary_cross_entropy_backward(logit, label))


# ---------------------------------------------------------------------------
# per-instance forward/backward

def instance_loss_cnn_dot(model: RetrievalModel, query: Query, articles,
                          training: bool = False, rng=None) -> float:
    """Softmax ranking loss for [positive, negatives...]; accumulates grads."""
    encoder = model.sentence_encoder
    q_enc, q_cache = encoder.encode(query.token_ids, training=training, rng=rng)
    per_article = []
    scores = []
    for article in articles:
        sents = [encoder.encode(s.token_ids, training=training, rng=rng)
                 for s in article.sentences]
        agg, agg_cache = encode_article_sparse_avg(
            [enc for enc, _ in sents], model.config.sentence_score_source)
        scores.append(similarity_dot(q_enc.vector, agg.vector))
        per_article.append((sents, agg, agg_cache))
    loss, d_pos, d_negs = loss_similarity_softmax(scores[0], scores[1:])
    d_scores = np.concatenate(([d_pos], d_negs))
    normalized = model.config.sentence_score_source == "normalized"
    d_query_vec = np.zeros_like(q_enc.vector)
    for (sents, agg, agg_cache), d_score in zip(per_article, d_scores):
        d_article_vec = d_score * q_enc.vector
        d_query_vec += d_score * agg.vector
        d_vectors, d_words = sparse_avg_backward(agg_cache, d_article_vec)
        for j, (_, cache) in enumerate(sents):
            if normalized:
                encoder.encode_backward(cache, d_vector=d_vectors[j],
                                        d_word_weights=d_words[j])
            else:
                encoder.encode_backward(cache, d_vector=d_vectors[j],
                                        d_word_scores=d_words[j])
    encoder.encode_backward(q_cache, d_vector=d_query_vec)
    return float(loss)


def instance_loss_binary_head(model: RetrievalModel, query: Query,
                              labeled_articles, training: bool = False,
                              rng=None) -> float:
    """Mean BCE over (article, label) pairs sharing one query encoding."""
    encoder = model.sentence_encoder
    params = model.params
    concat = model.config.head_mode == "concat_query"
    q_enc, q_cache = encoder.encode(query.token_ids, training=training, rng=rng)
    matrix = params["attn_matrix"]
    matrix_bias = params["attn_matrix_bias"]
    head_w = params["head_weight"]
    head_b = params["head_bias"]
    n_pairs = len(labeled_articles)
    d_query_vec = np.zeros_like(q_enc.vector)
    total = 0.0
    for article, label in labeled_articles:
        sents = [encoder.encode(s.token_ids, training=training, rng=rng)
                 for s in article.sentences]
        vectors = np.stack([enc.vector for enc, _ in sents])
        agg, agg_cache = encode_article_general_attention(
            q_enc.vector, vectors, matrix.value, float(matrix_bias.value[0]))
        logit, head_input = relevance_logit(agg.vector, head_w.value, head_b.value,
                                            q_enc.vector if concat else None)
        loss, d_logit = loss_binary_head(logit, label)
        total += loss
        d_logit /= n_pairs
        head_w.grad += d_logit * head_input
        head_b.grad[0] += d_logit
        d_input = d_logit * head_w.value
        if concat:
            d = q_enc.vector.shape[0]
            d_query_vec += d_input[:d]
            d_article_vec = d_input[d:]
        else:
            d_article_vec = d_input
        d_vectors, d_q, d_matrix, d_bias = general_attention_backward(
            agg_cache, d_article_vec)
        matrix.grad += d_matrix
        matrix_bias.grad[0] += d_bias
        d_query_vec += d_q
        for j, (_, cache) in enumerate(sents):
            encoder.encode_backward(cache, d_vector=d_vectors[j])
    encoder.encode_backward(q_cache, d_vector=d_query_vec)
    return total / n_pairs


def instance_loss(model: RetrievalModel, query: Query, store: CorpusStore,
                  instance: TrainingInstance, training: bool = False,
                  rng=None) -> float:
    articles = [store.article(instance.positive)] + [store.article(r)
                                                     for r in instance.negatives]
    if model.config.model_kind == "cnn_dot":
        return instance_loss_cnn_dot(model, query, articles, training, rng)
    labeled = [(articles[0], 1.0)] + [(a, 0.0) for a in articles[1:]]
    return instance_loss_binary_head(model, query, labeled, training, rng)


# ---------------------------------------------------------------------------
# optimizer / loop

class Adam:
    """Adam with bias correction; slots keyed by parameter name."""

    def __init__(self, params, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def validation_macro_f2_at_1(model: RetrievalModel, store: CorpusStore,
                             index: InvertedIndex, queries) -> float:
    """Macro F2@1 through the full pipeline with the deep score alone."""
    from .metrics import prf2_at_k
    from .pipeline import PipelineConfig, retrieve

    config = PipelineConfig(alpha_fuse=1.0, top_k=1)
    values = []
    for query in queries:
        result = retrieve(query, store, index, model, config)
        top = [r.ref for r in result.ranked[:1]]
        _, _, f2 = prf2_at_k(top, set(query.relevant), 1)
        values.append(f2)
    return sum(values) / len(values)


@dataclass
class TrainResult:
    model: RetrievalModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = 0.0
    stopped_early: bool = False

    def save_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def train(model: RetrievalModel, store: CorpusStore, index: InvertedIndex,
          instances, queries_by_id: dict, validation_queries,
          optim: OptimConfig, log_fn=None) -> TrainResult:
    """Mini-batch Adam with per-epoch pipeline validation and early stopping.

    ``validation_queries`` must be disjoint from the training queries.  The
    parameters of the best validation epoch are restored before returning.
    A non-finite loss aborts with :class:`TrainingDiverged`.
    """
    if not instances:
        raise ValueError("empty training set")
    for inst in instances:
        if inst.query_id not in queries_by_id:
            raise ValueError(f"training instance references unknown query "
                             f"{inst.query_id!r}")
    rng = np.random.default_rng(optim.seed)
    adam = Adam(model.params, learning_rate=optim.learning_rate)
    order = np.arange(len(instances))
    history = []
    best_val = -math.inf
    best_state = model.params.state()
    best_epoch = 0
    bad_epochs = 0
    stopped_early = False
    for epoch in range(1, optim.max_epochs + 1):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), optim.batch_size):
            batch = order[start:start + optim.batch_size]
            model.params.zero_grads()
            for i in batch:
                inst = instances[int(i)]
                try:
                    loss = instance_loss(model, queries_by_id[inst.query_id],
                                         store, inst, training=True, rng=rng)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"non-finite activations at epoch {epoch} "
                        f"(instance for query {inst.query_id!r}): {exc}")
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} "
                        f"(instance for query {inst.query_id!r})")
                epoch_losses.append(loss)
            for p in model.params:
                p.grad /= len(batch)
            adam.step()
            model.bump_version()
        val = validation_macro_f2_at_1(model, store, index, validation_queries)
        row = {"epoch": epoch, "loss": sum(epoch_losses) / len(epoch_losses),
               "val_macro_f2_at_1": val}
        history.append(row)
        if log_fn is not None:
            log_fn(row)
        if val > best_val:
            best_val = val
            best_state = model.params.state()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= optim.patience:
                stopped_early = True
                break
    model.params.load_state(best_state)
    model.bump_version()
    model.history = history
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_val=best_val, stopped_early=stopped_early)

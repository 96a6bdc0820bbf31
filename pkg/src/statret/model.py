"""Model assembly: configuration, parameter construction, checkpoints.

Two reranker kinds share the convolutional sentence encoder:

* ``cnn_dot``: query-independent ``sparse_avg`` article vectors scored by a
  dot product against the encoded query.
* ``general_attn_head``: query-conditioned sentence aggregation with an
  affine relevance head; the article ranking score is the raw logit.

Checkpoints are deterministic JSON (config, vocabulary hash, named tensors,
training history), so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import CorpusStore, Query, format_ref
from .encoders import (
    SCORE_SOURCES,
    CnnSentenceEncoder,
    encode_article_general_attention,
    encode_article_sparse_avg,
    init_cnn_params,
    relevance_logit,
    similarity_dot,
)
from .tensor import ParamSet, ParamTensor

CHECKPOINT_FORMAT_VERSION = 1

MODEL_KINDS = ("cnn_dot", "general_attn_head")
HEAD_MODES = ("article_only", "concat_query")

# Default sizing for the convolutional encoder path.
DEFAULT_CNN_PROFILE = {
    "embedding_dim": 512,
    "num_filters": 512,
    "attention_dim": 200,
    "dropout": 0.2,
}

# Reference sizing for a pretrained transformer backbone, should one be
# plugged in behind the SentenceEncoder interface.  Recorded for config
# compatibility; nothing in this package instantiates it.
TRANSFORMER_BACKBONE_PROFILE = {
    "max_position_embeddings": 514,
    "hidden_size": 768,
    "hidden_layers": 12,
    "attention_heads": 12,
    "dropout": 0.1,
}


@dataclass
class ModelConfig:
    model_kind: str
    vocab_size: int
    embedding_dim: int = DEFAULT_CNN_PROFILE["embedding_dim"]
    num_filters: int = DEFAULT_CNN_PROFILE["num_filters"]
    attention_dim: int = DEFAULT_CNN_PROFILE["attention_dim"]
    half_window: int = 2
    dropout: float = DEFAULT_CNN_PROFILE["dropout"]
    sentence_score_source: str = "raw"
    head_mode: str = "article_only"

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.sentence_score_source not in SCORE_SOURCES:
            raise ValueError(f"unknown sentence_score_source {self.sentence_score_source!r}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        if min(self.vocab_size, self.embedding_dim, self.num_filters,
               self.attention_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.half_window < 0:
            raise ValueError("half_window must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def init_params(config: ModelConfig, rng) -> ParamSet:
    params = init_cnn_params(config.vocab_size, config.embedding_dim,
                             config.num_filters, config.attention_dim,
                             config.half_window, rng)
    if config.model_kind == "general_attn_head":
        d = config.num_filters
        params.add(ParamTensor("attn_matrix", rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))))
        params.add(ParamTensor("attn_matrix_bias", np.zeros(1)))
        head_dim = 2 * d if config.head_mode == "concat_query" else d
        params.add(ParamTensor("head_weight",
                               rng.normal(0.0, 1.0 / np.sqrt(head_dim), (head_dim,))))
        params.add(ParamTensor("head_bias", np.zeros(1)))
    return params


class RetrievalModel:
    """Parameters plus cached article components for one corpus store.

    Sentence vectors (and the sparse-avg aggregates) are query-independent,
    so they are cached per article and invalidated whenever the parameters
    change (``bump_version`` after each optimizer step).
    """

    def __init__(self, config: ModelConfig, params: ParamSet, vocab_hash: str,
                 history: list | None = None):
        self.config = config
        self.params = params
        self.vocab_hash = vocab_hash
        self.history = history if history is not None else []
        self.sentence_encoder = CnnSentenceEncoder(params, config.half_window,
                                                   config.dropout)
        self._article_cache: dict = {}

    @classmethod
    def create(cls, config: ModelConfig, vocab_hash: str, seed: int = 0) -> "RetrievalModel":
        rng = np.random.default_rng(seed)
        return cls(config, init_params(config, rng), vocab_hash)

    def bump_version(self) -> None:
        """Invalidate cached article encodings after a parameter update."""
        self._article_cache.clear()

    # -- encoding ----------------------------------------------------------

    def encode_query(self, query: Query) -> np.ndarray:
        """Queries are short: they run through the sentence encoder whole."""
        encoding, _ = self.sentence_encoder.encode(query.token_ids, training=False)
        return encoding.vector

    def _components(self, article):
        """Query-independent pieces of one article, cached."""
        hit = self._article_cache.get(article.ref)
        if hit is not None:
            return hit
        encodings = [self.sentence_encoder.encode(s.token_ids, training=False)[0]
                     for s in article.sentences]
        agg, _ = encode_article_sparse_avg(encodings, self.config.sentence_score_source)
        vectors = np.stack([e.vector for e in encodings])
        hit = (vectors, agg)
        self._article_cache[article.ref] = hit
        return hit

    def encode_article(self, article):
        """Query-independent article encoding (sparse_avg aggregation)."""
        return self._components(article)[1]

    def deep_scores(self, query: Query, refs, store: CorpusStore) -> np.ndarray:
        """Neural relevance scores for the candidate references, in order."""
        query_vector = self.encode_query(query)
        scores = np.empty(len(refs))
        if self.config.model_kind == "cnn_dot":
            for i, ref in enumerate(refs):
                agg = self.encode_article(store.article(ref))
                scores[i] = similarity_dot(query_vector, agg.vector)
        else:
            matrix = self.params["attn_matrix"].value
            bias = float(self.params["attn_matrix_bias"].value[0])
            weight = self.params["head_weight"].value
            head_bias = self.params["head_bias"].value
            concat = self.config.head_mode == "concat_query"
            for i, ref in enumerate(refs):
                vectors, _ = self._components(store.article(ref))
                agg, _ = encode_article_general_attention(query_vector, vectors,
                                                          matrix, bias)
                logit, _ = relevance_logit(agg.vector, weight, head_bias,
                                           query_vector if concat else None)
                scores[i] = logit
        return scores

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "model-checkpoint",
            "config": asdict(self.config),
            "vocab_hash": self.vocab_hash,
            "history": self.history,
            "tensors": {
                p.name: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                for p in self.params
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RetrievalModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version!r}")
        config = ModelConfig(**payload["config"])
        params = init_params(config, np.random.default_rng(0))
        for p in params:
            raw = payload["tensors"].get(p.name)
            if raw is None:
                raise ValueError(f"checkpoint missing tensor {p.name!r}")
            value = np.asarray(raw["values"], dtype=np.float64).reshape(raw["shape"])
            if value.shape != p.value.shape:
                raise ValueError(
                    f"checkpoint tensor {p.name!r} has shape {value.shape}, "
                    f"expected {p.value.shape}")
            p.value[...] = value
            p.zero_grad()
        return cls(config, params, payload["vocab_hash"], payload.get("history", []))

    def require_vocab(self, store: CorpusStore) -> None:
        if self.vocab_hash != store.vocab_hash():
            raise ValueError(
                "checkpoint vocabulary hash does not match the corpus store")

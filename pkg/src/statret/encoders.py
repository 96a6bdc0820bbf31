"""Hierarchical attentive encoders.

Sentence level: a context-window convolution over word embeddings with an
additive-tanh word attention, pooled into one vector per sentence.  Article
level, two variants:

* ``sparse_avg``: each sentence is scored by the mean of its raw word
  attention scores; sparsemax over those means weights the sentence vectors.
  Query-independent by construction.
* ``general_attn``: sentence vectors are scored against the encoded query
  through a bilinear-tanh form and aggregated with sparsemax.  Query-
  conditioned; a single affine head on top yields a relevance logit.

The sentence encoder is pluggable: anything implementing
:class:`SentenceEncoder` (a fixed-width vector plus per-word scores, with a
gradient hook) can feed the article-level aggregation.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from collections import namedtuple

import numpy as np

from .tensor import (
    ParamSet,
    ParamTensor,
    affine,
    affine_backward,
    conv_context,
    conv_context_backward,
    dot,
    dropout,
    dropout_backward,
    embedding_backward,
    embedding_lookup,
    masked_softmax,
    masked_softmax_backward,
    sparsemax,
    sparsemax_backward,
    tanh,
    tanh_backward,
)

SCORE_SOURCES = ("raw", "normalized")


@dataclass
class SentenceEncoding:
    """One encoded sentence: pooled vector plus word attention."""
    vector: np.ndarray       # (num_filters,)
    word_scores: np.ndarray  # (M,) raw attention scores
    word_weights: np.ndarray  # (M,) softmax of word_scores


@dataclass
class ArticleEncoding:
    """One aggregated article: pooled vector plus sentence attention."""
    vector: np.ndarray            # (num_filters,)
    sentence_weights: np.ndarray  # (N,) sparsemax weights
    mode: str                     # "sparse_avg" | "general_attn"


class SentenceEncoder(ABC):
    """Interface for sentence-to-vector encoders.

    Implementations map a token-id sequence to a fixed-width vector with
    per-word attention scores and push gradients back into their own
    parameters.  The shipped implementation is the convolutional encoder
    below; a pretrained contextual encoder can be dropped in behind the same
    surface.
    """

    @property
    @abstractmethod
    def output_dim(self) -> int: ...

    @abstractmethod
    def encode(self, token_ids, training: bool = False, rng=None): ...

    @abstractmethod
    def encode_backward(self, cache, d_vector=None, d_word_scores=None,
                        d_word_weights=None) -> None: ...


# parameter names used by the convolutional encoder
CNN_PARAM_NAMES = ("embedding", "conv_filters", "conv_bias",
                   "attn_weight", "attn_bias", "attn_query")


def init_cnn_params(vocab_size: int, embedding_dim: int, num_filters: int,
                    attention_dim: int, half_window: int, rng) -> ParamSet:
    """Seeded initialization; matrices are scaled by 1/sqrt(fan_in)."""
    if min(vocab_size, embedding_dim, num_filters, attention_dim) < 1:
        raise ValueError("encoder dimensions must be positive")
    if half_window < 0:
        raise ValueError("half_window must be >= 0")
    window = (2 * half_window + 1) * embedding_dim
    return ParamSet([
        ParamTensor("embedding", rng.normal(0.0, 0.1, (vocab_size, embedding_dim))),
        ParamTensor("conv_filters", rng.normal(0.0, 1.0 / np.sqrt(window),
                                               (num_filters, window))),
        ParamTensor("conv_bias", np.zeros(num_filters)),
        ParamTensor("attn_weight", rng.normal(0.0, 1.0 / np.sqrt(num_filters),
                                              (attention_dim, num_filters))),
        ParamTensor("attn_bias", np.zeros(attention_dim)),
        ParamTensor("attn_query", rng.normal(0.0, 1.0 / np.sqrt(attention_dim),
                                             (attention_dim,))),
    ])


_CnnCache = namedtuple("_CnnCache", "ids drop_mask conv_cache aff_cache h c alpha")


class CnnSentenceEncoder(SentenceEncoder):
    """Context-window convolution with additive word attention.

    Per position: ``c_i = relu(filters @ window_i) + bias`` (bias outside the
    rectifier), scored by ``a_i = query . tanh(W c_i + w)``, pooled with the
    softmax of those scores.
    """

    def __init__(self, params: ParamSet, half_window: int, dropout_rate: float):
        self.params = params
        self.half_window = half_window
        self.dropout_rate = dropout_rate

    @property
    def output_dim(self) -> int:
        return self.params["conv_filters"].shape[0]

    def encode(self, token_ids, training: bool = False, rng=None):
        if len(token_ids) == 0:
            raise ValueError("cannot encode an empty sentence")
        e_raw, ids = embedding_lookup(self.params["embedding"].value, token_ids)
        e, drop_mask = dropout(e_raw, self.dropout_rate, rng, training)
        c, conv_cache = conv_context(e, self.params["conv_filters"].value,
                                     self.params["conv_bias"].value, self.half_window)
        z, aff_cache = affine(c, self.params["attn_weight"].value,
                              self.params["attn_bias"].value)
        h = tanh(z)
        a = h @ self.params["attn_query"].value
        alpha = masked_softmax(a)
        r = alpha @ c
        encoding = SentenceEncoding(vector=r, word_scores=a, word_weights=alpha)
        return encoding, _CnnCache(ids, drop_mask, conv_cache, aff_cache, h, c, alpha)

    def encode_backward(self, cache, d_vector=None, d_word_scores=None,
                        d_word_weights=None) -> None:
        m = cache.c.shape[0]
        d_c = np.zeros_like(cache.c)
        d_alpha = np.zeros(m)
        if d_vector is not None:
            d_c += np.outer(cache.alpha, d_vector)
            d_alpha += cache.c @ d_vector
        if d_word_weights is not None:
            d_alpha += d_word_weights
        d_a = masked_softmax_backward(cache.alpha, d_alpha)
        if d_word_scores is not None:
            d_a = d_a + d_word_scores
        q = self.params["attn_query"].value
        self.params["attn_query"].grad += cache.h.T @ d_a
        d_z = tanh_backward(cache.h, np.outer(d_a, q))
        d_c2, d_w, d_b = affine_backward(cache.aff_cache, d_z)
        self.params["attn_weight"].grad += d_w
        self.params["attn_bias"].grad += d_b
        d_c += d_c2
        d_e, d_f, d_bt = conv_context_backward(cache.conv_cache, d_c)
        self.params["conv_filters"].grad += d_f
        self.params["conv_bias"].grad += d_bt
        d_e = dropout_backward(cache.drop_mask, d_e)
        embedding_backward(self.params["embedding"].grad, cache.ids, d_e)


# ---------------------------------------------------------------------------
# article-level aggregation

_SparseAvgCache = namedtuple("_SparseAvgCache", "vectors weights lengths score_source")


def encode_article_sparse_avg(sentence_encodings, score_source: str = "raw"):
    """Sparsemax over per-sentence mean word scores; query-independent.

    ``score_source`` picks whether the mean runs over the raw word scores
    (default) or the normalized word weights.
    """
    if not sentence_encodings:
        raise ValueError("cannot aggregate zero sentences")
    if score_source not in SCORE_SOURCES:
        raise ValueError(f"unknown score_source {score_source!r}")
    if score_source == "raw":
        omega = np.array([float(np.mean(e.word_scores)) for e in sentence_encodings])
    else:
        omega = np.array([float(np.mean(e.word_weights)) for e in sentence_encodings])
    weights = sparsemax(omega)
    vectors = np.stack([e.vector for e in sentence_encodings])
    vec = weights @ vectors
    lengths = [len(e.word_scores) for e in sentence_encodings]
    encoding = ArticleEncoding(vector=vec, sentence_weights=weights, mode="sparse_avg")
    return encoding, _SparseAvgCache(vectors, weights, lengths, score_source)


def sparse_avg_backward(cache: _SparseAvgCache, d_vector: np.ndarray):
    """Returns per-sentence vector grads and per-sentence word-score grads."""
    d_weights = cache.vectors @ d_vector
    d_vectors = np.outer(cache.weights, d_vector)
    d_omega = sparsemax_backward(cache.weights, d_weights)
    d_words = [np.full(m, d_omega[j] / m) for j, m in enumerate(cache.lengths)]
    return d_vectors, d_words


_GeneralAttnCache = namedtuple("_GeneralAttnCache",
                               "vectors t weights matrix query_vector")


def encode_article_general_attention(query_vector: np.ndarray,
                                     sentence_vectors: np.ndarray,
                                     matrix: np.ndarray, bias: float):
    """Query-conditioned aggregation: ``q . tanh(A r_i + b)`` then sparsemax."""
    vectors = np.asarray(sentence_vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("sentence_vectors must be (N, dim)")
    d = vectors.shape[1]
    if matrix.shape != (d, d) or query_vector.shape != (d,):
        raise ValueError(
            f"dimension mismatch: vectors {vectors.shape}, matrix {matrix.shape}, "
            f"query {query_vector.shape}")
    t = np.tanh(vectors @ matrix.T + bias)  # scalar bias broadcast
    scores = t @ query_vector
    weights = sparsemax(scores)
    vec = weights @ vectors
    encoding = ArticleEncoding(vector=vec, sentence_weights=weights, mode="general_attn")
    return encoding, _GeneralAttnCache(vectors, t, weights, matrix, query_vector)


def general_attention_backward(cache: _GeneralAttnCache, d_vector: np.ndarray):
    """Returns (d_sentence_vectors, d_query_vector, d_matrix, d_bias)."""
    d_weights = cache.vectors @ d_vector
    d_vectors = np.outer(cache.weights, d_vector)
    d_scores = sparsemax_backward(cache.weights, d_weights)
    d_query = cache.t.T @ d_scores
    d_z = tanh_backward(cache.t, np.outer(d_scores, cache.query_vector))
    d_matrix = d_z.T @ cache.vectors
    d_bias = float(d_z.sum())
    d_vectors += d_z @ cache.matrix
    return d_vectors, d_query, d_matrix, d_bias


# ---------------------------------------------------------------------------
# scoring heads

def similarity_dot(query_vector: np.ndarray, article_vector: np.ndarray) -> float:
    """Dot-product relevance score; dimensions must agree."""
    return dot(query_vector, article_vector)


def relevance_logit(article_vector: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                    query_vector: np.ndarray | None = None):
    """One affine layer on the article vector (optionally concat the query).

    Returns ``(logit, head_input)``; the head input is what the backward pass
    needs.
    """
    x = (np.concatenate([query_vector, article_vector])
         if query_vector is not None else article_vector)
    if weight.shape != x.shape:
        raise ValueError(f"head weight shape {weight.shape} does not match input {x.shape}")
    return float(np.dot(weight, x) + bias[0]), x

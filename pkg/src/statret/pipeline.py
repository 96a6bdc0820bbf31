"""Two-stage retrieval: BM25 candidate filter, neural rescore, convex fusion.

Per query, both score vectors are normalized over the candidate set and
mixed as ``alpha * deep + (1 - alpha) * lexical``.  ``alpha_fuse = 0``
reproduces the BM25 ordering exactly (including tie-breaks by ascending
reference); ``alpha_fuse = 1`` ranks purely by the reranker.  A query whose
terms match nothing in the corpus yields an empty, flagged result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bm25 import InvertedIndex, top_n
from .corpus import ArticleRef, CorpusStore, Query, format_ref
from .encoders import encode_article_general_attention, encode_article_sparse_avg
from .model import RetrievalModel

NORMALIZATIONS = ("minmax", "zscore", "none")

# Candidate-set sizes that keep the stage-1 recall ceiling harmless for each
# reranker kind; the dot-product path is cheap enough to rescore far more.
DEFAULT_N_FILTER = {"cnn_dot": 1000, "general_attn_head": 150}


@dataclass
class PipelineConfig:
    alpha_fuse: float = 0.5
    n_filter: int | None = None   # default depends on the model kind
    top_k: int | None = None      # default min(n_filter, 100)
    normalization: str = "minmax"

    def resolve(self, model_kind: str = "cnn_dot") -> tuple[int, int]:
        """Concrete (n_filter, top_k) for a model kind, with validation."""
        if not 0.0 <= self.alpha_fuse <= 1.0:
            raise ValueError("alpha_fuse must lie in [0, 1]")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        n_filter = self.n_filter if self.n_filter is not None \
            else DEFAULT_N_FILTER[model_kind]
        top_k = self.top_k if self.top_k is not None else min(n_filter, 100)
        if n_filter < 1:
            raise ValueError("n_filter must be >= 1")
        if not 1 <= top_k <= n_filter:
            raise ValueError(f"top_k must lie in [1, n_filter={n_filter}]")
        return n_filter, top_k


@dataclass
class RankedArticle:
    ref: ArticleRef
    s_lexical: float
    s_deep: float
    s_final: float
    rank: int


@dataclass
class RetrievalResult:
    ranked: list = field(default_factory=list)
    no_lexical_match: bool = False
    candidates_considered: int = 0


def normalize_scores(values, method: str = "minmax") -> np.ndarray:
    """Per-query normalization; a constant vector maps to 0.5 under minmax."""
    v = np.asarray(values, dtype=np.float64)
    if method == "none":
        return v.copy()
    if method == "minmax":
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            return np.full(v.shape, 0.5)
        return (v - lo) / (hi - lo)
    if method == "zscore":
        sd = float(v.std())
        if sd == 0.0:
            return np.zeros(v.shape)
        return (v - v.mean()) / sd
    raise ValueError(f"unknown normalization {method!r}")


def fuse_scores(s_lexical, s_deep, alpha_fuse: float,
                normalization: str = "minmax") -> np.ndarray:
    """Convex mix of the normalized lexical and deep score vectors."""
    if not 0.0 <= alpha_fuse <= 1.0:
        raise ValueError("alpha_fuse must lie in [0, 1]")
    lex = normalize_scores(s_lexical, normalization)
    deep = normalize_scores(s_deep, normalization)
    return alpha_fuse * deep + (1.0 - alpha_fuse) * lex


def retrieve(query: Query, store: CorpusStore, index: InvertedIndex,
             model: RetrievalModel | None, config: PipelineConfig) -> RetrievalResult:
    """Rank the BM25 candidate set by the fused score.

    Without a model the run is purely lexical (``alpha_fuse`` forced to 0).
    Ordering is (fused score desc, reference asc), deterministic throughout.
    """
    if model is not None:
        model.require_vocab(store)
    kind = model.config.model_kind if model is not None else "cnn_dot"
    n_filter, top_k = config.resolve(kind)
    candidates = top_n(index, query.token_ids, n_filter)
    if candidates.no_lexical_match:
        return RetrievalResult(ranked=[], no_lexical_match=True, candidates_considered=0)
    refs = candidates.refs()
    lexical = np.array([c.score for c in candidates.candidates])
    if model is not None:
        deep = np.asarray(model.deep_scores(query, refs, store), dtype=np.float64)
        alpha = config.alpha_fuse
    else:
        deep = np.zeros(len(refs))
        alpha = 0.0
    fused = fuse_scores(lexical, deep, alpha, config.normalization)
    order = sorted(range(len(refs)), key=lambda i: (-fused[i], refs[i]))
    ranked = [
        RankedArticle(ref=refs[i], s_lexical=float(lexical[i]),
                      s_deep=float(deep[i]), s_final=float(fused[i]), rank=pos + 1)
        for pos, i in enumerate(order[:top_k])
    ]
    return RetrievalResult(ranked=ranked, no_lexical_match=False,
                           candidates_considered=len(refs))


@dataclass
class SweepResult:
    rows: list          # (alpha, macro_f2_at_1) in ascending alpha
    best_alpha: float
    best_macro_f2: float

    def to_tsv(self) -> str:
        lines = ["alpha\tmacro_f2_at_1"]
        lines.extend(f"{alpha:g}\t{f2!r}" for alpha, f2 in self.rows)
        return "\n".join(lines) + "\n"


def sweep_alpha(queries, store: CorpusStore, index: InvertedIndex,
                model: RetrievalModel, config: PipelineConfig,
                grid_step: float = 0.05) -> SweepResult:
    """Macro F2@1 on a fixed grid of fusion weights; ties pick the smaller.

    Candidate sets and deep scores are computed once per query; only the mix
    varies across grid points.
    """
    from .metrics import prf2_at_k

    if not queries:
        raise ValueError("empty query set")
    steps = round(1.0 / grid_step)
    if steps < 1 or abs(steps * grid_step - 1.0) > 1e-9:
        raise ValueError("grid_step must divide 1 evenly")
    n_filter, _ = config.resolve(model.config.model_kind)
    per_query = []
    for query in queries:
        if not query.relevant:
            raise ValueError(f"query {query.query_id!r} has no judgments")
        candidates = top_n(index, query.token_ids, n_filter)
        if candidates.no_lexical_match:
            per_query.append(None)
            continue
        refs = candidates.refs()
        lexical = np.array([c.score for c in candidates.candidates])
        deep = np.asarray(model.deep_scores(query, refs, store), dtype=np.float64)
        per_query.append((refs, lexical, deep, set(query.relevant)))

    rows = []
    best_alpha, best_f2 = 0.0, -1.0
    for i in range(steps + 1):
        alpha = i / steps
        values = []
        for entry in per_query:
            if entry is None:
                values.append(0.0)
                continue
            refs, lexical, deep, relevant = entry
            fused = fuse_scores(lexical, deep, alpha, config.normalization)
            top = min(range(len(refs)), key=lambda j: (-fused[j], refs[j]))
            _, _, f2 = prf2_at_k([refs[top]], relevant, 1)
            values.append(f2)
        macro = sum(values) / len(values)
        rows.append((alpha, macro))
        if macro > best_f2:
            best_alpha, best_f2 = alpha, macro
    return SweepResult(rows=rows, best_alpha=best_alpha, best_macro_f2=best_f2)


@dataclass
class AttentionExplanation:
    query_id: str
    article_ref: str
    mode: str
    sentence_weights: list
    word_weights: list       # per sentence, aligned with tokens
    sentences: list          # tokenized sentence texts
    query_tokens: list
    query_dependent: bool

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "article_ref": self.article_ref,
            "mode": self.mode,
            "sentence_weights": self.sentence_weights,
            "word_weights": self.word_weights,
            "sentences": self.sentences,
            "query_tokens": self.query_tokens,
            "query_dependent": self.query_dependent,
        }


def explain(query: Query, article_ref, store: CorpusStore,
            model: RetrievalModel) -> AttentionExplanation:
    """Sentence and word attention weights for one (query, article) pair.

    For ``cnn_dot`` the article weights are query-independent and flagged as
    such; ``general_attn_head`` weights change with the query.
    """
    model.require_vocab(store)
    article = store.article(article_ref)
    encoder = model.sentence_encoder
    encodings = [encoder.encode(s.token_ids, training=False)[0]
                 for s in article.sentences]
    if model.config.model_kind == "cnn_dot":
        agg, _ = encode_article_sparse_avg(encodings,
                                           model.config.sentence_score_source)
        query_dependent = False
    else:
        vectors = np.stack([e.vector for e in encodings])
        agg, _ = encode_article_general_attention(
            model.encode_query(query), vectors,
            model.params["attn_matrix"].value,
            float(model.params["attn_matrix_bias"].value[0]))
        query_dependent = True
    return AttentionExplanation(
        query_id=query.query_id,
        article_ref=format_ref(article.ref),
        mode=agg.mode,
        sentence_weights=[float(w) for w in agg.sentence_weights],
        word_weights=[[float(w) for w in e.word_weights] for e in encodings],
        sentences=[" ".join(s.tokens) for s in article.sentences],
        query_tokens=list(query.tokens),
        query_dependent=query_dependent,
    )

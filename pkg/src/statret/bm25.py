"""Inverted index with Okapi BM25 scoring.

The index is keyed by vocabulary ids.  The reserved PAD/UNK ids are never
indexed, so rare tokens that fell back to UNK cannot spuriously match each
other; document lengths still count every token.  IDF uses the +1-smoothed
form ``ln(1 + (N - df + 0.5) / (df + 0.5))``, which is strictly positive.
Query tokens are scored as a multiset: a term repeated in the query
contributes once per occurrence, and only articles with a positive score are
candidates.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .corpus import PAD_ID, UNK_ID, ArticleRef, CorpusStore, format_ref

INDEX_FORMAT_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


@dataclass
class CandidateScore:
    ref: ArticleRef
    score: float
    rank: int


@dataclass
class LexicalCandidates:
    candidates: list[CandidateScore]
    no_lexical_match: bool

    def refs(self) -> list[ArticleRef]:
        return [c.ref for c in self.candidates]


class InvertedIndex:
    """Postings plus document statistics for BM25 scoring.

    ``postings`` maps a term id to an ``{article_ref: term_frequency}`` dict
    whose keys are sorted by reference; ``doc_lengths`` is ordered the same
    way.  The k1/b hyperparameters chosen at build time travel with the
    index so scoring stays consistent across stages.
    """

    def __init__(self, postings: dict, doc_lengths: dict, k1: float = DEFAULT_K1,
                 b: float = DEFAULT_B):
        if not doc_lengths:
            raise ValueError("cannot build an index over an empty corpus")
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = sum(doc_lengths.values()) / self.doc_count
        self.k1 = float(k1)
        self.b = float(b)

    def doc_frequency(self, term: int) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: int) -> float:
        df = self.doc_frequency(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def save(self, path) -> None:
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "k1": self.k1,
            "b": self.b,
            "doc_lengths": [[law, art, n] for (law, art), n in self.doc_lengths.items()],
            "postings": [
                [term, [[law, art, tf] for (law, art), tf in plist.items()]]
                for term, plist in sorted(self.postings.items())
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index format version {version!r}")
        doc_lengths = {(law, art): n for law, art, n in payload["doc_lengths"]}
        postings = {
            term: {(law, art): tf for law, art, tf in plist}
            for term, plist in payload["postings"]
        }
        return cls(postings, doc_lengths, payload["k1"], payload["b"])


def build_index(store: CorpusStore, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    """Index every article of the store; postings are sorted by reference."""
    postings: dict[int, dict[ArticleRef, int]] = {}
    doc_lengths: dict[ArticleRef, int] = {}
    for article in sorted(store.articles, key=lambda a: a.ref):
        ids = article.token_ids()
        doc_lengths[article.ref] = len(ids)
        for term, tf in sorted(Counter(ids).items()):
            if term in (PAD_ID, UNK_ID):
                continue
            postings.setdefault(term, {})[article.ref] = tf
    return InvertedIndex(postings, doc_lengths, k1, b)


def _length_norm(index: InvertedIndex, ref: ArticleRef) -> float:
    dl = index.doc_lengths[ref]
    return index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)


def bm25_score(index: InvertedIndex, query_token_ids, article_ref) -> float:
    """Okapi BM25 score of one article for the given query token ids.

    Terms absent from the article contribute zero; an unknown reference is
    an error rather than a zero.
    """
    ref = tuple(article_ref)
    if ref not in index.doc_lengths:
        raise KeyError(f"unknown article {format_ref(ref)}")
    norm = _length_norm(index, ref)
    score = 0.0
    for term in query_token_ids:
        plist = index.postings.get(term)
        if not plist:
            continue
        tf = plist.get(ref)
        if not tf:
            continue
        score += index.idf(term) * (tf * (index.k1 + 1.0)) / (tf + norm)
    return score


def top_n(index: InvertedIndex, query_token_ids, n: int) -> LexicalCandidates:
    """The ``n`` highest-scoring articles, ties broken by ascending reference.

    Only articles sharing at least one indexed term with the query score
    above zero; when nothing matches, the result is empty and flagged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    acc: dict[ArticleRef, float] = {}
    for term in query_token_ids:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ref, tf in plist.items():
            contrib = idf * (tf * (index.k1 + 1.0)) / (tf + _length_norm(index, ref))
            acc[ref] = acc.get(ref, 0.0) + contrib
    ranked = sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    candidates = [CandidateScore(ref, score, i + 1) for i, (ref, score) in enumerate(ranked)]
    return LexicalCandidates(candidates, no_lexical_match=not candidates)

"""Corpus ingestion, tokenization and vocabulary construction.

Input corpora are JSONL files with one article per line::

    {"law_id": "59/2020", "article_id": "87", "title": "...", "text": "..."}

Query sets use::

    {"query_id": "q001", "text": "...", "relevant": [["59/2020", "87"]]}

Articles are split into sentences (newlines plus sentence-final punctuation),
tokenized under a language profile and encoded against a frequency-thresholded
vocabulary.  Ids 0 and 1 are reserved for padding and unknown tokens; the
encoder never emits the padding id, and the share of tokens that fell back to
the unknown id is always surfaced in the ingestion / query-set reports.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, asdict

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

PROFILES = ("spaced", "charbigram")

STORE_FORMAT_VERSION = 1

ArticleRef = tuple  # (law_id, article_id)


class CorpusError(ValueError):
    """Malformed corpus/query input or an unsatisfiable lookup."""


def format_ref(ref: ArticleRef) -> str:
    return f"{ref[0]}:{ref[1]}"


def parse_ref(text: str) -> ArticleRef:
    """Parse a ``law_id:article_id`` reference string."""
    law, sep, art = text.rpartition(":")
    if not sep or not law or not art:
        raise CorpusError(f"invalid article reference {text!r} (expected law_id:article_id)")
    return (law, art)


def tokenize(text: str, profile: str = "spaced") -> list[str]:
    """Lowercase, NFC-normalize and tokenize ``text``.

    The ``spaced`` profile splits on whitespace.  ``charbigram`` emits
    character bigrams over each whitespace-delimited run, for scripts that
    do not mark word boundaries; a single-character run yields the character
    itself so no non-empty run is dropped.
    """
    if profile not in PROFILES:
        raise CorpusError(f"unknown language profile {profile!r} (expected one of {PROFILES})")
    runs = unicodedata.normalize("NFC", text).lower().split()
    if profile == "spaced":
        return runs
    tokens: list[str] = []
    for run in runs:
        if len(run) == 1:
            tokens.append(run)
        else:
            tokens.extend(run[i : i + 2] for i in range(len(run) - 1))
    return tokens


_SENTENCE_RE = re.compile(r"[^.!?。\n]*[.!?。]+|[^.!?。\n]+")


def split_sentences(text: str) -> list[str]:
    """Split on newlines and sentence-final punctuation (``. ! ?`` and ``。``).

    Terminal punctuation stays attached to its sentence; empty segments are
    dropped and the original order is preserved.
    """
    out = []
    for match in _SENTENCE_RE.finditer(text):
        segment = match.group().strip()
        if segment:
            out.append(segment)
    return out


class Vocabulary:
    """Frequency-thresholded token-to-id map with reserved PAD/UNK ids.

    Ids start at 2 and are assigned by descending corpus frequency, ties
    broken by lexicographic token order, so construction is deterministic.
    """

    def __init__(self, token_to_id: dict[str, int], min_frequency: int):
        self.token_to_id = dict(token_to_id)
        self.min_frequency = min_frequency
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.id_to_token[PAD_ID] = PAD_TOKEN
        self.id_to_token[UNK_ID] = UNK_TOKEN
        if len(self.id_to_token) != len(self.token_to_id) + 2:
            raise CorpusError("vocabulary ids are not unique")

    @classmethod
    def from_counts(cls, counts: Counter, min_frequency: int = 2) -> "Vocabulary":
        kept = sorted(
            (t for t, c in counts.items() if c >= min_frequency),
            key=lambda t: (-counts[t], t),
        )
        return cls({t: i for i, t in enumerate(kept, start=2)}, min_frequency)

    def encode(self, tokens) -> list[int]:
        """Map tokens to ids; out-of-vocabulary tokens become UNK, never PAD."""
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def __len__(self) -> int:
        return len(self.token_to_id) + 2

    def __contains__(self, token) -> bool:
        return token in self.token_to_id

    def hash(self) -> str:
        payload = json.dumps(self.token_to_id, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Sentence:
    index: int
    tokens: list[str]
    token_ids: list[int]


@dataclass
class Article:
    law_id: str
    article_id: str
    title: str
    sentences: list[Sentence]
    raw_text: str

    @property
    def ref(self) -> ArticleRef:
        return (self.law_id, self.article_id)

    def token_ids(self) -> list[int]:
        return [i for s in self.sentences for i in s.token_ids]


@dataclass
class Query:
    query_id: str
    text: str
    tokens: list[str]
    token_ids: list[int]
    relevant: list[ArticleRef]


@dataclass
class IngestReport:
    documents: int
    articles: int
    sentences: int
    dropped_sentences: int
    truncated_articles: int
    unk_token_rate: float
    vocab_size: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QuerySetReport:
    queries: int
    tokens: int
    unk_token_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


class CorpusStore:
    """Ingested articles plus the vocabulary built from them.

    Treated as immutable after construction; every consumer (index, models,
    pipeline) reads from it without copying.
    """

    def __init__(self, articles, vocab: Vocabulary, profile: str,
                 min_frequency: int, max_sentences: int, report: IngestReport):
        self.articles = list(articles)
        self.vocab = vocab
        self.profile = profile
        self.min_frequency = min_frequency
        self.max_sentences = max_sentences
        self.report = report
        self._by_ref: dict[ArticleRef, Article] = {}
        for a in self.articles:
            if a.ref in self._by_ref:
                raise CorpusError(f"duplicate article {format_ref(a.ref)}")
            self._by_ref[a.ref] = a

    def __len__(self) -> int:
        return len(self.articles)

    def refs(self) -> list[ArticleRef]:
        return [a.ref for a in self.articles]

    def __contains__(self, ref) -> bool:
        return tuple(ref) in self._by_ref

    def article(self, ref) -> Article:
        try:
            return self._by_ref[tuple(ref)]
        except KeyError:
            raise CorpusError(f"unknown article {format_ref(ref)}") from None

    def vocab_hash(self) -> str:
        return self.vocab.hash()

    def save(self, path) -> None:
        payload = {
            "format_version": STORE_FORMAT_VERSION,
            "profile": self.profile,
            "min_frequency": self.min_frequency,
            "max_sentences": self.max_sentences,
            "vocabulary": self.vocab.token_to_id,
            "articles": [
                {
                    "law_id": a.law_id,
                    "article_id": a.article_id,
                    "title": a.title,
                    "raw_text": a.raw_text,
                    "sentences": [
                        {"tokens": s.tokens, "token_ids": s.token_ids} for s in a.sentences
                    ],
                }
                for a in self.articles
            ],
            "report": self.report.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CorpusStore":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != STORE_FORMAT_VERSION:
            raise CorpusError(f"unsupported store format version {version!r}")
        vocab = Vocabulary(payload["vocabulary"], payload["min_frequency"])
        articles = []
        for raw in payload["articles"]:
            sentences = [
                Sentence(i, s["tokens"], s["token_ids"])
                for i, s in enumerate(raw["sentences"])
            ]
            articles.append(Article(raw["law_id"], raw["article_id"], raw["title"],
                                    sentences, raw["raw_text"]))
        report = IngestReport(**payload["report"])
        return cls(articles, vocab, payload["profile"], payload["min_frequency"],
                   payload["max_sentences"], report)


def ingest_corpus(path, profile: str = "spaced", min_frequency: int = 2,
                  max_sentences: int = 256) -> CorpusStore:
    """Read a corpus JSONL file into a :class:`CorpusStore`.

    Malformed lines, duplicate ``(law_id, article_id)`` pairs and articles
    that are empty after tokenization raise :class:`CorpusError` naming the
    offending line.  Articles longer than ``max_sentences`` sentences are
    truncated with a logged warning.
    """
    if max_sentences < 1:
        raise CorpusError("max_sentences must be >= 1")
    records = []
    counts: Counter = Counter()
    seen: set[ArticleRef] = set()
    n_truncated = 0
    n_dropped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: invalid JSON ({exc})") from None
            if not isinstance(raw, dict):
                raise CorpusError(f"{path}: line {line_no}: expected a JSON object")
            for key in ("law_id", "article_id", "text"):
                if not isinstance(raw.get(key), str):
                    raise CorpusError(f"{path}: line {line_no}: missing or non-string field {key!r}")
            if not isinstance(raw.get("title", ""), str):
                raise CorpusError(f"{path}: line {line_no}: non-string field 'title'")
            law, art = raw["law_id"], raw["article_id"]
            if ":" in law or ":" in art:
                raise CorpusError(f"{path}: line {line_no}: ids may not contain ':'")
            ref = (law, art)
            if ref in seen:
                raise CorpusError(f"{path}: line {line_no}: duplicate article {format_ref(ref)}")
            seen.add(ref)
            if not raw["text"].strip():
                raise CorpusError(f"{path}: line {line_no}: empty article {format_ref(ref)}")
            sent_tokens = []
            for sent in split_sentences(raw["text"]):
                toks = tokenize(sent, profile)
                if toks:
                    sent_tokens.append(toks)
                else:
                    n_dropped += 1
            if not sent_tokens:
                raise CorpusError(
                    f"{path}: line {line_no}: article {format_ref(ref)} has no tokens")
            if len(sent_tokens) > max_sentences:
                log.warning("truncating %s from %d to %d sentences",
                            format_ref(ref), len(sent_tokens), max_sentences)
                sent_tokens = sent_tokens[:max_sentences]
                n_truncated += 1
            for toks in sent_tokens:
                counts.update(toks)
            records.append((law, art, raw.get("title", ""), raw["text"], sent_tokens))
    if not records:
        raise CorpusError(f"{path}: empty corpus")

    vocab = Vocabulary.from_counts(counts, min_frequency)
    articles = []
    total_sentences = 0
    unk = 0
    total_tokens = 0
    for law, art, title, text, sent_tokens in records:
        sentences = []
        for i, toks in enumerate(sent_tokens):
            ids = vocab.encode(toks)
            unk += sum(1 for t in ids if t == UNK_ID)
            total_tokens += len(ids)
            sentences.append(Sentence(i, toks, ids))
        articles.append(Article(law, art, title, sentences, text))
        total_sentences += len(sentences)
    report = IngestReport(
        documents=len({a.law_id for a in articles}),
        articles=len(articles),
        sentences=total_sentences,
        dropped_sentences=n_dropped,
        truncated_articles=n_truncated,
        unk_token_rate=unk / total_tokens,
        vocab_size=len(vocab),
    )
    return CorpusStore(articles, vocab, profile, min_frequency, max_sentences, report)


def load_queries(path, store: CorpusStore,
                 require_relevant: bool = True) -> tuple[list[Query], QuerySetReport]:
    """Read a query JSONL file, tokenizing against the store's vocabulary.

    Every ``relevant`` pair must resolve to an article in the store.  When
    ``require_relevant`` is set (training/evaluation use), queries without
    judgments are rejected.  The returned report carries the UNK rate of the
    encoded query tokens so silent vocabulary mismatches cannot go unnoticed.
    """
    queries = []
    seen_ids = set()
    unk = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: invalid JSON ({exc})") from None
            if not isinstance(raw.get("query_id"), str) or not isinstance(raw.get("text"), str):
                raise CorpusError(f"{path}: line {line_no}: missing query_id or text")
            qid = raw["query_id"]
            if qid in seen_ids:
                raise CorpusError(f"{path}: line {line_no}: duplicate query {qid!r}")
            seen_ids.add(qid)
            rel_raw = raw.get("relevant", [])
            if not isinstance(rel_raw, list):
                raise CorpusError(f"{path}: line {line_no}: 'relevant' must be a list")
            relevant = []
            for pair in rel_raw:
                if (not isinstance(pair, list) or len(pair) != 2
                        or not all(isinstance(x, str) for x in pair)):
                    raise CorpusError(
                        f"{path}: line {line_no}: bad relevant pair {pair!r}")
                ref = (pair[0], pair[1])
                if ref not in store:
                    raise CorpusError(
                        f"{path}: line {line_no}: query {qid!r} references unknown "
                        f"article {format_ref(ref)}")
                relevant.append(ref)
            if require_relevant and not relevant:
                raise CorpusError(f"{path}: line {line_no}: query {qid!r} has no judgments")
            tokens = tokenize(raw["text"], store.profile)
            if not tokens:
                raise CorpusError(f"{path}: line {line_no}: query {qid!r} has no tokens")
            ids = store.vocab.encode(tokens)
            unk += sum(1 for t in ids if t == UNK_ID)
            total += len(ids)
            queries.append(Query(qid, raw["text"], tokens, ids, relevant))
    if not queries:
        raise CorpusError(f"{path}: empty query set")
    report = QuerySetReport(queries=len(queries), tokens=total, unk_token_rate=unk / total)
    return queries, report

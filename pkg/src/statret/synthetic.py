"""Synthetic statute corpus generator with controllable lexical mismatch.

Every query gets exactly one gold article and one designated distractor.
Articles are built from pronounceable fake words drawn from disjoint
inventories:

* per-query concept pairs, each with a "statutory" surface form and a "lay"
  surface form (the synonym table); concept words appear nowhere else in
  the corpus;
* one unique topic word shared by a query and its gold article only;
* genre markers: statute-genre articles repeat one marker set, chatter
  passages the other, so genre is a corpus-wide transferable signal.

A plain query names its gold's topic word plus the statutory forms of its
concepts, so term matching alone finds the gold and nothing else matches at
all.  For ``synonym_rate`` of the queries the text uses the lay forms
instead: the gold then shares only the topic word while the distractor
repeats all three lay words in a chatter context, so a lexical ranker
top-ranks the distractor and puts the gold second.  A reranker can only fix
those queries by learning the statute-vs-chatter genre contrast, which
transfers from the training split to held-out queries.

All output is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _word_stream(rng):
    """Endless unique pronounceable fake words."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    seen = set()
    while True:
        n = 2 + int(rng.integers(0, 2))
        word = "".join(syllables[int(rng.integers(0, len(syllables)))]
                       for _ in range(n))
        if word not in seen:
            seen.add(word)
            yield word


def _take(stream, count: int) -> list:
    return [next(stream) for _ in range(count)]


@dataclass
class SyntheticData:
    corpus_lines: list = field(default_factory=list)   # article dicts, in order
    query_lines: list = field(default_factory=list)    # query dicts, in order
    truth: dict = field(default_factory=dict)          # gold/distractor map

    def write(self, out_dir, train_split: float | None = None,
              seed: int = 0) -> dict:
        """Write corpus/queries/map (and optional split files); returns paths."""
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.jsonl",
            "queries": out / "queries.jsonl",
            "map": out / "gold_distractor_map.json",
        }
        _write_jsonl(paths["corpus"], self.corpus_lines)
        _write_jsonl(paths["queries"], self.query_lines)
        with open(paths["map"], "w", encoding="utf-8") as fh:
            json.dump(self.truth, fh, sort_keys=True, indent=2)
            fh.write("\n")
        if train_split is not None:
            train, test = split_queries(self.query_lines, self.truth, train_split, seed)
            paths["queries_train"] = out / "queries_train.jsonl"
            paths["queries_test"] = out / "queries_test.jsonl"
            _write_jsonl(paths["queries_train"], train)
            _write_jsonl(paths["queries_test"], test)
        return paths


def _write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def split_queries(query_lines, truth: dict, train_fraction: float, seed: int = 0):
    """Deterministic split, stratified over the synonym flag."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    plain = [q for q in query_lines if not truth["queries"][q["query_id"]]["synonym"]]
    hard = [q for q in query_lines if truth["queries"][q["query_id"]]["synonym"]]
    train, test = [], []
    for group in (plain, hard):
        order = rng.permutation(len(group))
        cut = round(train_fraction * len(group))
        train.extend(group[i] for i in sorted(order[:cut].tolist()))
        test.extend(group[i] for i in sorted(order[cut:].tolist()))
    train.sort(key=lambda q: q["query_id"])
    test.sort(key=lambda q: q["query_id"])
    return train, test


def generate(articles: int = 200, queries: int = 100, synonym_rate: float = 0.5,
             seed: int = 0, concepts_per_query: int = 3) -> SyntheticData:
    """Build a corpus of ``articles`` articles and ``queries`` queries.

    Requires ``articles >= 2 * queries`` (one gold and one distractor per
    query; any surplus becomes statute-genre filler).
    """
    if queries < 1:
        raise ValueError("need at least one query")
    if articles < 2 * queries:
        raise ValueError(
            f"infeasible: {articles} articles cannot host gold+distractor "
            f"for {queries} queries (need >= {2 * queries})")
    if not 0.0 <= synonym_rate <= 1.0:
        raise ValueError("synonym_rate must lie in [0, 1]")
    if concepts_per_query < 1:
        raise ValueError("need at least one concept per query")

    rng = np.random.default_rng(seed)
    words = _word_stream(rng)
    statute_markers = _take(words, 3)
    chatter_markers = _take(words, 3)
    filler_pool = _take(words, 40)

    # fresh concept pairs per query: the surface forms never collide across
    # queries, so a query's terms match its own gold/distractor and nothing
    # else (candidate sets stay tiny and genre is the only shared signal)
    statutory = [_take(words, concepts_per_query) for _ in range(queries)]
    lay = [_take(words, concepts_per_query) for _ in range(queries)]

    n_hard = round(synonym_rate * queries)
    hard_ids = set(rng.choice(queries, size=n_hard, replace=False).tolist())

    m1, m2, m3 = statute_markers
    c1, c2, c3 = chatter_markers

    def gold_text(topic, forms, noise_a, noise_b):
        la, lb, lc = _pad3(forms)
        return "\n".join([
            f"{topic} {m1} {noise_a}",
            f"{la} {lb} {lc} {m2}",
            f"{la} {lc} {topic} {m3}",
            f"{lb} {la} {noise_b} {m1}",
            f"{lc} {lb} {topic}",
        ])

    def distractor_text(forms, pseudo, noise_a, noise_b):
        pa, pb, pc = _pad3(forms)
        return "\n".join([
            f"{pa} {c1} {noise_a}",
            f"{pb} {pc} {c2} {pseudo}",
            f"{pa} {pb} {c3} {pseudo}",
            f"{pc} {pa} {c1} {noise_b}",
            f"{pb} {pc} {c2}",
        ])

    def filler_text(topic, noise_a, noise_b):
        w = [filler_pool[int(rng.integers(0, len(filler_pool)))] for _ in range(4)]
        return "\n".join([
            f"{topic} {m1} {noise_a}",
            f"{w[0]} {w[1]} {w[2]} {m2}",
            f"{w[0]} {w[3]} {topic} {m3}",
            f"{w[1]} {w[2]} {noise_b} {m1}",
            f"{w[3]} {w[0]} {topic}",
        ])

    # assemble article texts: one gold and one distractor per query, filler after
    articles_raw = []  # (role, query_index, title_word, text)
    gold_topics = []
    for qi in range(queries):
        topic = next(words)
        gold_topics.append(topic)
        articles_raw.append(("gold", qi, topic,
                             gold_text(topic, statutory[qi],
                                       next(words), next(words))))
    for qi in range(queries):
        pseudo = next(words)
        articles_raw.append(("distractor", qi, pseudo,
                             distractor_text(lay[qi], pseudo,
                                             next(words), next(words))))
    for _ in range(articles - 2 * queries):
        topic = next(words)
        articles_raw.append(("filler", -1, topic,
                             filler_text(topic, next(words), next(words))))

    # shuffle placement, then assign law/article ids by final position
    placement = rng.permutation(len(articles_raw))
    corpus_lines = []
    ref_by_slot: dict[tuple, str] = {}
    for position, slot in enumerate(placement.tolist()):
        role, qi, title_word, text = articles_raw[slot]
        law_id = f"law{position // 10:03d}"
        article_id = f"a{position % 10:02d}"
        corpus_lines.append({
            "law_id": law_id,
            "article_id": article_id,
            "title": f"{title_word} provisions",
            "text": text,
        })
        ref_by_slot[(role, qi) if role != "filler" else ("filler", position)] = \
            f"{law_id}:{article_id}"

    query_lines = []
    truth_queries = {}
    for qi in range(queries):
        qid = f"q{qi:04d}"
        gold_ref = ref_by_slot[("gold", qi)]
        distractor_ref = ref_by_slot[("distractor", qi)]
        gold_law, gold_art = gold_ref.split(":")
        forms = lay[qi] if qi in hard_ids else statutory[qi]
        text = " ".join([gold_topics[qi]] + list(forms))
        query_lines.append({
            "query_id": qid,
            "text": text,
            "relevant": [[gold_law, gold_art]],
        })
        truth_queries[qid] = {
            "gold": gold_ref,
            "distractor": distractor_ref,
            "synonym": qi in hard_ids,
        }

    truth = {
        "articles": articles,
        "query_count": queries,
        "synonym_rate": synonym_rate,
        "seed": seed,
        "queries": truth_queries,
    }
    return SyntheticData(corpus_lines=corpus_lines, query_lines=query_lines,
                         truth=truth)


def _pad3(forms) -> tuple:
    """First three concept words (templates are written for three)."""
    forms = tuple(forms)
    while len(forms) < 3:
        forms = forms + (forms[-1],)
    return forms[:3]

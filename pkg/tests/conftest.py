import json

import pytest

from statret import bm25, corpus


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def article_row(law, art, text, title="t"):
    return {"law_id": law, "article_id": art, "title": title, "text": text}


TINY_ROWS = [
    article_row("l1", "a1", "the cat sat on the mat.\nthe dog barked."),
    article_row("l1", "a2", "a cat chased the dog.\nbirds sing songs."),
    article_row("l2", "a1", "laws govern the land.\nthe law of the cat."),
    article_row("l2", "a2", "dogs and birds share songs."),
]


@pytest.fixture
def tiny_store(tmp_path):
    path = write_jsonl(tmp_path / "corpus.jsonl", TINY_ROWS)
    return corpus.ingest_corpus(path, min_frequency=1)


@pytest.fixture
def tiny_index(tiny_store):
    return bm25.build_index(tiny_store)


def make_query(store, qid, text, relevant=()):
    tokens = corpus.tokenize(text, store.profile)
    return corpus.Query(qid, text, tokens, store.vocab.encode(tokens),
                        [tuple(r) for r in relevant])

"""TREC-style run files: ``query_id Q0 law_id:article_id rank score tag``."""

from __future__ import annotations

import json

from .corpus import CorpusError, format_ref, parse_ref


def write_run_file(path, results: dict, tag: str = "statret") -> None:
    """Write ranked results ``{query_id: [(ref, score), ...]}`` in rank order.

    Queries appear in the given order; ranks are 1-based positions.  Scores
    are rendered with ``repr`` so rewriting the same results is byte-stable.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in results.items():
            for rank, (ref, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {format_ref(ref)} {rank} {score!r} {tag}\n")


def read_run_file(path) -> dict:
    """Parse a run file into ``{query_id: [ref, ...]}`` ordered by rank."""
    per_query: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise CorpusError(f"{path}: line {line_no}: malformed run line")
            qid, _, ref_text, rank_text, score_text, _tag = parts
            try:
                rank = int(rank_text)
                float(score_text)
            except ValueError:
                raise CorpusError(f"{path}: line {line_no}: bad rank or score") from None
            per_query.setdefault(qid, []).append((rank, parse_ref(ref_text)))
    out = {}
    for qid, entries in per_query.items():
        entries.sort(key=lambda e: e[0])
        ranks = [r for r, _ in entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise CorpusError(f"{path}: query {qid!r} has non-contiguous ranks")
        out[qid] = [ref for _, ref in entries]
    return out


def load_judgments(path) -> dict:
    """Read ``{query_id: [ref, ...]}`` judgments from a query JSONL file.

    Unlike :func:`statret.corpus.load_queries` this does not need a corpus
    store; evaluation only compares references.
    """
    judgments = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: invalid JSON ({exc})") from None
            qid = raw.get("query_id")
            rel = raw.get("relevant")
            if not isinstance(qid, str) or not isinstance(rel, list) or not rel:
                raise CorpusError(f"{path}: line {line_no}: missing query_id or judgments")
            if qid in judgments:
                raise CorpusError(f"{path}: line {line_no}: duplicate query {qid!r}")
            refs = []
            for pair in rel:
                if (not isinstance(pair, list) or len(pair) != 2
                        or not all(isinstance(x, str) for x in pair)):
                    raise CorpusError(f"{path}: line {line_no}: bad relevant pair {pair!r}")
                refs.append((pair[0], pair[1]))
            judgments[qid] = refs
    if not judgments:
        raise CorpusError(f"{path}: no judgments found")
    return judgments

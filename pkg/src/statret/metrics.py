"""Ranking metrics: precision/recall/F2 at a cutoff, binary NDCG, macro means.

Macro aggregation is the unweighted mean of per-query metric values; it is
*not* the metric of pooled counts.  F2 weighs recall four times as much as
precision: ``5PR / (4P + R)``, defined as 0 when nothing was hit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def prf2_at_k(retrieved, relevant, k: int) -> tuple[float, float, float]:
    """Precision, recall and F2 of the top-``k`` retrieved references.

    ``relevant`` must be non-empty; duplicated retrieved references count
    once.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    hits = len(set(retrieved[:k]) & rel)
    precision = hits / k
    recall = hits / len(rel)
    if hits == 0:
        return precision, recall, 0.0
    f2 = (5.0 * precision * recall) / (4.0 * precision + recall)
    return precision, recall, f2


def ndcg_at_k(retrieved, relevant, k: int) -> float:
    """Binary-gain NDCG at ``k``: gains 1/log2(rank+1), ideal prefix as DCG*."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    dcg = 0.0
    seen = set()
    for rank, ref in enumerate(retrieved[:k], start=1):
        if ref in rel and ref not in seen:
            dcg += 1.0 / math.log2(rank + 1)
            seen.add(ref)
    ideal = 0.0
    for rank in range(1, min(k, len(rel)) + 1):
        ideal += 1.0 / math.log2(rank + 1)
    return dcg / ideal


def macro_metrics(per_query: dict) -> dict:
    """Unweighted mean of each metric over queries."""
    if not per_query:
        raise ValueError("no queries to aggregate")
    keys = next(iter(per_query.values())).keys()
    out = {}
    for key in keys:
        out[key] = sum(m[key] for m in per_query.values()) / len(per_query)
    return out


@dataclass
class EvalReport:
    k: int
    query_count: int
    macro_precision: float
    macro_recall: float
    macro_f2: float
    macro_ndcg: float
    per_query: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "query_count": self.query_count,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f2": self.macro_f2,
            "macro_ndcg": self.macro_ndcg,
            "per_query": self.per_query,
        }


def evaluate_run(run: dict, judgments: dict, k_list=(1, 20)) -> dict[int, EvalReport]:
    """Score a run against judgments at every cutoff in ``k_list``.

    ``run`` maps query id to a rank-ordered list of references; ``judgments``
    maps query id to its relevant references.  Judged queries missing from
    the run score zero and are counted; a run query without judgments is an
    error.
    """
    if not judgments:
        raise ValueError("no judgments")
    for qid in run:
        if qid not in judgments:
            raise ValueError(f"run contains query {qid!r} without judgments")
    reports = {}
    for k in k_list:
        per_query = {}
        for qid in sorted(judgments):
            relevant = judgments[qid]
            if not relevant:
                raise ValueError(f"query {qid!r} has an empty relevant set")
            retrieved = run.get(qid, [])
            precision, recall, f2 = prf2_at_k(retrieved, relevant, k)
            ndcg = ndcg_at_k(retrieved, relevant, k)
            per_query[qid] = {"precision": precision, "recall": recall,
                              "f2": f2, "ndcg": ndcg}
        macro = macro_metrics(per_query)
        reports[k] = EvalReport(
            k=k,
            query_count=len(per_query),
            macro_precision=macro["precision"],
            macro_recall=macro["recall"],
            macro_f2=macro["f2"],
            macro_ndcg=macro["ndcg"],
            per_query=per_query,
        )
    return reports


def format_report_table(reports: dict[int, EvalReport]) -> str:
    """Human-readable fixed-width table, one row per cutoff."""
    lines = [f"{'k':>4}  {'queries':>7}  {'macro-P':>8}  {'macro-R':>8}  "
             f"{'macro-F2':>8}  {'NDCG':>8}"]
    for k in sorted(reports):
        r = reports[k]
        lines.append(f"{r.k:>4}  {r.query_count:>7}  {r.macro_precision:>8.4f}  "
                     f"{r.macro_recall:>8.4f}  {r.macro_f2:>8.4f}  {r.macro_ndcg:>8.4f}")
    return "\n".join(lines)

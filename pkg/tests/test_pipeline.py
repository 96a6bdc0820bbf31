import numpy as np
import pytest

from statret import bm25, corpus, model as model_mod, pipeline
from statret.pipeline import (DEFAULT_N_FILTER, PipelineConfig, explain,
                              fuse_scores, normalize_scores, retrieve,
                              sweep_alpha)

from conftest import TINY_ROWS, make_query, write_jsonl


def make_model(store, kind="cnn_dot", seed=0):
    config = model_mod.ModelConfig(model_kind=kind, vocab_size=len(store.vocab),
                                   embedding_dim=8, num_filters=8,
                                   attention_dim=4, half_window=1, dropout=0.0)
    return model_mod.RetrievalModel.create(config, store.vocab_hash(), seed=seed)


# ---------------------------------------------------------------------------
# normalization and fusion


def test_minmax_normalization_hand_case():
    assert np.allclose(normalize_scores([4.0, 2.0], "minmax"), [1.0, 0.0])
    assert np.allclose(normalize_scores([1.0, 2.0, 3.0], "minmax"),
                       [0.0, 0.5, 1.0])


def test_minmax_constant_vector_maps_to_half():
    assert np.allclose(normalize_scores([7.0, 7.0, 7.0], "minmax"),
                       [0.5, 0.5, 0.5])


def test_zscore_normalization_and_degenerate_case():
    out = normalize_scores([1.0, 3.0], "zscore")
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(normalize_scores([5.0, 5.0], "zscore"), [0.0, 0.0])


def test_none_normalization_is_identity():
    assert np.allclose(normalize_scores([3.0, -1.0], "none"), [3.0, -1.0])


def test_unknown_normalization_rejected():
    with pytest.raises(ValueError):
        normalize_scores([1.0], "sigmoid")


def test_fusion_hand_case():
    fused = fuse_scores([4.0, 2.0], [0.1, 0.9], 0.5, "minmax")
    assert np.allclose(fused, [0.5, 0.5], atol=1e-12)


def test_fusion_endpoints_select_single_source():
    lex, deep = [4.0, 2.0, 3.0], [0.1, 0.9, 0.5]
    assert np.allclose(fuse_scores(lex, deep, 0.0, "minmax"),
                       normalize_scores(lex, "minmax"))
    assert np.allclose(fuse_scores(lex, deep, 1.0, "minmax"),
                       normalize_scores(deep, "minmax"))


# ---------------------------------------------------------------------------
# config resolution


def test_config_default_filter_depth_depends_on_model_kind():
    config = PipelineConfig()
    assert config.resolve("cnn_dot") == (DEFAULT_N_FILTER["cnn_dot"], 100)
    assert config.resolve("general_attn_head") == (150, 100)


def test_config_top_k_defaults_to_filter_depth_when_small():
    assert PipelineConfig(n_filter=30).resolve("cnn_dot") == (30, 30)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(alpha_fuse=1.5).resolve()
    with pytest.raises(ValueError):
        PipelineConfig(n_filter=10, top_k=20).resolve()
    with pytest.raises(ValueError):
        PipelineConfig(normalization="bogus").resolve()


# ---------------------------------------------------------------------------
# two-stage retrieval


def test_alpha_zero_reproduces_lexical_order(tiny_store, tiny_index):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat sat")
    config = PipelineConfig(alpha_fuse=0.0, n_filter=10)
    result = retrieve(q, tiny_store, tiny_index, net, config)
    lexical = bm25.top_n(tiny_index, q.token_ids, 10)
    assert [r.ref for r in result.ranked] == [c.ref for c in lexical.candidates]


def test_alpha_one_reproduces_deep_order(tiny_store, tiny_index):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat sat")
    config = PipelineConfig(alpha_fuse=1.0, n_filter=10)
    result = retrieve(q, tiny_store, tiny_index, net, config)
    refs = [c.ref for c in bm25.top_n(tiny_index, q.token_ids, 10).candidates]
    deep = net.deep_scores(q, refs, tiny_store)
    want = [refs[i] for i in
            sorted(range(len(refs)), key=lambda i: (-deep[i], refs[i]))]
    assert [r.ref for r in result.ranked] == want


def test_retrieval_without_model_is_lexical_only(tiny_store, tiny_index):
    q = make_query(tiny_store, "q", "the cat sat")
    config = PipelineConfig(alpha_fuse=0.9, n_filter=10)  # alpha ignored
    result = retrieve(q, tiny_store, tiny_index, None, config)
    lexical = bm25.top_n(tiny_index, q.token_ids, 10)
    assert [r.ref for r in result.ranked] == [c.ref for c in lexical.candidates]
    assert all(r.s_deep == 0.0 for r in result.ranked)


def test_fused_ties_break_by_ascending_ref(tiny_store, tiny_index):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "zzz-unseen cat")
    # force a tie by fusing two identical candidate score vectors
    fused = fuse_scores([1.0, 1.0], [2.0, 2.0], 0.5, "minmax")
    assert fused[0] == fused[1]
    config = PipelineConfig(alpha_fuse=0.5, n_filter=10)
    result = retrieve(q, tiny_store, tiny_index, net, config)
    refs = [r.ref for r in result.ranked]
    fused_scores = [r.s_final for r in result.ranked]
    for a, b, fa, fb in zip(refs, refs[1:], fused_scores, fused_scores[1:]):
        if fa == fb:
            assert a < b


def test_no_lexical_match_flag(tiny_store, tiny_index):
    q = make_query(tiny_store, "q", "zzz-unseen-token")
    result = retrieve(q, tiny_store, tiny_index, None, PipelineConfig())
    assert result.no_lexical_match
    assert result.ranked == []


def test_top_k_cuts_and_ranks_start_at_one(tiny_store, tiny_index):
    q = make_query(tiny_store, "q", "the cat dog")
    config = PipelineConfig(n_filter=10, top_k=2)
    result = retrieve(q, tiny_store, tiny_index, None, config)
    assert len(result.ranked) == 2
    assert [r.rank for r in result.ranked] == [1, 2]
    assert result.candidates_considered >= 2


def test_vocabulary_mismatch_rejected(tiny_store, tiny_index, tmp_path):
    other_rows = [dict(r) for r in TINY_ROWS]
    other_rows[0] = dict(other_rows[0], text="entirely different words here.")
    path = write_jsonl(tmp_path / "other.jsonl", other_rows)
    other_store = corpus.ingest_corpus(path, min_frequency=1)
    net = make_model(other_store)
    q = make_query(tiny_store, "q", "the cat")
    with pytest.raises(ValueError, match="vocabulary"):
        retrieve(q, tiny_store, tiny_index, net, PipelineConfig())


def test_retrieval_is_deterministic(tiny_store, tiny_index):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat sat")
    config = PipelineConfig(alpha_fuse=0.5, n_filter=10)
    a = retrieve(q, tiny_store, tiny_index, net, config)
    b = retrieve(q, tiny_store, tiny_index, net, config)
    assert [(r.ref, r.s_final) for r in a.ranked] == \
        [(r.ref, r.s_final) for r in b.ranked]


# ---------------------------------------------------------------------------
# alpha sweep


def test_sweep_produces_full_grid(tiny_store, tiny_index):
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat", [("l1", "a1")]),
               make_query(tiny_store, "q2", "dog birds", [("l2", "a2")])]
    config = PipelineConfig(n_filter=10)
    sweep = sweep_alpha(queries, tiny_store, tiny_index, net, config,
                        grid_step=0.05)
    assert len(sweep.rows) == 21
    assert sweep.rows[0][0] == 0.0
    assert sweep.rows[-1][0] == 1.0
    assert sweep.best_macro_f2 == max(f2 for _, f2 in sweep.rows)


def test_sweep_grid_endpoints_match_direct_retrieval(tiny_store, tiny_index):
    from statret.metrics import prf2_at_k
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat", [("l1", "a1")]),
               make_query(tiny_store, "q2", "dog birds", [("l2", "a2")])]
    config = PipelineConfig(n_filter=10)
    sweep = sweep_alpha(queries, tiny_store, tiny_index, net, config,
                        grid_step=0.5)
    for alpha, want in sweep.rows:
        values = []
        for q in queries:
            cfg = PipelineConfig(alpha_fuse=alpha, n_filter=10)
            top = [r.ref for r in
                   retrieve(q, tiny_store, tiny_index, net, cfg).ranked[:1]]
            values.append(prf2_at_k(top, set(q.relevant), 1)[2])
        assert want == pytest.approx(sum(values) / len(values), abs=1e-12)


def test_sweep_ties_keep_the_smallest_alpha(tiny_store, tiny_index):
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat", [("l1", "a1")])]
    config = PipelineConfig(n_filter=10)
    sweep = sweep_alpha(queries, tiny_store, tiny_index, net, config,
                        grid_step=0.25)
    tied = [a for a, f2 in sweep.rows if f2 == sweep.best_macro_f2]
    assert sweep.best_alpha == min(tied)


def test_sweep_rejects_bad_grid_step(tiny_store, tiny_index):
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat", [("l1", "a1")])]
    with pytest.raises(ValueError, match="grid_step"):
        sweep_alpha(queries, tiny_store, tiny_index, net,
                    PipelineConfig(n_filter=10), grid_step=0.3)


def test_sweep_requires_judged_queries(tiny_store, tiny_index):
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat")]
    with pytest.raises(ValueError, match="judgments"):
        sweep_alpha(queries, tiny_store, tiny_index, net,
                    PipelineConfig(n_filter=10))


def test_sweep_tsv_layout(tiny_store, tiny_index):
    net = make_model(tiny_store)
    queries = [make_query(tiny_store, "q1", "the cat", [("l1", "a1")])]
    sweep = sweep_alpha(queries, tiny_store, tiny_index, net,
                        PipelineConfig(n_filter=10), grid_step=0.5)
    lines = sweep.to_tsv().strip().split("\n")
    assert lines[0] == "alpha\tmacro_f2_at_1"
    assert len(lines) == 4
    assert lines[1].startswith("0\t")


# ---------------------------------------------------------------------------
# attention explanations


def test_explain_sparse_avg_is_query_independent(tiny_store, tiny_index):
    net = make_model(tiny_store, kind="cnn_dot")
    q1 = make_query(tiny_store, "q1", "the cat")
    q2 = make_query(tiny_store, "q2", "dog birds")
    a = explain(q1, ("l1", "a1"), tiny_store, net)
    b = explain(q2, ("l1", "a1"), tiny_store, net)
    assert a.mode == "sparse_avg"
    assert not a.query_dependent
    assert a.sentence_weights == b.sentence_weights
    assert a.article_ref == "l1:a1"
    assert len(a.sentence_weights) == 2
    assert [len(w) for w in a.word_weights] == [len(s.split())
                                                for s in a.sentences]


def test_explain_general_attention_tracks_the_query(tiny_store, tiny_index):
    net = make_model(tiny_store, kind="general_attn_head")
    q1 = make_query(tiny_store, "q1", "the cat sat")
    q2 = make_query(tiny_store, "q2", "dog birds sing")
    a = explain(q1, ("l1", "a1"), tiny_store, net)
    b = explain(q2, ("l1", "a1"), tiny_store, net)
    assert a.mode == "general_attn"
    assert a.query_dependent
    assert a.sentence_weights != b.sentence_weights


def test_explain_weights_form_a_distribution(tiny_store):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat")
    exp = explain(q, ("l2", "a1"), tiny_store, net)
    assert sum(exp.sentence_weights) == pytest.approx(1.0, abs=1e-9)
    for weights in exp.word_weights:
        assert sum(weights) == pytest.approx(1.0, abs=1e-9)


def test_explain_to_dict_is_json_safe(tiny_store):
    import json
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat")
    payload = explain(q, ("l1", "a2"), tiny_store, net).to_dict()
    assert json.loads(json.dumps(payload)) == payload


def test_explain_unknown_article_rejected(tiny_store):
    net = make_model(tiny_store)
    q = make_query(tiny_store, "q", "the cat")
    with pytest.raises(corpus.CorpusError):
        explain(q, ("l9", "a9"), tiny_store, net)

"""Figure writers only need to produce valid files; layout is not asserted."""

from statret import metrics, pipeline, viz
from statret.model import ModelConfig, RetrievalModel

from conftest import make_query

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_sweep_figure(tmp_path):
    rows = [(0.0, 0.4), (0.5, 0.9), (1.0, 0.7)]
    path = tmp_path / "sweep.png"
    viz.write_sweep_figure(rows, path, best_alpha=0.5)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_training_figure(tmp_path):
    history = [
        {"epoch": 1, "loss": 1.2, "val_macro_f2_at_1": 0.1},
        {"epoch": 2, "loss": 0.8, "val_macro_f2_at_1": 0.5},
    ]
    path = tmp_path / "curve.png"
    viz.write_training_figure(history, path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_eval_figure(tmp_path):
    run = {"q1": [("l1", "a1"), ("l1", "a2")]}
    judgments = {"q1": [("l1", "a1")]}
    reports = metrics.evaluate_run(run, judgments, k_list=(1, 2))
    path = tmp_path / "eval.png"
    viz.write_eval_figure([reports[k] for k in sorted(reports)], path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_attention_outputs(tmp_path, tiny_store, tiny_index):
    config = ModelConfig(model_kind="general_attn_head",
                         vocab_size=len(tiny_store.vocab), embedding_dim=4,
                         num_filters=4, attention_dim=3, half_window=1,
                         dropout=0.0)
    net = RetrievalModel.create(config, tiny_store.vocab_hash(), seed=0)
    query = make_query(tiny_store, "q", "the cat")
    explanation = pipeline.explain(query, ("l1", "a1"), tiny_store, net)

    png = tmp_path / "attn.png"
    viz.write_attention_figure(explanation, png)
    assert png.read_bytes().startswith(PNG_MAGIC)

    html = tmp_path / "attn.html"
    viz.write_attention_html(explanation, html)
    text = html.read_text()
    assert text.lstrip().startswith("<!DOCTYPE html>")
    assert "l1:a1" in text
    for tokens in explanation.sentences:
        for token in tokens:
            assert token in text

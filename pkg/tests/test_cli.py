"""End-to-end command-line tests; every call goes through ``cli.main``."""

import filecmp
import json
import os

import pytest

from statret import cli
from statret.manifest import load_manifest
from statret.runfile import read_run_file


def run(*argv):
    return cli.main([str(a) for a in argv])


def gen(out_dir, rate, seed=3, articles=40, queries=10, split=None):
    argv = ["gen-synthetic", "--output-dir", out_dir, "--articles", articles,
            "--queries", queries, "--synonym-rate", rate, "--seed", seed]
    if split is not None:
        argv += ["--train-split", split]
    assert run(*argv) == 0
    return out_dir


# ---------------------------------------------------------------------------
# full workflow on one small synthetic corpus


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("workflow")
    data = root / "data"
    gen(data, rate=0.5, split=0.8)
    paths = {
        "corpus": data / "corpus.jsonl",
        "queries": data / "queries.jsonl",
        "train_queries": data / "queries_train.jsonl",
        "test_queries": data / "queries_test.jsonl",
        "map": data / "gold_distractor_map.json",
        "store": root / "store.json.gz",
        "index": root / "index.json.gz",
        "train_set": root / "train.jsonl",
        "checkpoint": root / "model.json",
        "run": root / "run.tsv",
    }
    assert run("ingest", "--corpus", paths["corpus"],
               "--output", paths["store"], "--min-frequency", 1) == 0
    assert run("index", "--store", paths["store"],
               "--output", paths["index"]) == 0
    assert run("make-train", "--store", paths["store"], "--index",
               paths["index"], "--queries", paths["train_queries"],
               "--output", paths["train_set"], "--n-neg", 4,
               "--seed", 3) == 0
    assert run("train", "--store", paths["store"], "--index", paths["index"],
               "--train-set", paths["train_set"],
               "--queries", paths["train_queries"],
               "--validation-queries", paths["test_queries"],
               "--output", paths["checkpoint"], "--embedding-dim", 16,
               "--num-filters", 16, "--attention-dim", 8, "--max-epochs", 3,
               "--patience", 3, "--seed", 3) == 0
    assert run("retrieve", "--store", paths["store"], "--index",
               paths["index"], "--checkpoint", paths["checkpoint"],
               "--queries", paths["test_queries"], "--output", paths["run"],
               "--alpha", 0.7, "--top-k", 5) == 0
    return paths


def test_workflow_artifacts_exist(workspace):
    for key in ("store", "index", "train_set", "checkpoint", "run"):
        assert workspace[key].exists(), key
    # training also leaves a log and a rendered loss curve
    assert workspace["checkpoint"].with_name("model.log.jsonl").exists()
    assert workspace["checkpoint"].with_name("model.curve.png").exists()


def test_workflow_manifests(workspace):
    manifest = load_manifest(workspace["run"].parent / "run.tsv.manifest.json")
    assert manifest["command"] == "retrieve"
    assert manifest["resolved_args"]["alpha"] == 0.7
    assert set(manifest["inputs"]) == {"store", "index", "checkpoint", "queries"}
    roles = {o["role"] for o in manifest["outputs"]}
    assert "run" in roles
    train_manifest = load_manifest(
        workspace["checkpoint"].parent / "model.json.manifest.json")
    assert train_manifest["command"] == "train"
    assert train_manifest["seed"] == 3


def test_run_file_ranks_every_test_query(workspace):
    ranking = read_run_file(workspace["run"])
    rows = [json.loads(line) for line
            in workspace["test_queries"].read_text().splitlines()]
    assert set(ranking) == {r["query_id"] for r in rows}
    # rerank never invents candidates: lists are capped by the lexical
    # stage, which on this corpus admits gold plus at most the distractor
    truth = json.loads(workspace["map"].read_text())["queries"]
    for qid, refs in ranking.items():
        expected = 2 if truth[qid]["synonym"] else 1
        assert len(refs) == expected
        assert tuple(truth[qid]["gold"].split(":")) in refs


def test_evaluate_and_figures(workspace, tmp_path):
    out = tmp_path / "eval.tsv"
    assert run("evaluate", "--run", workspace["run"], "--judgments",
               workspace["test_queries"], "--output", out,
               "--k", 1, "--k", 3) == 0
    text = out.read_text()
    assert text.splitlines()[0] == ("k\tmacro_precision\tmacro_recall"
                                    "\tmacro_f2\tmacro_ndcg")
    payload = json.loads(out.with_suffix(".json").read_text())
    assert [rep["k"] for rep in payload["reports"]] == [1, 3]
    assert out.with_suffix(".png").read_bytes()[:4] == b"\x89PNG"


def test_sweep_alpha_outputs(workspace, tmp_path):
    out = tmp_path / "sweep.tsv"
    assert run("sweep-alpha", "--store", workspace["store"], "--index",
               workspace["index"], "--checkpoint", workspace["checkpoint"],
               "--queries", workspace["test_queries"], "--output", out,
               "--grid-step", 0.25) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "alpha\tmacro_f2_at_1"
    assert len(lines) == 6  # header + {0, .25, .5, .75, 1}
    assert out.with_suffix(".png").exists()


def test_explain_outputs(workspace, tmp_path):
    rows = [json.loads(line) for line
            in workspace["test_queries"].read_text().splitlines()]
    qid = rows[0]["query_id"]
    gold = rows[0]["relevant"][0]
    out = tmp_path / "explain.json"
    assert run("explain", "--store", workspace["store"], "--checkpoint",
               workspace["checkpoint"], "--queries", workspace["test_queries"],
               "--query-id", qid, "--article", f"{gold[0]}:{gold[1]}",
               "--output", out) == 0
    payload = json.loads(out.read_text())
    assert payload["query_id"] == qid
    assert payload["article_ref"] == f"{gold[0]}:{gold[1]}"
    assert out.with_suffix(".png").exists()
    assert out.with_suffix(".html").read_text().lstrip().startswith("<!DOCTYPE")


def test_retrieve_reports_recall_ceiling(workspace, tmp_path, capsys):
    out = tmp_path / "lex.tsv"
    assert run("retrieve", "--store", workspace["store"], "--index",
               workspace["index"], "--queries", workspace["test_queries"],
               "--output", out) == 0
    printed = capsys.readouterr().out
    assert "lexical-only" in printed
    # glue tokens make every article a candidate, so the stage-1 ceiling is 1
    assert "recall ceiling" in printed and "1.0" in printed


# ---------------------------------------------------------------------------
# synthetic corpus behaviour through the CLI


def test_gen_synthetic_is_byte_deterministic(tmp_path):
    a = gen(tmp_path / "a", rate=0.5, split=0.8)
    b = gen(tmp_path / "b", rate=0.5, split=0.8)
    names = ["corpus.jsonl", "queries.jsonl", "gold_distractor_map.json",
             "queries_train.jsonl", "queries_test.jsonl"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert match == names and not mismatch and not errors


def test_rate_zero_is_solved_by_lexical_ranking(tmp_path):
    data = gen(tmp_path / "d", rate=0.0, seed=11)
    store, index = tmp_path / "s.json.gz", tmp_path / "i.json.gz"
    run_path, eval_path = tmp_path / "run.tsv", tmp_path / "eval.tsv"
    assert run("ingest", "--corpus", data / "corpus.jsonl", "--output", store,
               "--min-frequency", 1) == 0
    assert run("index", "--store", store, "--output", index) == 0
    assert run("retrieve", "--store", store, "--index", index, "--queries",
               data / "queries.jsonl", "--output", run_path) == 0
    assert run("evaluate", "--run", run_path, "--judgments",
               data / "queries.jsonl", "--output", eval_path, "--k", 1) == 0
    payload = json.loads(eval_path.with_suffix(".json").read_text())
    assert payload["reports"][0]["macro_f2"] >= 0.95


def test_rate_one_puts_distractor_on_top_of_lexical_ranking(tmp_path):
    data = gen(tmp_path / "d", rate=1.0, seed=11)
    store, index = tmp_path / "s.json.gz", tmp_path / "i.json.gz"
    run_path = tmp_path / "run.tsv"
    assert run("ingest", "--corpus", data / "corpus.jsonl", "--output", store,
               "--min-frequency", 1) == 0
    assert run("index", "--store", store, "--output", index) == 0
    assert run("retrieve", "--store", store, "--index", index, "--queries",
               data / "queries.jsonl", "--output", run_path) == 0
    ranking = read_run_file(run_path)
    truth = json.loads((data / "gold_distractor_map.json").read_text())
    for qid, info in truth["queries"].items():
        top = ":".join(ranking[qid][0])
        assert top == info["distractor"], qid
        assert info["gold"] in {":".join(ref) for ref in ranking[qid]}


# ---------------------------------------------------------------------------
# exit codes, config files, thread pinning


def test_usage_errors_exit_1(capsys):
    assert run() == 1                       # no subcommand
    assert run("no-such-command") == 1
    assert run("ingest") == 1               # missing required flags
    assert run("ingest", "--bogus-flag", "x") == 1
    capsys.readouterr()


def test_missing_input_file_exits_1(tmp_path, capsys):
    code = run("index", "--store", tmp_path / "absent.json.gz",
               "--output", tmp_path / "i.json.gz")
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_value_exits_1(workspace, tmp_path, capsys):
    code = run("retrieve", "--store", workspace["store"], "--index",
               workspace["index"], "--queries", workspace["test_queries"],
               "--output", tmp_path / "r.tsv", "--alpha", 1.5)
    assert code == 1
    capsys.readouterr()


def test_internal_errors_exit_2(workspace, tmp_path, monkeypatch, capsys):
    from statret import corpus

    def boom(path):
        raise RuntimeError("wrecked")

    monkeypatch.setattr(corpus.CorpusStore, "load", staticmethod(boom))
    code = run("index", "--store", workspace["store"],
               "--output", tmp_path / "i.json.gz")
    assert code == 2
    assert "RuntimeError" in capsys.readouterr().err


def test_training_divergence_exits_1(workspace, tmp_path, monkeypatch, capsys):
    from statret import training

    def boom(*args, **kwargs):
        raise training.TrainingDiverged("non-finite loss at epoch 1")

    monkeypatch.setattr(training, "train", boom)
    code = run("train", "--store", workspace["store"], "--index",
               workspace["index"], "--train-set", workspace["train_set"],
               "--queries", workspace["train_queries"],
               "--validation-queries", workspace["test_queries"],
               "--output", tmp_path / "m.json", "--max-epochs", 1)
    assert code == 1
    assert "non-finite" in capsys.readouterr().err


def test_config_file_supplies_defaults_but_flags_win(tmp_path):
    config = tmp_path / "gen.json"
    config.write_text(json.dumps({"articles": 24, "queries": 6, "seed": 2}))
    out = tmp_path / "data"
    assert run("gen-synthetic", "--config", config, "--output-dir", out,
               "--queries", 4) == 0
    corpus_rows = (out / "corpus.jsonl").read_text().splitlines()
    query_rows = (out / "queries.jsonl").read_text().splitlines()
    assert len(corpus_rows) == 24   # from config
    assert len(query_rows) == 4     # flag overrides config


def test_config_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "gen.json"
    config.write_text(json.dumps({"articles": 24, "wibble": 1}))
    assert run("gen-synthetic", "--config", config,
               "--output-dir", tmp_path / "d") == 1
    assert "wibble" in capsys.readouterr().err


def test_threads_flag_pins_blas_env(tmp_path, monkeypatch):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    gen_dir = tmp_path / "d"
    assert run("gen-synthetic", "--output-dir", gen_dir, "--articles", 24,
               "--queries", 4, "--threads", 2) == 0
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"


def test_threads_must_be_positive(capsys):
    assert run("gen-synthetic", "--output-dir", "x", "--threads", 0) == 1
    capsys.readouterr()

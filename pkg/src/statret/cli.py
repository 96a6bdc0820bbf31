"""Command line interface.

Subcommands cover the full workflow: corpus ingestion, index building,
training-set construction, training, retrieval, evaluation, fusion-weight
sweeps, attention explanations, and synthetic corpus generation.

Flag precedence is flags > config file > built-in defaults.  ``--threads``
caps the BLAS thread pools; it is applied before the numeric modules are
imported, which is why every handler imports lazily.  Exit codes: 0 success,
1 invalid input or usage, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# config keys that make no sense inside a config file
_NON_CONFIG_KEYS = {"config", "command"}


class CommandError(Exception):
    """User-facing failure: bad flags, bad files, infeasible request."""


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; route them through exit 1."""

    def error(self, message):
        raise CommandError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="JSON file with defaults for this subcommand")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools (set before numpy loads)")
    return common


def build_parser() -> tuple[_Parser, dict]:
    common = _common_options()
    parser = _Parser(prog="statret",
                     description="two-stage statute retrieval engine")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    subparsers: dict = {}

    p = sub.add_parser("ingest", parents=[common],
                       help="tokenize a JSONL corpus into a store")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--profile", choices=("spaced", "charbigram"), default="spaced")
    p.add_argument("--min-frequency", type=int, default=2)
    p.add_argument("--max-sentences", type=int, default=256)
    p.set_defaults(handler=_cmd_ingest)
    subparsers["ingest"] = p

    p = sub.add_parser("index", parents=[common],
                       help="build the lexical index from a store")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.set_defaults(handler=_cmd_index)
    subparsers["index"] = p

    p = sub.add_parser("make-train", parents=[common],
                       help="sample negatives into a training set")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--model-kind", choices=("cnn_dot", "general_attn_head"),
                   default="cnn_dot",
                   help="picks the default lexical/random mix")
    p.add_argument("--n-neg", type=int, default=4)
    p.add_argument("--mix", type=float, default=None,
                   help="fraction of negatives drawn from the BM25 top ranks")
    p.add_argument("--lexical-pool", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_make_train)
    subparsers["make-train"] = p

    p = sub.add_parser("train", parents=[common],
                       help="train a reranker and save the best checkpoint")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--train-set", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True,
                   help="queries referenced by the training set")
    p.add_argument("--validation-queries", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--model-kind", choices=("cnn_dot", "general_attn_head"),
                   default="cnn_dot")
    p.add_argument("--embedding-dim", type=int, default=512)
    p.add_argument("--num-filters", type=int, default=512)
    p.add_argument("--attention-dim", type=int, default=200)
    p.add_argument("--half-window", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--score-source", choices=("raw", "normalized"), default="raw")
    p.add_argument("--head-mode", choices=("article_only", "concat_query"),
                   default="article_only")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("retrieve", parents=[common],
                       help="run the two-stage pipeline over a query file")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="omit for a lexical-only baseline")
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--n-filter", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--normalization", choices=("minmax", "zscore", "none"),
                   default="minmax")
    p.set_defaults(handler=_cmd_retrieve)
    subparsers["retrieve"] = p

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a run file against judgments")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--judgments", type=Path, required=True,
                   help="query JSONL with relevant pairs")
    p.add_argument("--output", type=Path, required=True,
                   help="report prefix; writes .tsv, .json and .png")
    p.add_argument("--k", type=int, action="append", default=None,
                   help="cutoff, repeatable (default 1 and 20)")
    p.set_defaults(handler=_cmd_evaluate)
    subparsers["evaluate"] = p

    p = sub.add_parser("sweep-alpha", parents=[common],
                       help="grid-search the fusion weight on macro F2@1")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True,
                   help="output prefix; writes .tsv and .png")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--n-filter", type=int, default=None)
    p.add_argument("--normalization", choices=("minmax", "zscore", "none"),
                   default="minmax")
    p.set_defaults(handler=_cmd_sweep_alpha)
    subparsers["sweep-alpha"] = p

    p = sub.add_parser("explain", parents=[common],
                       help="dump attention weights for one query/article pair")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--article", required=True, help="reference law_id:article_id")
    p.add_argument("--output", type=Path, required=True,
                   help="output prefix; writes .json, .html and .png")
    p.set_defaults(handler=_cmd_explain)
    subparsers["explain"] = p

    p = sub.add_parser("gen-synthetic", parents=[common],
                       help="generate a synthetic corpus with known answers")
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--articles", type=int, default=200)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--synonym-rate", type=float, default=0.5)
    p.add_argument("--train-split", type=float, default=None,
                   help="also write stratified train/test query files")
    p.add_argument("--concepts-per-query", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_gen_synthetic)
    subparsers["gen-synthetic"] = p

    return parser, subparsers


def _apply_config(args, argv, parser: _Parser, subparsers: dict):
    """Merge config-file defaults under explicit flags, then re-parse."""
    sub = subparsers[args.command]
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise CommandError(f"{args.config}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise CommandError(f"{args.config}: config must be a JSON object")
    actions = {a.dest: a for a in sub._actions
               if a.dest not in _NON_CONFIG_KEYS | {"help", "handler"}}
    overrides = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise CommandError(
                f"{args.config}: unknown config key {key!r} for "
                f"'{args.command}'")
        # set_defaults bypasses argparse conversion, so apply the flag's
        # declared type to string values (paths, mostly) ourselves
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (TypeError, ValueError) as exc:
                raise CommandError(f"{args.config}: bad value for {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            raise CommandError(
                f"{args.config}: bad value for {key!r}: expected one of "
                f"{tuple(action.choices)}")
        overrides[dest] = value
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            args = _apply_config(args, argv, parser, subparsers)
        if args.threads is not None:
            if args.threads < 1:
                raise CommandError("--threads must be >= 1")
            for var in _THREAD_ENV_VARS:
                os.environ[var] = str(args.threads)
        args.handler(args)
        return 0
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry() -> None:
    sys.exit(main())


# ---------------------------------------------------------------------------
# handlers (all imports lazy so --threads can pin the pools first)


def _cmd_ingest(args) -> None:
    from . import corpus
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("ingest", _manifest_args(args))
    writer.add_input("corpus", args.corpus)
    store = corpus.ingest_corpus(args.corpus, profile=args.profile,
                                 min_frequency=args.min_frequency,
                                 max_sentences=args.max_sentences)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    store.save(args.output)
    writer.add_output(args.output, "store")
    writer.write(manifest_path_for(args.output))
    r = store.report
    print(f"documents        {r.documents}")
    print(f"articles         {r.articles}")
    print(f"sentences        {r.sentences}")
    print(f"dropped empties  {r.dropped_sentences}")
    print(f"truncated        {r.truncated_articles}")
    print(f"vocabulary       {r.vocab_size}")
    print(f"unk token rate   {r.unk_token_rate:.4f}")


def _cmd_index(args) -> None:
    from . import bm25, corpus
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("index", _manifest_args(args))
    writer.add_input("store", args.store)
    store = corpus.CorpusStore.load(args.store)
    index = bm25.build_index(store, k1=args.k1, b=args.b)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    index.save(args.output)
    writer.add_output(args.output, "index")
    writer.write(manifest_path_for(args.output))
    print(f"documents        {index.doc_count}")
    print(f"terms            {len(index.postings)}")
    print(f"avg doc length   {index.avg_doc_length:.4f}")
    print(f"k1 {index.k1:g}  b {index.b:g}")


def _cmd_make_train(args) -> None:
    from . import bm25, corpus, training
    from .manifest import ManifestWriter, manifest_path_for

    mix = args.mix if args.mix is not None \
        else training.DEFAULT_NEGATIVE_MIX[args.model_kind]
    writer = ManifestWriter("make-train", _manifest_args(args, mix=mix),
                            seed=args.seed)
    for label in ("store", "index", "queries"):
        writer.add_input(label, getattr(args, label))
    store = corpus.CorpusStore.load(args.store)
    index = bm25.InvertedIndex.load(args.index)
    queries, q_report = corpus.load_queries(args.queries, store)
    instances = training.build_training_set(
        queries, store, index, n_neg=args.n_neg, mix=mix,
        seed=args.seed, lexical_pool=args.lexical_pool)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    training.save_training_set(args.output, instances)
    writer.add_output(args.output, "training-set")
    writer.write(manifest_path_for(args.output))
    n_lex = sum(p == "lexical" for inst in instances for p in inst.provenance)
    n_rand = sum(p == "random" for inst in instances for p in inst.provenance)
    print(f"queries          {len(queries)}")
    print(f"instances        {len(instances)}")
    print(f"negatives        {n_lex} lexical + {n_rand} random")
    print(f"query unk rate   {q_report.unk_token_rate:.4f}")


def _cmd_train(args) -> None:
    from . import bm25, corpus, model as model_mod, training, viz
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("train", _manifest_args(args), seed=args.seed)
    for label in ("store", "index", "train_set", "queries", "validation_queries"):
        writer.add_input(label, getattr(args, label))
    store = corpus.CorpusStore.load(args.store)
    index = bm25.InvertedIndex.load(args.index)
    instances = training.load_training_set(args.train_set)
    queries, _ = corpus.load_queries(args.queries, store)
    val_queries, _ = corpus.load_queries(args.validation_queries, store)
    config = model_mod.ModelConfig(
        model_kind=args.model_kind, vocab_size=len(store.vocab),
        embedding_dim=args.embedding_dim, num_filters=args.num_filters,
        attention_dim=args.attention_dim, half_window=args.half_window,
        dropout=args.dropout, sentence_score_source=args.score_source,
        head_mode=args.head_mode)
    net = model_mod.RetrievalModel.create(config, store.vocab_hash(),
                                          seed=args.seed)
    optim = training.OptimConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)

    def log_fn(row):
        print(f"epoch {row['epoch']:3d}  loss {row['loss']:.6f}  "
              f"val macro-F2@1 {row['val_macro_f2_at_1']:.4f}")

    try:
        result = training.train(net, store, index, instances,
                                {q.query_id: q for q in queries},
                                val_queries, optim, log_fn=log_fn)
    except training.TrainingDiverged as exc:
        raise CommandError(str(exc))

    args.output.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(args.output)
    log_path = args.output.with_name(args.output.stem + ".log.jsonl")
    fig_path = args.output.with_name(args.output.stem + ".curve.png")
    result.save_log(log_path)
    viz.write_training_figure(result.history, fig_path)
    writer.add_output(args.output, "checkpoint")
    writer.add_output(log_path, "training-log")
    writer.add_output(fig_path, "figure")
    writer.write(manifest_path_for(args.output))
    print(f"best epoch       {result.best_epoch}")
    print(f"best val F2@1    {result.best_val:.4f}")
    print(f"stopped early    {'yes' if result.stopped_early else 'no'}")


def _cmd_retrieve(args) -> None:
    from . import bm25, corpus, model as model_mod, pipeline, runfile
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("retrieve", _manifest_args(args))
    writer.add_input("store", args.store)
    writer.add_input("index", args.index)
    writer.add_input("queries", args.queries)
    store = corpus.CorpusStore.load(args.store)
    index = bm25.InvertedIndex.load(args.index)
    net = None
    if args.checkpoint is not None:
        writer.add_input("checkpoint", args.checkpoint)
        net = model_mod.RetrievalModel.load(args.checkpoint)
        net.require_vocab(store)
    queries, q_report = corpus.load_queries(args.queries, store,
                                            require_relevant=False)
    config = pipeline.PipelineConfig(
        alpha_fuse=args.alpha, n_filter=args.n_filter, top_k=args.top_k,
        normalization=args.normalization)
    kind = net.config.model_kind if net is not None else "cnn_dot"
    n_filter, _ = config.resolve(kind)

    results = {}
    no_match = 0
    candidate_total = 0
    ceiling_parts = []
    for query in queries:
        result = pipeline.retrieve(query, store, index, net, config)
        results[query.query_id] = [(r.ref, r.s_final) for r in result.ranked]
        candidate_total += result.candidates_considered
        if result.no_lexical_match:
            no_match += 1
        if query.relevant:
            cands = {c.ref for c in
                     bm25.top_n(index, query.token_ids, n_filter).candidates}
            hit = sum(ref in cands for ref in query.relevant)
            ceiling_parts.append(hit / len(query.relevant))

    args.output.parent.mkdir(parents=True, exist_ok=True)
    runfile.write_run_file(args.output, results)
    writer.add_output(args.output, "run")
    writer.write(manifest_path_for(args.output))
    mode = "fused" if net is not None else "lexical-only"
    print(f"mode             {mode}")
    print(f"queries          {len(queries)}")
    print(f"mean candidates  {candidate_total / max(len(queries), 1):.1f}")
    print(f"empty candidate sets {no_match}")
    print(f"query unk rate   {q_report.unk_token_rate:.4f}")
    if ceiling_parts:
        ceiling = sum(ceiling_parts) / len(ceiling_parts)
        print(f"stage-1 recall ceiling {ceiling:.4f}")


def _cmd_evaluate(args) -> None:
    from . import metrics, runfile, viz
    from .manifest import ManifestWriter, manifest_path_for

    k_list = tuple(args.k) if args.k else (1, 20)
    writer = ManifestWriter("evaluate", _manifest_args(args, k=list(k_list)))
    writer.add_input("run", args.run)
    writer.add_input("judgments", args.judgments)
    run = runfile.read_run_file(args.run)
    judgments = runfile.load_judgments(args.judgments)
    reports = metrics.evaluate_run(run, judgments, k_list=k_list)

    base = _strip_suffix(args.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    tsv_path = base.with_suffix(".tsv")
    json_path = base.with_suffix(".json")
    png_path = base.with_suffix(".png")
    ordered = [reports[k] for k in sorted(reports)]
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("k\tmacro_precision\tmacro_recall\tmacro_f2\tmacro_ndcg\n")
        for rep in ordered:
            fh.write(f"{rep.k}\t{rep.macro_precision!r}\t{rep.macro_recall!r}"
                     f"\t{rep.macro_f2!r}\t{rep.macro_ndcg!r}\n")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"reports": [rep.to_dict() for rep in ordered]}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    viz.write_eval_figure(ordered, png_path)
    writer.add_output(tsv_path, "report-tsv")
    writer.add_output(json_path, "report-json")
    writer.add_output(png_path, "figure")
    writer.write(manifest_path_for(tsv_path))
    print(metrics.format_report_table(reports))


def _cmd_sweep_alpha(args) -> None:
    from . import bm25, corpus, model as model_mod, pipeline, viz
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("sweep-alpha", _manifest_args(args))
    for label in ("store", "index", "checkpoint", "queries"):
        writer.add_input(label, getattr(args, label))
    store = corpus.CorpusStore.load(args.store)
    index = bm25.InvertedIndex.load(args.index)
    net = model_mod.RetrievalModel.load(args.checkpoint)
    net.require_vocab(store)
    queries, _ = corpus.load_queries(args.queries, store)
    config = pipeline.PipelineConfig(n_filter=args.n_filter,
                                     normalization=args.normalization)
    sweep = pipeline.sweep_alpha(queries, store, index, net, config,
                                 grid_step=args.grid_step)

    base = _strip_suffix(args.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    tsv_path = base.with_suffix(".tsv")
    png_path = base.with_suffix(".png")
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write(sweep.to_tsv())
    viz.write_sweep_figure(sweep.rows, png_path, best_alpha=sweep.best_alpha)
    writer.add_output(tsv_path, "sweep-tsv")
    writer.add_output(png_path, "figure")
    writer.write(manifest_path_for(tsv_path))
    print(f"best alpha       {sweep.best_alpha:g}")
    print(f"best macro F2@1  {sweep.best_macro_f2:.4f}")


def _cmd_explain(args) -> None:
    from . import corpus, model as model_mod, pipeline, viz
    from .manifest import ManifestWriter, manifest_path_for

    writer = ManifestWriter("explain", _manifest_args(args))
    for label in ("store", "checkpoint", "queries"):
        writer.add_input(label, getattr(args, label))
    store = corpus.CorpusStore.load(args.store)
    net = model_mod.RetrievalModel.load(args.checkpoint)
    net.require_vocab(store)
    queries, _ = corpus.load_queries(args.queries, store, require_relevant=False)
    by_id = {q.query_id: q for q in queries}
    if args.query_id not in by_id:
        raise CommandError(f"query {args.query_id!r} not found in {args.queries}")
    ref = corpus.parse_ref(args.article)
    explanation = pipeline.explain(by_id[args.query_id], ref, store, net)

    base = _strip_suffix(args.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    html_path = base.with_suffix(".html")
    png_path = base.with_suffix(".png")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(explanation.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    viz.write_attention_html(explanation, html_path)
    viz.write_attention_figure(explanation, png_path)
    writer.add_output(json_path, "explanation-json")
    writer.add_output(html_path, "explanation-html")
    writer.add_output(png_path, "figure")
    writer.write(manifest_path_for(json_path))
    top = max(range(len(explanation.sentence_weights)),
              key=lambda i: explanation.sentence_weights[i])
    print(f"mode             {explanation.mode}")
    print(f"sentences        {len(explanation.sentence_weights)}")
    print(f"top sentence     #{top} "
          f"(weight {explanation.sentence_weights[top]:.4f})")


def _cmd_gen_synthetic(args) -> None:
    from . import synthetic
    from .manifest import ManifestWriter

    if args.train_split is not None and not 0.0 < args.train_split < 1.0:
        raise CommandError("--train-split must lie strictly between 0 and 1")
    writer = ManifestWriter("gen-synthetic", _manifest_args(args),
                            seed=args.seed)
    data = synthetic.generate(
        articles=args.articles, queries=args.queries,
        synonym_rate=args.synonym_rate, seed=args.seed,
        concepts_per_query=args.concepts_per_query)
    paths = data.write(args.output_dir, train_split=args.train_split,
                       seed=args.seed)
    for role, path in sorted(paths.items()):
        writer.add_output(path, role)
    writer.write(Path(args.output_dir) / "manifest.json")
    n_hard = sum(q["synonym"] for q in data.truth["queries"].values())
    print(f"articles         {len(data.corpus_lines)}")
    print(f"queries          {len(data.query_lines)} ({n_hard} synonym-shifted)")
    for role, path in sorted(paths.items()):
        print(f"{role:<16} {path}")


def _strip_suffix(path: Path) -> Path:
    return path.with_suffix("") if path.suffix in \
        {".tsv", ".json", ".png", ".html"} else path


def _manifest_args(args, **extra) -> dict:
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("handler", "config")}
    resolved.update(extra)
    return resolved


if __name__ == "__main__":
    entry()

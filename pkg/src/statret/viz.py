"""Figure and report rendering.

Everything here writes to files; no interactive backends.  Figures are
secondary outputs: the byte-stable artifacts are the delimited/JSON files
the figures sit alongside.
"""

from __future__ import annotations

import html

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def write_sweep_figure(rows, path, best_alpha=None) -> None:
    """Line plot of macro-F2@1 against the fusion weight."""
    alphas = [a for a, _ in rows]
    scores = [s for _, s in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(alphas, scores, marker="o", markersize=3, linewidth=1.2)
    if best_alpha is not None:
        best_score = dict(rows)[best_alpha]
        ax.axvline(best_alpha, color="tab:red", linewidth=0.8, linestyle="--")
        ax.annotate(f"best {best_alpha:g}", (best_alpha, best_score),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("fusion weight (1.0 = reranker only)")
    ax.set_ylabel("macro F2@1")
    ax.set_xlim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_training_figure(history, path) -> None:
    """Loss curve with validation macro-F2@1 on a twin axis."""
    epochs = [row["epoch"] for row in history]
    losses = [row["loss"] for row in history]
    vals = [row["val_macro_f2_at_1"] for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(epochs, losses, color="tab:blue", linewidth=1.2, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    twin = ax.twinx()
    twin.plot(epochs, vals, color="tab:orange", linewidth=1.2,
              label="val macro F2@1")
    twin.set_ylabel("val macro F2@1", color="tab:orange")
    twin.tick_params(axis="y", labelcolor="tab:orange")
    twin.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_figure(reports, path) -> None:
    """Grouped bars of the macro metrics for each cutoff."""
    names = ("precision", "recall", "F2", "nDCG")
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    width = 0.8 / max(len(reports), 1)
    for i, report in enumerate(reports):
        values = (report.macro_precision, report.macro_recall,
                  report.macro_f2, report.macro_ndcg)
        offsets = [j + i * width for j in range(len(names))]
        ax.bar(offsets, values, width=width, label=f"@{report.k}")
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(names))])
    ax.set_xticklabels(names)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("macro average")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_attention_figure(explanation, path) -> None:
    """Horizontal bars of paragraph-level sentence weights."""
    weights = explanation.sentence_weights
    labels = [_clip(" ".join(tokens), 48) for tokens in explanation.sentences]
    positions = list(range(len(weights)))[::-1]
    fig, ax = plt.subplots(figsize=(7.0, 0.5 + 0.4 * max(len(weights), 1)))
    ax.barh(positions, weights, color="tab:blue")
    ax.set_yticks(positions)
    ax.set_yticklabels(labels, fontsize=7)
    ax.set_xlabel("sentence weight")
    ax.set_xlim(0.0, 1.0)
    title = f"{explanation.article_ref} ({explanation.mode})"
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_attention_html(explanation, path) -> None:
    """Standalone HTML heatmap: word opacity tracks attention weight."""
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        f"<title>attention {html.escape(explanation.article_ref)}</title>",
        "<style>",
        "body { font-family: sans-serif; margin: 2em; max-width: 60em; }",
        ".sent { margin: 0.4em 0; padding: 0.3em 0.5em; border-left: 4px solid #888; }",
        ".word { padding: 0.05em 0.15em; border-radius: 3px; }",
        ".weight { color: #666; font-size: 0.8em; margin-left: 0.6em; }",
        "</style></head><body>",
        f"<h1>{html.escape(explanation.article_ref)}</h1>",
        f"<p>query <code>{html.escape(explanation.query_id)}</code>: "
        f"{html.escape(' '.join(explanation.query_tokens))}</p>",
        f"<p>mode: <code>{html.escape(explanation.mode)}</code>"
        f"{' (query dependent)' if explanation.query_dependent else ' (query independent)'}</p>",
    ]
    for s_weight, tokens, w_weights in zip(
            explanation.sentence_weights, explanation.sentences,
            explanation.word_weights):
        border = f"border-left-color: rgba(30, 90, 200, {_css(s_weight)});"
        spans = []
        top = max(w_weights) if w_weights else 1.0
        for token, weight in zip(tokens, w_weights):
            rel = weight / top if top > 0 else 0.0
            style = f"background: rgba(255, 160, 0, {_css(rel)})"
            spans.append(f"<span class=\"word\" style=\"{style}\" "
                         f"title=\"{weight:.4f}\">{html.escape(token)}</span>")
        parts.append(f"<div class=\"sent\" style=\"{border}\">"
                     + " ".join(spans)
                     + f"<span class=\"weight\">{s_weight:.4f}</span></div>")
    parts.append("</body></html>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def _css(value: float) -> str:
    return f"{max(0.0, min(1.0, value)):.3f}"


def _clip(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."

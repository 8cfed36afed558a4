"""Report rendering: delimited metric files, aligned text tables, and
headless matplotlib figures for metrics, training curves and the
prompt-compliance distribution."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_tsv(path, rows, header=("metric", "value")) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def write_table(path, rows, title: str = "") -> None:
    """Aligned two-column text table for humans."""
    width = max((len(str(name)) for name, _ in rows), default=10)
    lines = []
    if title:
        lines.append(title)
        lines.append("-" * max(len(title), width + 12))
    for name, value in rows:
        lines.append(f"{str(name):<{width}}  {_fmt(value)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def plot_metric_bars(path, rows, title: str = "automatic metrics") -> None:
    """Horizontal bars for the [0, 1] metric block of a report."""
    pairs = [(n, v) for n, v in rows if isinstance(v, float) and 0.0 <= v <= 1.0
             and n != "n_examples"]
    if not pairs:
        return
    names = [n for n, _ in pairs]
    values = [v for _, v in pairs]
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(pairs) + 1.2))
    y = np.arange(len(pairs))
    ax.barh(y, values, color="#4878a8")
    ax.set_yticks(y, names)
    ax.invert_yaxis()
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("score")
    ax.set_title(title)
    for yi, v in zip(y, values):
        ax.text(min(v + 0.01, 0.98), yi, f"{v:.3f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_training_curves(path, history) -> None:
    """Loss per logged step and validation perplexity where measured."""
    if not history:
        return
    steps = [row["step"] for row in history]
    losses = [row["loss"] for row in history]
    ppl_pts = [(row["step"], row["valid_ppl"]) for row in history
               if row.get("valid_ppl") is not None]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(steps, losses, color="#4878a8", lw=1.2)
    ax1.set_xlabel("step")
    ax1.set_ylabel("training loss")
    ax1.set_title("loss")
    if ppl_pts:
        ax2.plot([s for s, _ in ppl_pts], [p for _, p in ppl_pts],
                 marker="o", ms=3, color="#b05050", lw=1.0)
        ax2.set_yscale("log")
    ax2.set_xlabel("step")
    ax2.set_ylabel("validation perplexity")
    ax2.set_title("perplexity")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_compliance_histogram(path, compliance) -> None:
    """Overlaid per-generation compliance fractions, both prompt conditions."""
    k = max(compliance.tokens_per_prompt, 1)
    bins = np.linspace(0.0, 1.0, k + 1)
    fig, ax = plt.subplots(figsize=(7, 3.6))
    ax.hist(compliance.correct_fractions, bins=bins, alpha=0.6,
            label=f"correct prompts (mean {compliance.mean_correct:.2f})",
            color="#4878a8")
    ax.hist(compliance.incorrect_fractions, bins=bins, alpha=0.6,
            label=f"incorrect prompts (mean {compliance.mean_incorrect:.2f})",
            color="#b05050")
    ax.set_xlabel("fraction of prompt tokens realized in output")
    ax.set_ylabel("generations")
    ax.set_title(f"prompt compliance (gap {compliance.gap:.2f})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def compliance_rows(compliance) -> list:
    return [
        ("mean_correct", compliance.mean_correct),
        ("mean_incorrect", compliance.mean_incorrect),
        ("gap", compliance.gap),
        ("over_half_correct", compliance.over_half_correct),
        ("n_generations_per_condition", float(len(compliance.correct_fractions))),
        ("n_reviews_used", float(compliance.n_reviews_used)),
        ("n_reviews_skipped", float(compliance.n_skipped)),
        ("tokens_per_prompt", float(compliance.tokens_per_prompt)),
    ]


def write_summaries_tsv(path, results) -> None:
    """One generated summary per row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity_id\tn_inputs\tnormalized_score\tprompt\tsummary\n")
        for r in results:
            fh.write(
                "\t".join(
                    (
                        r.entity_id,
                        str(len(r.input_review_ids)),
                        f"{r.normalized_score:.6g}",
                        " ".join(r.prompt_tokens),
                        r.text,
                    )
                )
                + "\n"
            )

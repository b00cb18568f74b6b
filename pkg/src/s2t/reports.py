"""Report rendering: every report lands as delimited text (CSV) plus a
matplotlib figure next to it, so results can be read by tools or by eye."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .annotations import CaptionStats  # noqa: E402

__all__ = [
    "write_csv",
    "render_caption_stats",
    "render_loss_curves",
    "render_metric_table",
    "render_ablation",
]


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def render_caption_stats(stats: dict[str, CaptionStats], out_dir: str | Path,
                         top_words: int = 20) -> dict[str, str]:
    """Caption-length histogram and word-frequency chart, plus CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, str] = {}

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, granularity in zip(axes, ("shot", "tactic")):
        s = stats[granularity]
        if s.length_histogram:
            lengths = sorted(s.length_histogram)
            ax.bar(lengths, [s.length_histogram[k] for k in lengths], width=0.8)
        ax.set_title(f"{granularity} caption lengths")
        ax.set_xlabel("words")
        ax.set_ylabel("captions")
    fig.tight_layout()
    hist_png = out_dir / "caption_lengths.png"
    fig.savefig(hist_png, dpi=120)
    plt.close(fig)
    outputs["caption_lengths_png"] = str(hist_png)

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, granularity in zip(axes, ("shot", "tactic")):
        s = stats[granularity]
        common = list(s.word_frequencies.items())[:top_words]
        if common:
            words, counts = zip(*common)
            ax.barh(range(len(words)), counts)
            ax.set_yticks(range(len(words)), words, fontsize=7)
            ax.invert_yaxis()
        ax.set_title(f"{granularity} caption words")
        ax.set_xlabel("count")
    fig.tight_layout()
    words_png = out_dir / "word_frequencies.png"
    fig.savefig(words_png, dpi=120)
    plt.close(fig)
    outputs["word_frequencies_png"] = str(words_png)

    for granularity in ("shot", "tactic"):
        s = stats[granularity]
        outputs[f"{granularity}_lengths_csv"] = str(write_csv(
            out_dir / f"{granularity}_caption_lengths.csv",
            ["length", "count"],
            [[k, v] for k, v in sorted(s.length_histogram.items())]))
        outputs[f"{granularity}_words_csv"] = str(write_csv(
            out_dir / f"{granularity}_word_frequencies.csv",
            ["word", "count"],
            [[w, c] for w, c in s.word_frequencies.items()]))
    return outputs


def render_loss_curves(history: list[dict], out_dir: str | Path,
                       name: str = "training") -> dict[str, str]:
    """Per-epoch loss table and curve figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not history:
        return {}
    keys = [k for k in history[0] if k != "epoch"]
    csv_path = write_csv(
        out_dir / f"{name}_losses.csv",
        ["epoch"] + keys,
        [[h["epoch"]] + [h[k] for k in keys] for h in history])

    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [h["epoch"] for h in history]
    for key in keys:
        values = [h[key] for h in history]
        if all(isinstance(v, (int, float)) for v in values):
            ax.plot(epochs, values, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    ax.set_title(name)
    fig.tight_layout()
    png_path = out_dir / f"{name}_losses.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {f"{name}_losses_csv": str(csv_path), f"{name}_losses_png": str(png_path)}


def render_metric_table(tables: dict[str, dict[str, float]], out_dir: str | Path,
                        name: str = "metrics") -> dict[str, str]:
    """Metric tables keyed by granularity (shot | tactic): CSV plus bars."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metric_names = sorted({m for t in tables.values() for m in t})
    rows = [[g] + [tables[g].get(m, float("nan")) for m in metric_names]
            for g in sorted(tables)]
    csv_path = write_csv(out_dir / f"{name}.csv", ["granularity"] + metric_names, rows)

    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / max(len(tables), 1)
    for k, granularity in enumerate(sorted(tables)):
        values = [tables[granularity].get(m, float("nan")) for m in metric_names]
        ax.bar([i + k * width for i in range(len(metric_names))], values,
               width=width, label=granularity)
    ax.set_xticks(range(len(metric_names)), metric_names, rotation=30, fontsize=8)
    ax.legend()
    ax.set_title(name)
    fig.tight_layout()
    png_path = out_dir / f"{name}.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {f"{name}_csv": str(csv_path), f"{name}_png": str(png_path)}


def render_ablation(rows: list[dict], out_dir: str | Path) -> dict[str, str]:
    """Prompt-ablation comparison: one row per (setting, granularity)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return {}
    metric_names = [k for k in rows[0] if k not in ("prompt", "granularity")]
    csv_path = write_csv(
        out_dir / "prompt_ablation.csv",
        ["prompt", "granularity"] + metric_names,
        [[r["prompt"], r["granularity"]] + [r[m] for m in metric_names] for r in rows])

    fig, ax = plt.subplots(figsize=(7, 4))
    tactic_rows = [r for r in rows if r["granularity"] == "tactic"]
    settings = [r["prompt"] for r in tactic_rows]
    ax.bar(settings, [r.get("bleu_4", float("nan")) for r in tactic_rows])
    ax.set_ylabel("tactic BLEU-4")
    ax.set_title("prompt ablation")
    fig.tight_layout()
    png_path = out_dir / "prompt_ablation.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {"prompt_ablation_csv": str(csv_path), "prompt_ablation_png": str(png_path)}

"""Plot emission for reports and sweep curves (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def similarity_histogram(clean: list[float], adv: list[float], path: str | Path) -> None:
    """Overlaid histograms of padding similarity for the clean and attacked pools."""
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = 40
    if clean:
        ax.hist(clean, bins=bins, range=(-1, 1), alpha=0.6, label="clean", color="tab:blue")
    if adv:
        ax.hist(adv, bins=bins, range=(-1, 1), alpha=0.6, label="adversarial", color="tab:red")
    ax.set_xlabel("cosine similarity before vs after padding")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def curve_plot(
    rows: list[dict], x_key: str, y_keys: list[str], path: str | Path, xlabel: str = "", ylabel: str = ""
) -> None:
    """Line plot of one or more curve columns against a shared x column."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row[x_key] for row in rows]
    for key in y_keys:
        ys = [row.get(key) for row in rows]
        if all(y is None for y in ys):
            continue
        ax.plot(xs, ys, marker="o", label=key)
    ax.set_xlabel(xlabel or x_key)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

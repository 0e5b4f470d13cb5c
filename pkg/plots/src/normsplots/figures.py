"""The seven figure kinds, rendered from exported files only.

Figures are deterministic: fixed figure sizes and dpi, pinned PNG
metadata, and (for the UMAP projection) a pinned random state recorded in
the image's metadata. Rendering the same inputs twice produces identical
bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import (
    EpochMetricsRow,
    load_epoch_metrics,
    load_network,
    load_punish_counts,
    load_trait_cells,
    load_trial_embeddings,
)
from .umap_impl import fit_transform

DPI = 120
PNG_METADATA = {"Software": "normsplots"}

CHEATER_COLOR = "#d62728"
HONEST_COLOR = "#aec7e8"
TRIAL_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2")


def _save(fig, out_path: Path, extra_metadata: dict | None = None) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metadata = dict(PNG_METADATA)
    if extra_metadata:
        metadata.update(extra_metadata)
    fig.savefig(out_path, format="png", dpi=DPI, metadata=metadata)
    plt.close(fig)
    return out_path


def render_violin(counts_csv: Path, out_path: Path) -> list[str]:
    """Per-group distribution of punish commands per round (violin plot)."""
    counts = load_punish_counts(Path(counts_csv))
    groups = sorted(counts.groups)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.violinplot([counts.groups[g] for g in groups], showmedians=True, widths=0.8)
    ax.set_xticks(range(1, len(groups) + 1))
    ax.set_xticklabels(groups, rotation=15)
    ax.set_ylabel("punish commands per round")
    ax.set_title("Punish command counts by condition")
    fig.tight_layout()
    _save(fig, out_path)
    return groups


def render_trait_grid(cells_csv: Path, metrics_csv: Path, out_path: Path) -> Path:
    """Population bubbles on the trait grid, plus the mean trajectory."""
    cells = load_trait_cells(Path(cells_csv))
    metrics = load_epoch_metrics(Path(metrics_csv))
    epochs = sorted(cells)
    cmap = plt.get_cmap("viridis")
    fig, ax = plt.subplots(figsize=(6, 6))
    for epoch in epochs:
        shade = cmap(epoch / max(1, len(epochs) - 1) * 0.85)
        for (v, b), count in sorted(cells[epoch].items()):
            ax.scatter(b, v, s=60 * count, color=shade, alpha=0.35, edgecolors="none")
    means = [
        (row.mean_boldness, row.mean_vengefulness)
        for row in metrics
        if row.mean_boldness is not None
    ]
    if means:
        xs, ys = zip(*means)
        ax.plot(xs, ys, color="black", linewidth=1.0, alpha=0.8)
        ax.scatter(xs[-1:], ys[-1:], color="black", marker="x", s=60)
    ax.set_xlim(0.5, 7.5)
    ax.set_ylim(0.5, 7.5)
    ax.set_xticks(range(1, 8))
    ax.set_yticks(range(1, 8))
    ax.set_xlabel("boldness")
    ax.set_ylabel("vengefulness")
    ax.set_title("Trait populations by epoch (dark = late)")
    ax.grid(True, linewidth=0.3, alpha=0.5)
    fig.tight_layout()
    return _save(fig, out_path)


def render_network(network_json: Path, out_path: Path) -> Path:
    """Directed punishment graph; cheaters red, honest agents light blue."""
    network = load_network(Path(network_json))
    n = len(network.nodes)
    angles = [2 * np.pi * k / n for k in range(n)]
    positions = {
        name: (np.cos(angle), np.sin(angle))
        for (name, _), angle in zip(network.nodes, angles)
    }
    fig, ax = plt.subplots(figsize=(6, 6))
    for (name, cheated), angle in zip(network.nodes, angles):
        x, y = positions[name]
        ax.scatter(
            [x], [y], s=900, color=CHEATER_COLOR if cheated else HONEST_COLOR,
            zorder=3, edgecolors="black", linewidths=0.8,
        )
        ax.annotate(
            name, (x * 1.22, y * 1.22), ha="center", va="center", fontsize=9
        )
    for src, dst, count in network.edges:
        x0, y0 = positions[src]
        x1, y1 = positions[dst]
        ax.annotate(
            "",
            xy=(x1, y1),
            xytext=(x0, y0),
            arrowprops=dict(
                arrowstyle="-|>",
                color="black",
                alpha=0.75,
                linewidth=0.8 + 0.8 * (count - 1),
                shrinkA=18,
                shrinkB=18,
                connectionstyle="arc3,rad=0.08",
            ),
            zorder=2,
        )
        if count > 1:
            ax.annotate(
                str(count),
                ((x0 + x1) / 2 * 1.05, (y0 + y1) / 2 * 1.05),
                fontsize=8,
                ha="center",
            )
    ax.set_xlim(-1.45, 1.45)
    ax.set_ylim(-1.45, 1.45)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title(f"Punishment network, round {network.round_index}")
    fig.tight_layout()
    return _save(fig, out_path)


def render_umap(
    trial_dirs: Sequence[Path],
    out_path: Path,
    *,
    random_state: int = 42,
    n_neighbors: int = 15,
    min_dist: float = 0.1,
    n_epochs: int = 200,
) -> Path:
    """Project per-epoch persona centroids of all trials into 2D.

    Arrows link consecutive epochs within each trial. The projector's
    hyperparameters and random state are recorded in the PNG metadata so
    the figure is reproducible.
    """
    trials = [load_trial_embeddings(Path(d)) for d in trial_dirs]
    points = np.array([c for trial in trials for c in trial.centroids])
    projected = fit_transform(
        points,
        n_neighbors=n_neighbors,
        min_dist=min_dist,
        n_epochs=n_epochs,
        random_state=random_state,
    )
    fig, ax = plt.subplots(figsize=(7, 6))
    offset = 0
    for trial_index, trial in enumerate(trials):
        count = len(trial.centroids)
        coords = projected[offset : offset + count]
        offset += count
        color = TRIAL_COLORS[trial_index % len(TRIAL_COLORS)]
        ax.scatter(coords[:, 0], coords[:, 1], s=14, color=color, label=trial.label)
        for a, b in zip(coords, coords[1:]):
            ax.annotate(
                "",
                xy=(b[0], b[1]),
                xytext=(a[0], a[1]),
                arrowprops=dict(arrowstyle="->", color=color, alpha=0.55, linewidth=0.7),
            )
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Persona embedding means per epoch (UMAP projection)")
    ax.set_xlabel("umap-1")
    ax.set_ylabel("umap-2")
    fig.tight_layout()
    return _save(
        fig,
        out_path,
        extra_metadata={
            "Description": (
                f"umap random_state={random_state} n_neighbors={n_neighbors} "
                f"min_dist={min_dist} n_epochs={n_epochs}"
            )
        },
    )


TRAJECTORY_KINDS = {
    "variance": ("embedding variance", lambda row: row.embedding_variance),
    "cheat-rate": ("cheat rate", lambda row: row.cheat_rate),
    "punish-rate": ("punish rate", lambda row: row.punish_rate),
}


def render_trajectory(kind: str, metrics_csvs: Sequence[Path], out_path: Path) -> Path:
    """Per-epoch curves over one or more trials: variance, cheat or punish rate."""
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    label, extract = TRAJECTORY_KINDS[kind]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for index, path in enumerate(metrics_csvs):
        rows: list[EpochMetricsRow] = load_epoch_metrics(Path(path))
        xs = [row.epoch for row in rows]
        ys = [extract(row) for row in rows]
        color = TRIAL_COLORS[index % len(TRIAL_COLORS)]
        ax.plot(xs, ys, color=color, linewidth=1.2, label=Path(path).parent.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(label)
    ax.set_title(f"Progression of {label} by epoch")
    if len(metrics_csvs) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)

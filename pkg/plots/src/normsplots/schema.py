"""Loaders for the simulator's exported files, validating shape up front.

The renderers never recompute statistics; they draw exactly what the
exports contain. A file that does not match its documented schema fails
fast with a :class:`SchemaError` naming the offending column or key.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class SchemaError(Exception):
    """An input file does not match its documented export schema."""


PUNISH_COUNT_COLUMNS = ["group", "run_id", "round", "punish_count"]
EPOCH_METRICS_COLUMNS = [
    "epoch", "mean_vengefulness", "var_vengefulness", "mean_boldness",
    "var_boldness", "cheat_count", "punish_count", "mean_payoff",
    "min_payoff", "max_payoff", "cheat_rate", "punish_rate",
    "embedding_variance",
]
TRAIT_CELL_COLUMNS = ["epoch", "vengefulness", "boldness", "count"]


def _read_csv(path: Path, expected: list[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [column for column in expected if column not in header]
        if missing:
            raise SchemaError(f"{path.name}: missing column '{missing[0]}'")
        extra = [column for column in header if column not in expected]
        if extra:
            raise SchemaError(f"{path.name}: unexpected column '{extra[0]}'")
        return list(reader)


def _opt_float(value: str) -> Optional[float]:
    return float(value) if value != "" else None


@dataclass
class PunishCounts:
    groups: dict[str, list[int]]  # group label -> per-round counts


def load_punish_counts(path: Path) -> PunishCounts:
    rows = _read_csv(path, PUNISH_COUNT_COLUMNS)
    groups: dict[str, list[int]] = {}
    for row in rows:
        try:
            groups.setdefault(row["group"], []).append(int(row["punish_count"]))
        except ValueError as exc:
            raise SchemaError(f"{path.name}: non-integer punish_count") from exc
    if not groups:
        raise SchemaError(f"{path.name}: no rows")
    return PunishCounts(groups)


@dataclass
class EpochMetricsRow:
    epoch: int
    mean_vengefulness: Optional[float]
    mean_boldness: Optional[float]
    cheat_rate: float
    punish_rate: float
    embedding_variance: Optional[float]


def load_epoch_metrics(path: Path) -> list[EpochMetricsRow]:
    rows = _read_csv(path, EPOCH_METRICS_COLUMNS)
    out = []
    for row in rows:
        try:
            out.append(
                EpochMetricsRow(
                    epoch=int(row["epoch"]),
                    mean_vengefulness=_opt_float(row["mean_vengefulness"]),
                    mean_boldness=_opt_float(row["mean_boldness"]),
                    cheat_rate=float(row["cheat_rate"]),
                    punish_rate=float(row["punish_rate"]),
                    embedding_variance=_opt_float(row["embedding_variance"]),
                )
            )
        except ValueError as exc:
            raise SchemaError(f"{path.name}: bad value in row {row['epoch']!r}: {exc}") from exc
    if not out:
        raise SchemaError(f"{path.name}: no rows")
    return sorted(out, key=lambda r: r.epoch)


def load_trait_cells(path: Path) -> dict[int, dict[tuple[int, int], int]]:
    rows = _read_csv(path, TRAIT_CELL_COLUMNS)
    cells: dict[int, dict[tuple[int, int], int]] = {}
    for row in rows:
        try:
            epoch = int(row["epoch"])
            key = (int(row["vengefulness"]), int(row["boldness"]))
            cells.setdefault(epoch, {})[key] = int(row["count"])
        except ValueError as exc:
            raise SchemaError(f"{path.name}: non-integer cell value") from exc
    if not cells:
        raise SchemaError(f"{path.name}: no rows")
    return cells


@dataclass
class Network:
    round_index: int
    nodes: list[tuple[str, bool]]
    edges: list[tuple[str, str, int]]


def load_network(path: Path) -> Network:
    body = json.loads(path.read_text(encoding="utf-8"))
    for key in ("round", "nodes", "edges"):
        if key not in body:
            raise SchemaError(f"{path.name}: missing key '{key}'")
    try:
        nodes = [(n["agent"], bool(n["cheated"])) for n in body["nodes"]]
        edges = [(e["from"], e["to"], int(e["count"])) for e in body["edges"]]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path.name}: malformed node/edge entry: {exc}") from exc
    names = {name for name, _ in nodes}
    for src, dst, _ in edges:
        if src not in names or dst not in names:
            raise SchemaError(f"{path.name}: edge endpoint '{src}->{dst}' not in nodes")
    return Network(body["round"], nodes, edges)


@dataclass
class TrialEmbeddings:
    label: str
    epochs: list[int]
    centroids: list[list[float]]  # one per epoch, same dimension


def load_trial_embeddings(trial_dir: Path) -> TrialEmbeddings:
    """Read every embeddings_<epoch>.json in one trial's analysis directory."""
    files = sorted(
        trial_dir.glob("embeddings_*.json"),
        key=lambda p: int(p.stem.split("_")[1]),
    )
    if not files:
        raise SchemaError(f"{trial_dir}: no embeddings_<epoch>.json files")
    epochs: list[int] = []
    centroids: list[list[float]] = []
    dim = None
    for path in files:
        body = json.loads(path.read_text(encoding="utf-8"))
        for key in ("epoch", "centroid", "dim"):
            if key not in body:
                raise SchemaError(f"{path.name}: missing key '{key}'")
        if dim is None:
            dim = body["dim"]
        elif body["dim"] != dim:
            raise SchemaError(f"{path.name}: dim {body['dim']} != {dim} in earlier epochs")
        epochs.append(int(body["epoch"]))
        centroids.append([float(x) for x in body["centroid"]])
    return TrialEmbeddings(label=trial_dir.name, epochs=epochs, centroids=centroids)

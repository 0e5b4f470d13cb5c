"""Every exported quantity, recomputed from run-log bytes.

All operations here are pure functions of the log events (plus, for
embeddings, a gateway in a deterministic mode), so re-running an analysis
over the same log yields byte-identical CSV/JSON/DOT output.  Floats are
serialized with 9 significant digits.

Exports and their schemas are documented in ``ANALYSIS.md``:

    punish_counts.csv            per-round punish command counts per group
    <run_id>/epoch_metrics.csv   per-epoch traits, counts, payoffs, rates
    <run_id>/trait_cells.csv     per-epoch (V, B) population multiset
    <run_id>/network_<round>.dot / .json   punishment networks
    <run_id>/embeddings_<epoch>.json       persona embedding stats
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, WrongRegimeError
from .gateway import Gateway
from .runlog import LogEvent, canonical_json


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else format(float(value), ".9g")


# -- embedding statistics ------------------------------------------------------


def embedding_centroid_variance(
    vectors: Sequence[Sequence[float]],
) -> tuple[list[float], float]:
    """Coordinatewise mean and mean squared distance from it.

    The scalar equals the trace of the covariance matrix, and also half the
    mean squared distance over all ordered pairs (the identity the tests
    pin it with).
    """
    if not vectors:
        raise ConfigurationError("no embedding vectors")
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise ConfigurationError(f"mixed embedding dimensionalities: {sorted(lengths)}")
    arr = np.asarray(vectors, dtype=float)
    if np.all(arr == arr[0]):
        return [float(x) for x in arr[0]], 0.0
    centroid = arr.mean(axis=0)
    variance = float(np.mean(((arr - centroid) ** 2).sum(axis=1)))
    return [float(x) for x in centroid], variance


# -- log navigation --------------------------------------------------------------


def rounds_in_log(events: Sequence[LogEvent]) -> list[int]:
    return [e.round for e in events if e.type == "round_start"]


def _round_events(events: Sequence[LogEvent], round_index: int) -> list[LogEvent]:
    return [e for e in events if e.round == round_index]


def _announcement(events: Sequence[LogEvent], round_index: int) -> LogEvent:
    for event in events:
        if event.round == round_index and event.type == "announcement":
            return event
    raise LookupError(f"round {round_index} has no announcement")


def epoch_payloads(events: Sequence[LogEvent]) -> list[dict]:
    return [e.payload for e in events if e.type == "epoch_record"]


# -- punish counts (violin data) --------------------------------------------------


@dataclass(frozen=True)
class PunishCountRow:
    group: str
    run_id: str
    round_index: int
    count: int


def punish_counts_per_round(events: Sequence[LogEvent]) -> dict[int, int]:
    """Punish commands applied in each round (rounds with none count 0)."""
    counts = {r: 0 for r in rounds_in_log(events)}
    for event in events:
        if event.type == "discussion_event" and event.payload.get("punish"):
            counts[event.round] += 1
    return counts


def punish_counts(
    logs_by_group: Mapping[str, Sequence[Sequence[LogEvent]]],
) -> list[PunishCountRow]:
    """Per-round punish counts for each named group, in deterministic order."""
    rows: list[PunishCountRow] = []
    for group in sorted(logs_by_group):
        for events in logs_by_group[group]:
            run_id = events[0].run_id if events else ""
            for round_index, count in sorted(punish_counts_per_round(events).items()):
                rows.append(PunishCountRow(group, run_id, round_index, count))
    return rows


def write_punish_counts_csv(rows: Sequence[PunishCountRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("group,run_id,round,punish_count\n")
        for row in rows:
            handle.write(f"{row.group},{row.run_id},{row.round_index},{row.count}\n")


# -- punishment networks -----------------------------------------------------------


@dataclass(frozen=True)
class PunishmentNetwork:
    """Directed punish graph for one round; nodes carry the cheated flag."""

    round_index: int
    nodes: tuple[tuple[str, bool], ...]  # (agent, cheated), announcement order
    edges: tuple[tuple[str, str, int], ...]  # (punisher, punished, multiplicity)

    def to_json_payload(self) -> dict:
        return {
            "round": self.round_index,
            "nodes": [{"agent": a, "cheated": c} for a, c in self.nodes],
            "edges": [{"from": s, "to": t, "count": n} for s, t, n in self.edges],
        }

    def to_dot(self) -> str:
        lines = ["digraph punishment_network {"]
        for agent, cheated in self.nodes:
            color = "red" if cheated else "lightblue"
            lines.append(f'  "{agent}" [style=filled, fillcolor={color}];')
        for src, dst, count in self.edges:
            lines.append(f'  "{src}" -> "{dst}" [label={count}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_network(events: Sequence[LogEvent], round_index: int) -> PunishmentNetwork:
    """Aggregate one round's punish events into a multigraph with counts."""
    if round_index not in set(rounds_in_log(events)):
        raise LookupError(f"round {round_index} not present in log")
    announcement = _announcement(events, round_index)
    nodes = tuple(
        (entry["agent"], entry["cheated"]) for entry in announcement.payload["scores"]
    )
    order = {agent: i for i, (agent, _) in enumerate(nodes)}
    multiplicity: dict[tuple[str, str], int] = {}
    for event in _round_events(events, round_index):
        if event.type == "discussion_event" and event.payload.get("punish"):
            key = (event.payload["speaker"], event.payload["punish"]["target"])
            multiplicity[key] = multiplicity.get(key, 0) + 1
    edges = tuple(
        (src, dst, multiplicity[(src, dst)])
        for src, dst in sorted(multiplicity, key=lambda k: (order[k[0]], order[k[1]]))
    )
    return PunishmentNetwork(round_index=round_index, nodes=nodes, edges=edges)


def write_network(network: PunishmentNetwork, out_dir: Path) -> None:
    dot_path = out_dir / f"network_{network.round_index}.dot"
    json_path = out_dir / f"network_{network.round_index}.json"
    with open(dot_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(network.to_dot())
    with open(json_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(canonical_json(network.to_json_payload()) + "\n")


# -- epoch metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mean_vengefulness: Optional[float]
    var_vengefulness: Optional[float]
    mean_boldness: Optional[float]
    var_boldness: Optional[float]
    cheat_count: int
    punish_count: int
    mean_payoff: float
    min_payoff: float
    max_payoff: float
    cheat_rate: float
    punish_rate: float
    embedding_variance: Optional[float]
    trait_cells: dict[tuple[int, int], int]


def _population_traits(payload: dict) -> Optional[list[tuple[int, int]]]:
    traits = []
    for profile in payload["population"]:
        persona = profile["persona"]
        if persona["kind"] != "traits":
            return None
        traits.append((persona["vengefulness"], persona["boldness"]))
    return traits


def _epoch_round_stats(
    events: Sequence[LogEvent], first_round: int, last_round: int
) -> tuple[int, int, int, int]:
    """(cheaters, agent-rounds, punish events, discussion turns) recounted
    from the raw round events of one epoch."""
    cheaters = agent_rounds = punishes = turns = 0
    for event in events:
        if event.round < first_round or event.round > last_round:
            continue
        if event.type == "announcement":
            scores = event.payload["scores"]
            cheaters += sum(1 for s in scores if s["cheated"])
            agent_rounds += len(scores)
        elif event.type == "discussion_event":
            turns += 1
            if event.payload.get("punish"):
                punishes += 1
    return cheaters, agent_rounds, punishes, turns


def epoch_metrics(events: Sequence[LogEvent]) -> list[EpochMetrics]:
    """Per-epoch metric rows recomputed from the log (counts are recounted
    from round events rather than trusted from the epoch records)."""
    metrics: list[EpochMetrics] = []
    for payload in epoch_payloads(events):
        traits = _population_traits(payload)
        mean_v = var_v = mean_b = var_b = None
        cells: dict[tuple[int, int], int] = {}
        if traits is not None:
            vs = np.array([t[0] for t in traits], dtype=float)
            bs = np.array([t[1] for t in traits], dtype=float)
            mean_v, var_v = float(vs.mean()), float(vs.var())
            mean_b, var_b = float(bs.mean()), float(bs.var())
            for cell in traits:
                cells[cell] = cells.get(cell, 0) + 1
        payoffs = [float(x) for x in payload["payoffs"].values()]
        cheaters, agent_rounds, punishes, turns = _epoch_round_stats(
            events, payload["first_round"], payload["last_round"]
        )
        metrics.append(
            EpochMetrics(
                epoch=payload["epoch"],
                mean_vengefulness=mean_v,
                var_vengefulness=var_v,
                mean_boldness=mean_b,
                var_boldness=var_b,
                cheat_count=cheaters,
                punish_count=punishes,
                mean_payoff=sum(payoffs) / len(payoffs),
                min_payoff=min(payoffs),
                max_payoff=max(payoffs),
                cheat_rate=cheaters / agent_rounds if agent_rounds else 0.0,
                punish_rate=punishes / turns if turns else 0.0,
                embedding_variance=payload.get("embedding_variance"),
                trait_cells=cells,
            )
        )
    return metrics


def trait_trajectory(events: Sequence[LogEvent]) -> list[EpochMetrics]:
    """Trait-regime trajectory; refuses persona-regime logs."""
    rows = epoch_metrics(events)
    if any(row.mean_vengefulness is None for row in rows):
        raise WrongRegimeError("log contains non-trait personas")
    return rows


def behavior_rates(events: Sequence[LogEvent]) -> list[tuple[int, float, float]]:
    """(epoch, cheat rate, punish rate) per epoch, any regime."""
    return [(m.epoch, m.cheat_rate, m.punish_rate) for m in epoch_metrics(events)]


EPOCH_METRICS_HEADER = (
    "epoch,mean_vengefulness,var_vengefulness,mean_boldness,var_boldness,"
    "cheat_count,punish_count,mean_payoff,min_payoff,max_payoff,"
    "cheat_rate,punish_rate,embedding_variance\n"
)


def write_epoch_metrics_csv(metrics: Sequence[EpochMetrics], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(EPOCH_METRICS_HEADER)
        for m in metrics:
            handle.write(
                f"{m.epoch},{_fmt(m.mean_vengefulness)},{_fmt(m.var_vengefulness)},"
                f"{_fmt(m.mean_boldness)},{_fmt(m.var_boldness)},{m.cheat_count},"
                f"{m.punish_count},{_fmt(m.mean_payoff)},{_fmt(m.min_payoff)},"
                f"{_fmt(m.max_payoff)},{_fmt(m.cheat_rate)},{_fmt(m.punish_rate)},"
                f"{_fmt(m.embedding_variance)}\n"
            )


def write_trait_cells_csv(metrics: Sequence[EpochMetrics], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("epoch,vengefulness,boldness,count\n")
        for m in metrics:
            for (v, b), count in sorted(m.trait_cells.items()):
                handle.write(f"{m.epoch},{v},{b},{count}\n")


# -- persona embeddings ----------------------------------------------------------


def write_epoch_embeddings(
    events: Sequence[LogEvent], gateway: Gateway, out_dir: Path
) -> list[Path]:
    """One embeddings_<epoch>.json per epoch of a persona-regime log.

    Uses the gateway (stub or replay for offline determinism) to embed the
    epoch's seven played personas, and stores vectors, centroid, and scalar
    variance.
    """
    written: list[Path] = []
    for payload in epoch_payloads(events):
        personas = []
        for profile in payload["population"]:
            persona = profile["persona"]
            if persona["kind"] != "text":
                raise WrongRegimeError("embedding export needs text personas")
            personas.append({"agent": profile["name"], "text": persona["description"]})
        embedded = [gateway.embed(p["text"]) for p in personas]
        models = {e.model for e in embedded}
        if len(models) != 1:
            raise ConfigurationError(f"mixed embedding models: {sorted(models)}")
        vectors = [list(e.values) for e in embedded]
        centroid, variance = embedding_centroid_variance(vectors)
        path = out_dir / f"embeddings_{payload['epoch']}.json"
        body = {
            "epoch": payload["epoch"],
            "model": models.pop(),
            "dim": len(vectors[0]),
            "personas": personas,
            "vectors": vectors,
            "centroid": centroid,
            "variance": variance,
        }
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(canonical_json(body) + "\n")
        written.append(path)
    return written

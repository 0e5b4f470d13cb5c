"""Generational loop over the seven-agent population.

Each epoch plays a batch of rounds, sums payoffs per agent, and then:

    rank descending by payoff (ties broken by stable agent id) ->
    top 2 doubled, middle 3 inherited, bottom 2 eliminated ->
    2*2 + 3 = 7 offspring.

Two variation regimes:

* traits  : exactly one offspring gets exactly one trait reassigned to a
             uniform value in 1..7 (which may equal the old value).
* personas: both copies of each doubled free-text persona are rephrased
             by the language gateway; the middle three are inherited
             verbatim.  Rephrasing both copies keeps the persona pool from
             collapsing into identical clones.

The trial driver checkpoints after every epoch (population, rng state,
and output byte offsets), so an interrupted run resumes to a byte-identical
log without re-spending any model calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .agents import (
    DEFAULT_NAMES,
    AgentProfile,
    BackendFactory,
    BackendKind,
    TextPersona,
    TraitPersona,
    builtin_persona_pool,
    sample_trait,
)
from .analysis import embedding_centroid_variance
from .engine import GameConfig, run_round
from .errors import ConfigurationError, GatewayError, WrongRegimeError
from .gateway import Gateway, ModelRequest
from .rng import GameRng
from .runlog import PHASE_META, RunLogWriter

POPULATION_SIZE = 7
DOUBLED_COUNT = 2
KEPT_COUNT = 3

REGIME_TRAITS = "traits"
REGIME_PERSONAS = "personas"

REPHRASE_MIN_WORDS = 5
REPHRASE_MAX_WORDS = 20

METRICS_HEADER = (
    "epoch,mean_vengefulness,mean_boldness,cheat_count,punish_count,"
    "mean_payoff,embedding_variance\n"
)


@dataclass(frozen=True)
class SelectionPartition:
    ranking: tuple[str, ...]
    doubled: tuple[str, ...]
    kept: tuple[str, ...]
    eliminated: tuple[str, ...]

    def to_payload(self) -> dict:
        return {
            "doubled": list(self.doubled),
            "kept": list(self.kept),
            "eliminated": list(self.eliminated),
        }


@dataclass(frozen=True)
class MutationRecord:
    agent_id: str
    field: str  # "vengefulness" | "boldness"
    old: int
    new: int

    def to_payload(self) -> dict:
        return {"agent_id": self.agent_id, "field": self.field, "old": self.old, "new": self.new}


@dataclass(frozen=True)
class RephraseRecord:
    agent_id: str
    parent_id: str
    old: str
    new: str
    fallback: bool

    def to_payload(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "parent_id": self.parent_id,
            "old": self.old,
            "new": self.new,
            "fallback": self.fallback,
        }


@dataclass(frozen=True)
class PersonaPool:
    """Candidate free-text personas the initial population is drawn from."""

    personas: tuple[str, ...]
    provenance: str  # "generated" | "builtin"

    def __post_init__(self):
        if not self.personas or any(not p.strip() for p in self.personas):
            raise ConfigurationError("persona pool must be non-empty, with non-empty entries")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    population: tuple[AgentProfile, ...]
    payoffs: dict[str, float]  # agent id -> summed round scores
    ranking: tuple[str, ...]
    selection: SelectionPartition
    mutation: Optional[MutationRecord]
    rephrases: tuple[RephraseRecord, ...]
    offspring: tuple[AgentProfile, ...]
    lineage: dict[str, str]  # offspring id -> parent id
    first_round: int
    last_round: int
    cheat_count: int
    punish_count: int
    embedding_variance: Optional[float]

    def to_payload(self) -> dict:
        return {
            "epoch": self.epoch,
            "population": [p.to_payload() for p in self.population],
            "payoffs": self.payoffs,
            "ranking": list(self.ranking),
            "selection": self.selection.to_payload(),
            "mutation": self.mutation.to_payload() if self.mutation else None,
            "rephrases": [r.to_payload() for r in self.rephrases],
            "offspring": [p.to_payload() for p in self.offspring],
            "lineage": self.lineage,
            "first_round": self.first_round,
            "last_round": self.last_round,
            "cheat_count": self.cheat_count,
            "punish_count": self.punish_count,
            "embedding_variance": self.embedding_variance,
        }


def rank_and_select(payoffs: Mapping[str, float]) -> SelectionPartition:
    """Deterministic selection partition over exactly seven payoffs.

    Descending payoff order, ties broken by ascending agent id; positions
    1-2 are doubled, 3-5 kept, 6-7 eliminated.
    """
    if len(payoffs) != POPULATION_SIZE:
        raise ConfigurationError(
            f"selection needs exactly {POPULATION_SIZE} payoffs, got {len(payoffs)}"
        )
    ranking = tuple(sorted(payoffs, key=lambda agent_id: (-payoffs[agent_id], agent_id)))
    return SelectionPartition(
        ranking=ranking,
        doubled=ranking[:DOUBLED_COUNT],
        kept=ranking[DOUBLED_COUNT : DOUBLED_COUNT + KEPT_COUNT],
        eliminated=ranking[DOUBLED_COUNT + KEPT_COUNT :],
    )


def mutate_trait(
    population: Sequence[AgentProfile], rng: GameRng
) -> tuple[list[AgentProfile], MutationRecord]:
    """Reassign one uniformly chosen trait of one uniformly chosen agent to
    a uniform value in 1..7 (possibly unchanged); everything else untouched."""
    for profile in population:
        if not isinstance(profile.persona, TraitPersona):
            raise WrongRegimeError("trait mutation requires trait personas")
    index = rng.index(len(population))
    field_name = "vengefulness" if rng.index(2) == 0 else "boldness"
    new_value = rng.int_between(1, 7)
    target = population[index]
    old_value = getattr(target.persona, field_name)
    persona = TraitPersona(
        vengefulness=new_value if field_name == "vengefulness" else target.persona.vengefulness,
        boldness=new_value if field_name == "boldness" else target.persona.boldness,
    )
    mutated = list(population)
    mutated[index] = AgentProfile(
        id=target.id, name=target.name, persona=persona, backend=target.backend
    )
    return mutated, MutationRecord(target.id, field_name, old_value, new_value)


def _rephrase_request(gateway: Gateway, persona_text: str, extra: Sequence[tuple[str, str]] = ()) -> ModelRequest:
    from .agents import _load_template  # local import keeps module load light

    prompt = _load_template("rephrase.txt").format(persona=persona_text)
    messages = [("system", "You rewrite short personality descriptions."), ("user", prompt)]
    messages.extend(extra)
    return ModelRequest(model=gateway.chat_model, messages=tuple(messages), temperature=gateway.temperature)


def rephrase_persona(persona: TextPersona, gateway: Gateway) -> tuple[TextPersona, bool]:
    """LLM rephrasing with a word-count guard.

    Returns (new persona, fallback flag). One re-prompt is allowed when the
    reply falls outside 5..20 words; after that the persona is inherited
    verbatim and flagged as a fallback.
    """
    try:
        text = gateway.complete(_rephrase_request(gateway, persona.description)).strip()
        if not _rephrase_ok(text):
            retry = _rephrase_request(
                gateway,
                persona.description,
                extra=(
                    (
                        "user",
                        f"Your rephrasing must be between {REPHRASE_MIN_WORDS} and "
                        f"{REPHRASE_MAX_WORDS} words. Reply with only the rephrased "
                        "description.",
                    ),
                ),
            )
            text = gateway.complete(retry).strip()
    except GatewayError:
        return persona, True
    if not _rephrase_ok(text):
        return persona, True
    return TextPersona(text), False


def _rephrase_ok(text: str) -> bool:
    words = len(text.split())
    return REPHRASE_MIN_WORDS <= words <= REPHRASE_MAX_WORDS


def build_persona_pool(gateway: Optional[Gateway], size: int = 16) -> PersonaPool:
    """Ask the gateway to invent a persona pool; fall back to the shipped one.

    The fallback (no gateway, gateway failure, or unusable reply) keeps the
    persona regime fully runnable offline.
    """
    if gateway is not None:
        from .agents import _load_template

        prompt = _load_template("persona_seed.txt").format(count=size)
        request = ModelRequest(
            model=gateway.chat_model,
            messages=(
                ("system", "You invent short personality descriptions."),
                ("user", prompt),
            ),
            temperature=gateway.temperature,
        )
        try:
            reply = gateway.complete(request)
        except GatewayError:
            reply = ""
        lines = [line.strip().strip("-• \t") for line in reply.splitlines()]
        personas: list[str] = []
        for line in lines:
            if line and 3 <= len(line.split()) <= 40 and line not in personas:
                personas.append(line)
        if len(personas) >= POPULATION_SIZE:
            return PersonaPool(tuple(personas[:size]), provenance="generated")
    return PersonaPool(tuple(builtin_persona_pool()), provenance="builtin")


def select_initial_personas(pool: PersonaPool, rng: GameRng) -> list[TextPersona]:
    """Draw seven personas from the pool, without replacement when possible."""
    remaining = list(pool.personas)
    chosen: list[TextPersona] = []
    for _ in range(POPULATION_SIZE):
        if remaining:
            pick = remaining.pop(rng.index(len(remaining)))
        else:
            pick = pool.personas[rng.index(len(pool.personas))]
        chosen.append(TextPersona(pick))
    return chosen


def _offspring_profiles(
    population: Sequence[AgentProfile],
    selection: SelectionPartition,
    allocate_id: Callable[[], str],
    names: Sequence[str],
) -> tuple[list[AgentProfile], dict[str, str], list[int]]:
    """Build the next population: doubled parents twice, kept parents once.

    Returns (offspring, lineage, doubled_copy_indexes); names are reassigned
    positionally so roster slots stay stable across epochs.
    """
    by_id = {profile.id: profile for profile in population}
    plan: list[tuple[str, bool]] = []  # (parent id, is doubled copy)
    for parent_id in selection.doubled:
        plan.append((parent_id, True))
        plan.append((parent_id, True))
    for parent_id in selection.kept:
        plan.append((parent_id, False))
    offspring: list[AgentProfile] = []
    lineage: dict[str, str] = {}
    doubled_indexes: list[int] = []
    for position, (parent_id, is_doubled) in enumerate(plan):
        parent = by_id[parent_id]
        child_id = allocate_id()
        offspring.append(
            AgentProfile(
                id=child_id,
                name=names[position],
                persona=parent.persona,
                backend=parent.backend,
            )
        )
        lineage[child_id] = parent_id
        if is_doubled:
            doubled_indexes.append(position)
    return offspring, lineage, doubled_indexes


def run_epoch(
    population: Sequence[AgentProfile],
    config: GameConfig,
    rounds_per_epoch: int,
    rng: GameRng,
    *,
    epoch_index: int,
    regime: str,
    backend_factory: BackendFactory,
    allocate_id: Callable[[], str],
    log: Optional[RunLogWriter] = None,
    gateway: Optional[Gateway] = None,
    round_offset: int = 0,
    names: Sequence[str] = DEFAULT_NAMES,
) -> tuple[EpochRecord, list[AgentProfile]]:
    """Play one generation and produce the next population."""
    if len(population) != POPULATION_SIZE:
        raise ConfigurationError(
            f"population must hold {POPULATION_SIZE} agents, got {len(population)}"
        )
    if rounds_per_epoch < 1:
        raise ConfigurationError("rounds_per_epoch must be >= 1")
    if regime not in (REGIME_TRAITS, REGIME_PERSONAS):
        raise ConfigurationError(f"unknown regime {regime!r}")

    backends = {profile.name: backend_factory(profile) for profile in population}
    id_by_name = {profile.name: profile.id for profile in population}
    payoffs = {profile.id: 0.0 for profile in population}
    cheat_count = 0
    punish_count = 0
    for r in range(rounds_per_epoch):
        result = run_round(
            population, backends, config, rng, log, round_index=round_offset + r
        )
        for agent_name, entry in result.ledger.entries.items():
            payoffs[id_by_name[agent_name]] += entry.score
        cheat_count += sum(1 for e in result.test_record.entries if e.cheated)
        punish_count += sum(1 for e in result.events if e.punish_applied is not None)

    selection = rank_and_select(payoffs)
    offspring, lineage, doubled_indexes = _offspring_profiles(
        population, selection, allocate_id, names
    )

    mutation: Optional[MutationRecord] = None
    rephrases: list[RephraseRecord] = []
    if regime == REGIME_TRAITS:
        offspring, mutation = mutate_trait(offspring, rng)
    else:
        if gateway is None:
            raise ConfigurationError("persona regime requires a gateway for rephrasing")
        for position in doubled_indexes:
            child = offspring[position]
            new_persona, fallback = rephrase_persona(child.persona, gateway)
            offspring[position] = AgentProfile(
                id=child.id, name=child.name, persona=new_persona, backend=child.backend
            )
            rephrases.append(
                RephraseRecord(
                    agent_id=child.id,
                    parent_id=lineage[child.id],
                    old=child.persona.description,
                    new=new_persona.description,
                    fallback=fallback,
                )
            )

    embedding_variance: Optional[float] = None
    if regime == REGIME_PERSONAS and gateway is not None:
        vectors = [gateway.embed(p.persona.description).values for p in population]
        _, embedding_variance = embedding_centroid_variance(vectors)

    record = EpochRecord(
        epoch=epoch_index,
        population=tuple(population),
        payoffs=payoffs,
        ranking=selection.ranking,
        selection=selection,
        mutation=mutation,
        rephrases=tuple(rephrases),
        offspring=tuple(offspring),
        lineage=lineage,
        first_round=round_offset,
        last_round=round_offset + rounds_per_epoch - 1,
        cheat_count=cheat_count,
        punish_count=punish_count,
        embedding_variance=embedding_variance,
    )
    if log is not None:
        log.append(
            round_index=-1,
            phase=PHASE_META,
            type="epoch_record",
            payload=record.to_payload(),
            rng_cursor=rng.cursor,
        )
    return record, offspring


def _metrics_row(record: EpochRecord, regime: str) -> str:
    def fmt(value: Optional[float]) -> str:
        return "" if value is None else format(value, ".9g")

    mean_v = mean_b = None
    if regime == REGIME_TRAITS:
        mean_v = sum(p.persona.vengefulness for p in record.population) / len(record.population)
        mean_b = sum(p.persona.boldness for p in record.population) / len(record.population)
    mean_payoff = sum(record.payoffs.values()) / len(record.payoffs)
    return (
        f"{record.epoch},{fmt(mean_v)},{fmt(mean_b)},{record.cheat_count},"
        f"{record.punish_count},{fmt(mean_payoff)},{fmt(record.embedding_variance)}\n"
    )


def initial_trait_population(
    rng: GameRng,
    *,
    v_group: str = "full",
    b_group: str = "full",
    names: Sequence[str] = DEFAULT_NAMES,
    allocate_id: Callable[[], str],
) -> list[AgentProfile]:
    """Seven parametric agents with traits drawn per group (V first, then B,
    per agent in name order)."""
    population = []
    for name in names[:POPULATION_SIZE]:
        vengefulness = sample_trait(v_group, rng)
        boldness = sample_trait(b_group, rng)
        population.append(
            AgentProfile(
                id=allocate_id(),
                name=name,
                persona=TraitPersona(vengefulness, boldness),
                backend=BackendKind.PARAMETRIC,
            )
        )
    return population


def initial_persona_population(
    pool: PersonaPool,
    rng: GameRng,
    *,
    names: Sequence[str] = DEFAULT_NAMES,
    allocate_id: Callable[[], str],
    backend: BackendKind = BackendKind.MODEL,
) -> list[AgentProfile]:
    personas = select_initial_personas(pool, rng)
    return [
        AgentProfile(id=allocate_id(), name=name, persona=persona, backend=backend)
        for name, persona in zip(names[:POPULATION_SIZE], personas)
    ]

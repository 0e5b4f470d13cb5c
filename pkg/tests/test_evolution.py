"""Selection, mutation, rephrasing, and the epoch loop."""

from __future__ import annotations

import itertools
import random

import pytest

from normsgame.agents import (
    AgentProfile,
    BackendKind,
    ScriptedBackend,
    TextPersona,
    TraitPersona,
)
from normsgame.engine import GameConfig, draw_test_score
from normsgame.errors import ConfigurationError, WrongRegimeError
from normsgame.evolution import (
    POPULATION_SIZE,
    REGIME_PERSONAS,
    REGIME_TRAITS,
    build_persona_pool,
    mutate_trait,
    rank_and_select,
    rephrase_persona,
    run_epoch,
    select_initial_personas,
)
from normsgame.gateway import Gateway, GatewayMode
from normsgame.rng import GameRng

NAMES = ("Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace")


def trait_population(traits=None):
    traits = traits or [(4, 4)] * 7
    return [
        AgentProfile(
            id=f"a{i:04d}",
            name=NAMES[i],
            persona=TraitPersona(*traits[i]),
            backend=BackendKind.PARAMETRIC,
        )
        for i in range(7)
    ]


def selection_oracle(payoffs: dict[str, float]):
    """Independent sorter: repeated argmax extraction with id tie-break."""
    remaining = dict(payoffs)
    ranking = []
    while remaining:
        best = None
        for agent_id, value in remaining.items():
            if best is None:
                best = agent_id
            elif value > remaining[best] or (value == remaining[best] and agent_id < best):
                best = agent_id
        ranking.append(best)
        del remaining[best]
    return ranking[:2], ranking[2:5], ranking[5:]


# -- rank_and_select ------------------------------------------------------------


def test_selection_example():
    payoffs = dict(zip("abcdefg", [70, 60, 50, 40, 30, 20, 10]))
    part = rank_and_select(payoffs)
    assert part.doubled == ("a", "b")
    assert part.kept == ("c", "d", "e")
    assert part.eliminated == ("f", "g")


def test_selection_all_ties_uses_id_order():
    payoffs = {agent_id: 5.0 for agent_id in "gfedcba"}
    part = rank_and_select(payoffs)
    assert part.doubled == ("a", "b")
    assert part.eliminated == ("f", "g")
    combined = set(part.doubled) | set(part.kept) | set(part.eliminated)
    assert combined == set("abcdefg")


def test_selection_random_sample_matches_oracle():
    rng = random.Random(7)
    ids = [f"a{i}" for i in range(7)]
    for _ in range(300):
        payoffs = {agent_id: rng.choice([0, 10, 20, 30]) * 1.0 for agent_id in ids}
        part = rank_and_select(payoffs)
        doubled, kept, eliminated = selection_oracle(payoffs)
        assert list(part.doubled) == doubled
        assert list(part.kept) == kept
        assert list(part.eliminated) == eliminated


def test_selection_requires_seven():
    with pytest.raises(ConfigurationError):
        rank_and_select({"a": 1.0})


def test_selection_payoff_monotone():
    rng = random.Random(3)
    ids = [f"a{i}" for i in range(7)]
    for _ in range(200):
        payoffs = {agent_id: rng.uniform(-100, 100) for agent_id in ids}
        part = rank_and_select(payoffs)
        top = min(payoffs[a] for a in part.doubled)
        mid_low = min(payoffs[a] for a in part.kept)
        assert all(payoffs[a] <= mid_low for a in part.eliminated)
        assert all(payoffs[a] <= top for a in part.kept)


# -- mutate_trait ---------------------------------------------------------------


def test_mutation_changes_exactly_one_scalar():
    rng = GameRng(12)
    population = trait_population([(i % 7 + 1, (i * 2) % 7 + 1) for i in range(7)])
    mutated, record = mutate_trait(population, rng)
    diffs = []
    for before, after in zip(population, mutated):
        assert before.id == after.id and before.name == after.name
        if before.persona.vengefulness != after.persona.vengefulness:
            diffs.append((before.id, "vengefulness"))
        if before.persona.boldness != after.persona.boldness:
            diffs.append((before.id, "boldness"))
    if record.old == record.new:
        assert diffs == []
    else:
        assert diffs == [(record.agent_id, record.field)]


def test_mutation_uniformity():
    rng = GameRng(2)
    population = trait_population()
    n = 10000
    index_counts = [0] * 7
    field_counts = {"vengefulness": 0, "boldness": 0}
    value_counts = [0] * 7
    for _ in range(n):
        _, record = mutate_trait(population, rng)
        index_counts[int(record.agent_id[1:])] += 1
        field_counts[record.field] += 1
        value_counts[record.new - 1] += 1
    # precomputed 3-sigma bands: index sd=0.00350, field sd=0.00500
    for count in index_counts:
        assert abs(count / n - 1 / 7) < 3 * 0.00350
    assert abs(field_counts["vengefulness"] / n - 0.5) < 3 * 0.00500
    # chi-square, 6 df, 0.999 quantile = 22.46 (precomputed)
    expected = n / 7
    chi2 = sum((count - expected) ** 2 / expected for count in value_counts)
    assert chi2 < 22.46


def test_mutation_rejects_text_personas():
    population = trait_population()
    population[3] = AgentProfile(
        id="a0003", name="Dave", persona=TextPersona("quiet schemer of few words"),
        backend=BackendKind.MODEL,
    )
    with pytest.raises(WrongRegimeError):
        mutate_trait(population, GameRng(1))


# -- rephrase_persona -----------------------------------------------------------


def test_rephrase_echo_stub_inherits_verbatim():
    persona = TextPersona("Calm rule-follower who quietly expects everyone else to behave too.")
    gateway = Gateway(mode=GatewayMode.STUB, stub_completion=persona.description)
    rephrased, fallback = rephrase_persona(persona, gateway)
    assert rephrased.description == persona.description
    assert fallback is False


def test_rephrase_word_count_fallback():
    persona = TextPersona("Blunt moralist loudly condemning cheaters at every single turn.")
    gateway = Gateway(mode=GatewayMode.STUB, stub_completion="too short")
    rephrased, fallback = rephrase_persona(persona, gateway)
    assert rephrased == persona
    assert fallback is True


def test_rephrase_retry_once_then_accept():
    persona = TextPersona("Sly minimalist who does the least possible and never volunteers.")
    replies = iter(["nah", "A careful idler who avoids work and every obligation."])
    gateway = Gateway(mode=GatewayMode.STUB, stub_completion=lambda req: next(replies))
    rephrased, fallback = rephrase_persona(persona, gateway)
    assert fallback is False
    assert rephrased.description.startswith("A careful idler")


def test_rephrase_gateway_failure_inherits(tmp_path):
    persona = TextPersona("Loyal teammate who protects allies and punishes outsiders for them.")
    gateway = Gateway(mode=GatewayMode.REPLAY, fixture_dir=str(tmp_path))  # empty store
    rephrased, fallback = rephrase_persona(persona, gateway)
    assert rephrased == persona
    assert fallback is True


# -- persona pool -----------------------------------------------------------------


def test_pool_falls_back_to_builtin_offline():
    pool = build_persona_pool(Gateway(mode=GatewayMode.STUB, stub_completion=""), size=16)
    assert pool.provenance == "builtin"
    assert len(pool.personas) >= POPULATION_SIZE


def test_pool_uses_generated_lines_when_plausible():
    reply = "\n".join(f"Persona number {i} with roughly ten words in it." for i in range(12))
    pool = build_persona_pool(Gateway(mode=GatewayMode.STUB, stub_completion=reply), size=12)
    assert pool.provenance == "generated"
    assert len(pool.personas) == 12


def test_initial_personas_unique_when_pool_large():
    pool = build_persona_pool(None)
    chosen = select_initial_personas(pool, GameRng(5))
    assert len(chosen) == 7
    assert len({p.description for p in chosen}) == 7


# -- run_epoch -------------------------------------------------------------------


def serial_allocator(start=100):
    state = {"next": start}

    def allocate():
        value = state["next"]
        state["next"] += 1
        return f"a{value:04d}"

    return allocate


def test_epoch_with_scripted_agents_matches_hand_selection():
    """One epoch, zero discussion turns: payoffs are exactly the base draws,
    which a twin generator predicts, so the selection is hand-computable."""
    config = GameConfig(max_discussion_turns=0)
    population = trait_population()
    rng = GameRng(31)

    twin = GameRng(31)
    expected_bases = {name: draw_test_score(twin, config) for name in NAMES}
    expected_rank = sorted(
        (f"a{i:04d}" for i in range(7)),
        key=lambda agent_id: (-expected_bases[NAMES[int(agent_id[1:])]], agent_id),
    )

    record, offspring = run_epoch(
        population,
        config,
        rounds_per_epoch=1,
        rng=rng,
        epoch_index=0,
        regime=REGIME_TRAITS,
        backend_factory=lambda profile: ScriptedBackend(["<test/>"]),
        allocate_id=serial_allocator(),
    )
    assert list(record.ranking) == expected_rank
    assert set(record.selection.doubled) == set(expected_rank[:2])
    assert len(offspring) == 7
    assert record.payoffs[expected_rank[0]] == max(expected_bases.values())


def test_epoch_population_structure_and_lineage():
    config = GameConfig(max_discussion_turns=0)
    population = trait_population([(i + 1, 7 - i) for i in range(7)])
    record, offspring = run_epoch(
        population,
        config,
        rounds_per_epoch=2,
        rng=GameRng(9),
        epoch_index=0,
        regime=REGIME_TRAITS,
        backend_factory=lambda profile: ScriptedBackend(["<test/>", "<test/>"]),
        allocate_id=serial_allocator(),
    )
    assert len(offspring) == 7
    assert len({p.id for p in offspring}) == 7
    assert set(record.lineage.values()) <= {p.id for p in population}
    parents = list(record.lineage.values())
    for doubled_id in record.selection.doubled:
        assert parents.count(doubled_id) == 2
    for kept_id in record.selection.kept:
        assert parents.count(kept_id) == 1
    for gone_id in record.selection.eliminated:
        assert gone_id not in parents
    assert record.mutation is not None


def test_persona_epoch_rephrases_doubled_only():
    config = GameConfig(max_discussion_turns=0)
    population = [
        AgentProfile(
            id=f"a{i:04d}",
            name=NAMES[i],
            persona=TextPersona(f"Original persona text number {i} spanning about ten words."),
            backend=BackendKind.MODEL,
        )
        for i in range(7)
    ]
    gateway = Gateway(
        mode=GatewayMode.STUB,
        stub_completion="A freshly reworded personality of satisfying length here.",
    )
    record, offspring = run_epoch(
        population,
        config,
        rounds_per_epoch=1,
        rng=GameRng(41),
        epoch_index=0,
        regime=REGIME_PERSONAS,
        backend_factory=lambda profile: ScriptedBackend(["<test/>"]),
        allocate_id=serial_allocator(),
        gateway=gateway,
    )
    assert len(record.rephrases) == 4  # two copies of each doubled parent
    rephrased_ids = {r.agent_id for r in record.rephrases}
    for child in offspring:
        if child.id in rephrased_ids:
            assert child.persona.description.startswith("A freshly reworded")
        else:
            assert child.persona.description.startswith("Original persona")
    assert record.embedding_variance is not None and record.embedding_variance >= 0.0


def test_population_invariant_across_epochs():
    config = GameConfig(max_discussion_turns=7)
    rng = GameRng(77)
    population = trait_population([(4, 4)] * 7)
    allocate = serial_allocator()
    from normsgame.agents import ParametricBackend

    factory = lambda profile: ParametricBackend(profile, rng, metanorm_enabled=True)  # noqa: E731
    for epoch in range(10):
        record, population = run_epoch(
            population,
            config,
            rounds_per_epoch=1,
            rng=rng,
            epoch_index=epoch,
            regime=REGIME_TRAITS,
            backend_factory=factory,
            allocate_id=allocate,
        )
        assert len(record.population) == 7
        assert len(population) == 7
        assert (
            set(record.selection.doubled)
            | set(record.selection.kept)
            | set(record.selection.eliminated)
        ) == {p.id for p in record.population}

"""Backend behavior: parametric rules, sampling, contexts, prompts, replay."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from normsgame.agents import (
    AgentContext,
    AgentProfile,
    AnnouncedScore,
    BackendKind,
    ModelBackend,
    ParametricBackend,
    ReplayAgentBackend,
    TextPersona,
    TraitPersona,
    build_roster,
    build_system_prompt,
    context_hash,
    context_payload,
    metanorm_candidates,
    parametric_discussion_decision,
    parametric_test_decision,
    sample_trait,
)
from normsgame.engine import GameConfig, run_round
from normsgame.errors import ConfigurationError
from normsgame.gateway import FixtureStore, Gateway, GatewayMode
from normsgame.protocol import Command, CommandKind, Phase, parse_utterance
from normsgame.rng import GameRng
from normsgame.runlog import canonical_json

NAMES = ("Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace")


def profile(name="Alice", v=4, b=4, backend=BackendKind.PARAMETRIC):
    return AgentProfile(id=f"id-{name}", name=name, persona=TraitPersona(v, b), backend=backend)


def make_context(
    me="Alice",
    roster=NAMES[:4],
    cheaters=(),
    transcript=(),
    punishments=(),
    phase=Phase.DISCUSSION,
):
    announcement = tuple(
        AnnouncedScore(name, 50.0 + i, name in cheaters) for i, name in enumerate(roster)
    )
    return AgentContext(
        phase=phase,
        profile=profile(me),
        roster=tuple(roster),
        announcement=announcement if phase is Phase.DISCUSSION else None,
        transcript=tuple(transcript),
        punishments=tuple(punishments),
        instructions="",
    )


# -- trait validation and sampling --------------------------------------------------


def test_trait_bounds_enforced():
    with pytest.raises(ConfigurationError):
        TraitPersona(0, 4)
    with pytest.raises(ConfigurationError):
        TraitPersona(4, 8)


def test_text_persona_soft_cap_logged_not_raised(caplog):
    import logging

    with caplog.at_level(logging.WARNING, logger="normsgame.agents"):
        TextPersona("word " * 45)
    assert any("soft cap" in message for message in caplog.messages)


def test_trait_group_sampling_frequencies():
    rng = GameRng(17)
    n = 10000
    low = [sample_trait("low", rng) for _ in range(n)]
    high = [sample_trait("high", rng) for _ in range(n)]
    assert set(low) == {1, 2, 3}
    assert set(high) == {5, 6, 7}
    # binomial 3-sigma band around 1/3: sd = sqrt(p(1-p)/n) ~ 0.00471
    for value in (1, 2, 3):
        assert abs(low.count(value) / n - 1 / 3) < 3 * 0.00472
    for value in (5, 6, 7):
        assert abs(high.count(value) / n - 1 / 3) < 3 * 0.00472


def test_roster_rejects_case_insensitive_duplicates():
    with pytest.raises(ConfigurationError):
        build_roster(
            [
                profile("Bob"),
                AgentProfile(id="x", name="bob", persona=TraitPersona(1, 1), backend=BackendKind.PARAMETRIC),
            ]
        )


# -- parametric test decision ---------------------------------------------------------


def test_boldness_seven_always_cheats():
    rng = GameRng(4)
    assert all(
        parametric_test_decision(7, rng).kind is CommandKind.CHEAT for _ in range(10000)
    )


def test_boldness_one_cheat_frequency():
    rng = GameRng(4)
    cheats = sum(
        parametric_test_decision(1, rng).kind is CommandKind.CHEAT for _ in range(10000)
    )
    # p = 1/7 ~ 0.1429; precomputed acceptance band
    assert 0.11 <= cheats / 10000 <= 0.17


def test_equal_seeds_equal_decisions():
    a, b = GameRng(123), GameRng(123)
    seq_a = [parametric_test_decision(3, a).kind for _ in range(500)]
    seq_b = [parametric_test_decision(3, b).kind for _ in range(500)]
    assert seq_a == seq_b


# -- parametric discussion decision ------------------------------------------------------


def test_vengefulness_seven_punishes_unpunished_cheater():
    context = make_context(me="Alice", cheaters=("Bob",))
    for seed in range(50):
        command = parametric_discussion_decision(7, context, False, GameRng(seed))
        assert command == Command(CommandKind.PUNISH, "Bob")


def test_no_cheaters_metanorm_off_always_next():
    context = make_context(me="Alice", cheaters=())
    for seed in range(50):
        command = parametric_discussion_decision(1, context, False, GameRng(seed))
        assert command.kind is CommandKind.NEXT
        assert command.target != "Alice"


def test_metanorm_single_candidate_hand_enumerated():
    # Roster A,B,C,D. B cheated and A already punished B. C spoke and issued
    # no punish; D has not spoken. Candidate set is exactly {C}.
    context = make_context(
        me="Alice",
        roster=("Alice", "Bob", "Carol", "Dave"),
        cheaters=("Bob",),
        transcript=(("Alice", "<punish>Bob</punish>"), ("Carol", "hi <next>Alice</next>")),
        punishments=(("Alice", "Bob"),),
    )
    assert metanorm_candidates(context) == ["Carol"]
    for seed in range(25):
        command = parametric_discussion_decision(7, context, True, GameRng(seed))
        assert command == Command(CommandKind.PUNISH, "Carol")


def test_metanorm_off_means_no_secondary_punish():
    context = make_context(
        me="Alice",
        roster=("Alice", "Bob", "Carol", "Dave"),
        cheaters=("Bob",),
        transcript=(("Carol", "x"),),
        punishments=(("Alice", "Bob"),),
    )
    for seed in range(25):
        command = parametric_discussion_decision(7, context, False, GameRng(seed))
        assert command.kind is CommandKind.NEXT


def brute_force_non_punishers(context) -> list[str]:
    """Independent recomputation with plain loops over the raw tuples."""
    me = context.profile.name
    out = []
    for name in context.roster:
        if name == me:
            continue
        spoke = False
        for speaker, _ in context.transcript:
            if speaker == name:
                spoke = True
        if not spoke:
            continue
        punished_any = False
        for actor, _ in context.punishments:
            if actor == name:
                punished_any = True
        if punished_any:
            continue
        cheated = False
        for entry in context.announcement or ():
            if entry.agent == name and entry.cheated:
                cheated = True
        mine = False
        for actor, target in context.punishments:
            if actor == me and target == name:
                mine = True
        if cheated and mine:
            continue
        out.append(name)
    return out


@st.composite
def random_discussion_context(draw):
    roster = NAMES
    me = draw(st.sampled_from(roster))
    cheaters = tuple(
        name for name in roster if draw(st.booleans())
    )
    speakers = draw(st.lists(st.sampled_from(roster), max_size=12))
    transcript = tuple((speaker, "...") for speaker in speakers)
    pairs = []
    for speaker in speakers:
        if draw(st.booleans()):
            target = draw(st.sampled_from([n for n in roster if n != speaker]))
            pairs.append((speaker, target))
    return make_context(
        me=me,
        roster=roster,
        cheaters=cheaters,
        transcript=transcript,
        punishments=tuple(pairs),
    )


@given(random_discussion_context())
@settings(max_examples=300, deadline=None)
def test_metanorm_candidates_match_brute_force(context):
    assert metanorm_candidates(context) == brute_force_non_punishers(context)


def test_parametric_agents_never_need_reprompts():
    roster = build_roster(
        AgentProfile(
            id=f"a{i}", name=NAMES[i], persona=TraitPersona(6, 5), backend=BackendKind.PARAMETRIC
        )
        for i in range(7)
    )
    config = GameConfig(max_discussion_turns=21)
    for seed in range(30):
        rng = GameRng(seed)
        backends = {p.name: ParametricBackend(p, rng, metanorm_enabled=True) for p in roster}
        result = run_round(roster, backends, config, rng)
        for event in result.events:
            parsed = parse_utterance(
                event.utterance, NAMES, Phase.DISCUSSION, speaker=event.speaker
            )
            assert isinstance(parsed, Command)


# -- context serialization ---------------------------------------------------------


def test_context_isolation_no_foreign_personas():
    context = make_context(me="Alice", roster=NAMES[:4])
    body = canonical_json(context_payload(context))
    assert "persona" in body  # own persona present
    # Foreign personas are never placed in the payload structure: the only
    # persona key sits under "agent".
    payload = context_payload(context)
    assert set(payload["agent"]) == {"name", "persona"}
    assert all(isinstance(name, str) for name in payload["roster"])


def test_context_scores_rounded_to_one_decimal():
    context = AgentContext(
        phase=Phase.DISCUSSION,
        profile=profile("Alice"),
        roster=("Alice", "Bob"),
        announcement=(AnnouncedScore("Bob", 51.23456, True),),
        transcript=(),
        punishments=(),
        instructions="",
    )
    payload = context_payload(context)
    assert payload["announcement"] == [["Bob", 51.2, True]]


def test_context_hash_stable_and_reprompt_sensitive():
    context = make_context()
    assert context_hash(context) == context_hash(make_context())
    assert context_hash(context) != context_hash(context.with_reprompt("try again"))


# -- prompts and model backend --------------------------------------------------------


def test_trait_prompt_shows_n_out_of_7():
    prof = AgentProfile(
        id="x", name="Hero", persona=TraitPersona(5, 6), backend=BackendKind.MODEL
    )
    prompt = build_system_prompt(prof, n_agents=7, punish_damage=90, punish_cost=20)
    assert "Vengefulness: 5 out of 7" in prompt
    assert "Boldness: 6 out of 7" in prompt
    assert "Hero" in prompt


def test_text_persona_prompt_embeds_description():
    prof = AgentProfile(
        id="x",
        name="Hero",
        persona=TextPersona("Cautious pragmatist who avoids risk and conflict alike."),
        backend=BackendKind.MODEL,
    )
    prompt = build_system_prompt(prof, n_agents=7, punish_damage=90, punish_cost=20)
    assert "Cautious pragmatist" in prompt


def test_model_backend_appends_reprompt_message():
    gateway = Gateway(mode=GatewayMode.STUB, stub_completion="<test/>")
    backend = ModelBackend(profile("Alice", backend=BackendKind.MODEL), gateway, 7, 90, 20)
    context = make_context(me="Alice", phase=Phase.TEST)
    request = backend.build_request(context.with_reprompt("fix it"))
    assert request.messages[0][0] == "system"
    assert request.messages[-1] == ("user", "fix it")
    assert backend.utterance(context) == "<test/>"


# -- replay backend ---------------------------------------------------------------


def test_replay_backend_round_trip(tmp_path):
    store = FixtureStore(tmp_path)
    backend = ReplayAgentBackend(store)
    context = make_context(me="Alice")
    backend.record(context, "<next>Bob</next>")
    assert backend.utterance(context) == "<next>Bob</next>"
    assert backend.utterance(make_context(me="Alice")) == "<next>Bob</next>"

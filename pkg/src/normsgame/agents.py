"""Decision backends: how an agent turns game context into an utterance.

Four kinds of backend sit behind one interface (``utterance(context)``):

* parametric : offline oracle driven by numeric traits; cheats with
  probability boldness/7, punishes with probability vengefulness/7, with
  an optional second-order ("metanorm") mode that punishes non-punishers.
  It exists so game dynamics are testable without any model service; the
  probability rule is a harness device, not an empirical claim.
* scripted   : replays a fixed list of utterances (tests, oracles).
* replay     : returns a recorded utterance for the exact serialized
  context, looked up by content hash.
* model      : renders the persona system prompt and serialized context,
  and asks a chat-completion gateway for the utterance.

Contexts are strictly private: agent X's context never contains another
agent's persona, only public names, announced scores, and transcript.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from typing import Callable, Iterable, Optional, Sequence, Union

from .errors import BackendFailure, ConfigurationError, GatewayError
from .gateway import FixtureStore, Gateway, ModelRequest
from .protocol import Command, CommandKind, Phase, render_command
from .rng import GameRng
from .runlog import canonical_json

logger = logging.getLogger(__name__)

TRAIT_MIN = 1
TRAIT_MAX = 7
TEXT_PERSONA_SOFT_WORD_CAP = 40

DEFAULT_NAMES = ("Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace")


def _check_trait(value: int, label: str) -> None:
    if not isinstance(value, int) or not TRAIT_MIN <= value <= TRAIT_MAX:
        raise ConfigurationError(f"{label} must be an integer in 1..7, got {value!r}")


@dataclass(frozen=True)
class TraitPersona:
    """Numeric persona: integer vengefulness and boldness on a 1..7 scale."""

    vengefulness: int
    boldness: int

    def __post_init__(self):
        _check_trait(self.vengefulness, "vengefulness")
        _check_trait(self.boldness, "boldness")


@dataclass(frozen=True)
class TextPersona:
    """Free-text persona of roughly ten words (soft cap logged, not enforced)."""

    description: str

    def __post_init__(self):
        if not self.description.strip():
            raise ConfigurationError("text persona must be non-empty")
        words = len(self.description.split())
        if words > TEXT_PERSONA_SOFT_WORD_CAP:
            logger.warning(
                "text persona exceeds the %d-word soft cap (%d words): %.60s...",
                TEXT_PERSONA_SOFT_WORD_CAP,
                words,
                self.description,
            )


Persona = Union[TraitPersona, TextPersona]


def persona_to_payload(persona: Persona) -> dict:
    if isinstance(persona, TraitPersona):
        return {
            "kind": "traits",
            "vengefulness": persona.vengefulness,
            "boldness": persona.boldness,
        }
    return {"kind": "text", "description": persona.description}


def persona_from_payload(payload: dict) -> Persona:
    if payload["kind"] == "traits":
        return TraitPersona(payload["vengefulness"], payload["boldness"])
    if payload["kind"] == "text":
        return TextPersona(payload["description"])
    raise ConfigurationError(f"unknown persona kind {payload['kind']!r}")


class BackendKind(Enum):
    PARAMETRIC = "parametric"
    SCRIPTED = "scripted"
    REPLAY = "replay"
    MODEL = "model"


@dataclass(frozen=True)
class AgentProfile:
    """Identity plus persona plus backend binding; names are roster-unique."""

    id: str
    name: str
    persona: Persona
    backend: BackendKind

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "persona": persona_to_payload(self.persona),
            "backend": self.backend.value,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "AgentProfile":
        return cls(
            id=payload["id"],
            name=payload["name"],
            persona=persona_from_payload(payload["persona"]),
            backend=BackendKind(payload["backend"]),
        )


def build_roster(profiles: Iterable[AgentProfile]) -> tuple[AgentProfile, ...]:
    """Validate a roster: unique ids, case-insensitively unique clean names."""
    roster = tuple(profiles)
    seen_names: set[str] = set()
    seen_ids: set[str] = set()
    for profile in roster:
        if not profile.name or "<" in profile.name or ">" in profile.name:
            raise ConfigurationError(f"illegal roster name {profile.name!r}")
        folded = profile.name.casefold()
        if folded in seen_names:
            raise ConfigurationError(
                f"roster names must be case-insensitively unique: {profile.name!r}"
            )
        seen_names.add(folded)
        if profile.id in seen_ids:
            raise ConfigurationError(f"duplicate agent id {profile.id!r}")
        seen_ids.add(profile.id)
    return roster


# -- game context ------------------------------------------------------------


@dataclass(frozen=True)
class AnnouncedScore:
    agent: str
    score: float
    cheated: bool


@dataclass(frozen=True)
class AgentContext:
    """Everything one agent may see when asked to speak.

    ``transcript`` is the public (speaker, utterance) prefix of the round
    so far; ``punishments`` the (actor, target) pairs applied so far.
    """

    phase: Phase
    profile: AgentProfile
    roster: tuple[str, ...]
    announcement: Optional[tuple[AnnouncedScore, ...]]
    transcript: tuple[tuple[str, str], ...]
    punishments: tuple[tuple[str, str], ...]
    instructions: str
    reprompt: Optional[str] = None

    def with_reprompt(self, message: str) -> "AgentContext":
        return replace(self, reprompt=message)


def context_payload(context: AgentContext) -> dict:
    """Canonical structure hashed for replay fixtures.

    Scores are rounded to one decimal here and in the prompt text, so the
    hash is immune to float formatting drift.
    """
    announcement = None
    if context.announcement is not None:
        announcement = [
            [a.agent, round(a.score, 1), a.cheated] for a in context.announcement
        ]
    return {
        "phase": context.phase.value,
        "agent": {
            "name": context.profile.name,
            "persona": persona_to_payload(context.profile.persona),
        },
        "roster": list(context.roster),
        "announcement": announcement,
        "transcript": [list(entry) for entry in context.transcript],
        "punishments": [list(entry) for entry in context.punishments],
        "instructions": context.instructions,
        "reprompt": context.reprompt,
    }


def context_hash(context: AgentContext) -> str:
    body = canonical_json(context_payload(context))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def context_text(context: AgentContext) -> str:
    """Human-readable context block used as the model's user message."""
    lines = [
        f"Phase: {context.phase.value}",
        f"Players: {', '.join(context.roster)}",
    ]
    if context.announcement is not None:
        lines.append("Announced scores:")
        for entry in context.announcement:
            status = "cheated" if entry.cheated else "took the test"
            lines.append(f"- {entry.agent}: {entry.score:.1f} ({status})")
    if context.transcript:
        lines.append("Discussion so far:")
        for speaker, utterance in context.transcript:
            lines.append(f"- {speaker}: {utterance}")
    if context.punishments:
        lines.append("Punishments so far:")
        for actor, target in context.punishments:
            lines.append(f"- {actor} punished {target}")
    if context.phase is Phase.DISCUSSION:
        lines.append("It is your turn to speak.")
    else:
        lines.append("Choose your action for this phase.")
    lines.append(context.instructions)
    return "\n".join(lines)


# -- parametric decision rules -------------------------------------------------


def parametric_test_decision(boldness: int, rng: GameRng) -> Command:
    """Cheat with probability boldness/7, else take the test. One draw."""
    _check_trait(boldness, "boldness")
    if rng.random() < boldness / 7.0:
        return Command(CommandKind.CHEAT)
    return Command(CommandKind.TEST)


def known_cheaters(context: AgentContext) -> list[str]:
    if context.announcement is None:
        return []
    return [entry.agent for entry in context.announcement if entry.cheated]


def unpunished_cheaters(context: AgentContext) -> list[str]:
    """Cheaters this agent could still punish, in roster order."""
    me = context.profile.name
    mine = {t for actor, t in context.punishments if actor == me}
    return [c for c in known_cheaters(context) if c != me and c not in mine]


def metanorm_candidates(context: AgentContext) -> list[str]:
    """Second-order targets, in roster order.

    A candidate has already spoken this round, has issued no punish
    command, and is not a cheater this agent has already punished.
    """
    me = context.profile.name
    spoke = {speaker for speaker, _ in context.transcript}
    punishers = {actor for actor, _ in context.punishments}
    cheaters = set(known_cheaters(context))
    mine = {t for actor, t in context.punishments if actor == me}
    return [
        name
        for name in context.roster
        if name != me
        and name in spoke
        and name not in punishers
        and not (name in cheaters and name in mine)
    ]


def parametric_discussion_decision(
    vengefulness: int,
    context: AgentContext,
    metanorm_enabled: bool,
    rng: GameRng,
) -> Command:
    """Punish an unpunished cheater with probability vengefulness/7.

    If no unpunished cheater remains and metanorm mode is on, punish a
    non-punisher with the same probability (fresh draw).  Otherwise hand
    the floor to a uniformly chosen other agent.  Draw order: punish gate,
    then target choice, then (only when not punishing) the floor choice.
    """
    _check_trait(vengefulness, "vengefulness")
    p = vengefulness / 7.0
    primary = unpunished_cheaters(context)
    if primary:
        if rng.random() < p:
            return Command(CommandKind.PUNISH, rng.choice(primary))
    elif metanorm_enabled:
        secondary = metanorm_candidates(context)
        if secondary and rng.random() < p:
            return Command(CommandKind.PUNISH, rng.choice(secondary))
    me = context.profile.name
    others = [name for name in context.roster if name != me]
    return Command(CommandKind.NEXT, rng.choice(others))


TRAIT_GROUP_LOW = (1, 2, 3)
TRAIT_GROUP_HIGH = (5, 6, 7)
TRAIT_GROUP_FULL = (1, 2, 3, 4, 5, 6, 7)

TRAIT_GROUPS = {"low": TRAIT_GROUP_LOW, "high": TRAIT_GROUP_HIGH, "full": TRAIT_GROUP_FULL}


def sample_trait(group: str, rng: GameRng) -> int:
    """Uniform trait draw from a named group: low={1,2,3}, high={5,6,7}, full=1..7."""
    try:
        values = TRAIT_GROUPS[group]
    except KeyError:
        raise ConfigurationError(f"unknown trait group {group!r}") from None
    return rng.choice(values)


# -- backends ------------------------------------------------------------------


class AgentBackend:
    """Maps an :class:`AgentContext` to raw utterance text."""

    def utterance(self, context: AgentContext) -> str:
        raise NotImplementedError


class ParametricBackend(AgentBackend):
    """Trait-driven oracle; always emits a canonical, parseable command."""

    def __init__(self, profile: AgentProfile, rng: GameRng, metanorm_enabled: bool = False):
        if not isinstance(profile.persona, TraitPersona):
            raise ConfigurationError("parametric backend requires a trait persona")
        self.profile = profile
        self.rng = rng
        self.metanorm_enabled = metanorm_enabled

    def utterance(self, context: AgentContext) -> str:
        persona: TraitPersona = self.profile.persona
        if context.phase is Phase.TEST:
            command = parametric_test_decision(persona.boldness, self.rng)
        else:
            command = parametric_discussion_decision(
                persona.vengefulness, context, self.metanorm_enabled, self.rng
            )
        return render_command(command)


class ScriptedBackend(AgentBackend):
    """Plays back a fixed utterance list; exhaustion is a backend failure."""

    def __init__(self, lines: Sequence[str]):
        self._lines = list(lines)
        self._cursor = 0

    def utterance(self, context: AgentContext) -> str:
        if self._cursor >= len(self._lines):
            raise BackendFailure("script exhausted")
        line = self._lines[self._cursor]
        self._cursor += 1
        return line


class ReplayAgentBackend(AgentBackend):
    """Serves recorded utterances keyed by the context content hash."""

    def __init__(self, store: FixtureStore):
        self._store = store

    def utterance(self, context: AgentContext) -> str:
        record = self._store.load(context_hash(context))
        return record["response"]

    def record(self, context: AgentContext, response: str) -> None:
        digest = context_hash(context)
        self._store.save(
            digest,
            {"endpoint": "agent", "request": context_payload(context), "response": response},
        )


def _load_template(name: str) -> str:
    return resources.files("normsgame").joinpath(f"templates/{name}").read_text(
        encoding="utf-8"
    )


def load_trait_descriptions() -> dict[str, str]:
    """Frozen trait-description prose (config, not code)."""
    text = _load_template("trait_descriptions.txt")
    out: dict[str, str] = {}
    for line in text.splitlines():
        if ":" in line:
            key, _, value = line.partition(":")
            out[key.strip()] = value.strip()
    return out


def builtin_persona_pool() -> list[str]:
    """Shipped fallback pool of ~10-word personas (offline persona regime)."""
    text = resources.files("normsgame").joinpath("data/persona_pool.txt").read_text(
        encoding="utf-8"
    )
    return [line.strip() for line in text.splitlines() if line.strip()]


def build_system_prompt(profile: AgentProfile, n_agents: int, punish_damage: int, punish_cost: int) -> str:
    """Persona system prompt: numeric traits as "N out of 7", or free text."""
    if isinstance(profile.persona, TraitPersona):
        descriptions = load_trait_descriptions()
        return _load_template("system_traits.txt").format(
            name=profile.name,
            n_agents=n_agents,
            punish_damage=punish_damage,
            punish_cost=punish_cost,
            vengefulness=profile.persona.vengefulness,
            boldness=profile.persona.boldness,
            vengefulness_description=descriptions["vengefulness"],
            boldness_description=descriptions["boldness"],
        )
    return _load_template("system_text.txt").format(
        name=profile.name,
        n_agents=n_agents,
        punish_damage=punish_damage,
        punish_cost=punish_cost,
        persona=profile.persona.description,
    )


class ModelBackend(AgentBackend):
    """Asks a chat gateway for the utterance; gateway errors surface as
    backend failures so the engine can apply its fallback rules."""

    def __init__(self, profile: AgentProfile, gateway: Gateway, n_agents: int,
                 punish_damage: int, punish_cost: int):
        self.profile = profile
        self.gateway = gateway
        self._system = build_system_prompt(profile, n_agents, punish_damage, punish_cost)

    def build_request(self, context: AgentContext) -> ModelRequest:
        messages: list[tuple[str, str]] = [
            ("system", self._system),
            ("user", context_text(context)),
        ]
        if context.reprompt:
            messages.append(("user", context.reprompt))
        return ModelRequest(
            model=self.gateway.chat_model,
            messages=tuple(messages),
            temperature=self.gateway.temperature,
        )

    def utterance(self, context: AgentContext) -> str:
        try:
            return self.gateway.complete(self.build_request(context))
        except GatewayError as exc:
            raise BackendFailure(str(exc)) from exc


BackendFactory = Callable[[AgentProfile], AgentBackend]


def default_backend_factory(
    rng: GameRng,
    gateway: Optional[Gateway],
    n_agents: int,
    punish_damage: int,
    punish_cost: int,
    metanorm_enabled: bool = False,
    replay_store: Optional[FixtureStore] = None,
) -> BackendFactory:
    """Standard profile-to-backend wiring used by the experiment runners."""

    def factory(profile: AgentProfile) -> AgentBackend:
        if profile.backend is BackendKind.PARAMETRIC:
            return ParametricBackend(profile, rng, metanorm_enabled)
        if profile.backend is BackendKind.MODEL:
            if gateway is None:
                raise ConfigurationError("model backend requires a gateway")
            return ModelBackend(profile, gateway, n_agents, punish_damage, punish_cost)
        if profile.backend is BackendKind.REPLAY:
            if replay_store is None:
                raise ConfigurationError("replay backend requires a fixture store")
            return ReplayAgentBackend(replay_store)
        raise ConfigurationError(
            f"no default construction for backend {profile.backend.value}"
        )

    return factory

"""One round of the norms game, as a deterministic function of
(config, agent decisions, seed).

Round shape: every agent privately picks test or cheat; base scores are
drawn from a normal distribution and announced together with who cheated;
agents then take turns speaking, punishing or passing the floor, for at
most ``max_discussion_turns`` turns; finally payoffs are settled into a
per-agent ledger.

Payoff arithmetic is exact: the cheat bonus, punish damage, and punish
cost are integers, and only the base draw is real-valued, so

    score = base + cheat_bonus_total + punished_total + punish_cost_total

holds to the last bit and the round-level conservation identity

    sum(score - base) = cheats * cheat_bonus - punishes * (damage + cost)

is testable with ``==``.

The engine is strictly sequential (discussion is inherently serial); all
round types are plain values, so independent engines can run in parallel
without shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .agents import AgentBackend, AgentContext, AgentProfile, AnnouncedScore
from .errors import BackendFailure, ConfigurationError
from .protocol import (
    Command,
    CommandKind,
    ParseError,
    Phase,
    grammar_instructions,
    parse_utterance,
    reprompt_message,
)
from .rng import GameRng
from .runlog import (
    PHASE_DISCUSSION,
    PHASE_SETTLEMENT,
    PHASE_TEST,
    RunLogWriter,
)

# Re-prompt attempts after a failed parse before the engine substitutes a
# fallback command. Fallbacks are first-class log events so analyses can
# exclude contaminated rounds.
REPROMPT_ATTEMPTS = 3


@dataclass(frozen=True)
class GameConfig:
    """Round economics and sizing. `base_variance` is a true variance unless
    `variance_is_stddev` is set (provided because 'variance' is often used
    loosely to mean the spread parameter)."""

    n_agents: int = 7
    max_discussion_turns: int = 21
    base_mean: float = 50.0
    base_variance: float = 10.0
    cheat_bonus: int = 30
    punish_damage: int = 90
    punish_cost: int = 20
    variance_is_stddev: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigurationError("n_agents must be >= 2")
        if self.max_discussion_turns < 0:
            raise ConfigurationError("max_discussion_turns must be >= 0")
        if self.base_variance < 0:
            raise ConfigurationError("base_variance must be >= 0")
        for label in ("cheat_bonus", "punish_damage", "punish_cost"):
            if getattr(self, label) < 0:
                raise ConfigurationError(f"{label} must be >= 0")

    @property
    def base_stddev(self) -> float:
        if self.variance_is_stddev:
            return float(self.base_variance)
        return math.sqrt(self.base_variance)

    def to_payload(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "max_discussion_turns": self.max_discussion_turns,
            "base_mean": self.base_mean,
            "base_variance": self.base_variance,
            "cheat_bonus": self.cheat_bonus,
            "punish_damage": self.punish_damage,
            "punish_cost": self.punish_cost,
            "variance_is_stddev": self.variance_is_stddev,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "GameConfig":
        return cls(**payload)


@dataclass(frozen=True)
class TestEntry:
    agent: str
    choice: CommandKind  # TEST or CHEAT
    base_draw: float
    announced_score: float
    cheated: bool


@dataclass(frozen=True)
class TestPhaseRecord:
    entries: tuple[TestEntry, ...]

    def entry(self, agent: str) -> TestEntry:
        for item in self.entries:
            if item.agent == agent:
                return item
        raise KeyError(agent)

    def announcement(self) -> tuple[AnnouncedScore, ...]:
        return tuple(
            AnnouncedScore(e.agent, e.announced_score, e.cheated) for e in self.entries
        )


@dataclass(frozen=True)
class PunishApplication:
    target: str
    damage: int
    cost: int


@dataclass(frozen=True)
class DiscussionEvent:
    turn_index: int
    speaker: str
    utterance: str
    command: Command
    punish_applied: Optional[PunishApplication] = None


@dataclass
class LedgerEntry:
    base: float = 0.0
    cheat_bonus_total: int = 0
    punished_total: int = 0  # <= 0
    punish_cost_total: int = 0  # <= 0

    @property
    def fixed_delta(self) -> int:
        """Exact integer sum of the three non-base components."""
        return self.cheat_bonus_total + self.punished_total + self.punish_cost_total

    @property
    def score(self) -> float:
        # Sum the integer components exactly, then round once against base.
        return self.base + self.fixed_delta


@dataclass
class RoundLedger:
    entries: dict[str, LedgerEntry] = field(default_factory=dict)

    def score(self, agent: str) -> float:
        return self.entries[agent].score

    def to_payload(self) -> list[dict]:
        return [
            {
                "agent": agent,
                "base": entry.base,
                "cheat_bonus": entry.cheat_bonus_total,
                "punished": entry.punished_total,
                "punish_cost": entry.punish_cost_total,
                "score": entry.score,
            }
            for agent, entry in self.entries.items()
        ]


@dataclass(frozen=True)
class RoundResult:
    test_record: TestPhaseRecord
    events: tuple[DiscussionEvent, ...]
    ledger: RoundLedger


def draw_test_score(rng: GameRng, config: GameConfig) -> float:
    """One normal sample with the configured mean and spread; exactly one
    documented rng step."""
    return rng.normal(config.base_mean, config.base_stddev)


def _ask(
    backend: AgentBackend,
    context: AgentContext,
    roster_names: Sequence[str],
    phase: Phase,
    log: Optional[RunLogWriter],
    round_index: int,
    rng: GameRng,
    log_phase: str,
) -> tuple[Optional[Command], str, Optional[str]]:
    """Run the ask/parse/re-prompt loop for one agent.

    Returns (command, last_utterance, fallback_reason); command is None
    when every attempt failed and the caller must substitute its fallback.
    """
    speaker = context.profile.name
    utterance = ""
    for attempt in range(1 + REPROMPT_ATTEMPTS):
        try:
            utterance = backend.utterance(context)
        except BackendFailure as exc:
            if log is not None:
                log.append(
                    round_index=round_index,
                    phase=log_phase,
                    type="fallback",
                    payload={
                        "agent": speaker,
                        "reason": "backend",
                        "detail": str(exc),
                        "attempt": attempt + 1,
                    },
                    rng_cursor=rng.cursor,
                )
            return None, utterance, "backend"
        parsed = parse_utterance(utterance, roster_names, phase, speaker=speaker)
        if isinstance(parsed, Command):
            return parsed, utterance, None
        error: ParseError = parsed
        if log is not None:
            log.append(
                round_index=round_index,
                phase=log_phase,
                type="parse_retry",
                payload={
                    "agent": speaker,
                    "attempt": attempt + 1,
                    "utterance": utterance,
                    "error": error.kind.value,
                    "detail": error.detail,
                },
                rng_cursor=rng.cursor,
            )
        context = context.with_reprompt(reprompt_message(error, roster_names, phase))
    if log is not None:
        log.append(
            round_index=round_index,
            phase=log_phase,
            type="fallback",
            payload={
                "agent": speaker,
                "reason": "parse",
                "detail": f"unparseable after {1 + REPROMPT_ATTEMPTS} attempts",
                "attempt": 1 + REPROMPT_ATTEMPTS,
            },
            rng_cursor=rng.cursor,
        )
    return None, utterance, "parse"


def run_test_phase(
    roster: Sequence[AgentProfile],
    backends: Mapping[str, AgentBackend],
    config: GameConfig,
    rng: GameRng,
    log: Optional[RunLogWriter] = None,
    round_index: int = 0,
) -> TestPhaseRecord:
    """Collect test/cheat choices in roster order, then draw base scores in
    roster order, then announce all (score, cheated) pairs."""
    if len(roster) != config.n_agents:
        raise ConfigurationError(
            f"roster size {len(roster)} != configured n_agents {config.n_agents}"
        )
    names = tuple(profile.name for profile in roster)
    choices: dict[str, tuple[CommandKind, str]] = {}
    for profile in roster:
        context = AgentContext(
            phase=Phase.TEST,
            profile=profile,
            roster=names,
            announcement=None,
            transcript=(),
            punishments=(),
            instructions=grammar_instructions(
                Phase.TEST, names, profile.name, config.punish_damage, config.punish_cost
            ),
        )
        command, utterance, fallback = _ask(
            backends[profile.name], context, names, Phase.TEST, log, round_index, rng, PHASE_TEST
        )
        if command is None:
            command = Command(CommandKind.TEST)  # failed agents default to honesty
        choices[profile.name] = (command.kind, utterance)
        if log is not None:
            log.append(
                round_index=round_index,
                phase=PHASE_TEST,
                type="test_choice",
                payload={
                    "agent": profile.name,
                    "utterance": utterance,
                    "command": command.to_payload(),
                    "fallback": fallback,
                },
                rng_cursor=rng.cursor,
            )
    entries = []
    for profile in roster:
        kind, _ = choices[profile.name]
        base = draw_test_score(rng, config)
        cheated = kind is CommandKind.CHEAT
        announced = base + config.cheat_bonus if cheated else base
        entries.append(
            TestEntry(
                agent=profile.name,
                choice=kind,
                base_draw=base,
                announced_score=announced,
                cheated=cheated,
            )
        )
    record = TestPhaseRecord(tuple(entries))
    if log is not None:
        log.append(
            round_index=round_index,
            phase=PHASE_TEST,
            type="announcement",
            payload={
                "scores": [
                    {"agent": e.agent, "announced": e.announced_score, "cheated": e.cheated}
                    for e in record.entries
                ]
            },
            rng_cursor=rng.cursor,
        )
    return record


def run_discussion_phase(
    roster: Sequence[AgentProfile],
    backends: Mapping[str, AgentBackend],
    test_record: TestPhaseRecord,
    config: GameConfig,
    rng: GameRng,
    log: Optional[RunLogWriter] = None,
    round_index: int = 0,
) -> tuple[DiscussionEvent, ...]:
    """Turn-taking loop: the first speaker is drawn uniformly; `next` hands
    the floor to its target; `punish` applies ledger deltas and the next
    speaker is drawn uniformly from everyone except the punisher."""
    if config.max_discussion_turns == 0:
        return ()
    names = tuple(profile.name for profile in roster)
    profiles = {profile.name: profile for profile in roster}
    announcement = test_record.announcement()
    transcript: list[tuple[str, str]] = []
    punishments: list[tuple[str, str]] = []
    events: list[DiscussionEvent] = []
    speaker = rng.choice(names)
    for turn in range(config.max_discussion_turns):
        profile = profiles[speaker]
        context = AgentContext(
            phase=Phase.DISCUSSION,
            profile=profile,
            roster=names,
            announcement=announcement,
            transcript=tuple(transcript),
            punishments=tuple(punishments),
            instructions=grammar_instructions(
                Phase.DISCUSSION, names, speaker, config.punish_damage, config.punish_cost
            ),
        )
        command, utterance, fallback = _ask(
            backends[speaker], context, names, Phase.DISCUSSION, log, round_index, rng,
            PHASE_DISCUSSION,
        )
        if command is None:
            others = [name for name in names if name != speaker]
            command = Command(CommandKind.NEXT, rng.choice(others))
        punish_applied = None
        if command.kind is CommandKind.PUNISH:
            punish_applied = PunishApplication(
                target=command.target,
                damage=config.punish_damage,
                cost=config.punish_cost,
            )
            punishments.append((speaker, command.target))
            others = [name for name in names if name != speaker]
            next_speaker = rng.choice(others)
        else:
            next_speaker = command.target
        event = DiscussionEvent(
            turn_index=turn,
            speaker=speaker,
            utterance=utterance,
            command=command,
            punish_applied=punish_applied,
        )
        events.append(event)
        transcript.append((speaker, utterance))
        if log is not None:
            log.append(
                round_index=round_index,
                phase=PHASE_DISCUSSION,
                type="discussion_event",
                payload={
                    "turn": turn,
                    "speaker": speaker,
                    "utterance": utterance,
                    "command": command.to_payload(),
                    "punish": (
                        {
                            "target": punish_applied.target,
                            "damage": punish_applied.damage,
                            "cost": punish_applied.cost,
                        }
                        if punish_applied
                        else None
                    ),
                },
                rng_cursor=rng.cursor,
            )
        speaker = next_speaker
    return tuple(events)


def settle_payoffs(
    test_record: TestPhaseRecord,
    events: Sequence[DiscussionEvent],
    config: GameConfig,
) -> RoundLedger:
    """Pure additive settlement mirroring the per-event gain table."""
    ledger = RoundLedger()
    for entry in test_record.entries:
        ledger.entries[entry.agent] = LedgerEntry(
            base=entry.base_draw,
            cheat_bonus_total=config.cheat_bonus if entry.cheated else 0,
        )
    for event in events:
        if event.punish_applied is None:
            continue
        ledger.entries[event.punish_applied.target].punished_total -= event.punish_applied.damage
        ledger.entries[event.speaker].punish_cost_total -= event.punish_applied.cost
    return ledger


def conservation_residual(
    test_record: TestPhaseRecord,
    events: Sequence[DiscussionEvent],
    ledger: RoundLedger,
    config: GameConfig,
) -> int:
    """sum(score - base) minus its closed form; exactly 0 for any round.

    The base draws cancel symbolically, so the identity is evaluated over
    the exact integer components and holds with ``==``, no tolerance.
    """
    total = sum(entry.fixed_delta for entry in ledger.entries.values())
    cheats = sum(1 for e in test_record.entries if e.cheated)
    punishes = sum(1 for e in events if e.punish_applied is not None)
    expected = cheats * config.cheat_bonus - punishes * (config.punish_damage + config.punish_cost)
    return total - expected


def run_round(
    roster: Sequence[AgentProfile],
    backends: Mapping[str, AgentBackend],
    config: GameConfig,
    rng: GameRng,
    log: Optional[RunLogWriter] = None,
    round_index: int = 0,
) -> RoundResult:
    """Play one complete round and settle it."""
    if log is not None:
        log.append(
            round_index=round_index,
            phase=PHASE_TEST,
            type="round_start",
            payload={"roster": [profile.to_payload() for profile in roster]},
            rng_cursor=rng.cursor,
        )
    test_record = run_test_phase(roster, backends, config, rng, log, round_index)
    events = run_discussion_phase(
        roster, backends, test_record, config, rng, log, round_index
    )
    ledger = settle_payoffs(test_record, events, config)
    if log is not None:
        log.append(
            round_index=round_index,
            phase=PHASE_SETTLEMENT,
            type="settlement",
            payload={"ledger": ledger.to_payload()},
            rng_cursor=rng.cursor,
        )
    return RoundResult(test_record=test_record, events=events, ledger=ledger)

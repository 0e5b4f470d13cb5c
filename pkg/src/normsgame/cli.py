"""Command-line entry point: run, evolve, analyze, replay.

Configuration may come from a JSON file (``--config``), but every field is
overridable by a flag, and flags win.  Unknown config keys are rejected.
A resolved copy of the configuration is written into the output directory
(``runconfig.json``) so every run directory is self-describing.

Exit codes: 0 success, 1 usage/config error, 2 runtime error,
3 replay divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .agents import BackendKind
from .analysis import (
    epoch_metrics,
    punish_counts,
    rounds_in_log,
    build_network,
    write_epoch_embeddings,
    write_epoch_metrics_csv,
    write_network,
    write_punish_counts_csv,
    write_trait_cells_csv,
)
from .engine import GameConfig
from .errors import ConfigurationError, NormsGameError
from .experiments import (
    regenerate_run,
    run_evolution_trial,
    run_trait_groups,
    RUNLOG_NAME,
)
from .evolution import REGIME_PERSONAS, REGIME_TRAITS
from .gateway import (
    DEFAULT_API_KEY_ENV,
    DEFAULT_CHAT_MODEL,
    DEFAULT_CHAT_URL,
    DEFAULT_EMBED_MODEL,
    DEFAULT_EMBED_URL,
    Gateway,
    GatewayMode,
)
from .protocol import Command
from .rng import split_seed
from .runlog import canonical_json, parse_line, read_runlog_lenient

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGED = 3

EXPERIMENT_TRAIT_GROUPS = "trait-groups"
EXPERIMENT_TRAIT_EVOLUTION = "trait-evolution"
EXPERIMENT_PERSONA_EVOLUTION = "persona-evolution"

GAME_KEYS = (
    "n_agents",
    "base_mean",
    "base_variance",
    "cheat_bonus",
    "punish_damage",
    "punish_cost",
    "variance_is_stddev",
)
GATEWAY_KEYS = (
    "chat_url",
    "embed_url",
    "chat_model",
    "embed_model",
    "temperature",
    "stub_completion",
    "stub_embed_dim",
    "fixture_dir",
    "api_key_env",
)
TOP_KEYS = (
    "experiment",
    "seed",
    "out",
    "backend",
    "gateway_mode",
    "epochs",
    "rounds_per_epoch",
    "turns",
    "trials",
    "metanorm",
    "game",
    "gateway",
)

# Per-experiment defaults; any of them can be overridden by config or flag.
EXPERIMENT_DEFAULTS = {
    EXPERIMENT_TRAIT_GROUPS: {
        "backend": "parametric",
        "turns": 21,
        "trials": 10,  # repetitions per condition
        "epochs": 0,
        "rounds_per_epoch": 1,
        "metanorm": False,
    },
    EXPERIMENT_TRAIT_EVOLUTION: {
        "backend": "parametric",
        "turns": 7,
        "trials": 1,
        "epochs": 40,
        "rounds_per_epoch": 1,
        "metanorm": True,
    },
    EXPERIMENT_PERSONA_EVOLUTION: {
        "backend": "model",
        "turns": 7,
        "trials": 5,
        "epochs": 40,
        "rounds_per_epoch": 21,
        "metanorm": False,
    },
}

GAME_DEFAULTS = {
    "n_agents": 7,
    "base_mean": 50.0,
    "base_variance": 10.0,
    "cheat_bonus": 30,
    "punish_damage": 90,
    "punish_cost": 20,
    "variance_is_stddev": False,
}

GATEWAY_DEFAULTS = {
    "chat_url": DEFAULT_CHAT_URL,
    "embed_url": DEFAULT_EMBED_URL,
    "chat_model": DEFAULT_CHAT_MODEL,
    "embed_model": DEFAULT_EMBED_MODEL,
    "temperature": 0.0,
    "stub_completion": "",
    "stub_embed_dim": 64,
    "fixture_dir": None,
    "api_key_env": DEFAULT_API_KEY_ENV,
}


class UsageError(NormsGameError):
    """Bad flags or config; maps to exit code 1."""


@dataclass
class RunConfig:
    """Fully resolved invocation: experiment, sizing, backend, gateway."""

    experiment: str
    seed: int
    out: str
    backend: str
    gateway_mode: str
    epochs: int
    rounds_per_epoch: int
    turns: int
    trials: int
    metanorm: bool
    game: dict
    gateway: dict

    def to_payload(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "out": self.out,
            "backend": self.backend,
            "gateway_mode": self.gateway_mode,
            "epochs": self.epochs,
            "rounds_per_epoch": self.rounds_per_epoch,
            "turns": self.turns,
            "trials": self.trials,
            "metanorm": self.metanorm,
            "game": self.game,
            "gateway": self.gateway,
        }

    def game_config(self, rng_seed: int) -> GameConfig:
        return GameConfig(
            n_agents=self.game["n_agents"],
            max_discussion_turns=self.turns,
            base_mean=self.game["base_mean"],
            base_variance=self.game["base_variance"],
            cheat_bonus=self.game["cheat_bonus"],
            punish_damage=self.game["punish_damage"],
            punish_cost=self.game["punish_cost"],
            variance_is_stddev=self.game["variance_is_stddev"],
            rng_seed=rng_seed,
        )


def _reject_unknown(mapping: dict, allowed: Sequence[str], where: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise UsageError(f"unknown {where} config keys: {', '.join(unknown)}")


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise UsageError("config file must hold a JSON object")
    _reject_unknown(body, TOP_KEYS, "top-level")
    _reject_unknown(body.get("game", {}), GAME_KEYS, "game")
    _reject_unknown(body.get("gateway", {}), GATEWAY_KEYS, "gateway")
    return body


def resolve_config(args: argparse.Namespace, default_experiment: str) -> RunConfig:
    """defaults <- per-experiment defaults <- config file <- flags."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    experiment = (
        getattr(args, "experiment", None) or file_cfg.get("experiment") or default_experiment
    )
    if experiment not in EXPERIMENT_DEFAULTS:
        raise UsageError(f"unknown experiment {experiment!r}")
    defaults = EXPERIMENT_DEFAULTS[experiment]

    def pick(field: str, fallback):
        flag = getattr(args, field, None)
        if flag is not None:
            return flag
        if field in file_cfg:
            return file_cfg[field]
        return fallback

    game = dict(GAME_DEFAULTS)
    game.update(file_cfg.get("game", {}))
    gateway = dict(GATEWAY_DEFAULTS)
    gateway.update(file_cfg.get("gateway", {}))
    for flag, key in (
        ("chat_model", "chat_model"),
        ("embed_model", "embed_model"),
        ("chat_url", "chat_url"),
        ("embed_url", "embed_url"),
        ("stub_completion", "stub_completion"),
        ("stub_embed_dim", "stub_embed_dim"),
        ("fixtures", "fixture_dir"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            gateway[key] = value

    out = pick("out", file_cfg.get("out"))
    if not out:
        raise UsageError("an output directory is required (--out)")
    return RunConfig(
        experiment=experiment,
        seed=int(pick("seed", 0)),
        out=str(out),
        backend=str(pick("backend", defaults["backend"])),
        gateway_mode=str(pick("gateway_mode", "stub")),
        epochs=int(pick("epochs", defaults["epochs"])),
        rounds_per_epoch=int(pick("rounds_per_epoch", defaults["rounds_per_epoch"])),
        turns=int(pick("turns", defaults["turns"])),
        trials=int(pick("trials", defaults["trials"])),
        metanorm=bool(pick("metanorm", defaults["metanorm"])),
        game=game,
        gateway=gateway,
    )


def _require_api_key(gateway_cfg: dict, mode: GatewayMode) -> None:
    if mode not in (GatewayMode.LIVE, GatewayMode.RECORD):
        return
    env = gateway_cfg.get("api_key_env") or DEFAULT_API_KEY_ENV
    if not (os.environ.get(env) or os.environ.get("OPENAI_API_KEY")):
        raise UsageError(
            f"gateway mode {mode.value!r} needs an API key: set the {env} "
            "environment variable"
        )


def build_gateway(cfg: RunConfig, default_fixture_dir: Path) -> Gateway:
    mode = GatewayMode(cfg.gateway_mode)
    _require_api_key(cfg.gateway, mode)
    fixture_dir = cfg.gateway.get("fixture_dir") or str(default_fixture_dir)
    return Gateway(
        mode=mode,
        chat_url=cfg.gateway["chat_url"],
        embed_url=cfg.gateway["embed_url"],
        chat_model=cfg.gateway["chat_model"],
        embed_model=cfg.gateway["embed_model"],
        temperature=float(cfg.gateway["temperature"]),
        fixture_dir=fixture_dir if mode in (GatewayMode.RECORD, GatewayMode.REPLAY) else None,
        stub_completion=cfg.gateway["stub_completion"] or "",
        stub_embed_dim=int(cfg.gateway["stub_embed_dim"]),
        api_key_env=cfg.gateway["api_key_env"],
    )


def _write_provenance(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "runconfig.json").write_text(
        canonical_json(cfg.to_payload()) + "\n", encoding="utf-8"
    )


# -- commands -----------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EXPERIMENT_TRAIT_GROUPS)
    if cfg.experiment != EXPERIMENT_TRAIT_GROUPS:
        raise UsageError("the run command executes the trait-groups experiment; use evolve")
    out_dir = Path(cfg.out)
    _write_provenance(cfg, out_dir)
    backend = BackendKind(cfg.backend)
    gateway_builder = None
    if backend is BackendKind.MODEL:
        gateway_builder = lambda fixtures: build_gateway(cfg, fixtures)  # noqa: E731
    game = cfg.game_config(rng_seed=cfg.seed)
    paths = run_trait_groups(
        out_dir,
        game,
        repetitions=cfg.trials,
        master_seed=cfg.seed,
        metanorm_enabled=cfg.metanorm,
        backend=backend,
        gateway_builder=gateway_builder,
    )
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_evolve(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EXPERIMENT_TRAIT_EVOLUTION)
    if cfg.experiment == EXPERIMENT_TRAIT_EVOLUTION:
        regime = REGIME_TRAITS
    elif cfg.experiment == EXPERIMENT_PERSONA_EVOLUTION:
        regime = REGIME_PERSONAS
    else:
        raise UsageError("the evolve command executes an evolution experiment; use run")
    out_dir = Path(cfg.out)
    _write_provenance(cfg, out_dir)
    backend = BackendKind(cfg.backend)
    for trial in range(cfg.trials):
        trial_dir = out_dir / f"trial_{trial}"
        seed = split_seed(cfg.seed, f"{cfg.experiment}:trial-{trial}")
        gateway = None
        if backend is BackendKind.MODEL or regime == REGIME_PERSONAS:
            gateway = build_gateway(cfg, trial_dir / "fixtures")
        run_id = f"{cfg.experiment.replace('-', '_')}_trial{trial}_s{seed}"
        resume = bool(getattr(args, "resume", False)) and (
            trial_dir / "checkpoint.json"
        ).exists()
        records = run_evolution_trial(
            trial_dir,
            regime=regime,
            game=cfg.game_config(rng_seed=seed),
            epochs=cfg.epochs,
            rounds_per_epoch=cfg.rounds_per_epoch,
            seed=seed,
            metanorm_enabled=cfg.metanorm,
            gateway=gateway,
            backend=backend,
            run_id=run_id,
            resume=resume,
        )
        print(f"trial {trial}: {len(records)} epochs executed -> {trial_dir}")
    return EXIT_OK


def _analysis_gateway(args: argparse.Namespace, header_payload: dict, log_path: Path) -> Gateway:
    gw = header_payload.get("gateway") or {}
    mode = getattr(args, "gateway_mode", None) or "stub"
    if mode == "replay":
        fixtures = getattr(args, "fixtures", None) or str(log_path.parent / "fixtures")
        return Gateway(
            mode=GatewayMode.REPLAY,
            embed_model=gw.get("embed_model", DEFAULT_EMBED_MODEL),
            fixture_dir=fixtures,
        )
    return Gateway(
        mode=GatewayMode.STUB,
        stub_embed_dim=int(
            getattr(args, "stub_embed_dim", None) or gw.get("stub_embed_dim") or 64
        ),
    )


def cmd_analyze(args: argparse.Namespace) -> int:
    logs_dir = Path(args.logs)
    if not logs_dir.is_dir():
        raise UsageError(f"not a directory: {logs_dir}")
    out_dir = Path(args.out) if args.out else logs_dir / "analysis"
    log_files = sorted(
        p for p in logs_dir.glob("**/*.jsonl") if out_dir not in p.parents
    )
    if not log_files:
        print("no logs found", file=sys.stderr)
        return EXIT_USAGE
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list] = {}
    analyzed = 0
    for path in log_files:
        events, error = read_runlog_lenient(path)
        if error is not None:
            print(f"warning: {error}; analyzing valid prefix", file=sys.stderr)
        if not events or events[0].type != "run_header":
            print(f"warning: {path} has no run header; skipped", file=sys.stderr)
            continue
        header = events[0].payload
        run_dir = out_dir / events[0].run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        if header.get("kind") == "trait_groups":
            groups.setdefault(header["label"], []).append(events)
            for round_index in rounds_in_log(events):
                write_network(build_network(events, round_index), run_dir)
        elif header.get("kind") == "evolution":
            metrics = epoch_metrics(events)
            write_epoch_metrics_csv(metrics, run_dir / "epoch_metrics.csv")
            if header.get("regime") == REGIME_TRAITS:
                write_trait_cells_csv(metrics, run_dir / "trait_cells.csv")
            else:
                gateway = _analysis_gateway(args, header, path)
                write_epoch_embeddings(events, gateway, run_dir)
        else:
            print(f"warning: {path} has unknown run kind; skipped", file=sys.stderr)
            continue
        analyzed += 1
    if groups:
        write_punish_counts_csv(punish_counts(groups), out_dir / "punish_counts.csv")
    print(f"analyzed {analyzed} logs -> {out_dir}")
    return EXIT_OK


def _format_command(payload: dict) -> str:
    command = Command.from_payload(payload)
    if command.target:
        return f"{command.kind.value} {command.target}"
    return command.kind.value


def _print_transcript(events) -> None:
    for event in events:
        if event.type == "round_start":
            print(f"--- round {event.round} ---")
        elif event.type == "announcement":
            for score in event.payload["scores"]:
                status = "cheated" if score["cheated"] else "took the test"
                print(f"  {score['agent']}: {score['announced']:.1f} ({status})")
        elif event.type == "discussion_event":
            command = _format_command(event.payload["command"])
            print(
                f"  [{event.payload['turn']:>2}] {event.payload['speaker']}: "
                f"{event.payload['utterance']!r} => {command}"
            )
        elif event.type == "fallback":
            print(
                f"  (fallback for {event.payload['agent']}: {event.payload['reason']})"
            )


def cmd_replay(args: argparse.Namespace) -> int:
    log_path = Path(args.log)
    if not log_path.is_file():
        raise UsageError(f"not a file: {log_path}")
    with open(log_path, "r", encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
    header = parse_line(first, str(log_path), 1)
    if header.type != "run_header":
        raise ConfigurationError(f"{log_path} does not start with a run_header event")
    fixtures = None
    if getattr(args, "fixtures", None):
        fixtures = Path(args.fixtures)
    elif (log_path.parent / "fixtures").is_dir():
        fixtures = log_path.parent / "fixtures"
    original = log_path.read_bytes()
    with tempfile.TemporaryDirectory(prefix="normsgame-replay-") as tmp:
        regen_path = regenerate_run(header, Path(tmp), fixtures)
        regenerated = regen_path.read_bytes()
        if original == regenerated:
            events, _ = read_runlog_lenient(regen_path)
            _print_transcript(events)
            print(f"replay OK: {log_path} is byte-identical ({len(events)} events)")
            return EXIT_OK
        original_lines = original.split(b"\n")
        regen_lines = regenerated.split(b"\n")
        for index in range(max(len(original_lines), len(regen_lines))):
            left = original_lines[index] if index < len(original_lines) else b"<missing>"
            right = regen_lines[index] if index < len(regen_lines) else b"<missing>"
            if left != right:
                print(f"replay diverged at line {index + 1}", file=sys.stderr)
                print(f"  log:      {left[:120]!r}", file=sys.stderr)
                print(f"  replayed: {right[:120]!r}", file=sys.stderr)
                break
        return EXIT_DIVERGED


# -- argument parsing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; we reserve that
        raise UsageError(message)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--experiment", choices=sorted(EXPERIMENT_DEFAULTS))
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="master seed (trials use split seeds)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--backend", choices=["parametric", "model"])
    parser.add_argument(
        "--gateway-mode", dest="gateway_mode", choices=["live", "record", "replay", "stub"]
    )
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--rounds-per-epoch", dest="rounds_per_epoch", type=int)
    parser.add_argument("--turns", type=int, help="max discussion turns per round")
    parser.add_argument("--trials", type=int)
    parser.add_argument(
        "--metanorm",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="parametric agents also punish non-punishers",
    )
    parser.add_argument("--chat-model", dest="chat_model")
    parser.add_argument("--embed-model", dest="embed_model")
    parser.add_argument("--chat-url", dest="chat_url")
    parser.add_argument("--embed-url", dest="embed_url")
    parser.add_argument("--stub-completion", dest="stub_completion")
    parser.add_argument("--stub-embed-dim", dest="stub_embed_dim", type=int)
    parser.add_argument("--fixtures", help="gateway fixture directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="normsgame", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="play the trait-groups conditions")
    _add_run_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    evolve_p = sub.add_parser("evolve", help="run an evolution experiment")
    _add_run_flags(evolve_p)
    evolve_p.add_argument(
        "--resume", action="store_true", help="continue trials from their checkpoints"
    )
    evolve_p.set_defaults(func=cmd_evolve)

    analyze_p = sub.add_parser("analyze", help="export figure data from run logs")
    analyze_p.add_argument("logs", help="directory containing run logs")
    analyze_p.add_argument("--out", help="output directory (default: <logs>/analysis)")
    analyze_p.add_argument("--gateway-mode", dest="gateway_mode", choices=["stub", "replay"])
    analyze_p.add_argument("--stub-embed-dim", dest="stub_embed_dim", type=int)
    analyze_p.add_argument("--fixtures")
    analyze_p.set_defaults(func=cmd_analyze)

    replay_p = sub.add_parser("replay", help="re-execute a log and verify bytes")
    replay_p.add_argument("log", help="run log file")
    replay_p.add_argument("--fixtures", help="fixture directory for model-backed runs")
    replay_p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NormsGameError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runners: the three study setups, behind one replay contract.

Every runner writes a run log whose first line (``run_header``) carries
everything needed to regenerate the file bit-exactly: config, seed,
backend wiring, and gateway settings.  :func:`regenerate_run` re-executes
any log from its header alone: with recorded fixtures standing in for
live model traffic: which is what the replay command diffs against.

Runners:

* trait groups     : 2x2 conditions (low/high vengefulness x low/high
  boldness), traits resampled per repetition, one log per condition.
* evolution trial  : epoch loop for either regime, with a checkpoint
  after every epoch so interrupted runs resume without re-spending
  model calls.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Callable, Optional

from .agents import DEFAULT_NAMES, BackendKind, default_backend_factory
from .engine import GameConfig, run_round
from .errors import ConfigurationError
from .evolution import (
    METRICS_HEADER,
    REGIME_PERSONAS,
    REGIME_TRAITS,
    AgentProfile,
    EpochRecord,
    _metrics_row,
    build_persona_pool,
    initial_persona_population,
    initial_trait_population,
    run_epoch,
)
from .gateway import Gateway, GatewayMode
from .rng import GameRng, split_seed
from .runlog import PHASE_META, LogEvent, RunLogWriter, canonical_json

TRAIT_GROUP_CONDITIONS = (
    ("low", "low"),
    ("low", "high"),
    ("high", "low"),
    ("high", "high"),
)

CHECKPOINT_VERSION = 1
RUNLOG_NAME = "runlog.jsonl"
METRICS_NAME = "metrics.csv"
CHECKPOINT_NAME = "checkpoint.json"


def condition_label(v_group: str, b_group: str) -> str:
    return f"{v_group}_v_{b_group}_b"


def _serial_allocator(start: int = 0) -> tuple[Callable[[], str], Callable[[], int]]:
    counter = {"next": start}

    def allocate() -> str:
        value = counter["next"]
        counter["next"] += 1
        return f"a{value:04d}"

    def peek() -> int:
        return counter["next"]

    return allocate, peek


def gateway_payload(gateway: Optional[Gateway]) -> Optional[dict]:
    """Serializable gateway settings for the run header (no secrets)."""
    if gateway is None:
        return None
    stub = gateway.stub_completion if isinstance(gateway.stub_completion, str) else None
    return {
        "mode": gateway.mode.value,
        "chat_url": gateway.chat_url,
        "embed_url": gateway.embed_url,
        "chat_model": gateway.chat_model,
        "embed_model": gateway.embed_model,
        "temperature": gateway.temperature,
        "stub_completion": stub,
        "stub_embed_dim": gateway.stub_embed_dim,
        "api_key_env": gateway.api_key_env,
    }


def gateway_from_payload(
    payload: Optional[dict], fixtures_dir: Optional[Path]
) -> Optional[Gateway]:
    """Rebuild a gateway for replay: live/record collapse to replay mode."""
    if payload is None:
        return None
    mode = GatewayMode(payload["mode"])
    if mode in (GatewayMode.LIVE, GatewayMode.RECORD, GatewayMode.REPLAY):
        if fixtures_dir is None:
            raise ConfigurationError(
                "replaying a model-backed run requires a fixtures directory"
            )
        mode = GatewayMode.REPLAY
    if mode is GatewayMode.STUB and payload.get("stub_completion") is None:
        stub = ""
    else:
        stub = payload.get("stub_completion") or ""
    return Gateway(
        mode=mode,
        chat_url=payload["chat_url"],
        embed_url=payload["embed_url"],
        chat_model=payload["chat_model"],
        embed_model=payload["embed_model"],
        temperature=payload["temperature"],
        fixture_dir=str(fixtures_dir) if mode is GatewayMode.REPLAY else None,
        stub_completion=stub,
        stub_embed_dim=payload["stub_embed_dim"],
        api_key_env=payload.get("api_key_env") or "NORMSGAME_API_KEY",
    )


# -- trait groups ----------------------------------------------------------------


def run_trait_group_condition(
    path: Path,
    game: GameConfig,
    v_group: str,
    b_group: str,
    repetitions: int,
    seed: int,
    *,
    metanorm_enabled: bool = False,
    backend: BackendKind = BackendKind.PARAMETRIC,
    gateway: Optional[Gateway] = None,
    header_gateway: Optional[dict] = None,
) -> Path:
    """Play one condition: traits resampled every repetition, one round each.

    ``header_gateway`` lets a replay embed the original run's gateway
    settings in the regenerated header (the live gateway is swapped for a
    replay one, but the header must stay byte-identical).
    """
    game = dataclasses.replace(game, rng_seed=seed)
    label = condition_label(v_group, b_group)
    run_id = f"trait_groups_{label}_s{seed}"
    rng = GameRng(seed)
    allocate_id, _ = _serial_allocator()
    factory = default_backend_factory(
        rng,
        gateway,
        game.n_agents,
        game.punish_damage,
        game.punish_cost,
        metanorm_enabled=metanorm_enabled,
    )
    with open(path, "w", encoding="utf-8", newline="") as sink:
        log = RunLogWriter(sink, run_id)
        log.append(
            round_index=-1,
            phase=PHASE_META,
            type="run_header",
            payload={
                "kind": "trait_groups",
                "label": label,
                "v_group": v_group,
                "b_group": b_group,
                "repetitions": repetitions,
                "seed": seed,
                "metanorm": metanorm_enabled,
                "backend": backend.value,
                "game": game.to_payload(),
                "names": list(DEFAULT_NAMES[: game.n_agents]),
                "gateway": header_gateway or gateway_payload(gateway),
            },
            rng_cursor=rng.cursor,
        )
        for repetition in range(repetitions):
            population = initial_trait_population(
                rng,
                v_group=v_group,
                b_group=b_group,
                names=DEFAULT_NAMES[: game.n_agents],
                allocate_id=allocate_id,
            )
            population = [
                AgentProfile(p.id, p.name, p.persona, backend) for p in population
            ]
            backends = {p.name: factory(p) for p in population}
            run_round(population, backends, game, rng, log, round_index=repetition)
    return path


def run_trait_groups(
    out_dir: Path,
    game: GameConfig,
    repetitions: int,
    master_seed: int,
    *,
    metanorm_enabled: bool = False,
    backend: BackendKind = BackendKind.PARAMETRIC,
    gateway_builder: Optional[Callable[[Path], Optional[Gateway]]] = None,
) -> list[Path]:
    """All four conditions; each gets its own child seed and log file."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for v_group, b_group in TRAIT_GROUP_CONDITIONS:
        label = condition_label(v_group, b_group)
        seed = split_seed(master_seed, f"trait-groups:{label}")
        gateway = gateway_builder(out_dir / "fixtures") if gateway_builder else None
        written.append(
            run_trait_group_condition(
                out_dir / f"{label}.jsonl",
                game,
                v_group,
                b_group,
                repetitions,
                seed,
                metanorm_enabled=metanorm_enabled,
                backend=backend,
                gateway=gateway,
            )
        )
    return written


# -- evolution trials ---------------------------------------------------------------


def _write_checkpoint(
    path: Path,
    *,
    run_id: str,
    next_epoch: int,
    round_offset: int,
    next_serial: int,
    population: list[AgentProfile],
    rng: GameRng,
    runlog_bytes: int,
    metrics_bytes: int,
) -> None:
    body = canonical_json(
        {
            "v": CHECKPOINT_VERSION,
            "run_id": run_id,
            "next_epoch": next_epoch,
            "round_offset": round_offset,
            "next_serial": next_serial,
            "population": [p.to_payload() for p in population],
            "rng": rng.getstate(),
            "runlog_bytes": runlog_bytes,
            "metrics_bytes": metrics_bytes,
        }
    )
    tmp = path.with_suffix(".tmp")
    tmp.write_text(body + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _load_checkpoint(path: Path) -> dict:
    import json

    body = json.loads(path.read_text(encoding="utf-8"))
    if body.get("v") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {body.get('v')!r}")
    return body


def run_evolution_trial(
    trial_dir: Path,
    *,
    regime: str,
    game: GameConfig,
    epochs: int,
    rounds_per_epoch: int,
    seed: int,
    metanorm_enabled: bool = False,
    gateway: Optional[Gateway] = None,
    backend: Optional[BackendKind] = None,
    pool_size: int = 16,
    run_id: Optional[str] = None,
    resume: bool = False,
    stop_after: Optional[int] = None,
    header_gateway: Optional[dict] = None,
) -> list[EpochRecord]:
    """Run (or resume) one evolution trial; returns the epochs executed now.

    Writes ``runlog.jsonl``, ``metrics.csv``, and ``checkpoint.json`` into
    ``trial_dir``.  ``stop_after`` caps how many epochs this call executes,
    which is how the kill-and-resume tests interrupt a run cleanly.
    """
    game = dataclasses.replace(game, rng_seed=seed)
    trial_dir.mkdir(parents=True, exist_ok=True)
    runlog_path = trial_dir / RUNLOG_NAME
    metrics_path = trial_dir / METRICS_NAME
    checkpoint_path = trial_dir / CHECKPOINT_NAME
    if backend is None:
        backend = BackendKind.PARAMETRIC if regime == REGIME_TRAITS else BackendKind.MODEL
    run_id = run_id or f"evolution_{regime}_s{seed}"

    rng = GameRng(seed)
    names = DEFAULT_NAMES[: game.n_agents]

    if resume:
        state = _load_checkpoint(checkpoint_path)
        if state["run_id"] != run_id:
            raise ConfigurationError(
                f"checkpoint belongs to run {state['run_id']!r}, not {run_id!r}"
            )
        start_epoch = state["next_epoch"]
        round_offset = state["round_offset"]
        population = [AgentProfile.from_payload(p) for p in state["population"]]
        allocate_id, peek_serial = _serial_allocator(state["next_serial"])
        rng.setstate(state["rng"])
        os.truncate(runlog_path, state["runlog_bytes"])
        os.truncate(metrics_path, state["metrics_bytes"])
        runlog_bytes = state["runlog_bytes"]
        metrics_bytes = state["metrics_bytes"]
        sink = open(runlog_path, "a", encoding="utf-8", newline="")
        metrics = open(metrics_path, "a", encoding="utf-8", newline="")
        log = RunLogWriter(sink, run_id)
        log.bytes_written = runlog_bytes
    else:
        allocate_id, peek_serial = _serial_allocator()
        if regime == REGIME_TRAITS:
            population = initial_trait_population(
                rng, v_group="full", b_group="full", names=names, allocate_id=allocate_id
            )
        else:
            pool = build_persona_pool(gateway, pool_size)
            population = initial_persona_population(
                pool, rng, names=names, allocate_id=allocate_id, backend=backend
            )
        start_epoch = 0
        round_offset = 0
        metrics_bytes = len(METRICS_HEADER)
        sink = open(runlog_path, "w", encoding="utf-8", newline="")
        metrics = open(metrics_path, "w", encoding="utf-8", newline="")
        metrics.write(METRICS_HEADER)
        log = RunLogWriter(sink, run_id)
        log.append(
            round_index=-1,
            phase=PHASE_META,
            type="run_header",
            payload={
                "kind": "evolution",
                "regime": regime,
                "epochs": epochs,
                "rounds_per_epoch": rounds_per_epoch,
                "seed": seed,
                "metanorm": metanorm_enabled,
                "backend": backend.value,
                "pool_size": pool_size,
                "game": game.to_payload(),
                "names": list(names),
                "gateway": header_gateway or gateway_payload(gateway),
            },
            rng_cursor=rng.cursor,
        )

    factory = default_backend_factory(
        rng,
        gateway,
        game.n_agents,
        game.punish_damage,
        game.punish_cost,
        metanorm_enabled=metanorm_enabled,
    )
    executed: list[EpochRecord] = []
    try:
        for epoch in range(start_epoch, epochs):
            record, population = run_epoch(
                population,
                game,
                rounds_per_epoch,
                rng,
                epoch_index=epoch,
                regime=regime,
                backend_factory=factory,
                allocate_id=allocate_id,
                log=log,
                gateway=gateway,
                round_offset=round_offset,
                names=names,
            )
            round_offset += rounds_per_epoch
            row = _metrics_row(record, regime)
            metrics.write(row)
            metrics_bytes += len(row)
            sink.flush()
            metrics.flush()
            _write_checkpoint(
                checkpoint_path,
                run_id=run_id,
                next_epoch=epoch + 1,
                round_offset=round_offset,
                next_serial=peek_serial(),
                population=population,
                rng=rng,
                runlog_bytes=log.bytes_written,
                metrics_bytes=metrics_bytes,
            )
            executed.append(record)
            if stop_after is not None and len(executed) >= stop_after:
                break
    finally:
        sink.close()
        metrics.close()
    return executed


# -- replay regeneration ----------------------------------------------------------


def regenerate_run(
    header: LogEvent, out_dir: Path, fixtures_dir: Optional[Path]
) -> Path:
    """Re-execute the run described by a run_header into ``out_dir``.

    Returns the path of the regenerated log.  Model-backed runs are served
    from recorded fixtures; no mode ever reaches the network here.
    """
    payload = header.payload
    kind = payload.get("kind")
    game = GameConfig.from_payload(payload["game"])
    gateway = gateway_from_payload(payload.get("gateway"), fixtures_dir)
    if kind == "trait_groups":
        out_path = out_dir / f"{payload['label']}.jsonl"
        return run_trait_group_condition(
            out_path,
            game,
            payload["v_group"],
            payload["b_group"],
            payload["repetitions"],
            payload["seed"],
            metanorm_enabled=payload["metanorm"],
            backend=BackendKind(payload["backend"]),
            gateway=gateway,
            header_gateway=payload.get("gateway"),
        )
    if kind == "evolution":
        run_evolution_trial(
            out_dir,
            regime=payload["regime"],
            game=game,
            epochs=payload["epochs"],
            rounds_per_epoch=payload["rounds_per_epoch"],
            seed=payload["seed"],
            metanorm_enabled=payload["metanorm"],
            gateway=gateway,
            backend=BackendKind(payload["backend"]),
            pool_size=payload["pool_size"],
            run_id=header.run_id,
            header_gateway=payload.get("gateway"),
        )
        return out_dir / RUNLOG_NAME
    raise ConfigurationError(f"cannot regenerate run of kind {kind!r}")

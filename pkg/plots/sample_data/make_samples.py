"""Regenerate the shipped sample exports.

Drives the simulator with a deterministic fake model service (record mode
over an injected transport), analyzes the resulting logs through the
normal CLI, and copies the exported files here. Static fixtures: rerun
only after an intentional simulator format change, then review the diff.

    python3 plots/sample_data/make_samples.py
"""

from __future__ import annotations

import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

from normsgame.cli import main as normsgame_main
from normsgame.engine import GameConfig
from normsgame.experiments import run_evolution_trial
from normsgame.gateway import Gateway, GatewayMode, stub_embedding
from normsgame.rng import split_seed

HERE = Path(__file__).parent

WORDS = (
    "wary generous stubborn playful blunt patient sly upright fierce mellow "
    "curious loyal prickly candid shrewd gentle brazen orderly restless fair"
).split()


def _digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def fake_service(url: str, headers: dict, body: dict, timeout: float):
    """Deterministic stand-in for the chat/embedding endpoints."""
    if "embed" in url:
        vec = list(stub_embedding("svc:" + body["input"], 16).values)
        return 200, {"data": [{"embedding": vec}]}
    user_text = body["messages"][-1]["content"]
    key = _digest(json.dumps(body, sort_keys=True))
    if "Personality:" in user_text:
        picks = [WORDS[(key // (i + 1)) % len(WORDS)] for i in range(9)]
        content = "A " + " ".join(picks) + " player."
    elif "Phase: test" in user_text:
        content = "I will do it. <cheat/>" if key % 3 == 0 else "Playing fair. <test/>"
    else:
        names = []
        for line in user_text.splitlines():
            if line.startswith("Players: "):
                names = [n.strip() for n in line[len("Players: "):].split(",")]
        target = names[key % len(names)] if names else "Alice"
        if key % 4 == 0:
            content = f"That was wrong. <punish>{target}</punish>"
        else:
            content = f"Your turn. <next>{target}</next>"
    return 200, {"choices": [{"message": {"role": "assistant", "content": content}}]}


def build() -> None:
    for stale in HERE.iterdir():
        if stale.name not in ("make_samples.py",):
            shutil.rmtree(stale) if stale.is_dir() else stale.unlink()

    with tempfile.TemporaryDirectory() as tmp_str:
        tmp = Path(tmp_str)
        logs = tmp / "logs"

        code = normsgame_main(
            ["run", "--experiment", "trait-groups", "--seed", "42", "--trials", "10",
             "--turns", "21", "--out", str(logs / "groups")]
        )
        assert code == 0
        code = normsgame_main(
            ["evolve", "--experiment", "trait-evolution", "--seed", "42",
             "--epochs", "40", "--trials", "1", "--out", str(logs / "traits")]
        )
        assert code == 0

        for trial in range(5):
            trial_dir = logs / "personas" / f"trial_{trial}"
            seed = split_seed(42, f"sample-personas:trial-{trial}")
            gateway = Gateway(
                mode=GatewayMode.RECORD,
                fixture_dir=str(trial_dir / "fixtures"),
                transport=fake_service,
                sleep=lambda s: None,
                stub_embed_dim=16,
            )
            run_evolution_trial(
                trial_dir,
                regime="personas",
                game=GameConfig(max_discussion_turns=7, rng_seed=seed),
                epochs=40,
                rounds_per_epoch=1,
                seed=seed,
                gateway=gateway,
                run_id=f"sample_personas_trial{trial}_s{seed}",
            )

        out = tmp / "analysis"
        code = normsgame_main(
            ["analyze", str(logs), "--out", str(out), "--gateway-mode", "replay"]
        )
        assert code == 0

        shutil.copy(out / "punish_counts.csv", HERE / "punish_counts.csv")
        groups_dir = next(d for d in out.iterdir() if "high_v_high_b" in d.name)
        shutil.copy(groups_dir / "network_0.json", HERE / "network_0.json")
        traits_dir = next(d for d in out.iterdir() if d.name.startswith("trait_evolution"))
        (HERE / "traits").mkdir()
        shutil.copy(traits_dir / "epoch_metrics.csv", HERE / "traits" / "epoch_metrics.csv")
        shutil.copy(traits_dir / "trait_cells.csv", HERE / "traits" / "trait_cells.csv")
        for trial in range(5):
            src = next(
                d for d in out.iterdir()
                if d.name.startswith(f"sample_personas_trial{trial}_")
            )
            dst = HERE / "personas" / f"trial_{trial}"
            dst.mkdir(parents=True)
            shutil.copy(src / "epoch_metrics.csv", dst / "epoch_metrics.csv")
            for emb in sorted(src.glob("embeddings_*.json")):
                shutil.copy(emb, dst / emb.name)


if __name__ == "__main__":
    build()
    count = sum(1 for p in HERE.rglob("*") if p.is_file())
    print(f"sample_data holds {count} files")
    sys.exit(0)

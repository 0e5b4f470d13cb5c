"""Render every figure kind from the shipped samples; pin UMAP stability."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from normsplots.cli import main
from normsplots.figures import (
    render_network,
    render_trait_grid,
    render_trajectory,
    render_umap,
    render_violin,
)
from normsplots.schema import (
    SchemaError,
    load_epoch_metrics,
    load_punish_counts,
    load_trial_embeddings,
)
from normsplots.umap_impl import fit_transform

SAMPLES = Path(__file__).parent.parent / "sample_data"
TRIALS = sorted((SAMPLES / "personas").iterdir())
PERSONA_METRICS = [d / "epoch_metrics.csv" for d in TRIALS]

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def assert_png(path: Path):
    data = path.read_bytes()
    assert data[:8] == PNG_MAGIC and len(data) > 2000


def test_all_seven_figure_kinds_render(tmp_path):
    started = time.perf_counter()
    groups = render_violin(SAMPLES / "punish_counts.csv", tmp_path / "violin.png")
    assert groups == ["high_v_high_b", "high_v_low_b", "low_v_high_b", "low_v_low_b"]
    render_trait_grid(
        SAMPLES / "traits" / "trait_cells.csv",
        SAMPLES / "traits" / "epoch_metrics.csv",
        tmp_path / "grid.png",
    )
    render_network(SAMPLES / "network_0.json", tmp_path / "network.png")
    render_umap(TRIALS, tmp_path / "umap.png")
    render_trajectory("variance", PERSONA_METRICS, tmp_path / "variance.png")
    render_trajectory("cheat-rate", PERSONA_METRICS, tmp_path / "cheat.png")
    render_trajectory("punish-rate", PERSONA_METRICS, tmp_path / "punish.png")
    for name in ("violin", "grid", "network", "umap", "variance", "cheat", "punish"):
        assert_png(tmp_path / f"{name}.png")
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"figure set took {elapsed:.1f}s"
    print(f"ACCEPTANCE PASS figure-kinds ({elapsed:.2f}s)")


def test_umap_figure_is_byte_stable(tmp_path):
    started = time.perf_counter()
    first = render_umap(TRIALS, tmp_path / "umap_a.png", random_state=42)
    second = render_umap(TRIALS, tmp_path / "umap_b.png", random_state=42)
    assert first.read_bytes() == second.read_bytes()
    print(f"ACCEPTANCE PASS umap-byte-stability ({time.perf_counter() - started:.2f}s)")


def test_umap_projection_deterministic_and_shaped():
    trial = load_trial_embeddings(TRIALS[0])
    points = np.array(trial.centroids)
    a = fit_transform(points, random_state=3, n_epochs=50)
    b = fit_transform(points, random_state=3, n_epochs=50)
    assert np.array_equal(a, b)
    assert a.shape == (len(trial.centroids), 2)


def test_umap_preserves_cluster_structure():
    rng = np.random.default_rng(11)
    left = rng.normal(0, 0.2, (30, 8)) + 3.0
    right = rng.normal(0, 0.2, (30, 8)) - 3.0
    projected = fit_transform(np.vstack([left, right]), random_state=1, n_epochs=100)
    separation = np.linalg.norm(projected[:30].mean(0) - projected[30:].mean(0))
    spread = max(projected[:30].std(), projected[30:].std())
    assert separation > 2 * spread


def test_schema_error_names_offending_column(tmp_path):
    bad = tmp_path / "punish_counts.csv"
    bad.write_text("group,run_id,round\n" "g,x,0\n")
    with pytest.raises(SchemaError) as err:
        load_punish_counts(bad)
    assert "punish_count" in str(err.value)

    extra = tmp_path / "extra.csv"
    extra.write_text("group,run_id,round,punish_count,bogus\n" "g,x,0,1,2\n")
    with pytest.raises(SchemaError) as err:
        load_punish_counts(extra)
    assert "bogus" in str(err.value)


def test_cli_reports_schema_errors(tmp_path, capsys):
    bad = tmp_path / "epoch_metrics.csv"
    bad.write_text("epoch,cheat_rate\n0,0.5\n")
    code = main(["variance", "--metrics", str(bad), "--out", str(tmp_path / "x.png")])
    assert code == 1
    assert "missing column" in capsys.readouterr().err


def test_cli_renders_violin(tmp_path, capsys):
    out = tmp_path / "violin.png"
    code = main(["violin", "--counts", str(SAMPLES / "punish_counts.csv"), "--out", str(out)])
    assert code == 0
    assert_png(out)


def test_constant_metrics_render_flat_lines(tmp_path):
    flat = tmp_path / "epoch_metrics.csv"
    header = (
        "epoch,mean_vengefulness,var_vengefulness,mean_boldness,var_boldness,"
        "cheat_count,punish_count,mean_payoff,min_payoff,max_payoff,"
        "cheat_rate,punish_rate,embedding_variance\n"
    )
    rows = "".join(
        f"{epoch},4,0,4,0,2,1,50,40,60,0.285714286,0.142857143,\n" for epoch in range(10)
    )
    flat.write_text(header + rows)
    path = render_trajectory("cheat-rate", [flat], tmp_path / "flat.png")
    assert_png(path)
    metrics = load_epoch_metrics(flat)
    assert len({row.cheat_rate for row in metrics}) == 1

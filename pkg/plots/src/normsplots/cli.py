"""Figure rendering CLI: one subcommand per figure kind.

Inputs are the simulator's exported files (see ANALYSIS.md in the
simulator repository); outputs are PNG images. Exit code 1 on schema
mismatches, naming the offending column or key.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .figures import render_network, render_trait_grid, render_trajectory, render_umap, render_violin
from .schema import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normsplots", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    violin = sub.add_parser("violin", help="punish-count distributions per condition")
    violin.add_argument("--counts", required=True, help="punish_counts.csv")
    violin.add_argument("--out", required=True)

    grid = sub.add_parser("trait-grid", help="trait-population bubbles per epoch")
    grid.add_argument("--cells", required=True, help="trait_cells.csv")
    grid.add_argument("--metrics", required=True, help="epoch_metrics.csv")
    grid.add_argument("--out", required=True)

    network = sub.add_parser("network", help="punishment network for one round")
    network.add_argument("--network", required=True, help="network_<round>.json")
    network.add_argument("--out", required=True)

    umap = sub.add_parser("umap", help="UMAP of per-epoch persona centroids")
    umap.add_argument("--trials", nargs="+", required=True,
                      help="per-trial analysis dirs holding embeddings_<epoch>.json")
    umap.add_argument("--out", required=True)
    umap.add_argument("--random-state", type=int, default=42)
    umap.add_argument("--n-neighbors", type=int, default=15)
    umap.add_argument("--min-dist", type=float, default=0.1)
    umap.add_argument("--n-epochs", type=int, default=200)

    for kind in ("variance", "cheat-rate", "punish-rate"):
        trajectory = sub.add_parser(kind, help=f"per-epoch {kind} curves")
        trajectory.add_argument("--metrics", nargs="+", required=True,
                                help="one or more epoch_metrics.csv files")
        trajectory.add_argument("--out", required=True)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "violin":
            render_violin(Path(args.counts), Path(args.out))
        elif args.command == "trait-grid":
            render_trait_grid(Path(args.cells), Path(args.metrics), Path(args.out))
        elif args.command == "network":
            render_network(Path(args.network), Path(args.out))
        elif args.command == "umap":
            render_umap(
                [Path(p) for p in args.trials],
                Path(args.out),
                random_state=args.random_state,
                n_neighbors=args.n_neighbors,
                min_dist=args.min_dist,
                n_epochs=args.n_epochs,
            )
        else:
            render_trajectory(
                args.command, [Path(p) for p in args.metrics], Path(args.out)
            )
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

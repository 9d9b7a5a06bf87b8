"""Command-line entry point: ``citeforge <stage> ...`` or ``citeforge run --config``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline, synth
from .detect import DetectConfig
from .ingest import IngestError

log = logging.getLogger("citeforge")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3


def _window(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like 2020:2024, got {text!r}")
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty window {text!r}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="citeforge", description="Citation-network forensics pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse records into a catalog directory")
    s.add_argument("--works", type=Path, required=True)
    s.add_argument("--subjects", type=Path, required=True)
    s.add_argument("--window", type=_window, default=(2020, 2024))
    s.add_argument("--citable-only", action="store_true")
    s.add_argument("--sample-digit", default=None)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("graph", help="build journal and author citation graphs")
    s.add_argument("--catalog", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("rank", help="Eigenfactor scores and journal tiers")
    s.add_argument("--graphs", type=Path, required=True)
    s.add_argument("--damping", type=float, default=0.85)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("match", help="classify authors and match Case/Control pairs")
    s.add_argument("--catalog", type=Path, required=True)
    s.add_argument("--tiers", type=Path, required=True)
    s.add_argument("--share", type=float, default=0.70)
    s.add_argument("--min-papers", type=int, default=3)
    s.add_argument("--bucket-width", type=int, default=3)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("features", help="compute the 14 behavioural features")
    s.add_argument("--graph", type=Path, required=True)
    s.add_argument("--pairs", type=Path, required=True)
    s.add_argument("--catalog", type=Path, default=None,
                   help="catalog directory (default: the one recorded by the graph stage)")
    s.add_argument("--burst-direction", choices=("out", "in"), default="out")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("detect", help="hybrid outlier detection")
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--pairs", type=Path, required=True)
    s.add_argument("--sigma", type=float, default=4.0)
    s.add_argument("--contamination", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--n-estimators", type=int, default=200)
    s.add_argument("--baseline", choices=("control", "population"), default="control")
    s.add_argument("--unweighted-if", action="store_true",
                   help="feed plain z-scores to the isolation forest")
    s.add_argument("--graph", type=Path, default=None, help="graph directory for the connected-share column")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("stats", help="paired statistical battery")
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--pairs", type=Path, required=True)
    s.add_argument("--n-boot", type=int, default=10_000)
    s.add_argument("--n-perm", type=int, default=1000)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("forensics", help="syndicates, roles, mixing and audits")
    s.add_argument("--graph", type=Path, required=True)
    s.add_argument("--outliers", type=Path, required=True)
    s.add_argument("--features", type=Path, default=None)
    s.add_argument("--pairs", type=Path, default=None)
    s.add_argument("--catalog", type=Path, default=None)
    s.add_argument("--baseline", choices=("control", "population"), default="control")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("run", help="run the whole pipeline from a config file")
    s.add_argument("--config", type=Path, required=True)
    return p


def _dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "ingest":
        cat = pipeline.run_ingest(args.works, args.subjects, args.out, args.window,
                                  args.citable_only, args.sample_digit)
        print(f"{len(cat.works)} works, {len(cat.author_index)} authors "
              f"({cat.stats.get('malformed', 0)} malformed rows) -> {args.out}")
    elif cmd == "graph":
        g = pipeline.run_graph(args.catalog, args.out)
        print(f"{len(g.node_set)} authors, {len(g.edges)} edges -> {args.out}")
    elif cmd == "rank":
        rows = pipeline.run_rank(args.graphs, args.out, args.damping)
        print(f"{len(rows)} journals ranked -> {args.out}")
    elif cmd == "match":
        pairs, _ = pipeline.run_match(args.catalog, args.tiers, args.out, args.share,
                                      args.min_papers, args.bucket_width)
        print(f"{len(pairs)} pairs -> {args.out}")
    elif cmd == "features":
        v = pipeline.run_features(args.graph, args.pairs, args.out, args.catalog, args.burst_direction)
        print(f"{len(v)} feature vectors -> {args.out}")
    elif cmd == "detect":
        cfg = DetectConfig(args.sigma, args.contamination, args.seed, args.n_estimators,
                           args.baseline, not args.unweighted_if)
        flags = pipeline.run_detect(args.features, args.pairs, args.out, cfg, args.graph)
        print(f"{sum(f.flagged for f in flags)} of {len(flags)} authors flagged -> {args.out}")
    elif cmd == "stats":
        rows = pipeline.run_stats(args.features, args.pairs, args.out, args.n_boot, args.n_perm, args.seed)
        print(f"{len(rows)} test rows -> {args.out}")
    elif cmd == "forensics":
        res = pipeline.run_forensics(args.graph, args.outliers, args.out, args.features, args.pairs,
                                     args.catalog, args.baseline, args.seed)
        print(f"{len(res['syndicates'])} syndicates -> {args.out}")
    elif cmd == "synth":
        try:
            cfg = synth.ScenarioConfig.from_dict(json.loads(args.config.read_text()))
            sc = synth.generate(cfg)
        except (TypeError, ValueError, json.JSONDecodeError) as exc:
            raise pipeline.ValidationError(str(exc)) from exc
        synth.write_scenario(sc, args.out)
        print(f"{len(sc.works)} works, {len(sc.truth.syndicate_members)} planted members -> {args.out}")
    elif cmd == "run":
        cfg = pipeline.RunConfig.load(args.config)
        res = pipeline.run_pipeline(cfg)
        print(f"executed: {', '.join(res.executed) or '-'}; skipped: {', '.join(res.skipped) or '-'}")
        print(f"report {res.report} sha256 {res.report_sha256}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except pipeline.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (IngestError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

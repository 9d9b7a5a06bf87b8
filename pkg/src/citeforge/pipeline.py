"""Stage functions behind the CLI and the incremental ``run`` orchestrator."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import SUBJECTS, __version__
from . import cohort, detect, features, forensics, graph, ingest, journal_rank, stats

log = logging.getLogger(__name__)

STAGES = ("ingest", "graph", "rank", "match", "features", "detect", "stats", "forensics", "report")
STAGE_VERSIONS = {s: 1 for s in STAGES}


class ValidationError(Exception):
    """Bad configuration or arguments (exit code 2)."""


class StageError(Exception):
    """A pipeline stage failed (exit code 3)."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------- stages

def run_ingest(works: Path, subjects: Path, out: Path, window=(2020, 2024),
               citable_only: bool = False, sample_digit: str | None = None) -> ingest.Catalog:
    subject_map = ingest.load_subjects(subjects)
    cat = ingest.load_records(works, tuple(window), subject_map)
    if citable_only:
        cat = ingest.filter_citable(cat)
    if sample_digit is not None:
        cat = ingest.sample_authors(cat, sample_digit)
    ingest.save_catalog(cat, out)
    return cat


def run_graph(catalog_dir: Path, out: Path) -> graph.AuthorCitationGraph:
    cat = ingest.load_catalog(catalog_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = sorted(set(cat.subject_map.values()))
    for s in subjects:
        graph.build_journal_graph(cat, s).to_csv(out / f"journal_graph_{s}.csv")
    authors = cat.authors
    if not authors:
        raise ValueError("catalog has no authors")
    g = graph.build_author_graph(cat, authors)
    g.to_csv(out)
    _write_json(out / "manifest.json", {
        "tool": "citeforge",
        "version": __version__,
        "catalog": str(Path(catalog_dir).resolve()),
        "subjects": subjects,
        "author_nodes": len(g.node_set),
        "author_edges": len(g.edges),
        "dangling_refs": g.stats.get("dangling_refs", 0),
    })
    return g


def run_rank(graphs_dir: Path, out: Path, damping: float = 0.85) -> list[journal_rank.TierRow]:
    rows: list[journal_rank.TierRow] = []
    files = sorted(Path(graphs_dir).glob("journal_graph_*.csv"))
    if not files:
        raise FileNotFoundError(f"no journal_graph_<subject>.csv files in {graphs_dir}")
    for path in files:
        subject = int(path.stem.rsplit("_", 1)[1])
        g = graph.JournalGraph.from_csv(path, subject)
        if not g.nodes:
            log.warning("subject %d has no journals", subject)
            continue
        rows.extend(journal_rank.rank_subject(g, damping))
    journal_rank.write_tiers(rows, out)
    return rows


def run_match(catalog_dir: Path, tiers_csv: Path, out: Path, share: float = cohort.TIER_SHARE,
              min_papers: int = cohort.MIN_PAPERS, width: int = cohort.BUCKET_WIDTH):
    cat = ingest.load_catalog(catalog_dir)
    tiers = {r.issn: r.tier for r in journal_rank.read_tiers(tiers_csv)}
    portfolios = cohort.build_portfolios(cat, tiers)
    pairs, funnel = cohort.select_and_match(portfolios, share, min_papers, width)
    cohort.write_pairs(pairs, out)
    with Path(out).with_name("funnel.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "authors", "case", "control", "other", "pairs"])
        for s in sorted(funnel):
            f = funnel[s]
            writer.writerow([s, f["authors"], f["case"], f["control"], f["other"], f["pairs"]])
    return pairs, funnel


def _catalog_for_graph(graph_dir: Path, catalog_dir: Path | None) -> Path:
    if catalog_dir is not None:
        return Path(catalog_dir)
    manifest = Path(graph_dir) / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} missing; pass the catalog directory explicitly")
    return Path(json.loads(manifest.read_text())["catalog"])


def run_features(graph_dir: Path, pairs_csv: Path, out: Path, catalog_dir: Path | None = None,
                 burst_direction: str = "out") -> list[features.FeatureVector]:
    cat = ingest.load_catalog(_catalog_for_graph(graph_dir, catalog_dir))
    g = graph.AuthorCitationGraph.from_csv(graph_dir)
    pairs = cohort.read_pairs(pairs_csv)
    targets = sorted({(p.case_author, p.subject) for p in pairs}
                     | {(p.control_author, p.subject) for p in pairs}, key=lambda t: (t[1], t[0]))
    for a, _ in targets:
        g.node_set.add(a)
    vectors = features.compute_features(cat, g, targets, graph.coauthor_sets(cat), burst_direction)
    features.write_features(vectors, out)
    return vectors


def run_detect(features_csv: Path, pairs_csv: Path, out: Path, config: detect.DetectConfig,
               graph_dir: Path | None = None) -> list[detect.OutlierFlag]:
    vectors = features.read_features(features_csv)
    pairs = cohort.read_pairs(pairs_csv)
    flags = detect.detect(vectors, pairs, config)
    detect.write_outliers(flags, out)
    out_adj = graph.AuthorCitationGraph.from_csv(graph_dir).out_adj if graph_dir else None
    detect.write_sweep(detect.sensitivity_sweep(flags, out_adj), Path(out).with_name("sensitivity.csv"))
    return flags


def run_stats(features_csv: Path, pairs_csv: Path, out: Path, n_boot: int = 10_000,
              n_perm: int = 1000, seed: int = 42) -> list[stats.PairedTestResult]:
    vectors = features.read_features(features_csv)
    pairs = cohort.read_pairs(pairs_csv)
    out = Path(out)
    rows = stats.paired_battery(vectors, pairs, "all", n_boot=n_boot, n_perm=n_perm, seed=seed)
    by_subject = defaultdict(list)
    for p in pairs:
        by_subject[p.subject].append(p)
    for s in sorted(by_subject):
        rows.extend(stats.paired_battery(vectors, by_subject[s], str(s), n_boot=n_boot,
                                         n_perm=n_perm, seed=seed))
    stats.write_results(rows, out)

    with out.with_name("forest_data.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "subject_name", "metric", "delta", "ci_low", "ci_high", "n_pairs"])
        for r in rows:
            delta = r.case_mean - r.control_mean
            writer.writerow([r.subject, _subject_name(r.subject), r.metric, stats._cell(delta),
                             stats._cell(r.ci_low), stats._cell(r.ci_high), r.n_pairs])
    with out.with_name("heatmap_data.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "subject_name", "metric", "cliffs_delta"])
        for r in rows:
            if r.subject != "all":
                writer.writerow([r.subject, _subject_name(r.subject), r.metric, stats._cell(r.cliffs_delta)])

    matched = sorted(vectors, key=lambda v: (v.subject, v.author))
    if len(matched) >= 3:
        cols = [n for n in features.FEATURE_NAMES if n != "burst_intensity"]
        X = np.array([[float(getattr(v, c)) for c in cols] for v in matched])
        sd = X.std(axis=0)
        Z = np.where(sd > 0, (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)
        arch = stats.kmeans_archetypes(Z, [v.author for v in matched], cols, seed=seed)
        with out.with_name("archetypes.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["author", "subject", "cluster", "d_central", "d_independent", "d_solo"])
            for v, a in zip(matched, arch):
                writer.writerow([v.author, v.subject, a.cluster, *(f"{d:.6f}" for d in a.centroid_distances)])
    return rows


def _subject_name(s) -> str:
    try:
        return SUBJECTS.get(int(s), "")
    except ValueError:
        return "All subjects"


def run_forensics(graph_dir: Path, outliers_csv: Path, out: Path, features_csv: Path | None = None,
                  pairs_csv: Path | None = None, catalog_dir: Path | None = None,
                  baseline: str = "control", seed: int = 42) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    g = graph.AuthorCitationGraph.from_csv(graph_dir)
    flags = detect.read_outliers(outliers_csv)
    cat = ingest.load_catalog(_catalog_for_graph(graph_dir, catalog_dir))
    flagged = sorted({f.author for f in flags if f.flagged})
    synd = forensics.syndicate_components(flagged, g)
    forensics.write_syndicates(synd, cat.window, out / "syndicates.json")
    for old in out.glob("network_*.csv"):
        old.unlink()
    for i, s in enumerate(synd):
        forensics.write_network(s, out / f"network_{i}.csv")

    # tiers: pairs when given, else the tier column of the outlier table
    tiers: dict[str, str] = {}
    if pairs_csv is not None:
        for (a, _), t in cohort.tier_of_pairs(cohort.read_pairs(pairs_csv)).items():
            tiers.setdefault(a, t)
    else:
        for f in flags:
            tiers.setdefault(f.author, f.tier)
    study = set(tiers)
    mm = forensics.mixing_matrix(g.subgraph(study), tiers)
    adj = forensics.undirected_weights(g, study)
    lv = forensics.louvain(adj, seed=seed) if len(adj) >= 2 else None
    forensics.write_mixing(mm, lv, out / "mixing.csv")

    profiles: list[forensics.AuditProfile] = []
    if features_csv is not None:
        vectors = features.read_features(features_csv)
        base: dict[int, set[str]] = defaultdict(set)
        for f in flags:
            if baseline == "population" or f.tier == "Control":
                base[f.subject].add(f.author)
        profiles = forensics.rank_outliers(flags, vectors, cat, g, study, base, synd)
        forensics.write_audit(profiles, out / "audit.csv")
    return {"syndicates": synd, "mixing": mm, "louvain": lv, "profiles": profiles}


# ------------------------------------------------------------------- run config

@dataclass
class RunConfig:
    works: str
    subjects: str
    out: str
    window: tuple[int, int] = (2020, 2024)
    citable_only: bool = False
    sample_digit: str | None = None
    damping: float = 0.85
    tier_share: float = cohort.TIER_SHARE
    min_papers: int = cohort.MIN_PAPERS
    bucket_width: int = cohort.BUCKET_WIDTH
    sigma: float = 4.0
    contamination: float = detect.CONTAMINATION
    n_estimators: int = detect.N_ESTIMATORS
    baseline: str = "control"
    weight_if_inputs: bool = True
    burst_direction: str = "out"
    n_boot: int = 10_000
    n_perm: int = 1000
    seed: int = 42
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def load(cls, path: str | Path, env: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read run config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("run config must be a JSON object")
        # nested sections are flattened; keys are unique across them
        flat: dict = {}
        for k, v in doc.items():
            if isinstance(v, dict) and k in ("thresholds", "matching", "detection", "stats", "paths"):
                flat.update(v)
            else:
                flat[k] = v
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(flat) - known
        if unknown:
            raise ValidationError(f"unknown run config keys: {sorted(unknown)}")
        for req in ("works", "subjects", "out"):
            if req not in flat:
                raise ValidationError(f"run config lacks '{req}'")
        env = os.environ if env is None else env
        if env.get("CITEFORGE_SEED"):
            try:
                flat["seed"] = int(env["CITEFORGE_SEED"])
            except ValueError as exc:
                raise ValidationError(f"CITEFORGE_SEED must be an integer: {env['CITEFORGE_SEED']!r}") from exc
        if "window" in flat:
            flat["window"] = tuple(flat["window"])
        # JSON integers for real-valued knobs would otherwise leak "4" vs "4.0" into outputs
        for name in ("damping", "tier_share", "sigma", "contamination"):
            if isinstance(flat.get(name), int) and not isinstance(flat[name], bool):
                flat[name] = float(flat[name])
        cfg = cls(base_dir=str(path.parent.resolve()), **flat)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        lo, hi = self.window
        if lo > hi:
            raise ValidationError(f"empty window {self.window}")
        if not 0.5 <= self.tier_share <= 1.0:
            raise ValidationError("tier_share must lie in [0.5, 1]")
        if self.min_papers < 1 or self.bucket_width < 1:
            raise ValidationError("min_papers and bucket_width must be positive")
        if not 0.0 < self.contamination < 0.5:
            raise ValidationError("contamination must lie in (0, 0.5)")
        if self.baseline not in ("control", "population"):
            raise ValidationError("baseline must be 'control' or 'population'")
        if self.burst_direction not in ("out", "in"):
            raise ValidationError("burst_direction must be 'out' or 'in'")
        if not 0.0 < self.damping < 1.0:
            raise ValidationError("damping must lie in (0, 1)")
        if self.sample_digit is not None and str(self.sample_digit).upper() not in ingest.SAMPLE_DIGITS:
            raise ValidationError("sample_digit must be 0-9 or X")
        for name in ("works", "subjects"):
            if not self.path(getattr(self, name)).is_file():
                raise ValidationError(f"{name} file not found: {getattr(self, name)}")

    def path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def params(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d["window"] = list(self.window)
        return d

    def config_hash(self) -> str:
        return _sha(json.dumps(self.params(), sort_keys=True).encode())


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hash_paths(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            h.update(f.name.encode())
            h.update(f.read_bytes() if f.exists() else b"<missing>")
    return h.hexdigest()


@dataclass
class StageSpec:
    name: str
    inputs: list[Path]
    outputs: list[Path]
    params: dict
    action: Callable[[], object]


@dataclass
class RunResult:
    executed: list[str]
    skipped: list[str]
    report: Path
    report_sha256: str


def run_pipeline(cfg: RunConfig) -> RunResult:
    """Execute every stage whose inputs or parameters changed since the last run."""
    out = cfg.path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / ".state.json"
    state = json.loads(state_path.read_text()) if state_path.exists() else {}
    P = {
        "catalog": out / "catalog",
        "graph": out / "graph",
        "tiers": out / "journal_tiers.csv",
        "pairs": out / "pairs.csv",
        "funnel": out / "funnel.csv",
        "features": out / "features.csv",
        "outliers": out / "outliers.csv",
        "sweep": out / "sensitivity.csv",
        "stats": out / "stats" / "stats.csv",
        "forensics": out / "forensics",
        "report": out / "report.md",
    }
    dcfg = detect.DetectConfig(cfg.sigma, cfg.contamination, cfg.seed, cfg.n_estimators,
                               cfg.baseline, cfg.weight_if_inputs)

    def _stats():
        P["stats"].parent.mkdir(parents=True, exist_ok=True)
        run_stats(P["features"], P["pairs"], P["stats"], cfg.n_boot, cfg.n_perm, cfg.seed)

    stages = [
        StageSpec("ingest", [cfg.path(cfg.works), cfg.path(cfg.subjects)], [P["catalog"]],
                  {"window": list(cfg.window), "citable_only": cfg.citable_only, "sample_digit": cfg.sample_digit},
                  lambda: run_ingest(cfg.path(cfg.works), cfg.path(cfg.subjects), P["catalog"], cfg.window,
                                     cfg.citable_only, cfg.sample_digit)),
        StageSpec("graph", [P["catalog"]], [P["graph"]], {},
                  lambda: run_graph(P["catalog"], P["graph"])),
        StageSpec("rank", [P["graph"]], [P["tiers"]], {"damping": cfg.damping},
                  lambda: run_rank(P["graph"], P["tiers"], cfg.damping)),
        StageSpec("match", [P["catalog"], P["tiers"]], [P["pairs"], P["funnel"]],
                  {"tier_share": cfg.tier_share, "min_papers": cfg.min_papers, "bucket_width": cfg.bucket_width},
                  lambda: run_match(P["catalog"], P["tiers"], P["pairs"], cfg.tier_share, cfg.min_papers,
                                    cfg.bucket_width)),
        StageSpec("features", [P["catalog"], P["graph"], P["pairs"]], [P["features"]],
                  {"burst_direction": cfg.burst_direction},
                  lambda: run_features(P["graph"], P["pairs"], P["features"], P["catalog"], cfg.burst_direction)),
        StageSpec("detect", [P["features"], P["pairs"], P["graph"]], [P["outliers"], P["sweep"]],
                  asdict(dcfg),
                  lambda: run_detect(P["features"], P["pairs"], P["outliers"], dcfg, P["graph"])),
        StageSpec("stats", [P["features"], P["pairs"]], [P["stats"].parent],
                  {"n_boot": cfg.n_boot, "n_perm": cfg.n_perm, "seed": cfg.seed}, _stats),
        StageSpec("forensics", [P["graph"], P["outliers"], P["features"], P["pairs"], P["catalog"]],
                  [P["forensics"]], {"baseline": cfg.baseline, "seed": cfg.seed},
                  lambda: run_forensics(P["graph"], P["outliers"], P["forensics"], P["features"], P["pairs"],
                                        P["catalog"], cfg.baseline, cfg.seed)),
        StageSpec("report", [P["funnel"], P["features"], P["pairs"], P["outliers"], P["sweep"], P["stats"].parent,
                             P["forensics"]], [P["report"]], {},
                  lambda: write_report(out, P)),
    ]

    executed, skipped = [], []
    for st in stages:
        key = _sha(json.dumps({
            "version": STAGE_VERSIONS[st.name],
            "params": st.params,
            "inputs": _hash_paths(st.inputs),
        }, sort_keys=True).encode())
        if state.get(st.name) == key and all(p.exists() for p in st.outputs):
            skipped.append(st.name)
            log.info("stage %s unchanged; skipped", st.name)
            continue
        log.info("running stage %s", st.name)
        try:
            st.action()
        except Exception as exc:  # noqa: BLE001 - any stage failure aborts with its name
            state.pop(st.name, None)
            _write_json(state_path, state)
            raise StageError(st.name, exc) from exc
        state[st.name] = key
        _write_json(state_path, state)
        executed.append(st.name)

    _write_bundle_manifest(out, cfg, stages)
    report_sha = _sha(P["report"].read_bytes())
    return RunResult(executed, skipped, P["report"], report_sha)


def _write_bundle_manifest(out: Path, cfg: RunConfig, stages: list[StageSpec]) -> None:
    files = {}
    for st in stages:
        for p in st.outputs:
            paths = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
            for f in paths:
                files[str(f.relative_to(out))] = {
                    "stage": st.name,
                    "stage_version": STAGE_VERSIONS[st.name],
                    "sha256": _sha(f.read_bytes()),
                }
    _write_json(out / "manifest.json", {
        "tool": "citeforge",
        "version": __version__,
        "config": cfg.params(),
        "config_sha256": cfg.config_hash(),
        "stage_versions": STAGE_VERSIONS,
        "files": files,
    })


# ----------------------------------------------------------------------- report

def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_report(out: Path, P: dict) -> Path:
    """Markdown summary built only from the stage outputs on disk."""
    lines = ["# citeforge report", ""]

    lines += ["## Cohort funnel", "", "| Subject | Authors | Case | Control | Other | Pairs |",
              "|---|---:|---:|---:|---:|---:|"]
    for r in _read_csv(P["funnel"]):
        lines.append(f"| {_subject_name(r['subject'])} | {r['authors']} | {r['case']} | {r['control']} "
                     f"| {r['other']} | {r['pairs']} |")

    vectors = features.read_features(P["features"])
    pairs = cohort.read_pairs(P["pairs"])
    lines += ["", "## Case/Control metric averages", "",
              stats.render_fold_table(stats.fold_change_table(vectors, pairs))]

    srows = [r for r in _read_csv(P["stats"]) if r["subject"] == "all"]
    if srows:
        lines += ["", "## Paired tests (all subjects)", "",
                  "| Metric | n | W | p | p (BH) | Cliff's delta | Cohen's d | 95% CI |",
                  "|---|---:|---:|---:|---:|---:|---:|---|"]
        for r in srows:
            ci = f"[{r['ci_low']}, {r['ci_high']}]" if r["ci_low"] else ""
            lines.append(f"| {r['metric']} | {r['n_pairs']} | {r['statistic']} | {r['p_value']} "
                         f"| {r['p_adjusted']} | {r['cliffs_delta']} | {r['cohens_d']} | {ci} |")

    flags = detect.read_outliers(P["outliers"])
    if flags:
        n_flag = sum(f.flagged for f in flags)
        n_case = sum(f.flagged and f.tier == "Case" for f in flags)
        lines += ["", "## Hybrid detection", "",
                  f"Cohesion threshold {flags[0].threshold_sigma:g} sigma: {n_flag} of {len(flags)} matched authors "
                  f"flagged, {n_case} of them Case."]

    lines += ["", "## Detection sensitivity", "",
              "| Method | Threshold | Outliers | Case purity | Connected |", "|---|---:|---:|---:|---:|"]
    for r in _read_csv(P["sweep"]):
        lines.append(f"| {r['method']} | {r['threshold_sigma']} | {r['outliers']} | {r['case_purity']} "
                     f"| {r['connected_share']} |")

    fdir = P["forensics"]
    audit = _read_csv(fdir / "audit.csv")
    lines += ["", "## Top outliers", "",
              "| Rank | Author | Subject | S | Works | Years | Out | In | Recip | Primary journal | Flags |",
              "|---:|---|---|---:|---:|---|---:|---:|---:|---|---|"]
    for r in audit[:20]:
        pj = f"{r['primary_journal']} ({r['primary_journal_works']})" if r["primary_journal"] else ""
        lines.append(f"| {r['rank']} | {r['author']} | {_subject_name(r['subject'])} | {r['score']} "
                     f"| {r['works']} | {r['years']} | {r['out']} | {r['in']} | {r['recip']} | {pj} "
                     f"| {r['flags']} |")

    synd_path = fdir / "syndicates.json"
    synd = json.loads(synd_path.read_text()) if synd_path.exists() else []
    lines += ["", "## Syndicates", ""]
    if not synd:
        lines.append("No mutual-citation components among flagged authors.")
    for s in synd:
        peak = sorted(s["timeline"].items(), key=lambda kv: -kv[1])[:2]
        lines.append(f"- #{s['id']}: {s['size']} members, hub {s['hub']}, density {s['density']:.3f}, "
                     f"peak years {', '.join(y for y, _ in peak)}")

    mix = _read_csv(fdir / "mixing.csv")
    if mix:
        lines += ["", "## Tier mixing", "", "| From | To | Probability |", "|---|---|---:|"]
        for r in mix:
            if r["col_tier"]:
                lines.append(f"| {r['row_tier']} | {r['col_tier']} | {r['probability']} |")
            else:
                lines.append(f"| {r['row_tier']} | | {r['probability']} |")
    lines.append("")
    P["report"].write_text("\n".join(lines))
    return P["report"]

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from citeforge import cohort, detect, features, graph, ingest, journal_rank, synth
from citeforge.graph import AuthorCitationGraph, AuthorEdge
from citeforge.ingest import Catalog, WorkRecord


def make_graph(weights: dict[tuple[str, str], float], nodes=(), year: int = 2021) -> AuthorCitationGraph:
    edges = {
        (a, b): AuthorEdge(a, b, float(w), a == b, {year: float(w)})
        for (a, b), w in weights.items()
        if w > 0
    }
    node_set = set(nodes)
    for a, b in weights:
        node_set.update((a, b))
    return AuthorCitationGraph(edges=edges, node_set=node_set)


def make_catalog(works: list[dict], subjects: dict[str, int] | None = None, window=(2020, 2024)) -> Catalog:
    recs = {}
    for w in works:
        rec = WorkRecord(
            work_id=w["id"],
            year=w.get("year", 2021),
            issn=w.get("issn"),
            authors=tuple(w.get("authors", ())),
            refs=tuple(w.get("refs", ())),
            pages=w.get("pages"),
        )
        recs[rec.work_id] = rec
    author_index, journal_index = ingest.build_indexes(recs)
    return Catalog(recs, author_index, journal_index, dict(subjects or {}), window)


@dataclass
class PlantedRun:
    scenario: synth.Scenario
    catalog: Catalog
    graph: AuthorCitationGraph
    pairs: list
    vectors: list
    flags: list
    elapsed: float


def run_planted(multiplier: float = 10.0, seed: int = 42, det_seed: int = 42, tmp: Path | None = None) -> PlantedRun:
    """Synthetic scenario through ingest, rank, match, features and detection."""
    t0 = time.perf_counter()
    cfg = synth.ScenarioConfig(
        n_authors_per_tier=1000,
        syndicates=[synth.SyndicateSpec(20, "hub_and_spoke", multiplier, (2021, 2024))],
        seed=seed,
    )
    sc = synth.generate(cfg)
    if tmp is not None:
        synth.write_scenario(sc, tmp)
        cat = ingest.load_records(tmp / "works.jsonl", (2020, 2024), ingest.load_subjects(tmp / "subjects.csv"))
    else:
        recs = {w.work_id: w for w in sc.works}
        ai, ji = ingest.build_indexes(recs)
        cat = Catalog(recs, ai, ji, dict(sc.subjects))
    rows = journal_rank.rank_subject(graph.build_journal_graph(cat, 1))
    tiers = {r.issn: r.tier for r in rows}
    pairs, _ = cohort.select_and_match(cohort.build_portfolios(cat, tiers))
    g = graph.build_author_graph(cat, cat.authors)
    targets = sorted({(p.case_author, p.subject) for p in pairs} | {(p.control_author, p.subject) for p in pairs})
    vectors = features.compute_features(cat, g, targets, graph.coauthor_sets(cat))
    flags = detect.detect(vectors, pairs, detect.DetectConfig(seed=det_seed))
    return PlantedRun(sc, cat, g, pairs, vectors, flags, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def planted(tmp_path_factory) -> PlantedRun:
    return run_planted(10.0, tmp=tmp_path_factory.mktemp("planted"))


@pytest.fixture(scope="session")
def null_run() -> PlantedRun:
    return run_planted(1.0)


# ---- acceptance reporting: one PASS/FAIL line per criterion ----

_ACCEPTANCE: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[label] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{status}  {label}")

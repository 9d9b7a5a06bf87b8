"""Journal- and author-level citation graphs.

Author edges carry fractional weights: every (citing author, cited author)
pair of one work-level reference receives ``1 / (n_citing * n_cited)``, so
the pairs of a single reference sum to one.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .ingest import Catalog

log = logging.getLogger(__name__)


def fractional_weight(n_citing_authors: int, n_cited_authors: int) -> float:
    if n_citing_authors < 1 or n_cited_authors < 1:
        raise ValueError(
            f"author counts must be positive, got ({n_citing_authors}, {n_cited_authors})"
        )
    return 1.0 / (n_citing_authors * n_cited_authors)


@dataclass
class JournalGraph:
    subject: int
    nodes: list[str]
    edge_weights: dict[tuple[str, str], float]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["citing", "cited", "count"])
            for (src, dst) in sorted(self.edge_weights):
                writer.writerow([src, dst, _fmt(self.edge_weights[(src, dst)])])
            # isolated journals still need a score
            linked = {j for pair in self.edge_weights for j in pair}
            for node in self.nodes:
                if node not in linked:
                    writer.writerow([node, "", ""])

    @classmethod
    def from_csv(cls, path: str | Path, subject: int) -> "JournalGraph":
        nodes: set[str] = set()
        edges: dict[tuple[str, str], float] = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                nodes.add(row["citing"])
                if row["cited"]:
                    nodes.add(row["cited"])
                    edges[(row["citing"], row["cited"])] = float(row["count"])
        return cls(subject=subject, nodes=sorted(nodes), edge_weights=edges)


def build_journal_graph(catalog: Catalog, subject: int) -> JournalGraph:
    """Count journal-to-journal references inside one subject, self-citations dropped."""
    if subject not in range(1, 6):
        raise ValueError(f"subject must be in 1..5, got {subject}")
    smap = catalog.subject_map
    nodes = sorted(i for i in catalog.journal_index if smap.get(i) == subject)
    counts: dict[tuple[str, str], float] = defaultdict(float)
    for wid in sorted(catalog.works):
        w = catalog.works[wid]
        if w.issn is None or smap.get(w.issn) != subject:
            continue
        for ref in w.refs:
            v = catalog.works.get(ref)
            if v is None or v.issn is None or v.issn == w.issn:
                continue
            if smap.get(v.issn) == subject:
                counts[(w.issn, v.issn)] += 1.0
    if len(nodes) < 2:
        log.warning("subject %d has %d journal(s); journal graph is degenerate", subject, len(nodes))
    return JournalGraph(subject=subject, nodes=nodes, edge_weights=dict(counts))


@dataclass
class AuthorEdge:
    citing: str
    cited: str
    weight: float
    is_self: bool
    per_year_weight: dict[int, float]


@dataclass
class AuthorCitationGraph:
    """Directed weighted author graph.

    Self-loops live in ``edges`` and ``self_weight`` only; adjacency maps and
    strengths are over non-self edges.
    """

    edges: dict[tuple[str, str], AuthorEdge]
    node_set: set[str]
    out_adj: dict[str, dict[str, float]] = field(default_factory=dict)
    in_adj: dict[str, dict[str, float]] = field(default_factory=dict)
    self_weight: dict[str, float] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.out_adj and self.edges:
            self._index()

    def _index(self) -> None:
        out_adj: dict[str, dict[str, float]] = defaultdict(dict)
        in_adj: dict[str, dict[str, float]] = defaultdict(dict)
        self_weight: dict[str, float] = {}
        for (a, b), e in self.edges.items():
            if e.is_self:
                self_weight[a] = e.weight
            else:
                out_adj[a][b] = e.weight
                in_adj[b][a] = e.weight
        self.out_adj = dict(out_adj)
        self.in_adj = dict(in_adj)
        self.self_weight = self_weight

    def out_strength(self, a: str) -> float:
        return sum(self.out_adj.get(a, {}).values())

    def in_strength(self, a: str) -> float:
        return sum(self.in_adj.get(a, {}).values())

    def weight(self, a: str, b: str) -> float:
        e = self.edges.get((a, b))
        return e.weight if e else 0.0

    def nodes(self) -> list[str]:
        return sorted(self.node_set)

    def subgraph(self, members: Iterable[str]) -> "AuthorCitationGraph":
        keep = set(members)
        edges = {k: e for k, e in self.edges.items() if k[0] in keep and k[1] in keep}
        return AuthorCitationGraph(edges=edges, node_set=keep & self.node_set)

    def to_csv(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "author_edges.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["citing", "cited", "weight", "is_self", "year_json"])
            for key in sorted(self.edges):
                e = self.edges[key]
                years = {str(y): e.per_year_weight[y] for y in sorted(e.per_year_weight)}
                writer.writerow([e.citing, e.cited, _fmt(e.weight), int(e.is_self),
                                 json.dumps(years, separators=(",", ":"))])
        (out / "authors.txt").write_text("".join(f"{a}\n" for a in sorted(self.node_set)))

    @classmethod
    def from_csv(cls, graph_dir: str | Path) -> "AuthorCitationGraph":
        graph_dir = Path(graph_dir)
        edges: dict[tuple[str, str], AuthorEdge] = {}
        with (graph_dir / "author_edges.csv").open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                years = {int(y): float(w) for y, w in json.loads(row["year_json"]).items()}
                a, b = row["citing"], row["cited"]
                edges[(a, b)] = AuthorEdge(a, b, float(row["weight"]), row["is_self"] == "1", years)
        nodes_file = graph_dir / "authors.txt"
        nodes = set(nodes_file.read_text().split()) if nodes_file.exists() else set()
        for a, b in edges:
            nodes.update((a, b))
        return cls(edges=edges, node_set=nodes)


def _fmt(x: float) -> str:
    return repr(float(x))


def build_author_graph(catalog: Catalog, authors: Iterable[str]) -> AuthorCitationGraph:
    """Accumulate fractional author-pair weights over every in-catalog reference.

    Edges with neither endpoint in ``authors`` are dropped; weights are
    bucketed by the citing work's year.
    """
    study = set(authors)
    if not study:
        raise ValueError("author set is empty")
    acc: dict[tuple[str, str, int], float] = defaultdict(float)
    dangling = 0
    works = catalog.works
    for wid in sorted(works):
        u = works[wid]
        if not u.authors:
            continue
        u_in = [a in study for a in u.authors]
        any_u = any(u_in)
        for ref in u.refs:
            v = works.get(ref)
            if v is None:
                dangling += 1
                continue
            if not v.authors:
                continue
            if not any_u and study.isdisjoint(v.authors):
                continue
            w = 1.0 / (len(u.authors) * len(v.authors))
            for a, a_in in zip(u.authors, u_in):
                for b in v.authors:
                    if a_in or b in study:
                        acc[(a, b, u.year)] += w

    per_edge: dict[tuple[str, str], dict[int, float]] = defaultdict(dict)
    for (a, b, year), w in acc.items():
        per_edge[(a, b)][year] = w
    edges = {}
    nodes = set(study)
    for (a, b), years in per_edge.items():
        years = dict(sorted(years.items()))
        edges[(a, b)] = AuthorEdge(a, b, sum(years.values()), a == b, years)
        nodes.update((a, b))
    if dangling:
        log.info("%d references point outside the catalog and were dropped", dangling)
    return AuthorCitationGraph(edges=dict(sorted(edges.items())), node_set=nodes,
                               stats={"dangling_refs": dangling})


def coauthor_sets(catalog: Catalog) -> dict[str, set[str]]:
    """Map every author to the authors they shared at least one catalog work with."""
    co: dict[str, set[str]] = defaultdict(set)
    for w in catalog.works.values():
        for a in w.authors:
            co[a].update(w.authors)
    for a, s in co.items():
        s.discard(a)
    return dict(co)

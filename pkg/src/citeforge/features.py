"""The 14 per-author behavioural features.

Weights ``w_ij`` are the fractional author-to-author citation weights of
:mod:`citeforge.graph`. Apart from the self-citation rate, every feature is
computed over non-self edges.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .graph import AuthorCitationGraph
from .ingest import Catalog

log = logging.getLogger(__name__)

EPS = 1e-9

# column order of the feature table
FEATURE_NAMES = (
    "self_citation_rate",
    "coauthor_citation_rate",
    "citation_balance",
    "eigenvector_centrality",
    "journal_endogamy",
    "citation_entropy",
    "hhi_in",
    "reciprocity_rate",
    "hhi_out",
    "clustering_coeff",
    "triangles_norm",
    "kcore_number",
    "clique_strength",
    "burst_intensity",
)


@dataclass
class FeatureVector:
    author: str
    subject: int
    self_citation_rate: float = 0.0
    coauthor_citation_rate: float = 0.0
    citation_balance: float = 0.0
    eigenvector_centrality: float = 0.0
    journal_endogamy: float = 0.0
    citation_entropy: float = 0.0
    hhi_in: float = 0.0
    reciprocity_rate: float = 0.0
    hhi_out: float = 0.0
    clustering_coeff: float = 0.0
    triangles_norm: float = 0.0
    kcore_number: int = 0
    clique_strength: float = 0.0
    burst_intensity: float | None = None
    # features whose denominator was zero and that were set to 0 by convention
    missing: frozenset[str] = field(default_factory=frozenset)

    def value(self, name: str) -> float | None:
        if name in self.missing:
            return None
        return getattr(self, name)

    def as_row(self) -> list:
        return [getattr(self, n) for n in FEATURE_NAMES]


def rate_features(
    g: AuthorCitationGraph, coauthors: set[str], a: str
) -> tuple[float, float, float, float]:
    """(self_citation_rate, coauthor_citation_rate, citation_balance, reciprocity_rate)."""
    out = g.out_adj.get(a, {})
    inn = g.in_adj.get(a, {})
    w_self = g.self_weight.get(a, 0.0)
    out_s = sum(out.values())
    in_s = sum(inn.values())
    total = w_self + out_s
    self_rate = w_self / total if total > 0 else 0.0
    co = sum(w for b, w in out.items() if b in coauthors)
    co_rate = co / out_s if out_s > 0 else 0.0
    balance = (out_s - in_s) / (out_s + in_s + EPS)
    recip = sum(1 for b in out if b in inn) / len(out) if out else 0.0
    return self_rate, co_rate, balance, recip


def _hhi(weights: Iterable[float]) -> tuple[float, float]:
    """(HHI, Shannon entropy) of the shares implied by ``weights``."""
    ws = [w for w in weights if w > 0]
    total = sum(ws)
    if total <= 0:
        return 0.0, 0.0
    shares = [w / total for w in ws]
    return sum(s * s for s in shares), -sum(s * math.log(s) for s in shares)


def concentration_features(g: AuthorCitationGraph, a: str) -> tuple[float, float, float]:
    """(hhi_out, hhi_in, citation_entropy); entropy is over incoming sources."""
    hhi_out, _ = _hhi(g.out_adj.get(a, {}).values())
    hhi_in, entropy = _hhi(g.in_adj.get(a, {}).values())
    return hhi_out, hhi_in, entropy


class UndirectedProjection:
    """Presence-only undirected view: i ~ j iff w_ij > 0 or w_ji > 0, no self-loops."""

    def __init__(self, g: AuthorCitationGraph):
        nbrs: dict[str, set[str]] = {a: set() for a in g.node_set}
        for a, out in g.out_adj.items():
            for b, w in out.items():
                if w > 0 and a != b:
                    nbrs[a].add(b)
                    nbrs[b].add(a)
        self.nbrs = nbrs
        self._cores: dict[str, int] | None = None

    def triangles(self, a: str) -> int:
        """Links among a's neighbours, i.e. triangles through a."""
        na = self.nbrs.get(a, set())
        return sum(len(na & self.nbrs[b]) for b in na) // 2

    def clustering(self, a: str) -> float:
        d = len(self.nbrs.get(a, ()))
        if d < 2:
            return 0.0
        return 2.0 * self.triangles(a) / (d * (d - 1))

    @property
    def cores(self) -> dict[str, int]:
        if self._cores is None:
            self._cores = core_numbers(self.nbrs)
        return self._cores


def core_numbers(nbrs: dict[str, set[str]]) -> dict[str, int]:
    """k-core number of every node (Batagelj-Zaversnik bucket peeling)."""
    degree = {v: len(n) for v, n in nbrs.items()}
    if not degree:
        return {}
    max_deg = max(degree.values())
    buckets: list[set[str]] = [set() for _ in range(max_deg + 1)]
    for v, d in degree.items():
        buckets[d].add(v)
    core: dict[str, int] = {}
    k = 0
    remaining = len(degree)
    while remaining:
        while k <= max_deg and not buckets[k]:
            k += 1
        # degrees only ever drop to the current level, never below it
        v = buckets[k].pop()
        core[v] = k
        remaining -= 1
        for u in nbrs[v]:
            if u in core:
                continue
            du = degree[u]
            if du > k:
                buckets[du].discard(u)
                degree[u] = du - 1
                buckets[du - 1].add(u)
    return core


def structure_features(
    proj: UndirectedProjection, g: AuthorCitationGraph, a: str, coauthor_rate: float
) -> tuple[float, float, int, float]:
    """(clustering_coeff, triangles_norm, kcore_number, clique_strength)."""
    clustering = proj.clustering(a)
    activity = g.out_strength(a) + g.in_strength(a) + 1.0
    tri_norm = proj.triangles(a) / activity
    kcore = proj.cores.get(a, 0)
    return clustering, tri_norm, kcore, clustering * coauthor_rate


def _is_acyclic(nodes: list[str], out_adj: dict[str, dict[str, float]]) -> bool:
    indeg = {v: 0 for v in nodes}
    for a, out in out_adj.items():
        for b in out:
            indeg[b] += 1
    queue = deque(v for v, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        v = queue.popleft()
        seen += 1
        for b in out_adj.get(v, ()):
            indeg[b] -= 1
            if indeg[b] == 0:
                queue.append(b)
    return seen == len(nodes)


def centrality(
    g: AuthorCitationGraph, tol: float = 1e-10, max_iter: int = 1000
) -> tuple[dict[str, float], bool]:
    """Leading-eigenvector prestige; score flows to the cited author.

    Returns (scores normalised to unit L1, converged). For a cyclic graph the
    iteration is ``x <- (A^T x + c x) / 2c`` with ``c = |A^T x|_1``, whose fixed
    points are eigenvectors of ``A^T`` for eigenvalue ``c``; the shift removes
    periodic oscillation. An acyclic graph has nilpotent ``A^T``: the last
    nonzero plain iterate is then returned, which lies in its null space.
    """
    nodes = sorted(g.node_set)
    if not nodes:
        raise ValueError("graph has no nodes")
    idx = {a: i for i, a in enumerate(nodes)}
    rows, cols, vals = [], [], []
    for a, out in g.out_adj.items():
        for b, w in out.items():
            # row = cited author, so (A^T x)_b = sum_a w_ab x_a
            rows.append(idx[b])
            cols.append(idx[a])
            vals.append(w)
    n = len(nodes)
    if not vals:
        log.warning("citation graph has no non-self edges; centrality is all zero")
        return {a: 0.0 for a in nodes}, True
    at = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    x = np.full(n, 1.0 / n)

    if _is_acyclic(nodes, g.out_adj):
        while True:
            y = at @ x
            s = y.sum()
            if s <= 0:
                break
            x = y / s
        return dict(zip(nodes, x.tolist())), True

    converged = False
    for _ in range(max_iter):
        y = at @ x
        c = y.sum()
        x_new = (y + c * x) / (2.0 * c)
        delta = np.abs(x_new - x).sum()
        x = x_new
        if delta < tol:
            converged = True
            break
    if not converged:
        log.warning("eigenvector centrality did not converge in %d iterations", max_iter)
    # authors nobody cites are exactly 0 in any eigenvector with c > 0; the shift only decays them
    uncited = np.asarray(at.sum(axis=1)).ravel() == 0
    if uncited.any() and not uncited.all():
        x[uncited] = 0.0
        x /= x.sum()
    return dict(zip(nodes, x.tolist())), converged


def endogamy(catalog: Catalog, a: str, subject: int | None = None) -> tuple[float, bool]:
    """Share of resolvable references whose cited work shares the citing venue.

    Returns (value, defined); an author with no resolvable reference gets (0, False).
    """
    same = total = 0
    for wid in catalog.author_index.get(a, ()):
        w = catalog.works[wid]
        if w.issn is None:
            continue
        if subject is not None and catalog.subject_map.get(w.issn) != subject:
            continue
        for ref in w.refs:
            v = catalog.works.get(ref)
            if v is None or v.issn is None:
                continue
            total += 1
            same += v.issn == w.issn
    if total == 0:
        return 0.0, False
    return same / total, True


def burst(g: AuthorCitationGraph, a: str, direction: str = "out") -> float | None:
    """Largest single-peer weight over (incoming strength + 1).

    ``direction="out"`` takes the largest weight the author gives to one peer;
    ``"in"`` the largest weight received from one peer. Absent (None) when the
    author has no non-self edge in that direction.
    """
    if direction not in ("out", "in"):
        raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")
    peers = g.out_adj.get(a) if direction == "out" else g.in_adj.get(a)
    if not peers:
        return None
    return max(peers.values()) / (g.in_strength(a) + 1.0)


def compute_features(
    catalog: Catalog,
    g: AuthorCitationGraph,
    targets: Iterable[tuple[str, int]],
    coauthors: dict[str, set[str]],
    burst_direction: str = "out",
) -> list[FeatureVector]:
    """Feature vectors for each (author, subject) target, in input order."""
    targets = list(targets)
    proj = UndirectedProjection(g)
    eig, _ = centrality(g)
    per_author: dict[str, dict] = {}
    out: list[FeatureVector] = []
    for author, subject in targets:
        if author not in per_author:
            co = coauthors.get(author, set())
            self_rate, co_rate, balance, recip = rate_features(g, co, author)
            hhi_out, hhi_in, entropy = concentration_features(g, author)
            clustering, tri, kcore, clique = structure_features(proj, g, author, co_rate)
            has_out = bool(g.out_adj.get(author))
            has_in = bool(g.in_adj.get(author))
            missing = set()
            if not has_out:
                missing.update(("coauthor_citation_rate", "reciprocity_rate", "hhi_out",
                                "clique_strength"))
                if not g.self_weight.get(author):
                    missing.add("self_citation_rate")
            if not has_in:
                missing.update(("hhi_in", "citation_entropy"))
            per_author[author] = dict(
                self_citation_rate=self_rate,
                coauthor_citation_rate=co_rate,
                citation_balance=balance,
                eigenvector_centrality=eig.get(author, 0.0),
                citation_entropy=entropy,
                hhi_in=hhi_in,
                reciprocity_rate=recip,
                hhi_out=hhi_out,
                clustering_coeff=clustering,
                triangles_norm=tri,
                kcore_number=kcore,
                clique_strength=clique,
                burst_intensity=burst(g, author, burst_direction),
                missing=frozenset(missing),
            )
        vals = dict(per_author[author])
        endo, defined = endogamy(catalog, author, subject)
        vals["journal_endogamy"] = endo
        if not defined:
            vals["missing"] = vals["missing"] | {"journal_endogamy"}
        out.append(FeatureVector(author=author, subject=subject, **vals))
    return out


FEATURE_COLUMNS = ["author", "subject", *FEATURE_NAMES, "missing"]


def write_features(vectors: list[FeatureVector], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_COLUMNS)
        for fv in sorted(vectors, key=lambda v: (v.subject, v.author)):
            row = [fv.author, fv.subject]
            for name in FEATURE_NAMES:
                v = getattr(fv, name)
                row.append("" if v is None else repr(v))
            row.append(";".join(sorted(fv.missing)))
            writer.writerow(row)


def read_features(path: str | Path) -> list[FeatureVector]:
    types = {f.name: f.type for f in fields(FeatureVector)}
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw: dict = {"author": row["author"], "subject": int(row["subject"])}
            for name in FEATURE_NAMES:
                raw = row[name]
                if raw == "":
                    kw[name] = None
                elif types[name] == "int":
                    kw[name] = int(raw)
                else:
                    kw[name] = float(raw)
            kw["missing"] = frozenset(m for m in row.get("missing", "").split(";") if m)
            out.append(FeatureVector(**kw))
    return out

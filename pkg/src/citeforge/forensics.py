"""Characterisation of flagged outliers: syndicates, roles, segregation and audits."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detect import COHESION_WEIGHTS, IF_FEATURES, OutlierFlag, baseline_stats, mutual_components
from .features import FeatureVector
from .graph import AuthorCitationGraph, AuthorEdge
from .ingest import Catalog

log = logging.getLogger(__name__)

HUB, GIVER, RECEIVER = "Hub", "NetGiver", "NetReceiver"


# ----------------------------------------------------------------- betweenness

def betweenness(adj: dict[str, Iterable[str]]) -> dict[str, float]:
    """Unnormalised shortest-path betweenness of a directed graph, unit edge lengths.

    ``adj`` maps each node to its successors. Brandes' accumulation, one BFS per source.
    """
    nodes = set(adj)
    for succ in adj.values():
        nodes.update(succ)
    succs = {v: sorted(set(adj.get(v, ())) - {v}) for v in nodes}
    bc = dict.fromkeys(nodes, 0.0)
    for s in sorted(nodes):
        stack = []
        preds: dict[str, list[str]] = defaultdict(list)
        sigma = dict.fromkeys(nodes, 0)
        dist = dict.fromkeys(nodes, -1)
        sigma[s], dist[s] = 1, 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in succs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(nodes, 0.0)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


# ------------------------------------------------------------------ syndicates

@dataclass
class Syndicate:
    members: list[str]
    internal_edges: list[AuthorEdge]
    density: float
    roles: dict[str, str] = field(default_factory=dict)
    betweenness: dict[str, float] = field(default_factory=dict)

    @property
    def hub(self) -> str | None:
        return next((m for m, r in self.roles.items() if r == HUB), None)


def syndicate_components(outliers: Iterable[str], g: AuthorCitationGraph) -> list[Syndicate]:
    """Components (size >= 2) of flagged authors joined by mutual citation links."""
    out = []
    for comp in mutual_components(set(outliers), g.out_adj):
        if len(comp) < 2:
            continue
        members = set(comp)
        edges = [e for (a, b), e in sorted(g.edges.items())
                 if a in members and b in members and not e.is_self]
        n = len(comp)
        synd = Syndicate(members=comp, internal_edges=edges, density=len(edges) / (n * (n - 1)))
        assign_roles(synd)
        out.append(synd)
    out.sort(key=lambda s: (-len(s.members), s.members[0]))
    return out


def assign_roles(s: Syndicate) -> dict[str, str]:
    """Hub = max internal betweenness (ties -> smaller id); others by net internal flow."""
    if len(s.members) < 2:
        raise ValueError("a syndicate has at least two members")
    adj: dict[str, list[str]] = {m: [] for m in s.members}
    out_s: dict[str, float] = defaultdict(float)
    in_s: dict[str, float] = defaultdict(float)
    for e in s.internal_edges:
        if e.is_self:
            continue
        adj[e.citing].append(e.cited)
        out_s[e.citing] += e.weight
        in_s[e.cited] += e.weight
    bc = betweenness(adj)
    hub = min(s.members, key=lambda m: (-bc.get(m, 0.0), m))
    roles = {}
    for m in s.members:
        if m == hub:
            roles[m] = HUB
        elif out_s[m] > in_s[m]:
            roles[m] = GIVER
        else:
            roles[m] = RECEIVER
    s.roles = roles
    s.betweenness = {m: bc.get(m, 0.0) for m in s.members}
    return roles


def burst_timeline(s: Syndicate, window: tuple[int, int]) -> dict[int, float]:
    """Internal citation weight by citing year, one entry per window year."""
    out = {y: 0.0 for y in range(window[0], window[1] + 1)}
    for e in s.internal_edges:
        for y, w in e.per_year_weight.items():
            out[y] = out.get(y, 0.0) + w
    return out


# ------------------------------------------------------------------ segregation

@dataclass
class MixingMatrix:
    tiers: tuple[str, ...]
    probs: np.ndarray
    assortativity_r: float
    diagonal_avg: float
    counts: np.ndarray
    excluded_nodes: int = 0
    undefined_rows: tuple[str, ...] = ()


def mixing_matrix(
    g: AuthorCitationGraph, tiers: dict[str, str], labels: Sequence[str] = ("Case", "Control")
) -> MixingMatrix:
    """Row-normalised tier-to-tier citation weight and categorical assortativity."""
    idx = {t: i for i, t in enumerate(labels)}
    k = len(labels)
    e = np.zeros((k, k))
    excluded = {v for v in g.node_set if tiers.get(v) not in idx}
    for a, out in g.out_adj.items():
        ta = idx.get(tiers.get(a))
        if ta is None:
            continue
        for b, w in out.items():
            tb = idx.get(tiers.get(b))
            if tb is not None:
                e[ta, tb] += w
    rows = e.sum(axis=1)
    undefined = tuple(labels[i] for i in range(k) if rows[i] == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = e / rows[:, None]
    for lab in undefined:
        log.warning("tier %s has no outgoing weight; its mixing row is undefined", lab)
    total = e.sum()
    if total > 0:
        f = e / total
        ab = float(f.sum(axis=1) @ f.sum(axis=0))
        r = (float(np.trace(f)) - ab) / (1.0 - ab) if ab < 1.0 else float("nan")
    else:
        r = float("nan")
    diag = float(np.nanmean(np.diag(probs))) if len(undefined) < k else float("nan")
    return MixingMatrix(tuple(labels), probs, r, diag, e, len(excluded), undefined)


# ---------------------------------------------------------------------- louvain

WeightedAdj = dict[str, dict[str, float]]


def undirected_weights(g: AuthorCitationGraph, nodes: Iterable[str] | None = None) -> WeightedAdj:
    """Symmetric weights w_ij + w_ji over non-self edges, optionally restricted to ``nodes``."""
    keep = set(g.node_set if nodes is None else nodes)
    adj: WeightedAdj = {v: {} for v in keep}
    for a, out in g.out_adj.items():
        if a not in keep:
            continue
        for b, w in out.items():
            if b in keep and b != a:
                adj[a][b] = adj[a].get(b, 0.0) + w
                adj[b][a] = adj[b].get(a, 0.0) + w
    return adj


def modularity(adj: WeightedAdj, communities: Sequence[Iterable]) -> float:
    """Newman-Girvan modularity of an undirected weighted graph.

    ``adj[i][i]`` holds a self-loop weight, counted twice in degrees.
    """
    comm_of = {}
    for ci, c in enumerate(communities):
        for v in c:
            comm_of[v] = ci
    two_m = 0.0
    internal = defaultdict(float)
    tot = defaultdict(float)
    for i, nb in adj.items():
        for j, w in nb.items():
            contrib = 2.0 * w if i == j else w
            two_m += contrib
            tot[comm_of[i]] += contrib
            if comm_of[i] == comm_of[j]:
                internal[comm_of[i]] += contrib
    if two_m == 0:
        return 0.0
    return sum(internal[c] / two_m - (tot[c] / two_m) ** 2 for c in tot)


@dataclass
class LouvainResult:
    communities: list[list[str]]
    modularity: float
    level_modularity: list[float]


def louvain(adj: WeightedAdj, seed: int = 42, max_levels: int = 50) -> LouvainResult:
    """Two-phase Louvain (local moving, then aggregation) with seeded sweep order."""
    nodes0 = sorted(adj)
    if len(nodes0) < 2:
        raise ValueError("Louvain needs at least two nodes")
    rng = np.random.Generator(np.random.Philox(seed))
    # members[v] = original nodes represented by super-node v
    members: dict = {v: [v] for v in nodes0}
    cur: dict = {v: dict(adj[v]) for v in nodes0}
    levels: list[float] = []
    for _ in range(max_levels):
        part, moved = _local_moving(cur, rng)
        groups: dict = defaultdict(list)
        for v in sorted(cur, key=str):
            groups[part[v]].append(v)
        comm_list = [sorted(vs, key=str) for _, vs in sorted(groups.items(), key=lambda kv: str(kv[0]))]
        new_members = {ci: sorted((o for v in vs for o in members[v]), key=str)
                       for ci, vs in enumerate(comm_list)}
        levels.append(modularity(adj, list(new_members.values())))
        if not moved:
            break
        label = {v: ci for ci, vs in enumerate(comm_list) for v in vs}
        agg: dict = {ci: {} for ci in range(len(comm_list))}
        for i, nb in cur.items():
            for j, w in nb.items():
                ci, cj = label[i], label[j]
                if ci == cj:
                    # each internal edge is visited from both ends; loops once
                    agg[ci][ci] = agg[ci].get(ci, 0.0) + (w if i == j else w / 2.0)
                else:
                    agg[ci][cj] = agg[ci].get(cj, 0.0) + w
        cur, members = agg, new_members
    communities = sorted((sorted(m) for m in members.values()), key=lambda c: c[0])
    return LouvainResult(communities, modularity(adj, communities), levels)


def _local_moving(adj: dict, rng: np.random.Generator) -> tuple[dict, bool]:
    nodes = sorted(adj, key=str)
    k = {v: sum(w for u, w in adj[v].items() if u != v) + 2.0 * adj[v].get(v, 0.0) for v in nodes}
    two_m = sum(k.values())
    comm = {v: v for v in nodes}
    tot = dict(k)
    if two_m == 0:
        return comm, False
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in rng.permutation(len(nodes)):
            v = nodes[int(i)]
            cv = comm[v]
            links: dict = defaultdict(float)
            for u, w in adj[v].items():
                if u != v:
                    links[comm[u]] += w
            tot[cv] -= k[v]
            best, best_gain = cv, links.get(cv, 0.0) - tot[cv] * k[v] / two_m
            for c in sorted(links, key=str):
                gain = links[c] - tot[c] * k[v] / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += k[v]
            if best != cv:
                comm[v] = best
                improved = moved_any = True
    return comm, moved_any


# ---------------------------------------------------------------------- audits

@dataclass
class AuditProfile:
    author: str
    subject: int
    works: int
    year_span: tuple[int, int] | None
    out_partners: int
    in_partners: int
    reciprocal_partners: int
    primary_journal: tuple[str, int] | None
    outlier_score: float
    flags: list[tuple[str, int]]
    syndicate: int | None = None


def feature_flags(z: dict[str, float]) -> list[tuple[str, int]]:
    """(feature, 5) when z > 5, (feature, 3) when 3 < z <= 5."""
    out = []
    for name, value in z.items():
        if value > 5:
            out.append((name, 5))
        elif value > 3:
            out.append((name, 3))
    return out


def rank_outliers(
    flags: Sequence[OutlierFlag],
    vectors: Sequence[FeatureVector],
    catalog: Catalog,
    g: AuthorCitationGraph,
    study_authors: set[str],
    baseline: dict[int, set[str]],
    syndicates: Sequence[Syndicate] = (),
) -> list[AuditProfile]:
    """Audit profiles of flagged authors, highest composite score first.

    Partner counts are restricted to ``study_authors`` and exclude self-loops.
    ``baseline`` maps subject -> authors whose feature statistics define z.
    """
    by_subject: dict[int, list[FeatureVector]] = defaultdict(list)
    for v in vectors:
        by_subject[v.subject].append(v)
    stats = {}
    for subject, vs in by_subject.items():
        base_rows = np.array([v.author in baseline.get(subject, ()) for v in vs])
        if base_rows.sum() >= 2:
            X = np.array([[float(getattr(v, c) or 0.0) for c in IF_FEATURES] for v in vs])
            stats[subject] = baseline_stats(X, base_rows, IF_FEATURES)
    table = {(v.author, v.subject): v for v in vectors}
    member_of = {m: i for i, s in enumerate(syndicates) for m in s.members}

    profiles = []
    for f in flags:
        if not f.flagged:
            continue
        a = f.author
        z = {}
        st = stats.get(f.subject)
        fv = table.get((a, f.subject))
        if st is not None and fv is not None:
            for name in COHESION_WEIGHTS:
                j = st.columns.index(name)
                z[name] = (float(getattr(fv, name)) - st.mean[j]) / st.sd[j] if st.sd[j] > 0 else 0.0
        wids = catalog.author_index.get(a, [])
        years = [catalog.works[w].year for w in wids]
        issns = Counter(catalog.works[w].issn for w in wids if catalog.works[w].issn)
        primary = min(issns.items(), key=lambda kv: (-kv[1], kv[0])) if issns else None
        outs = {b for b in g.out_adj.get(a, {}) if b in study_authors and b != a}
        ins = {b for b in g.in_adj.get(a, {}) if b in study_authors and b != a}
        profiles.append(AuditProfile(
            author=a,
            subject=f.subject,
            works=len(wids),
            year_span=(min(years), max(years)) if years else None,
            out_partners=len(outs),
            in_partners=len(ins),
            reciprocal_partners=len(outs & ins),
            primary_journal=primary,
            outlier_score=f.cohesion_s,
            flags=feature_flags(z),
            syndicate=member_of.get(a),
        ))
    profiles.sort(key=lambda p: (-p.outlier_score, p.author, p.subject))
    return profiles


# ----------------------------------------------------------------------- output

def write_syndicates(syndicates: Sequence[Syndicate], window: tuple[int, int], path: str | Path) -> None:
    doc = []
    for i, s in enumerate(syndicates):
        doc.append({
            "id": i,
            "size": len(s.members),
            "members": s.members,
            "hub": s.hub,
            "roles": s.roles,
            "betweenness": s.betweenness,
            "density": s.density,
            "directed_edges": len(s.internal_edges),
            "timeline": {str(y): w for y, w in burst_timeline(s, window).items()},
        })
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_network(s: Syndicate, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["citing", "cited", "weight", "citing_role", "cited_role"])
        for e in s.internal_edges:
            writer.writerow([e.citing, e.cited, repr(e.weight), s.roles[e.citing], s.roles[e.cited]])


def write_mixing(mm: MixingMatrix, lv: LouvainResult | None, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_tier", "col_tier", "probability", "weight"])
        for i, r in enumerate(mm.tiers):
            for j, c in enumerate(mm.tiers):
                p = mm.probs[i, j]
                writer.writerow([r, c, "" if p != p else f"{p:.6f}", f"{mm.counts[i, j]:.6f}"])
        writer.writerow(["assortativity_r", "", _num(mm.assortativity_r), ""])
        writer.writerow(["diagonal_avg", "", _num(mm.diagonal_avg), ""])
        if lv is not None:
            writer.writerow(["louvain_modularity", "", _num(lv.modularity), ""])
            writer.writerow(["louvain_communities", "", len(lv.communities), ""])


def write_audit(profiles: Sequence[AuditProfile], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "author", "subject", "score", "works", "years", "out", "in",
                         "recip", "primary_journal", "primary_journal_works", "flags", "syndicate"])
        for rank, p in enumerate(profiles, start=1):
            years = f"{p.year_span[0]}-{p.year_span[1]}" if p.year_span else ""
            pj, pn = p.primary_journal if p.primary_journal else ("", "")
            flags = ";".join(f"{n}>{lvl}sigma" for n, lvl in p.flags)
            writer.writerow([rank, p.author, p.subject, f"{p.outlier_score:.1f}", p.works, years,
                             p.out_partners, p.in_partners, p.reciprocal_partners, pj, pn, flags,
                             "" if p.syndicate is None else p.syndicate])


def _num(x: float) -> str:
    return "" if x != x else f"{x:.6f}"

import itertools
import math
import random

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from citeforge import forensics
from citeforge.detect import OutlierFlag
from citeforge.features import FeatureVector
from citeforge.forensics import Syndicate

from conftest import make_catalog, make_graph


def brute_betweenness(nodes, edges):
    """Enumerate every simple path between every ordered pair; keep the shortest ones."""
    out = {v: [] for v in nodes}
    for a, b in edges:
        out[a].append(b)
    bc = {v: 0.0 for v in nodes}
    for s, t in itertools.permutations(nodes, 2):
        paths = []

        def dfs(v, path):
            if v == t:
                paths.append(path)
                return
            for u in out[v]:
                if u not in path:
                    dfs(u, path + [u])

        dfs(s, [s])
        if not paths:
            continue
        short = min(len(p) for p in paths)
        best = [p for p in paths if len(p) == short]
        for p in best:
            for v in p[1:-1]:
                bc[v] += 1.0 / len(best)
    return bc


def test_betweenness_examples():
    assert forensics.betweenness({"a": ["b"], "b": ["c"], "c": []}) == {"a": 0.0, "b": 1.0, "c": 0.0}
    full = {v: [u for u in "abcd" if u != v] for v in "abcd"}
    assert set(forensics.betweenness(full).values()) == {0.0}


def test_betweenness_brute_force():
    rng = random.Random(17)
    for _ in range(60):
        n = rng.randint(2, 12)
        nodes = [f"n{i}" for i in range(n)]
        p = rng.uniform(0.1, 0.35)
        edges = [(a, b) for a in nodes for b in nodes if a != b and rng.random() < p]
        adj = {v: [b for a, b in edges if a == v] for v in nodes}
        got = forensics.betweenness(adj)
        ref = brute_betweenness(nodes, edges)
        G = nx.DiGraph(edges)
        G.add_nodes_from(nodes)
        nxb = nx.betweenness_centrality(G, normalized=False)
        for v in nodes:
            assert got[v] == pytest.approx(ref[v], abs=1e-9)
            assert got[v] == pytest.approx(nxb[v], abs=1e-9)


def _syndicate(weights):
    g = make_graph(weights)
    edges = [e for _, e in sorted(g.edges.items()) if not e.is_self]
    members = sorted(g.node_set)
    return Syndicate(members, edges, len(edges) / (len(members) * (len(members) - 1)))


def test_roles_star_and_tiebreak():
    w = {(f"l{i}", "c"): 2.0 for i in range(4)}
    w.update({("c", f"l{i}"): 1.0 for i in range(4)})
    s = _syndicate(w)
    roles = forensics.assign_roles(s)
    assert s.hub == "c"
    assert all(roles[f"l{i}"] == forensics.GIVER for i in range(4))
    s = _syndicate({("b", "a"): 1.0, ("a", "b"): 1.0})
    forensics.assign_roles(s)
    assert s.hub == "a" and s.roles["b"] == forensics.RECEIVER
    with pytest.raises(ValueError):
        forensics.assign_roles(Syndicate(["a"], [], 0.0))


def test_components_need_mutual_links():
    g = make_graph({("a", "b"): 1, ("b", "c"): 1, ("c", "b"): 0.5, ("d", "e"): 1, ("e", "d"): 1, ("c", "d"): 1})
    comps = forensics.syndicate_components({"a", "b", "c", "d", "e"}, g)
    assert [s.members for s in comps] == [["b", "c"], ["d", "e"]]
    assert comps[0].density == 1.0
    assert forensics.syndicate_components({"a", "b"}, g) == []


def test_timeline():
    s = _syndicate({("a", "b"): 1.0, ("b", "a"): 2.0})
    assert forensics.burst_timeline(s, (2020, 2024)) == {2020: 0, 2021: 3.0, 2022: 0, 2023: 0, 2024: 0}
    empty = Syndicate(["a", "b"], [], 0.0)
    assert set(forensics.burst_timeline(empty, (2020, 2021)).values()) == {0.0}


def test_mixing_homophily():
    w = {("a", "b"): 1, ("b", "a"): 2, ("c", "d"): 1}
    mm = forensics.mixing_matrix(make_graph(w, nodes=["x"]), {"a": "Case", "b": "Case", "c": "Control", "d": "Control"})
    assert mm.probs.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert mm.assortativity_r == 1.0 and mm.diagonal_avg == 1.0 and mm.excluded_nodes == 1


def test_mixing_undefined_row(caplog):
    mm = forensics.mixing_matrix(make_graph({("a", "b"): 1}), {"a": "Case", "b": "Control"})
    assert mm.undefined_rows == ("Control",) and "no outgoing weight" in caplog.text
    assert mm.probs[0].tolist() == [0.0, 1.0]


def test_mixing_coin_labels_null():
    rng = np.random.default_rng(0)
    n = 2000
    w = {}
    for _ in range(20000):
        a, b = rng.integers(0, n, 2)
        if a != b:
            w[(f"v{a}", f"v{b}")] = float(rng.random())
    tiers = {f"v{i}": ("Case" if rng.random() < 0.5 else "Control") for i in range(n)}
    mm = forensics.mixing_matrix(make_graph(w), tiers)
    assert abs(mm.assortativity_r) < 0.1
    assert np.allclose(mm.probs.sum(axis=1), 1.0, atol=1e-9)


def _cliques(k, size, bridge=0.0):
    adj = {}
    for c in range(k):
        vs = [f"c{c}_{i}" for i in range(size)]
        for a in vs:
            adj[a] = {b: 1.0 for b in vs if b != a}
    if bridge:
        adj["c0_0"]["c1_0"] = adj["c1_0"]["c0_0"] = bridge
    return adj


def test_louvain_two_cliques():
    res = forensics.louvain(_cliques(2, 5))
    assert len(res.communities) == 2
    assert res.modularity == pytest.approx(0.5, abs=1e-12)


def test_louvain_single_edge_deterministic():
    adj = {"a": {"b": 1.0}, "b": {"a": 1.0}}
    r1, r2 = forensics.louvain(adj, seed=3), forensics.louvain(adj, seed=3)
    assert r1 == r2
    assert forensics.modularity(adj, [["a", "b"]]) == 0.0
    assert forensics.modularity(adj, [["a"], ["b"]]) == -0.5


def test_louvain_planted_blocks():
    rng = np.random.default_rng(4)
    blocks = [[f"b{k}_{i}" for i in range(15)] for k in range(4)]
    block_of = {v: k for k, vs in enumerate(blocks) for v in vs}
    nodes = [v for vs in blocks for v in vs]
    adj = {v: {} for v in nodes}
    for a, b in itertools.combinations(nodes, 2):
        p = 0.8 if block_of[a] == block_of[b] else 0.02
        if rng.random() < p:
            adj[a][b] = adj[b][a] = 1.0
    res = forensics.louvain(adj, seed=1)
    assert sorted(map(sorted, res.communities)) == sorted(map(sorted, blocks))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 25), st.floats(0.05, 0.6), st.integers(0, 10_000))
def test_louvain_monotone_and_consistent(n, p, seed):
    rng = np.random.default_rng(seed)
    nodes = [f"v{i:02d}" for i in range(n)]
    adj = {v: {} for v in nodes}
    for a, b in itertools.combinations(nodes, 2):
        if rng.random() < p:
            w = float(rng.uniform(0.1, 3))
            adj[a][b] = adj[b][a] = w
    res = forensics.louvain(adj, seed=seed)
    assert all(b >= a - 1e-12 for a, b in zip(res.level_modularity, res.level_modularity[1:]))
    assert res.modularity == pytest.approx(forensics.modularity(adj, res.communities), abs=1e-9)
    assert sorted(v for c in res.communities for v in c) == nodes
    G = nx.Graph()
    G.add_nodes_from(nodes)
    G.add_weighted_edges_from((a, b, w) for a in adj for b, w in adj[a].items() if a < b)
    if G.number_of_edges():
        ref = nx.community.modularity(G, [set(c) for c in res.communities])
        assert res.modularity == pytest.approx(ref, abs=1e-9)


def test_feature_flag_bands():
    assert forensics.feature_flags({"x": 4.2, "y": 5.1, "z": 2.9}) == [("x", 3), ("y", 5)]


def test_rank_outliers_profiles():
    works = [{"id": f"w{i}", "year": 2020 + i, "issn": "J1" if i else "J2", "authors": ["p", "q"]} for i in range(3)]
    cat = make_catalog(works)
    g = make_graph({("p", "q"): 1, ("q", "p"): 1, ("p", "r"): 1, ("p", "outsider"): 1, ("p", "p"): 1})
    vs = [FeatureVector(a, 1, hhi_out=h) for a, h in [("p", 1.0), ("q", 1.0), ("r", 0.0), ("s", 0.2)]]
    flags = [OutlierFlag(a, 1, "Case", 1.0, 0.5, 10.0, 9.0, True, 4.0) for a in ("q", "p")]
    flags.append(OutlierFlag("r", 1, "Control", 0.1, 0.5, 0.0, 0.0, False, 4.0))
    prof = forensics.rank_outliers(flags, vs, cat, g, {"p", "q", "r", "s"}, {1: {"r", "s"}})
    assert [p.author for p in prof] == ["p", "q"]
    p = prof[0]
    assert (p.works, p.year_span, p.primary_journal) == (3, (2020, 2022), ("J1", 2))
    assert (p.out_partners, p.in_partners, p.reciprocal_partners) == (2, 1, 1)
    assert ("hhi_out", 5) in p.flags
    assert p.reciprocal_partners <= min(p.out_partners, p.in_partners)


def test_writers(tmp_path):
    s = _syndicate({("a", "b"): 1.0, ("b", "a"): 0.5})
    forensics.assign_roles(s)
    forensics.write_syndicates([s], (2020, 2024), tmp_path / "s.json")
    forensics.write_network(s, tmp_path / "n.csv")
    mm = forensics.mixing_matrix(make_graph({("a", "b"): 1, ("b", "a"): 1}), {"a": "Case", "b": "Control"})
    forensics.write_mixing(mm, forensics.louvain(_cliques(2, 3)), tmp_path / "m.csv")
    import json
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc[0]["hub"] == "a" and doc[0]["size"] == 2
    assert "louvain_modularity" in (tmp_path / "m.csv").read_text()
    assert (tmp_path / "n.csv").read_text().splitlines()[1] == "a,b,1.0,Hub,NetReceiver"


def test_planted_hub_recovered(planted):
    flagged = {f.author for f in planted.flags if f.flagged}
    comps = forensics.syndicate_components(flagged, planted.graph)
    truth = planted.scenario.truth
    assert len(comps) == 1 and set(comps[0].members) == set(truth.syndicate_members)
    assert {comps[0].hub} == set(truth.hub_ids)
    tl = forensics.burst_timeline(comps[0], (2020, 2024))
    top2 = sorted(tl, key=tl.get, reverse=True)[:2]
    assert sorted(top2) == [2021, 2024]

import math
import random

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from citeforge import features
from citeforge.features import FEATURE_NAMES, UndirectedProjection

from conftest import make_catalog, make_graph


def fv_of(weights, author, coauthors=None, nodes=()):
    g = make_graph(weights, nodes)
    cat = make_catalog([])
    co = coauthors or {}
    return features.compute_features(cat, g, [(author, 1)], co)[0]


def test_self_rate_example():
    g = make_graph({("a", "a"): 1, ("a", "b"): 3})
    assert features.rate_features(g, set(), "a")[0] == pytest.approx(0.25)


def test_reciprocity_example():
    w = {("a", p): 1 for p in "bcde"}
    w.update({("b", "a"): 1, ("c", "a"): 1})
    assert features.rate_features(make_graph(w), set(), "a")[3] == pytest.approx(0.5)


def test_balance_symmetric():
    g = make_graph({("a", "b"): 2, ("b", "a"): 2})
    assert abs(features.rate_features(g, set(), "a")[2]) < 1e-9


def test_concentration_examples():
    g = make_graph({("a", p): 1 for p in "bcde"})
    assert features.concentration_features(g, "a")[0] == pytest.approx(0.25)
    g = make_graph({("b", "a"): 2, ("c", "a"): 1, ("d", "a"): 1})
    _, hhi_in, h = features.concentration_features(g, "a")
    assert hhi_in == pytest.approx(0.375)
    assert h == pytest.approx(1.0397, abs=1e-4)
    g = make_graph({("b", "a"): 5})
    assert features.concentration_features(g, "a")[1:] == (1.0, 0.0)


def test_structure_examples():
    g = make_graph({("a", "b"): 1, ("c", "a"): 1, ("b", "c"): 1})
    proj = UndirectedProjection(g)
    assert proj.clustering("a") == 1.0 and proj.triangles("a") == 1
    star = make_graph({("hub", f"l{i}"): 1 for i in range(5)})
    proj = UndirectedProjection(star)
    assert proj.clustering("hub") == 0.0 and proj.cores["hub"] == 1
    k4 = make_graph({(a, b): 1 for a in "wxyz" for b in "wxyz" if a < b})
    proj = UndirectedProjection(k4)
    assert all(proj.cores[v] == 3 and proj.clustering(v) == 1.0 for v in "wxyz")


def test_centrality_examples():
    sc, ok = features.centrality(make_graph({("a", "b"): 1, ("b", "a"): 1}, nodes=["z"]))
    assert ok and sc["a"] == pytest.approx(0.5) and sc["b"] == pytest.approx(0.5)
    assert sc["z"] == 0.0


def test_centrality_chain_oracle():
    # a -> b -> c is nilpotent; the limiting direction puts all prestige on c
    sc, _ = features.centrality(make_graph({("a", "b"): 1, ("b", "c"): 1}))
    A = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], float)
    # null-space vector of A^T reached by iteration: (A^T)^2 1 / |.|
    ref = np.linalg.matrix_power(A.T, 2) @ np.ones(3)
    ref /= ref.sum()
    assert [sc[k] for k in "abc"] == pytest.approx(ref.tolist(), abs=1e-8)


def test_centrality_empty_graph_warns(caplog):
    sc, _ = features.centrality(make_graph({}, nodes=["a", "b"]))
    assert sc == {"a": 0.0, "b": 0.0}
    assert "no non-self edges" in caplog.text


def test_centrality_matches_dense_eigensolver():
    rng = random.Random(3)
    for _ in range(20):
        n = rng.randint(3, 12)
        w = {(f"n{i}", f"n{(i + 1) % n}"): rng.uniform(0.5, 2) for i in range(n)}
        for _ in range(n):
            i, j = rng.sample(range(n), 2)
            w[(f"n{i}", f"n{j}")] = rng.uniform(0.5, 2)
        sc, ok = features.centrality(make_graph(w))
        assert ok
        nodes = sorted({x for e in w for x in e})
        idx = {v: k for k, v in enumerate(nodes)}
        A = np.zeros((n, n))
        for (a, b), x in w.items():
            A[idx[a], idx[b]] = x
        vals, vecs = np.linalg.eig(A.T)
        v = np.abs(np.real(vecs[:, np.argmax(np.real(vals))]))
        v /= v.sum()
        assert [sc[k] for k in nodes] == pytest.approx(v.tolist(), abs=1e-8)


def test_endogamy_examples():
    works = [{"id": "w", "issn": "J1", "authors": ["a"], "refs": [f"r{i}" for i in range(10)] + ["gone"]}]
    works += [{"id": f"r{i}", "issn": "J1" if i < 2 else "J2"} for i in range(10)]
    assert features.endogamy(make_catalog(works), "a") == (pytest.approx(0.2), True)
    works = [{"id": "w", "issn": "J1", "authors": ["a"], "refs": ["x"]}, {"id": "x", "issn": "J1"}]
    assert features.endogamy(make_catalog(works), "a") == (1.0, True)
    assert features.endogamy(make_catalog([{"id": "w", "authors": ["a"]}]), "a") == (0.0, False)


def test_burst_examples():
    g = make_graph({("a", "b"): 2, ("a", "c"): 1, ("d", "a"): 3})
    assert features.burst(g, "a") == pytest.approx(0.5)
    assert features.burst(make_graph({("b", "a"): 1}), "a") is None
    assert features.burst(make_graph({("a", "b"): 1}), "a") == pytest.approx(1.0)
    assert features.burst(g, "a", "in") == pytest.approx(0.75)
    with pytest.raises(ValueError):
        features.burst(g, "a", "sideways")


def test_missing_flags_and_absent_burst():
    fv = fv_of({("b", "a"): 1}, "a")
    assert fv.burst_intensity is None
    assert {"coauthor_citation_rate", "reciprocity_rate", "hhi_out", "journal_endogamy"} <= fv.missing
    assert fv.value("hhi_out") is None and fv.value("hhi_in") == 1.0


def test_features_csv_roundtrip(tmp_path):
    fv = fv_of({("a", "b"): 1.5, ("b", "a"): 0.5, ("c", "a"): 1}, "a", {"a": {"b"}})
    other = fv_of({("b", "a"): 1}, "a")
    other.author = "z"
    features.write_features([fv, other], tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[2:16] == list(FEATURE_NAMES)
    back = features.read_features(tmp_path / "f.csv")
    assert back == [fv, other]


# ---- naive reference implementations over edge lists ----

def naive(weights, co, a):
    ns = {(i, j): w for (i, j), w in weights.items() if i != j and w > 0}
    w_self = weights.get((a, a), 0)
    out = {j: w for (i, j), w in ns.items() if i == a}
    inn = {i: w for (i, j), w in ns.items() if j == a}
    out_s, in_s = sum(out.values()), sum(inn.values())
    r = {}
    r["self_citation_rate"] = w_self / (w_self + out_s) if w_self + out_s else 0.0
    r["coauthor_citation_rate"] = sum(w for j, w in out.items() if j in co) / out_s if out_s else 0.0
    r["citation_balance"] = (out_s - in_s) / (out_s + in_s + 1e-9)
    r["reciprocity_rate"] = sum(1 for j in out if j in inn) / len(out) if out else 0.0
    r["hhi_out"] = sum((w / out_s) ** 2 for w in out.values()) if out else 0.0
    r["hhi_in"] = sum((w / in_s) ** 2 for w in inn.values()) if inn else 0.0
    r["citation_entropy"] = -sum((w / in_s) * math.log(w / in_s) for w in inn.values()) if inn else 0.0
    und = {frozenset(e) for e in ns}
    nb = {x for e in und if a in e for x in e if x != a}
    links = sum(1 for u in nb for v in nb if u < v and frozenset((u, v)) in und)
    d = len(nb)
    r["clustering_coeff"] = 2 * links / (d * (d - 1)) if d >= 2 else 0.0
    r["triangles_norm"] = links / (out_s + in_s + 1)
    r["clique_strength"] = r["clustering_coeff"] * r["coauthor_citation_rate"]
    r["burst_intensity"] = max(out.values()) / (in_s + 1) if out else None
    return r


def naive_core(weights, nodes):
    """Brute-force core decomposition: repeatedly strip nodes of degree < k."""
    und = {frozenset((i, j)) for (i, j), w in weights.items() if i != j and w > 0}
    core = {v: 0 for v in nodes}
    k = 1
    alive = set(nodes)
    while alive:
        changed = True
        while changed:
            changed = False
            for v in list(alive):
                if sum(1 for e in und if v in e and (e - {v}) <= alive) < k:
                    alive.discard(v)
                    changed = True
        for v in alive:
            core[v] = k
        k += 1
    return core


random_graphs = st.integers(2, 30).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.dictionaries(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                        st.floats(0.05, 5.0), max_size=3 * n),
        st.sets(st.integers(0, n - 1), max_size=n),
    )
)


@settings(max_examples=100, deadline=None)
@given(random_graphs)
def test_features_match_naive_reference(spec):
    n, e, co_idx = spec
    nodes = [f"v{i:02d}" for i in range(n)]
    weights = {(nodes[i], nodes[j]): w for (i, j), w in e.items()}
    co = {nodes[i] for i in co_idx}
    g = make_graph(weights, nodes)
    fvs = features.compute_features(make_catalog([]), g, [(v, 1) for v in nodes], {v: co - {v} for v in nodes})
    cores = naive_core(weights, nodes)
    for fv in fvs:
        ref = naive(weights, co - {fv.author}, fv.author)
        for name, val in ref.items():
            got = getattr(fv, name)
            if val is None:
                assert got is None
            else:
                assert abs(got - val) < 1e-9, name
        assert fv.kcore_number == cores[fv.author]
        # invariants
        assert fv.clique_strength == pytest.approx(fv.clustering_coeff * fv.coauthor_citation_rate, abs=1e-12)
        assert -1 < fv.citation_balance < 1
        for name in ("self_citation_rate", "coauthor_citation_rate", "reciprocity_rate",
                     "clustering_coeff", "journal_endogamy", "hhi_in", "hhi_out"):
            assert 0 <= getattr(fv, name) <= 1
        n_in = len(g.in_adj.get(fv.author, {}))
        if n_in:
            assert fv.citation_entropy <= math.log(n_in) + 1e-12
            assert (abs(fv.hhi_in - 1) < 1e-12) == (n_in == 1)
            assert fv.hhi_in >= 1 / n_in - 1e-12


@settings(max_examples=40, deadline=None)
@given(random_graphs)
def test_structure_matches_networkx(spec):
    n, e, _ = spec
    nodes = [f"v{i:02d}" for i in range(n)]
    weights = {(nodes[i], nodes[j]): w for (i, j), w in e.items()}
    proj = UndirectedProjection(make_graph(weights, nodes))
    G = nx.Graph()
    G.add_nodes_from(nodes)
    G.add_edges_from((a, b) for a, b in weights if a != b)
    tri = nx.triangles(G)
    clus = nx.clustering(G)
    cores = nx.core_number(G)
    for v in nodes:
        assert proj.triangles(v) == tri[v]
        assert proj.clustering(v) == pytest.approx(clus[v], abs=1e-12)
        assert proj.cores[v] == cores[v]


@settings(max_examples=30, deadline=None)
@given(random_graphs, st.randoms(use_true_random=False))
def test_relabel_invariance(spec, rnd):
    n, e, co_idx = spec
    nodes = [f"v{i:02d}" for i in range(n)]
    perm = nodes[:]
    rnd.shuffle(perm)
    ren = dict(zip(nodes, perm))
    weights = {(nodes[i], nodes[j]): w for (i, j), w in e.items()}
    co = {nodes[i] for i in co_idx}

    def multiset(ws, cs, names):
        g = make_graph(ws, names)
        fvs = features.compute_features(make_catalog([]), g, [(v, 1) for v in names], {v: cs - {v} for v in names})
        return sorted(tuple(round(x, 9) if isinstance(x, float) else x for x in fv.as_row()) for fv in fvs)

    base = multiset(weights, co, nodes)
    relab = multiset({(ren[a], ren[b]): w for (a, b), w in weights.items()}, {ren[c] for c in co}, perm)
    assert base == relab

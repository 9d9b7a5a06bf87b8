import random

import pytest
from hypothesis import given, settings, strategies as st

from citeforge import cohort
from citeforge.cohort import AuthorPortfolio, TierLabel

from conftest import make_catalog


def P(author, h5, subject=1, n_low=0, n_high=0, n_total=0):
    return AuthorPortfolio(author, subject, [], n_low, n_high, n_total, h5)


def test_h5():
    assert cohort.author_h5([10, 5, 3, 1]) == 3
    assert cohort.author_h5([]) == 0
    assert cohort.author_h5([1, 1, 1, 1, 1]) == 1
    assert cohort.author_h5([0, 0]) == 0


def test_classify():
    assert cohort.classify_author(P("a", 0, n_low=7, n_total=10)) is TierLabel.CASE
    assert cohort.classify_author(P("a", 0, n_high=2, n_total=2)) is TierLabel.OTHER
    assert cohort.classify_author(P("a", 0, n_low=6, n_high=4, n_total=10)) is TierLabel.OTHER
    assert cohort.classify_author(P("a", 0, n_high=3, n_total=3)) is TierLabel.CONTROL


def test_match_bucket_example():
    pairs = cohort.match_pairs([P("c", 9)], [P("k1", 8), P("k2", 20)])
    assert [(p.case_h5, p.control_h5) for p in pairs] == [(9, 8)]


def test_match_without_replacement():
    pairs = cohort.match_pairs([P("c1", 5), P("c2", 5)], [P("k", 5)])
    assert len(pairs) == 1 and pairs[0].case_author == "c1"
    assert cohort.match_pairs([P("c", 5)], []) == []


def test_match_tie_breaks():
    # equal distance: lexicographically smaller control wins
    pairs = cohort.match_pairs([P("c", 6)], [P("kb", 5), P("ka", 7)])
    assert pairs[0].control_author == "ka"
    # higher h5 case chooses first
    pairs = cohort.match_pairs([P("low", 4), P("high", 5)], [P("k", 5)])
    assert pairs[0].case_author == "high"


def test_match_rejects_mixed_subjects():
    with pytest.raises(ValueError):
        cohort.match_pairs([P("c", 1, subject=1)], [P("k", 1, subject=2)])


def test_portfolios_and_select():
    works = []
    # author L publishes 3 low-tier works cited 3 times each; H publishes 3 high-tier works
    for i in range(3):
        works.append({"id": f"l{i}", "issn": "LOW", "authors": ["L"]})
        works.append({"id": f"h{i}", "issn": "HIGH", "authors": ["H"]})
    for j in range(3):
        works.append({"id": f"x{j}", "issn": "MID", "authors": ["M"], "refs": ["l0", "l1", "l2", "h0"]})
    cat = make_catalog(works, {"LOW": 1, "HIGH": 1, "MID": 1})
    ports = cohort.build_portfolios(cat, {"LOW": "low", "HIGH": "high", "MID": "mid"})
    assert ports[1]["L"].h5 == 3 and ports[1]["H"].h5 == 1 and ports[1]["M"].n_total == 3
    pairs, funnel = cohort.select_and_match(ports)
    assert [(p.case_author, p.control_author) for p in pairs] == [("L", "H")]
    assert funnel[1] == {"authors": 3, "case": 1, "control": 1, "other": 1, "pairs": 1}


def test_pairs_csv_roundtrip(tmp_path):
    pairs = [cohort.MatchedPair(1, "a", "b", 3, 4)]
    cohort.write_pairs(pairs, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "subject,case_orcid,control_orcid,case_h5,control_h5"
    assert cohort.read_pairs(tmp_path / "p.csv") == pairs
    assert cohort.tier_of_pairs(pairs) == {("a", 1): "Case", ("b", 1): "Control"}


def brute_force_match(cases, controls, width=3):
    """Naive re-statement of the greedy rule."""
    pool = list(controls)
    out = []
    for c in sorted(cases, key=lambda p: (-p.h5, p.author)):
        ok = [k for k in pool if abs(c.h5 // width - k.h5 // width) <= 1]
        if not ok:
            continue
        best = min(ok, key=lambda k: (abs(c.h5 - k.h5), k.author))
        pool.remove(best)
        out.append((c.author, best.author))
    return out


cohorts = st.tuples(
    st.lists(st.integers(0, 20), max_size=15),
    st.lists(st.integers(0, 20), max_size=15),
)


@settings(max_examples=200, deadline=None)
@given(cohorts, st.randoms(use_true_random=False))
def test_matching_contract(spec, rnd):
    cases = [P(f"c{i:02d}", h) for i, h in enumerate(spec[0])]
    controls = [P(f"k{i:02d}", h) for i, h in enumerate(spec[1])]
    pairs = cohort.match_pairs(cases, controls)
    assert all(cohort.eligible(p.case_h5, p.control_h5) for p in pairs)
    assert len({p.case_author for p in pairs}) == len(pairs)
    assert len({p.control_author for p in pairs}) == len(pairs)
    assert [(p.case_author, p.control_author) for p in pairs] == brute_force_match(cases, controls)
    rnd.shuffle(cases)
    rnd.shuffle(controls)
    assert cohort.match_pairs(cases, controls) == pairs


def test_boundary_eligibility():
    assert cohort.eligible(4, 7) and cohort.eligible(3, 7)
    assert not cohort.eligible(2, 7)

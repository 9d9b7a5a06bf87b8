"""Case/Control author classification, subject h5 and greedy pair matching."""
from __future__ import annotations

import csv
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .ingest import Catalog
from .journal_rank import HIGH, LOW

TIER_SHARE = 0.70
MIN_PAPERS = 3
BUCKET_WIDTH = 3


class TierLabel(str, Enum):
    CASE = "Case"
    CONTROL = "Control"
    OTHER = "Other"


@dataclass
class AuthorPortfolio:
    author: str
    subject: int
    works: list[tuple[str, str | None]] = field(default_factory=list)
    n_low: int = 0
    n_high: int = 0
    n_total: int = 0
    h5: int = 0


@dataclass(frozen=True)
class MatchedPair:
    subject: int
    case_author: str
    control_author: str
    case_h5: int
    control_h5: int


def author_h5(citation_counts: Iterable[int]) -> int:
    """Largest h such that at least h works have at least h citations."""
    h = 0
    for i, c in enumerate(sorted(citation_counts, reverse=True), start=1):
        if c >= i:
            h = i
        else:
            break
    return h


def citation_counts(catalog: Catalog) -> dict[str, int]:
    """In-window citations received by every catalog work."""
    counts: dict[str, int] = defaultdict(int)
    for w in catalog.works.values():
        for ref in w.refs:
            if ref in catalog.works:
                counts[ref] += 1
    return counts


def build_portfolios(
    catalog: Catalog, journal_tiers: dict[str, str]
) -> dict[int, dict[str, AuthorPortfolio]]:
    """Per-subject portfolios for every indexed author.

    Works in mid-tier or unranked venues count toward ``n_total`` only.
    """
    cites = citation_counts(catalog)
    out: dict[int, dict[str, AuthorPortfolio]] = defaultdict(dict)
    for author in sorted(catalog.author_index):
        by_subject: dict[int, list[tuple[str, str | None]]] = defaultdict(list)
        for wid in catalog.author_index[author]:
            subject = catalog.subject_of(wid)
            if subject is None:
                continue
            issn = catalog.works[wid].issn
            by_subject[subject].append((wid, journal_tiers.get(issn)))
        for subject, works in by_subject.items():
            out[subject][author] = AuthorPortfolio(
                author=author,
                subject=subject,
                works=works,
                n_low=sum(t == LOW for _, t in works),
                n_high=sum(t == HIGH for _, t in works),
                n_total=len(works),
                h5=author_h5(cites.get(wid, 0) for wid, _ in works),
            )
    return dict(out)


def classify_author(
    p: AuthorPortfolio, share: float = TIER_SHARE, min_papers: int = MIN_PAPERS
) -> TierLabel:
    if p.n_total < min_papers:
        return TierLabel.OTHER
    if p.n_low / p.n_total >= share:
        return TierLabel.CASE
    if p.n_high / p.n_total >= share:
        return TierLabel.CONTROL
    return TierLabel.OTHER


def bucket(h5: int, width: int = BUCKET_WIDTH) -> int:
    return h5 // width


def eligible(h5_a: int, h5_b: int, width: int = BUCKET_WIDTH) -> bool:
    return abs(bucket(h5_a, width) - bucket(h5_b, width)) <= 1


def match_pairs(
    cases: list[AuthorPortfolio],
    controls: list[AuthorPortfolio],
    width: int = BUCKET_WIDTH,
) -> list[MatchedPair]:
    """Greedy one-pass matching without replacement.

    Cases go in order of descending h5 (ties by id). Each takes the unused
    bucket-eligible control closest in h5, ties by id.
    """
    if not cases or not controls:
        return []
    subjects = {p.subject for p in cases} | {p.subject for p in controls}
    if len(subjects) != 1:
        raise ValueError(f"portfolios span several subjects: {sorted(subjects)}")
    pool: dict[int, deque[str]] = {}
    ctrl_by_h5: dict[int, list[str]] = defaultdict(list)
    for c in controls:
        ctrl_by_h5[c.h5].append(c.author)
    for h5, ids in ctrl_by_h5.items():
        pool[h5] = deque(sorted(ids))

    pairs = []
    for case in sorted(cases, key=lambda p: (-p.h5, p.author)):
        b = bucket(case.h5, width)
        lo = max(0, (b - 1) * width)
        hi = (b + 2) * width - 1
        best: tuple[str, int] | None = None
        for delta in range(0, max(case.h5 - lo, hi - case.h5) + 1):
            for h in {case.h5 - delta, case.h5 + delta}:
                if lo <= h <= hi and pool.get(h):
                    head = pool[h][0]
                    if best is None or head < best[0]:
                        best = (head, h)
            if best is not None:
                break
        if best is None:
            continue
        pool[best[1]].popleft()
        pairs.append(MatchedPair(case.subject, case.author, best[0], case.h5, best[1]))
    return pairs


def select_and_match(
    portfolios: dict[int, dict[str, AuthorPortfolio]],
    share: float = TIER_SHARE,
    min_papers: int = MIN_PAPERS,
    width: int = BUCKET_WIDTH,
) -> tuple[list[MatchedPair], dict[int, dict[str, int]]]:
    """Classify and match every subject; also returns a per-subject funnel."""
    pairs: list[MatchedPair] = []
    funnel: dict[int, dict[str, int]] = {}
    for subject in sorted(portfolios):
        ports = portfolios[subject]
        labels = {a: classify_author(p, share, min_papers) for a, p in ports.items()}
        cases = [ports[a] for a in sorted(ports) if labels[a] is TierLabel.CASE]
        controls = [ports[a] for a in sorted(ports) if labels[a] is TierLabel.CONTROL]
        matched = match_pairs(cases, controls, width)
        pairs.extend(matched)
        funnel[subject] = {
            "authors": len(ports),
            "case": len(cases),
            "control": len(controls),
            "other": len(ports) - len(cases) - len(controls),
            "pairs": len(matched),
        }
    return pairs, funnel


PAIR_COLUMNS = ["subject", "case_orcid", "control_orcid", "case_h5", "control_h5"]


def write_pairs(pairs: list[MatchedPair], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PAIR_COLUMNS)
        for p in pairs:
            writer.writerow([p.subject, p.case_author, p.control_author, p.case_h5, p.control_h5])


def read_pairs(path: str | Path) -> list[MatchedPair]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            MatchedPair(int(r["subject"]), r["case_orcid"], r["control_orcid"],
                        int(r["case_h5"]), int(r["control_h5"]))
            for r in csv.DictReader(fh)
        ]


def tier_of_pairs(pairs: Iterable[MatchedPair]) -> dict[tuple[str, int], str]:
    """(author, subject) -> "Case" / "Control" for every matched author."""
    out = {}
    for p in pairs:
        out[(p.case_author, p.subject)] = TierLabel.CASE.value
        out[(p.control_author, p.subject)] = TierLabel.CONTROL.value
    return out

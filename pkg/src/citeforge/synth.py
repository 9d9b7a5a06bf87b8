"""Synthetic citation economies with planted citation syndicates.

Each subject gets three journal tiers (J low, 2J mid, J high journals) and
three author tiers. Authors publish only in their own tier. References pick a
target tier (own tier with probability ``homophily``, otherwise in proportion
to tier attractiveness times tier size), then a uniform earlier-or-same-year
work of that tier. Low-tier journals thus form the bottom quartile.

Syndicates are drawn from the low tier of subject 1. Their works go to one
house journal and carry ``multiplier * baseline`` references, the extra
``(multiplier - 1) * baseline`` of them pointing at other members' works:

* ``mesh``: any other member's works; co-authors drawn from the group.
* ``hub_and_spoke``: spokes are arranged on a ring and each one cites the
  hub's works (70% of its in-group budget) and the works of the next half of
  the ring. The hub cites spoke works. All their works are single-authored.
"""
from __future__ import annotations

import bisect
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .ingest import WorkRecord

log = logging.getLogger(__name__)

TIERS = ("low", "mid", "high")
TOPOLOGIES = ("mesh", "hub_and_spoke")
HUB_SHARE = 0.70
BURST_SHARE = 0.85
MAX_TEAM = 8


@dataclass
class SyndicateSpec:
    size: int
    topology: str = "hub_and_spoke"
    internal_rate_multiplier: float = 10.0
    burst_years: tuple[int, ...] = (2021, 2024)


@dataclass
class ScenarioConfig:
    n_authors_per_tier: int = 1000
    n_journals_per_tier: int = 10
    subjects: int = 1
    baseline_cite_rate: float = 6.0
    homophily: float = 0.5
    syndicates: list[SyndicateSpec] = field(default_factory=list)
    seed: int = 42
    window: tuple[int, int] = (2020, 2024)
    n_mid_authors: int | None = None
    works_per_author: tuple[int, int] = (4, 8)
    team_p: float = 0.55
    attractiveness: tuple[float, float, float] = (1.0, 2.5, 6.0)

    def validate(self) -> None:
        if self.n_authors_per_tier < 1 or self.n_journals_per_tier < 1:
            raise ValueError("need at least one author and one journal per tier")
        if not 1 <= self.subjects <= 5:
            raise ValueError(f"subjects must be in 1..5, got {self.subjects}")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError(f"homophily must lie in [0, 1], got {self.homophily}")
        if self.baseline_cite_rate < 1:
            raise ValueError("baseline_cite_rate must be at least 1")
        lo, hi = self.window
        if lo > hi:
            raise ValueError(f"empty window {self.window}")
        total = 0
        for s in self.syndicates:
            if s.size < 2:
                raise ValueError(f"syndicate size must be >= 2, got {s.size}")
            if s.topology not in TOPOLOGIES:
                raise ValueError(f"unknown topology {s.topology!r}")
            if s.internal_rate_multiplier < 1:
                raise ValueError("internal_rate_multiplier must be >= 1")
            for y in s.burst_years:
                if not lo <= y <= hi:
                    raise ValueError(f"burst year {y} outside window {self.window}")
            total += s.size
        if total > self.n_authors_per_tier:
            raise ValueError(
                f"syndicates need {total} members but the low tier has {self.n_authors_per_tier} authors"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        synd = [SyndicateSpec(**{**s, "burst_years": tuple(s.get("burst_years", ()))})
                for s in d.pop("syndicates", [])]
        for key in ("window", "works_per_author", "attractiveness"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(syndicates=synd, **d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass
class GroundTruth:
    syndicate_members: set[str]
    hub_ids: set[str]
    tier_of: dict[str, str]
    syndicates: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "syndicate_members": sorted(self.syndicate_members),
            "hub_ids": sorted(self.hub_ids),
            "tier_of": dict(sorted(self.tier_of.items())),
            "syndicates": self.syndicates,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls(set(d["syndicate_members"]), set(d["hub_ids"]), dict(d["tier_of"]),
                   list(d.get("syndicates", [])))


@dataclass
class Scenario:
    works: list[WorkRecord]
    subjects: dict[str, int]
    truth: GroundTruth
    manifest: dict


def _issn(subject: int, tier: int, j: int) -> str:
    return f"{subject}{tier}{j:05d}0"


def _orcid(subject: int, idx: int) -> str:
    return f"0000-000{subject}-{idx // 10000:04d}-{idx % 10000:04d}"


class _Draws:
    """Distribution helpers over one Philox stream."""

    def __init__(self, rng: np.random.Generator, cfg: ScenarioConfig):
        self.rng = rng
        self.cfg = cfg
        b = cfg.baseline_cite_rate
        # 1 + NegBin(r, p) with mean b, truncated at 4b
        self.nb_r = 4.0
        self.nb_p = self.nb_r / (self.nb_r + max(b - 1.0, 1e-9))
        self.ref_cap = int(round(4 * b))

    def team_size(self) -> int:
        while True:
            t = int(self.rng.geometric(self.cfg.team_p))
            if t <= MAX_TEAM:
                return t

    def n_refs(self) -> int:
        while True:
            k = 1 + int(self.rng.negative_binomial(self.nb_r, self.nb_p))
            if k <= self.ref_cap:
                return k


def generate(config: ScenarioConfig) -> Scenario:
    """Build one scenario; identical output for identical config."""
    config.validate()
    rng = np.random.Generator(np.random.Philox(config.seed))
    draws = _Draws(rng, config)
    lo, hi = config.window
    years = list(range(lo, hi + 1))
    n_mid = config.n_mid_authors if config.n_mid_authors is not None else 2 * config.n_authors_per_tier
    tier_sizes = (config.n_authors_per_tier, n_mid, config.n_authors_per_tier)
    J = config.n_journals_per_tier
    journals_per_tier = (J, 2 * J, J)

    works: list[WorkRecord] = []
    subjects: dict[str, int] = {}
    tier_of: dict[str, str] = {}
    synd_truth: list[dict] = []
    audit: list[dict] = []
    counter = 0

    for subject in range(1, config.subjects + 1):
        # authors, shuffled so that ids carry no tier information
        n_all = sum(tier_sizes)
        ids = [_orcid(subject, i) for i in rng.permutation(n_all)]
        tier_authors: list[list[str]] = []
        start = 0
        for t, n in enumerate(tier_sizes):
            tier_authors.append(sorted(ids[start:start + n]))
            for a in ids[start:start + n]:
                tier_of[a] = TIERS[t]
            start += n
        tier_journals = [[_issn(subject, t, j) for j in range(journals_per_tier[t])] for t in range(3)]
        for t in range(3):
            for issn in tier_journals[t]:
                subjects[issn] = subject

        # syndicate membership (subject 1 only)
        groups: list[dict] = []
        member_group: dict[str, int] = {}
        if subject == 1 and config.syndicates:
            pool = list(rng.permutation(tier_authors[0]))
            for gi, spec in enumerate(config.syndicates):
                members = [str(a) for a in pool[:spec.size]]
                pool = pool[spec.size:]
                groups.append({"spec": spec, "members": members, "hub": members[0],
                               "house": tier_journals[0][gi % J]})
                for m in members:
                    member_group[m] = gi

        # works: (lead, tier, year, issn, team); refs filled in afterwards
        meta: list[dict] = []
        rr = [0, 0, 0]
        wmin, wmax = config.works_per_author
        for t in range(3):
            for a in tier_authors[t]:
                n_lead = int(rng.integers(wmin, wmax + 1))
                gi = member_group.get(a)
                if gi is not None:
                    n_lead = max(n_lead, _member_floor(groups[gi]["spec"], config.baseline_cite_rate))
                for _ in range(n_lead):
                    if gi is None:
                        issn = tier_journals[t][rr[t] % journals_per_tier[t]]
                        rr[t] += 1
                        year = int(rng.choice(years))
                        team = [a] + _coauthors(rng, draws, tier_authors[t], a, member_group)
                    else:
                        g = groups[gi]
                        issn = g["house"]
                        if rng.random() < BURST_SHARE:
                            year = int(rng.choice(g["spec"].burst_years))
                        else:
                            year = int(rng.choice(years))
                        team = [a] + _group_coauthors(rng, draws, g, a)
                    meta.append({"lead": a, "tier": t, "year": year, "issn": issn,
                                 "team": team, "group": gi})

        # deterministic work ids, sorted by (year, lead, draw order)
        order = sorted(range(len(meta)), key=lambda i: (meta[i]["year"], i))
        for i in order:
            counter += 1
            meta[i]["id"] = f"10.5555/syn.{subject}.{counter:07d}"

        # per-tier year-sorted targets for baseline references
        by_tier: list[list[int]] = [[], [], []]
        for i in order:
            by_tier[meta[i]["tier"]].append(i)
        tier_years = [[meta[i]["year"] for i in lst] for lst in by_tier]
        attract = np.array(config.attractiveness) * np.array([len(x) for x in by_tier], dtype=float)

        refs: list[list[str]] = [[] for _ in meta]
        for i in order:
            m = meta[i]
            chosen: set[int] = set()
            k = draws.n_refs()
            for _ in range(4 * k):
                if len(chosen) >= k:
                    break
                if rng.random() < config.homophily:
                    tt = m["tier"]
                else:
                    tt = int(rng.choice(3, p=attract / attract.sum()))
                n_avail = bisect.bisect_right(tier_years[tt], m["year"])
                if n_avail == 0:
                    continue
                j = by_tier[tt][int(rng.integers(n_avail))]
                if j != i:
                    chosen.add(j)
            refs[i] = [meta[j]["id"] for j in sorted(chosen)]

        # planted in-group references
        for gi, g in enumerate(groups):
            spec = g["spec"]
            members = g["members"]
            mine = [i for i in order if meta[i]["group"] == gi]
            led: dict[str, list[int]] = {a: [] for a in members}
            for i in mine:
                led[meta[i]["lead"]].append(i)
            extra = int(round((spec.internal_rate_multiplier - 1.0) * config.baseline_cite_rate))
            realized = []
            for i in mine:
                lead = meta[i]["lead"]
                have = set(refs[i])
                picks = _in_group_targets(rng, g, led, lead, i, extra)
                new = [meta[j]["id"] for j in picks if meta[j]["id"] not in have]
                refs[i] = sorted(have.union(new))
                realized.append(len(refs[i]))
            target = spec.internal_rate_multiplier * config.baseline_cite_rate
            mean_refs = float(np.mean(realized)) if realized else 0.0
            ok = bool(abs(mean_refs - target) <= 0.2 * target)
            audit.append({"syndicate": gi, "size": spec.size, "works": len(mine),
                          "target_refs_per_work": target, "realized_refs_per_work": mean_refs,
                          "within_20pct": ok})
            if spec.size >= 10 and not ok:
                log.warning("syndicate %d: realised %.1f refs/work vs target %.1f", gi, mean_refs, target)
            synd_truth.append({"members": sorted(members), "hub": g["hub"] if spec.topology == "hub_and_spoke" else None,
                               "topology": spec.topology, "multiplier": spec.internal_rate_multiplier,
                               "burst_years": list(spec.burst_years), "house_journal": g["house"]})

        for i in order:
            m = meta[i]
            pages = int(rng.integers(4, 31))
            works.append(WorkRecord(m["id"], m["year"], m["issn"], tuple(m["team"]), tuple(refs[i]), pages))

    members = {a for s in synd_truth for a in s["members"]}
    hubs = {s["hub"] for s in synd_truth if s["hub"]}
    truth = GroundTruth(members, hubs, tier_of, synd_truth)
    manifest = {
        "tool": "citeforge",
        "version": __version__,
        "generator": "synth",
        "scenario": config.to_dict(),
        "distributions": {
            "team_size": f"geometric(p={config.team_p}) truncated to 1..{MAX_TEAM}",
            "references": f"1 + negative_binomial(r={draws.nb_r}, p={draws.nb_p:.6f}) truncated to <= {draws.ref_cap}",
            "works_per_author": f"uniform integer {config.works_per_author[0]}..{config.works_per_author[1]}; "
                                "syndicate members at least ceil(2 (m - 1) b / (size - 1))",
            "rng": "numpy Generator(Philox(seed))",
        },
        "counts": {"works": len(works), "authors": len(tier_of), "journals": len(subjects)},
        "audit": audit,
    }
    return Scenario(sorted(works, key=lambda w: w.work_id), subjects, truth, manifest)


def _member_floor(spec: SyndicateSpec, b: float) -> int:
    """Works per member so the group's other works cover twice the in-group budget."""
    extra = (spec.internal_rate_multiplier - 1.0) * b
    return math.ceil(2.0 * extra / (spec.size - 1))


def _coauthors(rng, draws: _Draws, pool: list[str], lead: str, exclude: dict[str, int]) -> list[str]:
    t = draws.team_size() - 1
    out: list[str] = []
    for _ in range(4 * t):
        if len(out) >= t:
            break
        c = pool[int(rng.integers(len(pool)))]
        if c != lead and c not in out and c not in exclude:
            out.append(c)
    return out


def _forward(members: Sequence[str], lead: str) -> list[str]:
    """Spokes following ``lead`` on the ring, half the ring long."""
    spokes = list(members[1:])
    if lead not in spokes:
        return []
    k = spokes.index(lead)
    n = len(spokes)
    return [spokes[(k + d) % n] for d in range(1, (n - 1) // 2 + 1)]


def _group_coauthors(rng, draws: _Draws, g: dict, lead: str) -> list[str]:
    spec = g["spec"]
    if spec.topology == "mesh":
        pool = [m for m in g["members"] if m != lead]
    else:
        # hub-and-spoke works are single-authored so that every internal
        # edge follows a planted citation
        return []
    t = min(draws.team_size() - 1, len(pool))
    if t <= 0:
        return []
    return [pool[int(j)] for j in sorted(rng.choice(len(pool), size=t, replace=False))]


def _in_group_targets(rng, g: dict, led: dict[str, list[int]], lead: str, self_idx: int, n: int) -> list[int]:
    if n <= 0:
        return []
    spec = g["spec"]
    members = g["members"]
    if spec.topology == "mesh":
        pools = [[j for a in members if a != lead for j in led[a]]]
        shares = [1.0]
    elif lead == g["hub"]:
        pools = [[j for a in members[1:] for j in led[a]]]
        shares = [1.0]
    else:
        pools = [list(led[g["hub"]]), [j for a in _forward(members, lead) for j in led[a]]]
        shares = [HUB_SHARE, 1.0 - HUB_SHARE]
    picks: list[int] = []
    leftover = 0
    for pool, share in zip(pools, shares):
        pool = [j for j in pool if j != self_idx]
        want = int(round(n * share)) + leftover
        take = min(want, len(pool))
        leftover = want - take
        if take:
            picks.extend(int(pool[j]) for j in rng.choice(len(pool), size=take, replace=False))
    if leftover and len(pools) > 1:
        # hub pool short and spoke pool exhausted: nothing left to cite
        log.debug("in-group budget short by %d references", leftover)
    return picks


def write_scenario(sc: Scenario, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "works.jsonl").open("w", encoding="utf-8") as fh:
        for w in sc.works:
            fh.write(json.dumps(w.to_json(), sort_keys=True) + "\n")
    with (out / "subjects.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["issn", "subject"])
        for issn in sorted(sc.subjects):
            writer.writerow([issn, sc.subjects[issn]])
    (out / "truth.json").write_text(json.dumps(sc.truth.to_json(), indent=2, sort_keys=True) + "\n")
    manifest = dict(sc.manifest)
    manifest["works_sha256"] = hashlib.sha256((out / "works.jsonl").read_bytes()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_truth(path: str | Path) -> GroundTruth:
    return GroundTruth.from_json(json.loads(Path(path).read_text()))

"""Hybrid outlier detection: isolation-forest anomaly AND cohesion composite z-score."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cohort import MatchedPair, tier_of_pairs
from .features import FEATURE_NAMES, FeatureVector
from .isolation import MIN_ROWS, train_isolation_forest

log = logging.getLogger(__name__)

COHESION_WEIGHTS = {
    "coauthor_citation_rate": 4.0,
    "clique_strength": 3.5,
    "reciprocity_rate": 3.5,
    "hhi_out": 3.0,
    "self_citation_rate": 2.0,
    "journal_endogamy": 2.0,
}
# lower raw value means more suspicious
AUTHORITY_FEATURES = frozenset(
    {"eigenvector_centrality", "kcore_number", "citation_entropy", "citation_balance"}
)
IF_FEATURES = tuple(n for n in FEATURE_NAMES if n != "burst_intensity")

N_ESTIMATORS = 200
CONTAMINATION = 0.01
SEED = 42
SIGMAS = (1.0, 2.0, 3.0, 4.0)
METHODS = ("IF-only", "cohesion-only", "hybrid")


@dataclass
class BaselineStats:
    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray

    def z(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            Z = (X - self.mean) / self.sd
        Z[:, self.sd == 0] = 0.0
        return Z


def baseline_stats(X: np.ndarray, baseline_rows, columns: Sequence[str]) -> BaselineStats:
    base = np.asarray(X, dtype=float)[baseline_rows]
    if len(base) < 2:
        raise ValueError(f"need at least 2 baseline rows, got {len(base)}")
    mean = base.mean(axis=0)
    sd = base.std(axis=0)
    for name, s in zip(columns, sd):
        if s == 0:
            log.warning("feature %s has zero baseline variance; its z-scores are set to 0", name)
    return BaselineStats(tuple(columns), mean, sd)


def standardize(
    X: np.ndarray, baseline_rows, columns: Sequence[str] | None = None
) -> np.ndarray:
    """z-scores against the baseline rows' mean and population SD.

    Columns named in :data:`AUTHORITY_FEATURES` are sign-inverted.
    """
    X = np.asarray(X, dtype=float)
    columns = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    Z = baseline_stats(X, baseline_rows, columns).z(X)
    for j, name in enumerate(columns):
        if name in AUTHORITY_FEATURES:
            Z[:, j] = -Z[:, j]
    return Z


@dataclass
class CohesionScore:
    author: str
    s: float
    z_components: tuple[float, ...]
    baseline: str


def cohesion_score(fv: FeatureVector, stats: BaselineStats, baseline: str = "control") -> CohesionScore:
    """Weighted sum of the six cohesion z-scores."""
    x = []
    for name in COHESION_WEIGHTS:
        v = getattr(fv, name, None)
        if v is None:
            raise ValueError(f"{fv.author}: cohesion component {name} is absent")
        x.append(float(v))
    cols = [stats.columns.index(n) for n in COHESION_WEIGHTS]
    sd = stats.sd[cols]
    mean = stats.mean[cols]
    z = np.where(sd > 0, (np.array(x) - mean) / np.where(sd > 0, sd, 1.0), 0.0)
    s = float(np.dot(list(COHESION_WEIGHTS.values()), z))
    return CohesionScore(fv.author, s, tuple(float(v) for v in z), baseline)


@dataclass
class OutlierFlag:
    author: str
    subject: int
    tier: str
    if_score: float
    if_cutoff: float
    cohesion_s: float
    cohesion_z: float
    flagged: bool
    threshold_sigma: float

    @property
    def if_flag(self) -> bool:
        return self.if_score >= self.if_cutoff


def if_cutoff(if_scores: Iterable[float], contamination: float = CONTAMINATION) -> float:
    return float(np.quantile(np.fromiter(if_scores, dtype=float), 1.0 - contamination))


def hybrid_flag(
    if_scores: dict[str, float],
    cohesion: dict[str, float],
    sigma: float = 4.0,
    contamination: float = CONTAMINATION,
    baseline: Iterable[str] | None = None,
) -> list[OutlierFlag]:
    """Flag authors above the IF contamination cutoff whose cohesion z exceeds ``sigma``.

    ``cohesion`` holds raw composite scores; they are z-scored against the
    ``baseline`` authors (all authors when omitted).
    """
    if set(if_scores) != set(cohesion):
        raise ValueError("IF scores and cohesion scores are keyed differently")
    authors = sorted(if_scores)
    cut = if_cutoff((if_scores[a] for a in authors), contamination)
    base = sorted(baseline) if baseline is not None else authors
    s_base = np.array([cohesion[a] for a in base])
    mu, sd = s_base.mean(), s_base.std()
    out = []
    for a in authors:
        cz = (cohesion[a] - mu) / sd if sd > 0 else 0.0
        flagged = if_scores[a] >= cut and cz > sigma
        out.append(OutlierFlag(a, 0, "", if_scores[a], cut, cohesion[a], float(cz), bool(flagged), sigma))
    return out


@dataclass
class DetectConfig:
    sigma: float = 4.0
    contamination: float = CONTAMINATION
    seed: int = SEED
    n_estimators: int = N_ESTIMATORS
    baseline: str = "control"
    weight_if_inputs: bool = True


def _matrix(vectors: list[FeatureVector], columns: Sequence[str]) -> np.ndarray:
    return np.array(
        [[float(getattr(v, c) or 0.0) for c in columns] for v in vectors], dtype=float
    ).reshape(len(vectors), len(columns))


def detect(
    vectors: list[FeatureVector],
    pairs: list[MatchedPair],
    config: DetectConfig = DetectConfig(),
) -> list[OutlierFlag]:
    """Score every matched author, subject by subject."""
    if config.baseline not in ("control", "population"):
        raise ValueError(f"baseline must be 'control' or 'population', got {config.baseline!r}")
    tiers = tier_of_pairs(pairs)
    by_subject: dict[int, list[FeatureVector]] = {}
    for v in vectors:
        if (v.author, v.subject) in tiers:
            by_subject.setdefault(v.subject, []).append(v)
    flags: list[OutlierFlag] = []
    for subject in sorted(by_subject):
        vs = sorted(by_subject[subject], key=lambda v: v.author)
        if len(vs) < MIN_ROWS:
            log.warning("subject %d: %d authors, too few for the isolation forest; skipped", subject, len(vs))
            continue
        labels = [tiers[(v.author, subject)] for v in vs]
        if config.baseline == "control":
            base = np.array([t == "Control" for t in labels])
        else:
            base = np.ones(len(vs), dtype=bool)

        X = _matrix(vs, IF_FEATURES)
        Z = standardize(X, base, IF_FEATURES)
        if config.weight_if_inputs:
            w = np.array([COHESION_WEIGHTS.get(c, 1.0) for c in IF_FEATURES])
            Z = Z * w
        model = train_isolation_forest(
            Z, n_estimators=config.n_estimators, contamination=config.contamination, seed=config.seed
        )
        if_scores = model.score(Z)

        stats = baseline_stats(X, base, IF_FEATURES)
        s = np.array([cohesion_score(v, stats, config.baseline).s for v in vs])
        s_base = s[base]
        mu, sd = s_base.mean(), s_base.std()
        cz = (s - mu) / sd if sd > 0 else np.zeros_like(s)
        cut = if_cutoff(if_scores, config.contamination)
        for v, lab, ifs, si, zi in zip(vs, labels, if_scores, s, cz):
            flagged = bool(ifs >= cut and zi > config.sigma)
            flags.append(OutlierFlag(v.author, subject, lab, float(ifs), cut, float(si), float(zi),
                                     flagged, config.sigma))
    return flags


def mutual_components(members: Iterable[str], out_adj: dict[str, dict[str, float]]) -> list[list[str]]:
    """Connected components of ``members`` linked by citations in both directions."""
    members = set(members)
    nbrs: dict[str, set[str]] = {m: set() for m in members}
    for a in members:
        for b, w in out_adj.get(a, {}).items():
            if b in members and b != a and w > 0 and out_adj.get(b, {}).get(a, 0.0) > 0:
                nbrs[a].add(b)
                nbrs[b].add(a)
    seen: set[str] = set()
    comps = []
    for start in sorted(members):
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in nbrs[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


@dataclass
class SweepRow:
    sigma: float
    method: str
    n_flagged: int
    case_purity: float
    connected_share: float


def sensitivity_sweep(
    flags: list[OutlierFlag],
    out_adj: dict[str, dict[str, float]] | None = None,
    sigmas: Sequence[float] = SIGMAS,
) -> list[SweepRow]:
    """Flag counts, Case purity and connected share per (sigma, method)."""
    rows = []
    for sigma in sigmas:
        for method in METHODS:
            if method == "IF-only":
                chosen = [f for f in flags if f.if_flag]
            elif method == "cohesion-only":
                chosen = [f for f in flags if f.cohesion_z > sigma]
            else:
                chosen = [f for f in flags if f.if_flag and f.cohesion_z > sigma]
            n = len(chosen)
            purity = sum(f.tier == "Case" for f in chosen) / n if n else float("nan")
            connected = float("nan")
            if n and out_adj is not None:
                comps = mutual_components({f.author for f in chosen}, out_adj)
                linked = sum(len(c) for c in comps if len(c) >= 2)
                connected = linked / len({f.author for f in chosen})
            rows.append(SweepRow(float(sigma), method, n, purity, connected))
    return rows


OUTLIER_COLUMNS = ["subject", "author", "tier", "if_score", "if_cutoff", "cohesion_s",
                   "cohesion_z", "threshold_sigma", "flagged"]


def write_outliers(flags: list[OutlierFlag], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTLIER_COLUMNS)
        for f in sorted(flags, key=lambda f: (f.subject, f.author)):
            writer.writerow([f.subject, f.author, f.tier, repr(f.if_score), repr(f.if_cutoff),
                             repr(f.cohesion_s), repr(f.cohesion_z), repr(f.threshold_sigma),
                             int(f.flagged)])


def read_outliers(path: str | Path) -> list[OutlierFlag]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            OutlierFlag(r["author"], int(r["subject"]), r["tier"], float(r["if_score"]),
                        float(r["if_cutoff"]), float(r["cohesion_s"]), float(r["cohesion_z"]),
                        r["flagged"] == "1", float(r["threshold_sigma"]))
            for r in csv.DictReader(fh)
        ]


def write_sweep(rows: list[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "threshold_sigma", "outliers", "case_purity", "connected_share"])
        for r in rows:
            writer.writerow([r.method, r.sigma, r.n_flagged, _pct(r.case_purity), _pct(r.connected_share)])


def _pct(x: float) -> str:
    return "" if x != x else f"{x:.4f}"

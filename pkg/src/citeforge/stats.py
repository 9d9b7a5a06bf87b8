"""Matched-pair statistical battery and k-means behavioural archetypes."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .cohort import MatchedPair, eligible
from .features import FEATURE_NAMES, FeatureVector

log = logging.getLogger(__name__)

EXACT_MAX_N = 25
MIN_PAIRS = 5


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied |d| receive midranks. Returns
    (min(W+, W-), p). For n <= 25 the p-value is exact: the null
    distribution of W+ over all 2^n sign patterns is counted by convolution
    on doubled (integer) ranks. Larger n uses the tie-corrected normal
    approximation with continuity correction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired samples differ in length")
    d = x - y
    d = d[np.isfinite(d)]
    d = d[d != 0]
    n = len(d)
    if n == 0:
        log.warning("all paired differences are zero; p = 1")
        return 0.0, 1.0
    if n < MIN_PAIRS:
        raise ValueError(f"need at least {MIN_PAIRS} nonzero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
        counts[0] = 1
        for r in doubled:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[: len(counts) - r]
            counts = counts + shifted
        k = int(round(2 * w))
        tail = int(counts[: k + 1].sum())
        return w, min(1.0, 2 * tail / 2**n)

    mean = n * (n + 1) / 4.0
    _, t = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t**3 - t)) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return w, float(min(1.0, 2.0 * norm.sf(z)))


def bh_fdr(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg adjusted p-values, in input order."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    if m == 0:
        return []
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.empty(m)
    adj[order] = np.minimum(adj_sorted, 1.0)
    return adj.tolist()


def cliffs_delta(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("Cliff's delta needs two nonempty samples")
    ys = np.sort(y)
    less = np.searchsorted(ys, x, side="left")      # y_j < x_i
    greater = len(ys) - np.searchsorted(ys, x, side="right")  # y_j > x_i
    return float((less.sum() - greater.sum()) / (len(x) * len(y)))


def cohens_d(x: Sequence[float], y: Sequence[float]) -> float:
    """Mean difference over the df-pooled unbiased SD; NaN when that SD is zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("Cohen's d needs at least two values per sample")
    pooled = ((len(x) - 1) * x.var(ddof=1) + (len(y) - 1) * y.var(ddof=1)) / (len(x) + len(y) - 2)
    if pooled == 0:
        log.warning("pooled standard deviation is zero; Cohen's d undefined")
        return float("nan")
    return float((x.mean() - y.mean()) / math.sqrt(pooled))


def bootstrap_ci(
    diffs: Sequence[float], n_boot: int = 10_000, level: float = 0.95, seed: int = 42
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean paired difference."""
    d = np.asarray(diffs, dtype=float)
    if len(d) < MIN_PAIRS:
        raise ValueError(f"bootstrap needs at least {MIN_PAIRS} differences, got {len(d)}")
    rng = np.random.Generator(np.random.Philox(seed))
    means = np.empty(n_boot)
    chunk = max(1, 2_000_000 // len(d))
    for start in range(0, n_boot, chunk):
        stop = min(n_boot, start + chunk)
        idx = rng.integers(0, len(d), size=(stop - start, len(d)))
        means[start:stop] = d[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def permutation_test(
    values: Sequence[float], labels: Sequence, n_perm: int = 10_000, seed: int = 42
) -> float:
    """Two-sided label-shuffle test on the difference of group means."""
    v = np.asarray(values, dtype=float)
    lab = np.asarray(labels)
    groups = np.unique(lab)
    if len(groups) != 2:
        raise ValueError(f"need exactly two label groups, got {len(groups)}")
    a = lab == groups[0]
    n_a = int(a.sum())
    if n_a < 2 or len(v) - n_a < 2:
        raise ValueError("each group needs at least two values")
    total = v.sum()
    n = len(v)

    def stat(mask_sum_a):
        return mask_sum_a / n_a - (total - mask_sum_a) / (n - n_a)

    observed = abs(stat(v[a].sum()))
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    chunk = max(1, 2_000_000 // n)
    for start in range(0, n_perm, chunk):
        m = min(n_perm, start + chunk) - start
        perm = rng.permuted(np.tile(a, (m, 1)), axis=1)
        sums = (perm * v).sum(axis=1)
        hits += int(np.sum(np.abs(stat(sums)) >= observed - 1e-12 * max(1.0, observed)))
    return (1 + hits) / (1 + n_perm)


def placebo_pairs(controls: Sequence[tuple[str, int, int]], seed: int = 42) -> list[MatchedPair]:
    """Randomly pair Control authors with each other under the bucket rule.

    ``controls`` holds (author, subject, h5). Authors are shuffled; each
    unpaired author takes the first still-unpaired eligible author after it.
    """
    items = sorted(controls)
    rng = np.random.Generator(np.random.Philox(seed))
    order = [items[i] for i in rng.permutation(len(items))]
    used = [False] * len(order)
    pairs = []
    for i, (a, subj, h) in enumerate(order):
        if used[i]:
            continue
        for j in range(i + 1, len(order)):
            b, subj_b, hb = order[j]
            if not used[j] and subj_b == subj and eligible(h, hb):
                used[i] = used[j] = True
                pairs.append(MatchedPair(subj, a, b, h, hb))
                break
    return pairs


@dataclass
class PairedTestResult:
    subject: str
    metric: str
    n_pairs: int
    case_mean: float
    control_mean: float
    statistic: float
    p_value: float
    p_adjusted: float
    cliffs_delta: float
    cohens_d: float
    ci_low: float
    ci_high: float
    fold_change: float | None
    perm_p: float = float("nan")


def paired_values(
    vectors: dict[tuple[str, int], FeatureVector], pairs: Sequence[MatchedPair], metric: str
) -> tuple[np.ndarray, np.ndarray]:
    """Case and Control values of one metric, dropping pairs with either side missing."""
    xs, ys = [], []
    for p in pairs:
        a = vectors.get((p.case_author, p.subject))
        b = vectors.get((p.control_author, p.subject))
        if a is None or b is None:
            continue
        va, vb = a.value(metric), b.value(metric)
        if va is None or vb is None:
            continue
        xs.append(float(va))
        ys.append(float(vb))
    return np.array(xs), np.array(ys)


def fold_change(case_mean: float, control_mean: float) -> float | None:
    if control_mean == 0:
        return None
    return case_mean / control_mean


def format_fold(ratio: float | None) -> str:
    return "" if ratio is None else f"{ratio:.1f}×"


def paired_battery(
    vectors: Sequence[FeatureVector],
    pairs: Sequence[MatchedPair],
    subject_label: str = "all",
    metrics: Sequence[str] = FEATURE_NAMES,
    n_boot: int = 10_000,
    n_perm: int = 0,
    seed: int = 42,
) -> list[PairedTestResult]:
    """Per-metric paired tests with BH adjustment across metrics."""
    table = {(v.author, v.subject): v for v in vectors}
    nan = float("nan")
    results = []
    for metric in metrics:
        x, y = paired_values(table, pairs, metric)
        n = len(x)
        row = PairedTestResult(subject_label, metric, n, nan, nan, nan, nan, nan, nan, nan, nan, nan, None)
        if n:
            row.case_mean, row.control_mean = float(x.mean()), float(y.mean())
            row.fold_change = fold_change(row.case_mean, row.control_mean)
            row.cliffs_delta = cliffs_delta(x, y)
        if n >= 2:
            row.cohens_d = cohens_d(x, y)
        try:
            row.statistic, row.p_value = wilcoxon_signed_rank(x, y)
        except ValueError as exc:
            log.info("%s/%s: %s", subject_label, metric, exc)
        if n >= MIN_PAIRS:
            row.ci_low, row.ci_high = bootstrap_ci(x - y, n_boot=n_boot, seed=seed)
            if n_perm:
                values = np.concatenate([x, y])
                labels = np.array([1] * n + [0] * n)
                row.perm_p = permutation_test(values, labels, n_perm=n_perm, seed=seed)
        results.append(row)
    valid = [r for r in results if r.p_value == r.p_value]
    for r, q in zip(valid, bh_fdr([r.p_value for r in valid])):
        r.p_adjusted = q
    return results


def fold_change_table(
    vectors: Sequence[FeatureVector], pairs: Sequence[MatchedPair], metrics: Sequence[str] = FEATURE_NAMES
) -> list[dict]:
    """Case mean, Control mean and ratio per metric (ratio-of-means)."""
    table = {(v.author, v.subject): v for v in vectors}
    rows = []
    for metric in metrics:
        x, y = paired_values(table, pairs, metric)
        if len(x) == 0:
            rows.append({"metric": metric, "case_mean": None, "control_mean": None, "ratio": None})
            continue
        cm, km = float(x.mean()), float(y.mean())
        rows.append({"metric": metric, "case_mean": cm, "control_mean": km, "ratio": fold_change(cm, km)})
    return rows


def render_fold_table(rows: Sequence[dict]) -> str:
    """Markdown table shaped like a Case/Control metric-average summary."""
    lines = ["| Metric | Case | Control | Case/Control |", "|---|---:|---:|---:|"]
    for r in rows:
        cm = "" if r["case_mean"] is None else f"{r['case_mean']:.4f}"
        km = "" if r["control_mean"] is None else f"{r['control_mean']:.4f}"
        lines.append(f"| {r['metric']} | {cm} | {km} | {format_fold(r['ratio'])} |")
    return "\n".join(lines)


# ---------------------------------------------------------------- archetypes

ARCHETYPES = ("Central", "Independent", "Solo")


@dataclass
class ArchetypeAssignment:
    author: str
    cluster: str
    centroid_distances: tuple[float, ...]


def kmeans(
    X: np.ndarray, k: int = 3, seed: int = 42, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm from k-means++ seeding. Returns (labels, centroids, inertia)."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    centroids = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centroids)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total == 0:
            centroids.append(X[rng.integers(n)])
        else:
            centroids.append(X[rng.choice(n, p=d2 / total)])
    C = np.array(centroids)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new = dist.argmin(axis=1)
        for j in range(k):
            if not np.any(new == j):
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(dist[np.arange(n), new].argmax())
                new[far] = j
                dist[far] = 0.0
        if np.array_equal(new, labels):
            break
        labels = new
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    inertia = float(((X - C[labels]) ** 2).sum())
    return labels, C, inertia


def kmeans_archetypes(
    Z: np.ndarray, authors: Sequence[str], columns: Sequence[str], seed: int = 42
) -> list[ArchetypeAssignment]:
    """Three-way k-means with semantic labels.

    Solo: highest mean of the self- and co-author citation rate centroid
    coordinates. Central: highest mean k-core/eigenvector coordinate among
    the rest. Independent: the remaining cluster.
    """
    labels, C, _ = kmeans(Z, 3, seed)
    col = {c: i for i, c in enumerate(columns)}
    solo_score = C[:, [col["self_citation_rate"], col["coauthor_citation_rate"]]].mean(axis=1)
    solo = int(solo_score.argmax())
    central_score = C[:, [col["kcore_number"], col["eigenvector_centrality"]]].mean(axis=1)
    central_score[solo] = -np.inf
    central = int(central_score.argmax())
    name = {solo: "Solo", central: "Central"}
    for j in range(3):
        name.setdefault(j, "Independent")
    order = [j for a in ARCHETYPES for j in range(3) if name[j] == a]
    dists = np.sqrt(((Z[:, None, :] - C[None]) ** 2).sum(-1))
    return [
        ArchetypeAssignment(a, name[int(lab)], tuple(float(dists[i, j]) for j in order))
        for i, (a, lab) in enumerate(zip(authors, labels))
    ]


RESULT_COLUMNS = ["subject", "metric", "n_pairs", "case_mean", "control_mean", "statistic",
                  "p_value", "p_adjusted", "cliffs_delta", "cohens_d", "ci_low", "ci_high",
                  "fold_change", "perm_p"]


def write_results(rows: Sequence[PairedTestResult], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([_cell(getattr(r, c)) for c in RESULT_COLUMNS])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if v != v else f"{v:.6g}"
    return str(v)

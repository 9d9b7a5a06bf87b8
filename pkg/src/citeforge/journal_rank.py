"""Subject-level Eigenfactor-style journal scores and impact tiers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import JournalGraph

log = logging.getLogger(__name__)

LOW, MID, HIGH = "low", "mid", "high"


@dataclass
class EigenfactorResult:
    subject: int
    scores: dict[str, float]
    iterations: int
    residual: float
    converged: bool = True


@dataclass
class TierThresholds:
    subject: int
    p25: float
    p75: float


def transition_matrix(g: JournalGraph) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Column-stochastic citation matrix plus a dangling-column mask.

    Column j holds the share of journal j's outgoing citations going to each row.
    """
    nodes = sorted(g.nodes)
    index = {j: i for i, j in enumerate(nodes)}
    n = len(nodes)
    m = np.zeros((n, n))
    for (src, dst), count in g.edge_weights.items():
        if src == dst:
            continue
        m[index[dst], index[src]] += count
    col = m.sum(axis=0)
    dangling = col == 0
    m[:, ~dangling] /= col[~dangling]
    return nodes, m, dangling


def eigenfactor(
    g: JournalGraph,
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 1000,
    teleport: dict[str, float] | None = None,
) -> EigenfactorResult:
    """Stationary distribution of the damped citation walk, by power iteration.

    ``teleport`` optionally replaces the uniform teleport vector (for example
    with article counts); it is normalised to sum to one.
    """
    if not g.nodes:
        raise ValueError(f"subject {g.subject}: journal graph is empty")
    nodes, m, dangling = transition_matrix(g)
    n = len(nodes)
    if teleport is None:
        v = np.full(n, 1.0 / n)
    else:
        v = np.array([float(teleport.get(j, 0.0)) for j in nodes])
        if v.sum() <= 0:
            raise ValueError("teleport vector has no mass")
        v /= v.sum()

    x = v.copy()
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        x_new = damping * (m @ x + x[dangling].sum() * v) + (1.0 - damping) * v
        x_new /= x_new.sum()
        residual = float(np.abs(x_new - x).sum())
        x = x_new
        if residual < tol:
            break
    converged = residual < tol
    if not converged:
        log.warning("subject %d: Eigenfactor did not converge (residual %.3g)", g.subject, residual)
    return EigenfactorResult(
        subject=g.subject,
        scores={j: float(s) for j, s in zip(nodes, x)},
        iterations=it,
        residual=residual,
        converged=converged,
    )


def tier_thresholds(r: EigenfactorResult) -> TierThresholds:
    """25th/75th percentiles of the scores, linear interpolation between order statistics."""
    if len(r.scores) < 4:
        raise ValueError(f"subject {r.subject}: need at least 4 journals for quartiles, got {len(r.scores)}")
    vals = np.sort(np.fromiter(r.scores.values(), dtype=float))
    p25, p75 = np.percentile(vals, [25, 75])
    return TierThresholds(r.subject, float(p25), float(p75))


def label_journal_tier(scores: EigenfactorResult, th: TierThresholds) -> dict[str, str]:
    # ties at a threshold fall to mid
    out = {}
    for issn, s in scores.scores.items():
        if s < th.p25:
            out[issn] = LOW
        elif s > th.p75:
            out[issn] = HIGH
        else:
            out[issn] = MID
    return out


@dataclass
class TierRow:
    issn: str
    subject: int
    score: float
    tier: str


def write_tiers(rows: list[TierRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["issn", "subject", "score", "tier"])
        for r in sorted(rows, key=lambda r: (r.subject, r.issn)):
            writer.writerow([r.issn, r.subject, repr(r.score), r.tier])


def read_tiers(path: str | Path) -> list[TierRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            TierRow(row["issn"], int(row["subject"]), float(row["score"]), row["tier"])
            for row in csv.DictReader(fh)
        ]


def rank_subject(g: JournalGraph, damping: float = 0.85) -> list[TierRow]:
    """Score one subject graph and label its journals; too few journals -> all mid."""
    result = eigenfactor(g, damping=damping)
    try:
        labels = label_journal_tier(result, tier_thresholds(result))
    except ValueError as exc:
        log.warning("%s; labelling every journal mid", exc)
        labels = {j: MID for j in result.scores}
    return [TierRow(j, g.subject, result.scores[j], labels[j]) for j in sorted(result.scores)]

"""Isolation forest (uniform random feature, uniform random cut).

Randomness: one ``numpy.random.SeedSequence(seed)`` is spawned into one child
per tree and each child drives a ``Generator(Philox(child))``. Philox is a
counter-based generator, so a given (seed, tree index) yields the same
stream on every platform and in any order of tree construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EULER_GAMMA = 0.5772156649015329
MIN_ROWS = 16


def average_path_length(n: int | np.ndarray) -> np.ndarray:
    """c(n): mean unsuccessful-search depth of a binary search tree of n keys."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    two = n == 2
    big = n > 2
    out[two] = 1.0
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out


@dataclass
class IsolationTree:
    # parallel node arrays; feature == -1 marks a leaf
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    size: np.ndarray

    def path_length(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.depth[node] + average_path_length(self.size[node])


def _grow(X: np.ndarray, rng: np.random.Generator, max_depth: int) -> IsolationTree:
    feature, threshold, left, right, depth, size = [], [], [], [], [], []

    def new_node(d: int, n: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        depth.append(d)
        size.append(n)
        return len(feature) - 1

    stack = [(np.arange(len(X)), 0, new_node(0, len(X)))]
    while stack:
        rows, d, nid = stack.pop()
        if d >= max_depth or len(rows) <= 1:
            continue
        sub = X[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.nonzero(hi > lo)[0]
        if splittable.size == 0:
            continue
        f = int(splittable[rng.integers(splittable.size)])
        cut = float(rng.uniform(lo[f], hi[f]))
        mask = sub[:, f] < cut
        if mask.all() or not mask.any():
            # uniform draw landed on the boundary; treat as unsplittable
            continue
        feature[nid] = f
        threshold[nid] = cut
        l_id = new_node(d + 1, int(mask.sum()))
        r_id = new_node(d + 1, int((~mask).sum()))
        left[nid] = l_id
        right[nid] = r_id
        stack.append((rows[~mask], d + 1, r_id))
        stack.append((rows[mask], d + 1, l_id))
    return IsolationTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        depth=np.array(depth, dtype=float),
        size=np.array(size, dtype=float),
    )


@dataclass
class IsolationForestModel:
    n_estimators: int = 200
    max_samples: int = 256
    contamination: float = 0.01
    seed: int = 42
    feature_count: int = 0
    trees: list[IsolationTree] = field(default_factory=list)

    @property
    def c_norm(self) -> float:
        return float(average_path_length(self.max_samples))

    def score(self, X: np.ndarray) -> np.ndarray:
        """Anomaly scores ``2 ** (-E[h(x)] / c(max_samples))`` in (0, 1]."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_count:
            raise ValueError(f"expected {self.feature_count} features, got {X.shape[1]}")
        mean_path = np.mean([t.path_length(X) for t in self.trees], axis=0)
        return np.power(2.0, -mean_path / self.c_norm)


def train_isolation_forest(
    X: np.ndarray,
    n_estimators: int = 200,
    max_samples: int | str = "auto",
    contamination: float = 0.01,
    seed: int = 42,
) -> IsolationForestModel:
    """Fit ``n_estimators`` trees, each on ``min(256, n)`` rows drawn without replacement."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n = len(X)
    if n < MIN_ROWS:
        raise ValueError(f"isolation forest needs at least {MIN_ROWS} rows, got {n}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    psi = min(256, n) if max_samples == "auto" else min(int(max_samples), n)
    max_depth = math.ceil(math.log2(psi))
    children = np.random.SeedSequence(seed).spawn(n_estimators)
    trees = []
    for child in children:
        rng = np.random.Generator(np.random.Philox(child))
        rows = rng.choice(n, size=psi, replace=False)
        trees.append(_grow(X[rows], rng, max_depth))
    return IsolationForestModel(
        n_estimators=n_estimators,
        max_samples=psi,
        contamination=contamination,
        seed=seed,
        feature_count=X.shape[1],
        trees=trees,
    )


def anomaly_score(model: IsolationForestModel, row) -> float:
    return float(model.score(np.asarray(row, dtype=float).reshape(1, -1))[0])

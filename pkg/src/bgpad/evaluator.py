"""Detection metrics, cross-event accuracy and distance matrices, and event clustering."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import kernels
from .features import FeatureMatrix
from .ocsvm import OcsvmModel, predict
from .selector import block_truth, majority_smooth
from .stats import correlation_column, parse_corr_name, standardize_apply, standardize_fit

DEFAULT_SEED = 42
DEFAULT_RESTARTS = 100


@dataclass(frozen=True)
class ConfusionOutcome:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None


def confusion_metrics(predicted, truth) -> ConfusionOutcome:
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} labels")
    if p.size == 0:
        raise ValueError("no predictions to score")
    return ConfusionOutcome(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))


# ---------------------------------------------------------------------------
# labelled datasets and the balanced test split
# ---------------------------------------------------------------------------


@dataclass
class LabeledDataset:
    """Raw base features of one event plus the bins used for training and testing.

    ``fit_range`` holds the normal training bins.  Normal bins after it (and
    outside the anomaly) form the held-out pool, minus ``guard_bins`` bins
    right after the anomaly whose trailing windows still see anomalous data.
    """

    name: str
    matrix: FeatureMatrix
    fit_range: tuple[int, int]
    guard_bins: int = 0

    def __post_init__(self):
        if self.matrix.anomaly_interval is None:
            raise ValueError(f"dataset {self.name!r} has no anomaly interval")
        lo, hi = self.fit_range
        a_lo, a_hi = self.matrix.anomaly_interval
        if lo > hi:
            raise ValueError("fit range must satisfy start <= end")
        if not (hi < a_lo or lo > a_hi):
            raise ValueError(f"dataset {self.name!r}: fit range overlaps the anomaly interval")

    def holdout_mask(self) -> np.ndarray:
        m = self.matrix
        a_lo, a_hi = m.anomaly_interval
        idx = m.bin_index
        return (idx > self.fit_range[1]) & ~m.anomaly_mask() & ~((idx > a_hi) & (idx <= a_hi + self.guard_bins))


def balanced_blocks(anomaly_rows, holdout_rows, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of positive and negative k-bin blocks in equal numbers.

    Every block touching the anomaly is a positive.  Negatives are drawn,
    with the given seed, from blocks lying entirely in the held-out pool.
    """
    anomaly_rows = np.asarray(anomaly_rows, dtype=bool)
    holdout_rows = np.asarray(holdout_rows, dtype=bool)
    n = anomaly_rows.size
    pos = np.flatnonzero(block_truth(n, anomaly_rows, k))
    starts = np.arange(0, n, k)
    full_holdout = np.add.reduceat(holdout_rows.astype(np.int64), starts) == np.minimum(k, n - starts)
    neg_pool = np.flatnonzero(full_holdout & ~block_truth(n, anomaly_rows, k))
    m = min(pos.size, neg_pool.size)
    if m == 0:
        raise ValueError("balanced test needs at least one anomaly block and one held-out normal block")
    rng = np.random.default_rng(seed)
    neg = np.sort(rng.choice(neg_pool, size=m, replace=False))
    if pos.size > m:
        pos = np.sort(rng.choice(pos, size=m, replace=False))
    return pos, neg


def derive_columns(matrix: FeatureMatrix, names: Sequence[str], window: int) -> FeatureMatrix:
    """Project onto ``names``, computing any missing ``corr(A,B)`` column on the fly."""
    missing = [n for n in names if n not in matrix.columns]
    if missing:
        cols = []
        for name in missing:
            if parse_corr_name(name) is None:
                raise KeyError(f"dataset lacks base feature {name!r}")
            cols.append(correlation_column(matrix, name, window)[0])
        matrix = matrix.with_columns(missing, np.column_stack(cols))
    return matrix.select(list(names))


def evaluate_model(model: OcsvmModel, dataset: LabeledDataset, window: int, k: int = 5,
                   seed: int = DEFAULT_SEED, own_normalization: bool = True) -> ConfusionOutcome:
    """Block-level confusion of ``model`` on the dataset's balanced test split.

    Features are standardised with the dataset's own normal period unless
    ``own_normalization`` is False, in which case the model's stored
    statistics are used.
    """
    sub = derive_columns(dataset.matrix, model.feature_names, window)
    if own_normalization:
        X = standardize_apply(sub, standardize_fit(sub, dataset.fit_range)).values
    else:
        X = sub.values
    raw = predict(model, X, standardize=not own_normalization)
    blocks = majority_smooth(raw, k)
    pos, neg = balanced_blocks(sub.anomaly_mask(), dataset.holdout_mask(), k, seed)
    idx = np.concatenate([pos, neg])
    truth = np.concatenate([np.ones(pos.size, bool), np.zeros(neg.size, bool)])
    return confusion_metrics(blocks[idx], truth)


# ---------------------------------------------------------------------------
# accuracy and distance matrices
# ---------------------------------------------------------------------------


@dataclass
class AccuracyMatrix:
    """Percent accuracy of model i (row) on dataset j (column); NaN marks an invalid cell."""

    names: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.names)
        if self.values.shape != (n, n):
            raise ValueError("accuracy matrix must be square and match its names")
        ok = np.isfinite(self.values)
        if np.any((self.values[ok] < 0) | (self.values[ok] > 100)):
            raise ValueError("accuracies are percentages in [0, 100]")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def rounded(self) -> "AccuracyMatrix":
        return AccuracyMatrix(list(self.names), np.where(self.valid, np.floor(self.values + 0.5), np.nan))


@dataclass
class DistanceMatrix:
    names: list[str]
    values: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


def accuracy_matrix(models: Sequence[tuple[str, OcsvmModel]], datasets: Sequence[LabeledDataset],
                    window: int, k: int = 5, split_seed: int = DEFAULT_SEED) -> AccuracyMatrix:
    """Cross-evaluate each event's model on every event's balanced test split."""
    names = [n for n, _ in models]
    if names != [d.name for d in datasets]:
        raise ValueError("models and datasets must list the same events in the same order")
    am = np.full((len(names), len(names)), np.nan)
    for i, (_, model) in enumerate(models):
        for j, ds in enumerate(datasets):
            try:
                am[i, j] = 100.0 * evaluate_model(model, ds, window, k, split_seed).accuracy
            except (KeyError, ValueError):
                continue
    return AccuracyMatrix(names, am)


def distance_matrix(am: AccuracyMatrix, rounded: bool = False) -> DistanceMatrix:
    """d(i, j) = |AM(i,i) + AM(j,j) - AM(i,j) - AM(j,i)|."""
    A = am.rounded().values if rounded else am.values
    d = np.diag(A)
    with np.errstate(invalid="ignore"):
        D = np.abs(d[:, None] + d[None, :] - A - A.T)
    np.fill_diagonal(D, np.where(np.isfinite(d), 0.0, np.nan))
    return DistanceMatrix(list(am.names), D)


def write_square(names: Sequence[str], values: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *names])
        for name, row in zip(names, values):
            w.writerow([name, *(_cell(v) for v in row)])


def _cell(v: float) -> str:
    if not math.isfinite(v):
        return "invalid"
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_square(path) -> tuple[list[str], np.ndarray]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    vals = np.array([[np.nan if c == "invalid" else float(c) for c in r[1:]] for r in rows[1:]])
    if [r[0] for r in rows[1:]] != names:
        raise ValueError(f"{path}: row and column labels differ")
    return names, vals.reshape(len(names), len(names))


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, centers, max_iter):
    history = []
    labels, dist = kernels.assign(X, centers)
    for _ in range(max_iter):
        history.append(float(dist.sum()))
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(dist))
                new[c] = X[far]
                dist[far] = 0.0
        new_labels, new_dist = kernels.assign(X, new)
        if np.array_equal(new_labels, labels) and np.array_equal(new, centers):
            break
        centers, labels, dist = new, new_labels, new_dist
    history.append(float(dist.sum()))
    return labels, centers, float(dist.sum()), history


def kmeans(points, k: int, seed: int = DEFAULT_SEED, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins.

    Points are sorted lexicographically before seeding so the result does
    not depend on input order.  Cluster labels are numbered by first
    appearance in the caller's point order.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.lexsort(X.T[::-1])
    Xs = np.ascontiguousarray(X[order])
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, centers, inertia, hist = _lloyd(Xs, _kmeanspp(Xs, k, rng), max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia, hist)
    labels_sorted, centers, inertia, hist = best
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    remap: dict[int, int] = {}
    for lab in labels:
        remap.setdefault(int(lab), len(remap))
    new_labels = np.array([remap[int(l)] for l in labels], dtype=np.int64)
    new_centers = np.empty_like(centers)
    for old, new in remap.items():
        new_centers[new] = centers[old]
    return KMeansResult(new_labels, new_centers, inertia, hist)


def partition_inertia(X, labels) -> float:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    return float(sum(((X[labels == c] - X[labels == c].mean(axis=0)) ** 2).sum() for c in np.unique(labels)))


def _kmedoids(D, k):
    n = D.shape[0]
    best = None
    if math.comb(n, k) <= 200_000:
        for meds in itertools.combinations(range(n), k):
            cost = D[:, meds].min(axis=1).sum()
            if best is None or cost < best[0]:
                best = (cost, meds)
        meds = list(best[1])
    else:
        meds = [int(np.argmin(D.sum(axis=1)))]
        while len(meds) < k:
            gains = [D[:, meds].min(axis=1).sum() - np.minimum(D[:, meds].min(axis=1), D[:, c]).sum()
                     if c not in meds else -1 for c in range(n)]
            meds.append(int(np.argmax(gains)))
        improved = True
        while improved:
            improved = False
            cost = D[:, meds].min(axis=1).sum()
            for i, o in itertools.product(range(k), range(n)):
                if o in meds:
                    continue
                trial = meds[:i] + [o] + meds[i + 1:]
                c2 = D[:, trial].min(axis=1).sum()
                if c2 < cost:
                    meds, cost, improved = trial, c2, True
    labels = np.argmin(D[:, meds], axis=1)
    return labels, float(D[:, meds].min(axis=1).sum())


@dataclass
class EventClusters:
    k: int
    seed: int
    method: str
    groups: list[list[str]]
    labels: dict[str, int]
    inertia: float

    def as_sets(self) -> set[frozenset[str]]:
        return {frozenset(g) for g in self.groups}


def cluster_events(dm: DistanceMatrix, k: int, seed: int = DEFAULT_SEED,
                   restarts: int = DEFAULT_RESTARTS, method: str = "kmeans") -> EventClusters:
    """Group events by clustering the rows of their distance matrix."""
    D = np.asarray(dm.values, dtype=float)
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has invalid entries")
    if not np.array_equal(D, D.T):
        raise ValueError("distance matrix is not symmetric")
    if method == "kmeans":
        res = kmeans(D, k, seed=seed, restarts=restarts)
        labels, inertia = res.labels, res.inertia
    elif method == "kmedoids":
        labels, inertia = _kmedoids(D, k)
        remap: dict[int, int] = {}
        labels = np.array([remap.setdefault(int(l), len(remap)) for l in labels])
    else:
        raise ValueError(f"unknown clustering method {method!r}")
    groups = [[name for name, lab in zip(dm.names, labels) if lab == c] for c in range(int(labels.max()) + 1)]
    return EventClusters(k, seed, method, groups, {n: int(l) for n, l in zip(dm.names, labels)}, float(inertia))


def write_clusters(clusters: Sequence[EventClusters], path) -> None:
    doc = [{"k": c.k, "seed": c.seed, "method": c.method, "inertia": c.inertia, "groups": c.groups}
           for c in clusters]
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")


# Reference accuracy matrix of the six reference events (rows: models, columns: datasets).
REFERENCE_EVENTS = ["Nimda", "Slammer", "Codered", "Eastcoast", "Florida", "Katrina"]
REFERENCE_ACCURACY = np.array([
    [99, 100, 82, 85, 70, 62],
    [90, 100, 81, 50, 32, 50],
    [70, 51, 91, 45, 55, 49],
    [50, 50, 50, 100, 50, 54],
    [51, 50, 50, 41, 91, 50],
    [53, 77, 63, 62, 60, 90],
], dtype=float)
# Distance matrix as printed alongside it; the Slammer/Florida cell reads 105
# although the accuracies above give |100 + 91 - 32 - 50| = 109.
REFERENCE_DISTANCE_PRINTED = np.array([
    [0, 9, 38, 64, 69, 74],
    [9, 0, 59, 100, 105, 63],
    [38, 59, 0, 96, 77, 69],
    [64, 100, 96, 0, 100, 74],
    [69, 105, 77, 100, 0, 71],
    [74, 63, 69, 74, 71, 0],
], dtype=float)


def reference_accuracy_matrix() -> AccuracyMatrix:
    return AccuracyMatrix(list(REFERENCE_EVENTS), REFERENCE_ACCURACY.copy())

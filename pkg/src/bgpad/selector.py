"""Two-sigma feature scoring and selection.

Each feature is thresholded at mean +/- 2 std of its normal period, the
per-bin flags are smoothed by majority vote over blocks of ``k`` bins, and
the smoothed blocks are scored against the labelled anomaly interval.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .features import FEATURE_NAMES, FeatureMatrix
from .stats import StandardizationParams, parse_corr_name, standardize_fit

DEFAULT_K = 5
DEFAULT_N_BASE = 4
DEFAULT_N_CORR = 4


def flag_outliers(series, mu: float, sigma: float) -> np.ndarray:
    """True where a value lies strictly outside mu +/- 2 sigma (any deviation when sigma is 0)."""
    x = np.asarray(series, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x != mu
    return (x < mu - 2.0 * sigma) | (x > mu + 2.0 * sigma)


def majority_smooth(flags, k: int = DEFAULT_K) -> np.ndarray:
    """One verdict per block of ``k`` bins: abnormal iff strictly more than half are flagged."""
    if k < 1:
        raise ValueError("k must be >= 1")
    f = np.asarray(flags, dtype=bool)
    n = f.size
    nblocks = -(-n // k)
    if n == 0:
        return np.zeros(0, dtype=bool)
    counts = np.add.reduceat(f.astype(np.int64), np.arange(0, n, k))
    sizes = np.full(nblocks, k)
    sizes[-1] = n - k * (nblocks - 1)
    return 2 * counts > sizes


def block_truth(n: int, anomaly_rows: np.ndarray, k: int) -> np.ndarray:
    """A block is abnormal when any of its bins is inside the anomaly interval."""
    mask = np.asarray(anomaly_rows, dtype=bool)
    if n == 0:
        return np.zeros(0, dtype=bool)
    return np.add.reduceat(mask.astype(np.int64), np.arange(0, n, k)) > 0


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 0.0


@dataclass(frozen=True)
class FeatureScore:
    name: str
    threshold_lo: float
    threshold_hi: float
    confusion: Confusion
    score: float
    selected: bool = False

    @property
    def is_correlation(self) -> bool:
        return parse_corr_name(self.name) is not None


def score_feature(series, params: tuple[float, float], anomaly_rows, k: int = DEFAULT_K,
                  name: str = "", metric: str = "youden", eval_rows=None) -> FeatureScore:
    """Score one feature by how well its smoothed 2-sigma flags track the anomaly.

    ``params`` is the (mean, std) pair fitted on normal data.  ``anomaly_rows``
    is a boolean mask aligned with ``series``; ``eval_rows`` optionally limits
    the bins that take part (warm-up and guard bins are usually excluded).
    """
    x = np.asarray(series, dtype=float)
    truth_rows = np.asarray(anomaly_rows, dtype=bool)
    if eval_rows is not None:
        keep = np.asarray(eval_rows, dtype=bool)
        x, truth_rows = x[keep], truth_rows[keep]
    if not truth_rows.any():
        raise ValueError("anomaly interval is empty")
    mu, sigma = params
    blocks = majority_smooth(flag_outliers(x, mu, sigma), k)
    truth = block_truth(x.size, truth_rows, k)
    conf = Confusion(int(np.sum(blocks & truth)), int(np.sum(blocks & ~truth)),
                     int(np.sum(~blocks & ~truth)), int(np.sum(~blocks & truth)))
    if metric == "youden":
        score = conf.tpr - conf.fpr
    elif metric == "f1":
        score = conf.f1
    else:
        raise ValueError(f"unknown score metric {metric!r}")
    return FeatureScore(name, mu - 2.0 * sigma, mu + 2.0 * sigma, conf, score)


@dataclass
class SelectionReport:
    scores: list[FeatureScore]
    selected_base: list[str]
    selected_corr: list[str]
    params: dict = field(default_factory=dict)

    @property
    def selected(self) -> list[str]:
        return self.selected_base + self.selected_corr

    def score_of(self, name: str) -> FeatureScore:
        for s in self.scores:
            if s.name == name:
                return s
        raise KeyError(name)


def _rank(scores: list[FeatureScore], order: dict[str, int]) -> list[FeatureScore]:
    return sorted(scores, key=lambda s: (-s.score, s.confusion.fpr, order[s.name]))


def select_features(matrix: FeatureMatrix, fit_range: tuple[int, int], k: int = DEFAULT_K,
                    n_base: int | None = DEFAULT_N_BASE, n_corr: int | None = DEFAULT_N_CORR,
                    metric: str = "youden", eval_rows=None,
                    normal_params: StandardizationParams | None = None) -> SelectionReport:
    """Score every column and keep the top ``n_base`` base and ``n_corr`` correlation features.

    ``None`` for a size means "all of that category".  Ties rank by lower
    false-positive rate, then by column order.
    """
    if matrix.anomaly_interval is None:
        raise ValueError("selection needs a labelled anomaly interval")
    if (n_base is not None and n_base < 0) or (n_corr is not None and n_corr < 0):
        raise ValueError("selection sizes must be non-negative")
    params = normal_params or standardize_fit(matrix, fit_range)
    truth = matrix.anomaly_mask()
    scores = [score_feature(matrix.values[:, j], params.entry(name), truth, k, name, metric, eval_rows)
              for j, name in enumerate(matrix.columns)]
    order = {name: j for j, name in enumerate(matrix.columns)}
    base = _rank([s for s in scores if not s.is_correlation], order)
    corr = _rank([s for s in scores if s.is_correlation], order)

    def cap(n, pool, label):
        if n is None:
            return len(pool)
        if n > len(pool):
            warnings.warn(f"asked for {n} {label} features, only {len(pool)} available", stacklevel=3)
            return len(pool)
        return n

    nb = cap(n_base, base, "base")
    nc = cap(n_corr, corr, "correlation")
    chosen = {s.name for s in base[:nb]} | {s.name for s in corr[:nc]}
    ranked = [FeatureScore(s.name, s.threshold_lo, s.threshold_hi, s.confusion, s.score, s.name in chosen)
              for s in base + corr]
    return SelectionReport(
        scores=ranked,
        selected_base=[s.name for s in base[:nb]],
        selected_corr=[s.name for s in corr[:nc]],
        params={"k": int(k), "n_base": nb, "n_corr": nc, "metric": metric,
                "fit_range": [int(v) for v in fit_range],
                "anomaly_interval": list(matrix.anomaly_interval)},
    )


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else str(v)


def write_report(report: SelectionReport, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "threshold_lo", "threshold_hi", "TP", "FP", "TN", "FN", "score", "selected"])
        for s in report.scores:
            c = s.confusion
            w.writerow([s.name, _fmt(s.threshold_lo), _fmt(s.threshold_hi), c.tp, c.fp, c.tn, c.fn,
                        _fmt(s.score), "true" if s.selected else "false"])
    side = {**report.params, "selected_base": report.selected_base, "selected_corr": report.selected_corr}
    path.with_name(path.stem + ".meta.yaml").write_text(yaml.safe_dump(side, sort_keys=True), encoding="utf-8")


def read_report(path) -> SelectionReport:
    path = Path(path)
    scores = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            conf = Confusion(int(row["TP"]), int(row["FP"]), int(row["TN"]), int(row["FN"]))
            scores.append(FeatureScore(row["name"], float(row["threshold_lo"]), float(row["threshold_hi"]),
                                       conf, float(row["score"]), row["selected"] == "true"))
    side_file = path.with_name(path.stem + ".meta.yaml")
    side = yaml.safe_load(side_file.read_text(encoding="utf-8")) if side_file.exists() else {}
    side = side or {}
    base = side.pop("selected_base", [s.name for s in scores if s.selected and not s.is_correlation])
    corr = side.pop("selected_corr", [s.name for s in scores if s.selected and s.is_correlation])
    return SelectionReport(scores, base, corr, side)


def plot_rows(matrix: FeatureMatrix, score: FeatureScore) -> list[tuple]:
    """(bin, value, lo, hi, flagged) rows for charting one feature."""
    x = matrix.column(score.name)
    lo, hi = score.threshold_lo, score.threshold_hi
    flags = (x != lo) if lo == hi else (x < lo) | (x > hi)
    return [(int(b), float(v), score.threshold_lo, score.threshold_hi, bool(f))
            for b, v, f in zip(matrix.bin_index, x, flags)]


def write_plot_csv(matrix: FeatureMatrix, score: FeatureScore, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "value", "lo", "hi", "flagged"])
        for b, v, lo, hi, f in plot_rows(matrix, score):
            w.writerow([b, _fmt(v), _fmt(lo), _fmt(hi), int(f)])


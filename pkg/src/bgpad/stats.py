"""Standardisation, Pearson correlation, its t-test, and rolling-correlation features."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from . import kernels
from .features import FEATURE_NAMES, FeatureMatrix

DEFAULT_WINDOW = 60
DEFAULT_ALPHA = 0.05


class DegenerateCorrelation(ValueError):
    """Raised when a series has zero variance."""


@dataclass(frozen=True)
class StandardizationParams:
    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    fit_range: tuple[int, int]

    @property
    def degenerate(self) -> tuple[str, ...]:
        return tuple(c for c, s in zip(self.columns, self.std) if s == 0.0)

    def entry(self, name: str) -> tuple[float, float]:
        i = self.columns.index(name)
        return float(self.mean[i]), float(self.std[i])

    def subset(self, names: Sequence[str]) -> "StandardizationParams":
        idx = [self.columns.index(n) for n in names]
        return StandardizationParams(tuple(names), self.mean[idx].copy(), self.std[idx].copy(), self.fit_range)


def standardize_fit(matrix: FeatureMatrix, fit_range: tuple[int, int]) -> StandardizationParams:
    """Column means and sample standard deviations (ddof=1) over ``fit_range`` (inclusive bins)."""
    lo, hi = fit_range
    rows = matrix.rows_for(lo, hi)
    n = int(rows.sum())
    if lo > hi or n == 0:
        raise ValueError(f"empty fit range {fit_range}")
    block = matrix.values[rows]
    mean = block.mean(axis=0)
    if n > 1:
        std = np.sqrt(((block - mean) ** 2).sum(axis=0) / (n - 1))
    else:
        std = np.zeros(block.shape[1])
    std[np.all(block == block[0], axis=0)] = 0.0
    return StandardizationParams(tuple(matrix.columns), mean, std, (int(lo), int(hi)))


def standardize_apply(matrix: FeatureMatrix, params: StandardizationParams) -> FeatureMatrix:
    if tuple(matrix.columns) != params.columns:
        raise ValueError("standardisation parameters were fitted on different columns")
    out = np.zeros_like(matrix.values)
    live = params.std > 0
    out[:, live] = (matrix.values[:, live] - params.mean[live]) / params.std[live]
    meta = dict(matrix.meta)
    meta["degenerate_columns"] = list(params.degenerate)
    meta["standardized_on"] = list(params.fit_range)
    return replace(matrix, values=out, meta=meta)


def pearson(x, y) -> float:
    """Sample Pearson coefficient, clamped to [-1, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D series of equal length")
    if x.size < 3:
        raise ValueError("pearson needs at least 3 points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateCorrelation("constant series")
    dx = x - x.mean()
    dy = y - y.mean()
    # symmetric in x and y so pearson(x, y) == pearson(y, x) bit for bit
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class Significance:
    t_statistic: float
    p_value: float
    significant: bool


def significance(r: float, n: int, alpha: float = DEFAULT_ALPHA) -> Significance:
    """Two-tailed t-test of a Pearson coefficient with n - 2 degrees of freedom."""
    if n < 3:
        raise ValueError("significance needs n >= 3")
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"|r| must be <= 1, got {r}")
    df = n - 2
    if abs(r) == 1.0:
        return Significance(math.copysign(math.inf, r), 0.0, True)
    t = r * math.sqrt(df / (1.0 - r * r))
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t * t)))
    p = min(1.0, max(0.0, p))
    return Significance(t, p, p < alpha)


def rolling_correlation(x, y, window: int = DEFAULT_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window Pearson series and its validity mask.

    Entry ``t`` correlates bins ``t-window+1 .. t``.  The first ``window-1``
    entries and windows with a constant series are 0 with mask ``False``.
    """
    if window < 3:
        raise ValueError("window must be >= 3")
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-D and of equal length")
    if x.size < window:
        raise ValueError(f"series of length {x.size} shorter than window {window}")
    return kernels.rolling_pearson(x, y, window)


@dataclass(frozen=True)
class CorrelationFeatureSpec:
    pair: tuple[str, str]
    window: int
    global_r: float
    p_value: float
    significant: bool
    degenerate: bool = False

    @property
    def name(self) -> str:
        return corr_name(*self.pair)


def corr_name(a: str, b: str) -> str:
    return f"corr({a},{b})"


def parse_corr_name(name: str) -> tuple[str, str] | None:
    if not (name.startswith("corr(") and name.endswith(")")):
        return None
    a, sep, b = name[5:-1].partition(",")
    return (a, b) if sep else None


def correlation_column(matrix: FeatureMatrix, name: str, window: int) -> tuple[np.ndarray, np.ndarray]:
    pair = parse_corr_name(name)
    if pair is None:
        raise KeyError(f"{name!r} is not a correlation feature")
    return rolling_correlation(matrix.column(pair[0]), matrix.column(pair[1]), window)


def generate_correlation_features(matrix: FeatureMatrix, fit_range: tuple[int, int],
                                  window: int = DEFAULT_WINDOW, alpha: float = DEFAULT_ALPHA,
                                  base_columns: Sequence[str] | None = None,
                                  ) -> tuple[FeatureMatrix, list[CorrelationFeatureSpec]]:
    """Add a rolling-correlation column for every significantly correlated base pair.

    Expects raw (unstandardised) features.  Significance is judged once, on
    the fit-range correlation of each pair.
    """
    if base_columns is None:
        base_columns = [c for c in FEATURE_NAMES if c in matrix.columns]
    rows = matrix.rows_for(*fit_range)
    n = int(rows.sum())
    if n < 3:
        raise ValueError(f"fit range {fit_range} holds {n} bins, need >= 3")
    specs: list[CorrelationFeatureSpec] = []
    names: list[str] = []
    series: list[np.ndarray] = []
    undefined: dict[str, int] = {}
    for a, b in itertools.combinations(base_columns, 2):
        xa = matrix.column(a)
        xb = matrix.column(b)
        try:
            r = pearson(xa[rows], xb[rows])
        except DegenerateCorrelation:
            specs.append(CorrelationFeatureSpec((a, b), window, 0.0, 1.0, False, degenerate=True))
            continue
        sig = significance(r, n, alpha)
        specs.append(CorrelationFeatureSpec((a, b), window, r, sig.p_value, sig.significant))
        if not sig.significant:
            continue
        values, valid = rolling_correlation(xa, xb, window)
        names.append(corr_name(a, b))
        series.append(values)
        undefined[names[-1]] = int((~valid).sum())
    values = np.column_stack(series) if series else np.zeros((matrix.n_bins, 0))
    out = matrix.with_columns(names, values, correlation_window=int(window), correlation_alpha=float(alpha),
                              correlation_fit_range=[int(v) for v in fit_range],
                              undefined_entries=undefined)
    return out, specs


def write_specs(specs: Sequence[CorrelationFeatureSpec], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_a", "pair_b", "global_r", "p_value", "significant"])
        for s in specs:
            w.writerow([s.pair[0], s.pair[1], repr(float(s.global_r)), repr(float(s.p_value)),
                        "true" if s.significant else "false"])


def read_specs(path, window: int = DEFAULT_WINDOW) -> list[CorrelationFeatureSpec]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        return [CorrelationFeatureSpec((row["pair_a"], row["pair_b"]), window, float(row["global_r"]),
                                       float(row["p_value"]), row["significant"] == "true")
                for row in csv.DictReader(fh)]

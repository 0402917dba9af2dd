"""End-to-end detection: features -> correlation features -> selection -> SVM -> verdicts."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .evaluator import ConfusionOutcome, LabeledDataset, confusion_metrics
from .events import UpdateEvent
from .features import ExtractionConfig, FeatureMatrix, extract_features
from .ocsvm import KernelParams, OcsvmModel, TrainingDiagnostics, decision, train, tune
from .selector import SelectionReport, block_truth, majority_smooth, select_features
from .stats import CorrelationFeatureSpec, generate_correlation_features, standardize_apply, standardize_fit


def selection_rows(matrix: FeatureMatrix, fit_range: tuple[int, int]) -> np.ndarray:
    """Bins the selector scores on: the normal fit range plus the anomaly."""
    return matrix.rows_for(*fit_range) | matrix.anomaly_mask()


def train_on(matrix: FeatureMatrix, names: Sequence[str], fit_range: tuple[int, int],
             cfg: PipelineConfig, validation: tuple[np.ndarray, np.ndarray] | None = None,
             ) -> tuple[OcsvmModel, TrainingDiagnostics, dict]:
    """Standardise ``names`` on the fit range and train the one-class SVM there.

    With ``cfg.tune`` the (nu, gamma) grid is searched on ``validation``
    (rows, labels), which must not overlap the bins used for testing.
    """
    sub = matrix.select(list(names))
    params = standardize_fit(sub, fit_range)
    z = standardize_apply(sub, params)
    X = z.values[z.rows_for(*fit_range)]
    nu, gamma, info = cfg.nu, cfg.gamma_for(len(names)), {}
    if cfg.tune:
        if validation is None:
            raise ValueError("tuning needs a labelled validation split")
        vrows, vlabels = validation
        best, cells = tune(X, z.values[vrows], vlabels, cfg.nu_grid, cfg.gamma_grid, cfg.tol, cfg.max_iter)
        nu, gamma = best.nu, best.gamma
        info = {"tuned": True, "cells": [(c.nu, c.gamma, c.score) for c in cells]}
    kernel = KernelParams(cfg.kernel, gamma)
    model, diag = train(X, nu, kernel, cfg.tol, cfg.max_iter, feature_names=tuple(names),
                        standardization=params)
    return model, diag, info


@dataclass
class Verdicts:
    """Per-bin decision values, raw verdicts and block-smoothed verdicts."""

    bin_index: np.ndarray
    decision: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray
    k: int

    @property
    def block_verdicts(self) -> np.ndarray:
        return self.smoothed[:: self.k]


def detect(model: OcsvmModel, matrix: FeatureMatrix, k: int, fit_range: tuple[int, int] | None = None,
           ) -> Verdicts:
    """Score every bin.  Features are standardised on ``fit_range`` of this
    matrix when given, otherwise with the statistics stored in the model."""
    sub = matrix.select(list(model.feature_names))
    params = standardize_fit(sub, fit_range) if fit_range is not None else model.standardization
    if params is None:
        raise ValueError("no standardisation available: pass a fit range or a model that stores one")
    X = standardize_apply(sub, params).values
    dec = decision(model, X) if X.shape[0] else np.zeros(0)
    raw = dec < 0
    blocks = majority_smooth(raw, k)
    smoothed = np.repeat(blocks, k)[: raw.size]
    return Verdicts(matrix.bin_index.copy(), np.asarray(dec, dtype=float), raw, smoothed, k)


def block_outcome(verdicts: Verdicts, dataset: LabeledDataset) -> ConfusionOutcome:
    """Block-level confusion over every anomaly block and every fully held-out normal block."""
    k = verdicts.k
    n = verdicts.raw.size
    anomaly = dataset.matrix.anomaly_mask()
    hold = dataset.holdout_mask()
    starts = np.arange(0, n, k)
    pos = block_truth(n, anomaly, k)
    neg = (np.add.reduceat(hold.astype(np.int64), starts) == np.minimum(k, n - starts)) & ~pos
    keep = pos | neg
    return confusion_metrics(verdicts.block_verdicts[keep], pos[keep])


@dataclass
class PipelineResult:
    matrix: FeatureMatrix  # base + correlation features
    specs: list[CorrelationFeatureSpec]
    selection: SelectionReport
    model: OcsvmModel
    diagnostics: TrainingDiagnostics
    verdicts: Verdicts
    outcome: ConfusionOutcome
    training_abnormal_fraction: float


def run_matrix(matrix: FeatureMatrix, fit_range: tuple[int, int], cfg: PipelineConfig) -> PipelineResult:
    """Everything after feature extraction, on one labelled matrix."""
    LabeledDataset(matrix.dataset_id or "dataset", matrix, fit_range, cfg.guard)  # validates the ranges
    aug, specs = generate_correlation_features(matrix, fit_range, cfg.window, cfg.alpha)
    report = select_features(aug, fit_range, cfg.k, cfg.n_base, cfg.n_corr, cfg.score_metric,
                             eval_rows=selection_rows(aug, fit_range))
    if not report.selected:
        raise ValueError("no features selected")
    model, diag, _ = train_on(aug, report.selected, fit_range, cfg)
    verdicts = detect(model, aug, cfg.k, fit_range)
    outcome = block_outcome(verdicts, LabeledDataset(matrix.dataset_id or "dataset", aug, fit_range, cfg.guard))
    fit_rows = aug.rows_for(*fit_range)
    return PipelineResult(aug, specs, report, model, diag, verdicts, outcome,
                          float(verdicts.raw[fit_rows].mean()))


def run_events(events: Sequence[UpdateEvent], fit_range: tuple[int, int],
               anomaly_interval: tuple[int, int], cfg: PipelineConfig, origin: int | None = None,
               dataset_id: str = "") -> PipelineResult:
    matrix = extract_features(events, ExtractionConfig(bin_width=cfg.bin_width, origin=origin),
                              dataset_id, anomaly_interval)
    return run_matrix(matrix, fit_range, cfg)


def write_verdicts(verdicts: Verdicts, bin_start: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_index", "bin_start", "decision", "abnormal", "abnormal_smoothed"])
        for i in range(verdicts.raw.size):
            w.writerow([int(verdicts.bin_index[i]), int(bin_start[i]), "%.17g" % verdicts.decision[i],
                        int(verdicts.raw[i]), int(verdicts.smoothed[i])])


def read_verdicts(path, k: int) -> Verdicts:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return Verdicts(np.array([int(r["bin_index"]) for r in rows], dtype=np.int64),
                    np.array([float(r["decision"]) for r in rows]),
                    np.array([r["abnormal"] == "1" for r in rows], dtype=bool),
                    np.array([r["abnormal_smoothed"] == "1" for r in rows], dtype=bool), k)

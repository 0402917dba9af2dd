"""One-class nu-SVM trained with SMO.

Dual problem solved here::

    min_a  1/2 a' K a    s.t.  0 <= a_i <= 1/(nu * l),  sum_i a_i = 1

with decision(x) = sum_i a_i K(x_i, x) - rho.  Positive decisions are
normal, negative ones abnormal.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .features import FeatureMatrix
from .selector import majority_smooth
from .stats import StandardizationParams

FORMAT_VERSION = 1
FULL_GRAM_LIMIT = 8192
DEFAULT_NU_GRID = (0.01, 0.05, 0.1, 0.2, 0.5)
DEFAULT_GAMMA_GRID = (2.0**-10, 2.0**-7, 2.0**-4, 2.0**-1, 2.0**2)


@dataclass(frozen=True)
class KernelParams:
    kind: str = "rbf"
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("RBF gamma must be a positive finite number")


def kernel_matrix(A, B, params: KernelParams) -> np.ndarray:
    A = np.ascontiguousarray(np.atleast_2d(A), dtype=float)
    B = np.ascontiguousarray(np.atleast_2d(B), dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if params.kind == "rbf":
        return kernels.rbf_cross(A, B, float(params.gamma))
    return kernels.linear_cross(A, B)


def kernel_eval(x, y, params: KernelParams) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    if params.kind == "rbf":
        d = x - y
        return math.exp(-params.gamma * float(d @ d))
    return float(x @ y)


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    kernel: KernelParams
    nu: float
    n_train: int
    feature_names: tuple[str, ...] = ()
    standardization: StandardizationParams | None = None

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


@dataclass
class TrainingDiagnostics:
    iterations: int
    gap: float
    converged: bool
    n_support: int
    sv_fraction: float
    fraction_negative: float
    objective: float
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


class TrainingError(ValueError):
    pass


class _RowCache:
    """LRU cache of kernel rows for problems too large for a full Gram matrix."""

    def __init__(self, X, params: KernelParams, capacity: int):
        self.X = X
        self.params = params
        self.capacity = max(2, capacity)
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.misses = 0

    def __call__(self, i: int) -> np.ndarray:
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        self.misses += 1
        row = kernel_matrix(self.X[i:i + 1], self.X, self.params)[0]
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


def train(X, nu: float = 0.05, kernel: KernelParams = KernelParams(), tol: float = 1e-3,
          max_iter: int = 10**7, feature_names: Sequence[str] = (),
          standardization: StandardizationParams | None = None,
          full_gram_limit: int = FULL_GRAM_LIMIT, cache_rows: int = 1024,
          record_objective: int = 0) -> tuple[OcsvmModel, TrainingDiagnostics]:
    """Fit a one-class SVM on (already standardised) rows of ``X``.

    Starts from a_i = 1/l and repeatedly optimises the maximal KKT-violating
    pair until the violation drops to ``tol`` or ``max_iter`` pair updates
    are spent.  ``record_objective`` keeps the dual objective of the first
    that many iterations in the diagnostics.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise TrainingError("training data must be a 2-D array")
    n = X.shape[0]
    if n < 2:
        raise TrainingError("need at least two training rows")
    if not 0.0 < nu <= 1.0:
        raise TrainingError(f"nu must lie in (0, 1], got {nu}")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training data contains non-finite values")
    if tol <= 0:
        raise TrainingError("tol must be positive")
    if feature_names and len(feature_names) != X.shape[1]:
        raise TrainingError("feature_names does not match the data width")

    C = 1.0 / (nu * n)
    # the violation is measured on the dual scaled to sum(alpha) = nu * l (the
    # usual libsvm convention), so tol keeps its meaning as the problem grows
    stop = float(tol) / max(1.0, nu * n)
    alpha = np.full(n, 1.0 / n)
    trace = np.zeros(int(record_objective))
    if n <= full_gram_limit:
        Q = kernel_matrix(X, X, kernel)
        G = np.array([Q[i] @ alpha for i in range(n)])
        iters, gap = kernels.smo_full(Q, alpha, G, C, stop, int(max_iter), trace)
    else:
        rows = _RowCache(X, kernel, cache_rows)
        diag = np.array([kernel_matrix(X[i:i + 1], X[i:i + 1], kernel)[0, 0] for i in range(n)])
        G = np.array([rows(i) @ alpha for i in range(n)])
        iters, gap = kernels.smo_rows(rows, diag, alpha, G, C, stop, int(max_iter), trace)
    iters, gap = int(iters), float(gap)

    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_upper = alpha >= C
        lo = G[at_upper].max() if at_upper.any() else -np.inf
        hi = G[alpha <= 0.0].min() if (alpha <= 0.0).any() else np.inf
        rho = float(0.5 * (lo + hi)) if np.isfinite(lo) and np.isfinite(hi) else float(lo if np.isfinite(lo) else hi)

    sv = alpha > 0.0
    model = OcsvmModel(X[sv].copy(), alpha[sv].copy(), rho, kernel, float(nu), n,
                       tuple(feature_names), standardization)
    dec = decision(model, X)
    diag_out = TrainingDiagnostics(
        iterations=iters, gap=gap, converged=gap <= stop, n_support=int(sv.sum()),
        sv_fraction=float(sv.mean()), fraction_negative=float(np.mean(dec < 0)),
        objective=0.5 * float(alpha @ G), objective_trace=trace[:min(iters, trace.size)],
    )
    return model, diag_out


def dual_objective(alpha, K) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return 0.5 * float(alpha @ K @ alpha)


def decision(model: OcsvmModel, X) -> np.ndarray | float:
    """Signed distance to the learned boundary; a 1-D input gives a scalar."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} features, got {X2.shape[1]}")
    if X2.shape[0] == 0:
        return np.zeros(0)
    K = kernel_matrix(X2, model.support_vectors, model.kernel)
    out = np.array([row @ model.alphas for row in K]) - model.rho
    return float(out[0]) if single else out


def _as_rows(model: OcsvmModel, data, standardize: bool) -> np.ndarray:
    if isinstance(data, FeatureMatrix):
        if model.feature_names and tuple(data.columns) != model.feature_names:
            if set(model.feature_names) <= set(data.columns):
                data = data.select(model.feature_names)
            else:
                missing = sorted(set(model.feature_names) - set(data.columns))
                raise ValueError(f"matrix lacks model features: {', '.join(missing)}")
        X = data.values
    else:
        X = np.asarray(data, dtype=float).reshape(-1, model.dim) if np.size(data) else np.zeros((0, model.dim))
    if standardize:
        st = model.standardization
        if st is None:
            raise ValueError("model carries no standardisation parameters")
        live = st.std > 0
        Z = np.zeros_like(X)
        Z[:, live] = (X[:, live] - st.mean[live]) / st.std[live]
        X = Z
    return X


def predict(model: OcsvmModel, data, smooth_k: int | None = None, standardize: bool = False) -> np.ndarray:
    """Per-row verdicts, True meaning abnormal.

    With ``smooth_k`` the per-row verdicts are majority-smoothed into blocks
    and each row inherits its block's verdict (so the output stays row-aligned).
    """
    X = _as_rows(model, data, standardize)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    raw = decision(model, X) < 0
    if smooth_k is None or smooth_k <= 1:
        return raw
    blocks = majority_smooth(raw, smooth_k)
    return np.repeat(blocks, smooth_k)[: raw.size]


@dataclass(frozen=True)
class TuneCell:
    nu: float
    gamma: float
    score: float
    tpr: float
    fpr: float
    valid: bool = True
    converged: bool = True


def tune(train_rows, val_rows, val_labels, nus: Sequence[float] = DEFAULT_NU_GRID,
         gammas: Sequence[float] = DEFAULT_GAMMA_GRID, tol: float = 1e-3,
         max_iter: int = 10**7) -> tuple[TuneCell, list[TuneCell]]:
    """Grid search over (nu, gamma) scored by TPR - FPR on labelled validation rows.

    Ties go to the smaller nu, then the smaller gamma.
    """
    labels = np.asarray(val_labels, dtype=bool)
    if not nus or not gammas:
        raise ValueError("empty tuning grid")
    cells: list[TuneCell] = []
    for nu in nus:
        for gamma in gammas:
            try:
                model, diag = train(train_rows, nu, KernelParams("rbf", gamma), tol=tol, max_iter=max_iter)
            except (TrainingError, ValueError):
                cells.append(TuneCell(nu, gamma, -np.inf, 0.0, 0.0, valid=False))
                continue
            pred = predict(model, val_rows)
            pos = labels.sum()
            neg = (~labels).sum()
            tpr = float((pred & labels).sum() / pos) if pos else 0.0
            fpr = float((pred & ~labels).sum() / neg) if neg else 0.0
            cells.append(TuneCell(nu, gamma, tpr - fpr, tpr, fpr, True, diag.converged))
    valid = [c for c in cells if c.valid]
    if not valid:
        raise TrainingError("no grid cell could be trained")
    best = min(valid, key=lambda c: (-c.score, c.nu, c.gamma))
    return best, cells


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------


def _g(v: float) -> str:
    return "%.17g" % float(v)


def dumps_model(model: OcsvmModel) -> str:
    lines = [f"bgpad-ocsvm {FORMAT_VERSION}",
             f"kernel {model.kernel.kind}",
             f"gamma {_g(model.kernel.gamma)}",
             f"nu {_g(model.nu)}",
             f"rho {_g(model.rho)}",
             f"n_train {model.n_train}",
             f"features {len(model.feature_names)}"]
    lines += list(model.feature_names)
    st = model.standardization
    if st is None:
        lines.append("standardization 0")
    else:
        lines.append(f"standardization {len(st.columns)} {st.fit_range[0]} {st.fit_range[1]}")
        lines += [f"{_g(m)} {_g(s)} {c}" for c, m, s in zip(st.columns, st.mean, st.std)]
    m, d = model.support_vectors.shape
    lines.append(f"support_vectors {m} {d}")
    for a, row in zip(model.alphas, model.support_vectors):
        lines.append(" ".join([_g(a), *(_g(v) for v in row)]))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> OcsvmModel:
    it = iter(text.split("\n"))

    def field_(name):
        key, _, rest = next(it).partition(" ")
        if key != name:
            raise ValueError(f"model file: expected {name!r}, found {key!r}")
        return rest

    magic = next(it).split()
    if magic[:1] != ["bgpad-ocsvm"] or int(magic[1]) != FORMAT_VERSION:
        raise ValueError("not a bgpad one-class SVM model (or unsupported version)")
    kind = field_("kernel")
    gamma = float(field_("gamma"))
    nu = float(field_("nu"))
    rho = float(field_("rho"))
    n_train = int(field_("n_train"))
    names = tuple(next(it) for _ in range(int(field_("features"))))
    st_head = field_("standardization").split()
    st = None
    if int(st_head[0]):
        cols, means, stds = [], [], []
        for _ in range(int(st_head[0])):
            mean, std, col = next(it).split(" ", 2)
            cols.append(col)
            means.append(float(mean))
            stds.append(float(std))
        st = StandardizationParams(tuple(cols), np.array(means), np.array(stds),
                                   (int(st_head[1]), int(st_head[2])))
    m, d = (int(v) for v in field_("support_vectors").split())
    rows = np.array([[float(v) for v in next(it).split()] for _ in range(m)]).reshape(m, d + 1)
    return OcsvmModel(np.ascontiguousarray(rows[:, 1:]), rows[:, 0].copy(), rho, KernelParams(kind, gamma),
                      nu, n_train, names, st)


def save_model(model: OcsvmModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path) -> OcsvmModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))

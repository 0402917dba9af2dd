"""Per-bin routing-dynamics features.

Events are grouped into fixed-width bins and reduced to 18 counters.  The
instability counters (WWDup ... AW) come from a small state machine run per
(peer, prefix) key: each announcement or withdrawal is classified against
the previous update for the same key.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .events import ESTABLISHED, Kind, UpdateEvent, is_sorted

FEATURE_NAMES = (
    "Announce", "Withdrawal", "Update", "AnnouPrefix", "WithdwPrefix", "UpdatedPrefix",
    "WWDup", "AADupType1", "AADupType2", "AADiff", "WADupType1", "WADupType2", "WADup",
    "WADiff", "AW", "NPeers", "ReachPrefix", "TblExchgA",
)
STATE_COLUMNS = ("NPeers", "ReachPrefix")
N_FEATURES = len(FEATURE_NAMES)
_COL = {name: i for i, name in enumerate(FEATURE_NAMES)}


class UpdateClass(str, enum.Enum):
    PLAIN = "Plain"
    WWDUP = "WWDup"
    AADUP1 = "AADupType1"
    AADUP2 = "AADupType2"
    AADIFF = "AADiff"
    WADUP1 = "WADupType1"
    WADUP2 = "WADupType2"
    WADIFF = "WADiff"
    AW = "AW"


_SAME_PATH_CLASSES = frozenset({UpdateClass.AADUP1, UpdateClass.AADUP2,
                                UpdateClass.WADUP1, UpdateClass.WADUP2})


@dataclass(frozen=True)
class PrefixState:
    last_kind: Kind | None = None
    last_path: tuple | None = None  # (as_path, next_hop, attr_digest), survives withdrawals
    last_class: UpdateClass | None = None

    @property
    def reachable(self) -> bool:
        return self.last_kind is Kind.ANNOUNCE


@dataclass(frozen=True)
class ExtractionConfig:
    bin_width: int = 60
    origin: int | None = None  # epoch of bin 0; default: first event floored to bin_width
    table_exchange_bins: int = 5
    table_exchange_prefixes: int = 100
    aw_same_path_only: bool = False

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.table_exchange_bins < 0 or self.table_exchange_prefixes < 0:
            raise ValueError("table-exchange thresholds must be non-negative")


def classify_update(state: PrefixState | None, event: UpdateEvent,
                    aw_same_path_only: bool = False) -> tuple[UpdateClass, PrefixState]:
    """Classify ``event`` against the previous update for its (peer, prefix)."""
    if event.kind is Kind.STATE:
        raise ValueError("state changes are not per-prefix updates")
    state = state or PrefixState()
    prev = state.last_kind
    if event.kind is Kind.WITHDRAW:
        if prev is None:
            cls = UpdateClass.PLAIN
        elif prev is Kind.WITHDRAW:
            cls = UpdateClass.WWDUP
        elif aw_same_path_only and state.last_class not in _SAME_PATH_CLASSES:
            cls = UpdateClass.PLAIN
        else:
            cls = UpdateClass.AW
        return cls, PrefixState(Kind.WITHDRAW, state.last_path, cls)

    path = (event.as_path, event.next_hop, event.attr_digest)
    last = state.last_path
    if prev is None:
        cls = UpdateClass.PLAIN
    elif prev is Kind.ANNOUNCE:
        if path == last:
            cls = UpdateClass.AADUP1
        elif path[:2] == last[:2]:
            cls = UpdateClass.AADUP2
        else:
            cls = UpdateClass.AADIFF
    else:
        if last is not None and path == last:
            cls = UpdateClass.WADUP1
        elif last is not None and path[:2] == last[:2]:
            cls = UpdateClass.WADUP2
        else:
            cls = UpdateClass.WADIFF
    return cls, PrefixState(Kind.ANNOUNCE, path, cls)


@dataclass(frozen=True)
class BinKey:
    index: int
    start: int
    width: int


@dataclass
class FeatureMatrix:
    """Bins x features table, the unit of exchange between pipeline stages."""

    columns: list[str]
    values: np.ndarray
    bin_index: np.ndarray
    bin_start: np.ndarray
    bin_width: int
    anomaly_interval: tuple[int, int] | None = None
    dataset_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.bin_index), len(self.columns))
        self.bin_index = np.asarray(self.bin_index, dtype=np.int64)
        self.bin_start = np.asarray(self.bin_start, dtype=np.int64)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix holds NaN or infinite values")
        if self.bin_index.size > 1 and np.any(np.diff(self.bin_index) <= 0):
            raise ValueError("bin indices must be strictly increasing")
        if self.anomaly_interval is not None:
            lo, hi = self.anomaly_interval
            self.anomaly_interval = (int(lo), int(hi))
            if lo > hi:
                raise ValueError("anomaly interval is [start_bin, end_bin] with start <= end")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n_bins

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def bin_keys(self) -> list[BinKey]:
        return [BinKey(int(i), int(s), self.bin_width) for i, s in zip(self.bin_index, self.bin_start)]

    def rows_for(self, lo: int, hi: int) -> np.ndarray:
        """Boolean mask of rows whose bin index lies in [lo, hi] inclusive."""
        return (self.bin_index >= lo) & (self.bin_index <= hi)

    def anomaly_mask(self) -> np.ndarray:
        if self.anomaly_interval is None:
            return np.zeros(self.n_bins, dtype=bool)
        return self.rows_for(*self.anomaly_interval)

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise KeyError(f"missing columns: {', '.join(missing)}")
        idx = [self.columns.index(n) for n in names]
        return replace(self, columns=list(names), values=self.values[:, idx].copy(), meta=dict(self.meta))

    def with_columns(self, names: Sequence[str], values: np.ndarray, **meta) -> "FeatureMatrix":
        vals = np.column_stack([self.values, np.asarray(values, dtype=float).reshape(self.n_bins, len(names))])
        return replace(self, columns=self.columns + list(names), values=vals, meta={**self.meta, **meta})

    def equals(self, other: "FeatureMatrix") -> bool:
        return (self.columns == other.columns and self.bin_width == other.bin_width
                and np.array_equal(self.bin_index, other.bin_index)
                and np.array_equal(self.bin_start, other.bin_start)
                and np.array_equal(self.values, other.values)
                and self.anomaly_interval == other.anomaly_interval)


def empty_matrix(bin_width: int, columns: Sequence[str] = FEATURE_NAMES) -> FeatureMatrix:
    return FeatureMatrix(list(columns), np.zeros((0, len(columns))), np.zeros(0, np.int64),
                         np.zeros(0, np.int64), bin_width)


class _PeerTracker:
    __slots__ = ("established", "has_state", "last_established_bin", "announced")

    def __init__(self):
        self.established = False
        self.has_state = False
        self.last_established_bin: int | None = None
        self.announced: set[str] = set()


def extract_features(events: Sequence[UpdateEvent], config: ExtractionConfig = ExtractionConfig(),
                     dataset_id: str = "", anomaly_interval: tuple[int, int] | None = None) -> FeatureMatrix:
    """Reduce a timestamp-sorted event stream to one 18-feature row per bin."""
    if not events:
        return empty_matrix(config.bin_width)
    if not is_sorted(events):
        raise ValueError("events must be sorted by timestamp")
    width = config.bin_width
    origin = config.origin if config.origin is not None else (events[0].timestamp // width) * width
    if events[0].timestamp < origin:
        raise ValueError("events precede the configured origin")

    first_bin = (events[0].timestamp - origin) // width
    last_bin = (events[-1].timestamp - origin) // width
    n_bins = last_bin - first_bin + 1
    out = np.zeros((n_bins, N_FEATURES))

    prefix_state: dict[tuple, PrefixState] = {}
    reach_count: dict[str, int] = {}  # prefix -> number of peers it is reachable through
    peers: dict[tuple, _PeerTracker] = {}
    established = 0
    reachable = 0

    c_ann, c_wd = _COL["Announce"], _COL["Withdrawal"]
    class_col = {cls: _COL[cls.value] for cls in UpdateClass if cls is not UpdateClass.PLAIN}

    ev_i = 0
    n_events = len(events)
    for row in range(n_bins):
        b = first_bin + row
        bin_end = origin + (b + 1) * width
        ann_keys: set = set()
        wd_keys: set = set()
        for tr in peers.values():
            tr.announced.clear()
        while ev_i < n_events and events[ev_i].timestamp < bin_end:
            ev = events[ev_i]
            ev_i += 1
            tr = peers.get(ev.peer)
            if tr is None:
                tr = peers[ev.peer] = _PeerTracker()
            if ev.kind is Kind.STATE:
                now = ev.new_state == ESTABLISHED
                if now and not tr.established:
                    established += 1
                elif tr.established and not now:
                    established -= 1
                if now and ev.old_state != ESTABLISHED:
                    tr.last_established_bin = b
                tr.established = now
                tr.has_state = True
                continue
            if not tr.has_state and not tr.established:
                tr.established = True
                established += 1
            key = (ev.peer, ev.prefix)
            state = prefix_state.get(key)
            was_reachable = state is not None and state.reachable
            cls, new_state = classify_update(state, ev, config.aw_same_path_only)
            prefix_state[key] = new_state
            if cls is not UpdateClass.PLAIN:
                out[row, class_col[cls]] += 1
            if ev.kind is Kind.ANNOUNCE:
                out[row, c_ann] += 1
                ann_keys.add(key)
                tr.announced.add(ev.prefix)
                if not was_reachable:
                    n = reach_count.get(ev.prefix, 0)
                    reach_count[ev.prefix] = n + 1
                    if n == 0:
                        reachable += 1
            else:
                out[row, c_wd] += 1
                wd_keys.add(key)
                if was_reachable:
                    n = reach_count[ev.prefix] - 1
                    reach_count[ev.prefix] = n
                    if n == 0:
                        reachable -= 1
        out[row, _COL["AnnouPrefix"]] = len(ann_keys)
        out[row, _COL["WithdwPrefix"]] = len(wd_keys)
        out[row, _COL["NPeers"]] = established
        out[row, _COL["ReachPrefix"]] = reachable
        out[row, _COL["TblExchgA"]] = sum(
            1 for tr in peers.values()
            if tr.last_established_bin is not None
            and b - tr.last_established_bin <= config.table_exchange_bins
            and len(tr.announced) >= config.table_exchange_prefixes
        )

    out[:, _COL["Update"]] = out[:, c_ann] + out[:, c_wd]
    out[:, _COL["UpdatedPrefix"]] = out[:, _COL["AnnouPrefix"]] + out[:, _COL["WithdwPrefix"]]
    out[:, _COL["WADup"]] = out[:, _COL["WADupType1"]] + out[:, _COL["WADupType2"]]

    idx = np.arange(first_bin, last_bin + 1, dtype=np.int64)
    return FeatureMatrix(list(FEATURE_NAMES), out, idx, origin + idx * width, width,
                         anomaly_interval=anomaly_interval, dataset_id=dataset_id,
                         meta={"origin": int(origin)})


def rebin(matrix: FeatureMatrix, factor: int) -> FeatureMatrix:
    """Coarsen by summing counts over ``factor`` consecutive bins.

    Groups are aligned to multiples of ``factor`` in absolute bin index.
    NPeers and ReachPrefix (and any column listed in ``meta["state_columns"]``)
    take the last bin of each group.  A short trailing group is kept and
    flagged with ``meta["partial_last_bin"]``.
    """
    if factor < 1:
        raise ValueError("rebin factor must be >= 1")
    if factor == 1:
        return replace(matrix, values=matrix.values.copy(), meta=dict(matrix.meta))
    n = matrix.n_bins
    if n == 0:
        return replace(matrix, values=matrix.values.copy(), bin_width=matrix.bin_width * factor,
                       meta={**matrix.meta, "rebin_factor": int(factor) * int(matrix.meta.get("rebin_factor", 1))})
    # groups are aligned to absolute bin indices, so rebinning matches a
    # direct extraction at the coarser width from the same origin
    first_idx = int(matrix.bin_index[0]) // factor
    group = matrix.bin_index // factor - first_idx
    n_groups = int(group[-1]) + 1
    state_cols = set(matrix.meta.get("state_columns", STATE_COLUMNS))
    out = np.zeros((n_groups, len(matrix.columns)))
    np.add.at(out, group, matrix.values)
    last_row = np.zeros(n_groups, dtype=np.int64)
    last_row[group] = np.arange(n)  # later rows overwrite earlier ones
    present = np.zeros(n_groups, dtype=bool)
    present[group] = True
    for j, name in enumerate(matrix.columns):
        if name in state_cols:
            out[:, j] = matrix.values[last_row, j]
            # a group with no rows (gap) carries the previous state forward
            for g in np.flatnonzero(~present):
                out[g, j] = out[g - 1, j]
    new_index = first_idx + np.arange(n_groups, dtype=np.int64)
    origin = int(matrix.bin_start[0]) - int(matrix.bin_index[0]) * matrix.bin_width
    new_start = origin + new_index * factor * matrix.bin_width
    interval = None
    if matrix.anomaly_interval is not None:
        lo, hi = matrix.anomaly_interval
        interval = (lo // factor, hi // factor)
    meta = dict(matrix.meta)
    meta["partial_last_bin"] = bool((int(matrix.bin_index[-1]) + 1) % factor)
    meta["rebin_factor"] = int(factor) * int(matrix.meta.get("rebin_factor", 1))
    return FeatureMatrix(list(matrix.columns), out, new_index, new_start, matrix.bin_width * factor,
                         anomaly_interval=interval, dataset_id=matrix.dataset_id, meta=meta)


# ---------------------------------------------------------------------------
# CSV + sidecar
# ---------------------------------------------------------------------------


def format_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.yaml")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def write_matrix(matrix: FeatureMatrix, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_index", "bin_start", *matrix.columns])
        for i in range(matrix.n_bins):
            w.writerow([int(matrix.bin_index[i]), int(matrix.bin_start[i]),
                        *(format_number(v) for v in matrix.values[i])])
    meta = {
        "bin_width": int(matrix.bin_width),
        "dataset_id": matrix.dataset_id,
        "anomaly_interval": list(matrix.anomaly_interval) if matrix.anomaly_interval else None,
        "extra": _plain(matrix.meta),
    }
    sidecar_path(path).write_text(yaml.safe_dump(meta, sort_keys=True), encoding="utf-8")


def read_matrix(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        if header[:2] != ["bin_index", "bin_start"]:
            raise ValueError(f"{path}: not a feature matrix (header {header[:2]})")
        rows = [r for r in reader if r]
    columns = header[2:]
    for n, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{n}: expected {len(header)} cells, got {len(r)}")
    idx = np.array([int(r[0]) for r in rows], dtype=np.int64)
    start = np.array([int(r[1]) for r in rows], dtype=np.int64)
    vals = np.array([[float(c) for c in r[2:]] for r in rows], dtype=float).reshape(len(rows), len(columns))
    meta_file = sidecar_path(path)
    meta = yaml.safe_load(meta_file.read_text(encoding="utf-8")) if meta_file.exists() else {}
    meta = meta or {}
    width = meta.get("bin_width")
    if width is None:
        width = int(start[1] - start[0]) if len(start) > 1 else 60
    interval = meta.get("anomaly_interval")
    return FeatureMatrix(columns, vals, idx, start, int(width),
                         anomaly_interval=tuple(interval) if interval else None,
                         dataset_id=meta.get("dataset_id") or "", meta=meta.get("extra") or {})


def tally_classes(events: Iterable[UpdateEvent], aw_same_path_only: bool = False) -> dict[UpdateClass, int]:
    """Class histogram of a stream; handy for checking column sums."""
    states: dict = {}
    counts = {cls: 0 for cls in UpdateClass}
    for ev in events:
        if ev.kind is Kind.STATE:
            continue
        key = (ev.peer, ev.prefix)
        cls, states[key] = classify_update(states.get(key), ev, aw_same_path_only)
        counts[cls] += 1
    return counts

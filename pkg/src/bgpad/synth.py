"""Deterministic synthetic BGP update streams with a labelled anomaly.

Random numbers come from numpy's PCG64 bit generator seeded with
``ScenarioConfig.seed``, so a config always yields the same stream.

Normal traffic: every bin draws Poisson numbers of announcements and
withdrawals over a fixed peer/prefix population.  An announcement either
repeats the current path (AADup), changes only the non-path attributes
(AADupType2) or moves to another path (AADiff); a withdrawal of a live route
is sometimes repeated (WWDup) and is followed by a re-announcement a few
bins later, on the same path (WADup) or a new one (WADiff).

``worm`` anomalies scale the announcement, withdrawal and path-churn rates.
``blackout`` anomalies drop a share of the peers (session to Idle plus a
withdrawal wave), keep them silent, and bring them back near the end of the
interval with a full table transfer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .events import UpdateEvent, announce, save_event_log, state_change, withdraw
from .mrt import fnv1a64

BIN_WIDTH = 60
DEFAULT_START = 1_000_000_020 // BIN_WIDTH * BIN_WIDTH
RESTORE_STATES = ((1, 2), (2, 4), (4, 5), (5, 6))


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "worm"
    duration_bins: int = 1440
    anomaly_interval: tuple[int, int] = (960, 1079)
    peer_count: int = 10
    prefix_count: int = 2000
    max_carriers: int = 3
    paths_per_route: int = 3
    announce_rate: float = 30.0
    withdraw_rate: float = 6.0
    churn_prob: float = 0.15
    attr_change_prob: float = 0.1
    reannounce_delay: float = 3.0
    announce_multiplier: float = 1.0
    withdraw_multiplier: float = 1.0
    churn_multiplier: float = 1.0
    peer_drop_fraction: float = 0.0
    withdraw_wave_bins: int = 3
    duplicate_withdraw_prob: float = 0.3
    normal_duplicate_withdraw_prob: float = 0.2
    restore_bins: int = 2
    bin_width: int = BIN_WIDTH
    start_time: int = DEFAULT_START
    seed: int = 1
    name: str = "scenario"
    fit_range: tuple[int, int] | None = None

    def __post_init__(self):
        lo, hi = self.anomaly_interval
        if self.kind not in ("worm", "blackout"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not 0 <= lo <= hi < self.duration_bins:
            raise ValueError(f"anomaly interval {self.anomaly_interval} outside [0, {self.duration_bins})")
        rates = (self.announce_rate, self.withdraw_rate, self.announce_multiplier,
                 self.withdraw_multiplier, self.churn_multiplier, self.reannounce_delay)
        if min(rates) < 0:
            raise ValueError("rates and multipliers must be non-negative")
        if not 0 <= self.peer_drop_fraction <= 1:
            raise ValueError("peer_drop_fraction must lie in [0, 1]")
        if self.peer_count < 1 or self.prefix_count < 1 or self.max_carriers < 1:
            raise ValueError("population sizes must be positive")
        if self.kind == "blackout" and self.withdraw_wave_bins + self.restore_bins > hi - lo + 1:
            raise ValueError("anomaly interval too short for withdrawal wave plus restore")
        if self.fit_range is not None:
            f_lo, f_hi = self.fit_range
            if not (0 <= f_lo <= f_hi < self.duration_bins) or not (f_hi < lo or f_lo > hi):
                raise ValueError("fit range must be inside the stream and disjoint from the anomaly")


@dataclass
class Scenario:
    config: ScenarioConfig
    events: list[UpdateEvent]
    labels: np.ndarray  # per bin, True inside the anomaly interval

    @property
    def anomaly_interval(self) -> tuple[int, int]:
        return tuple(self.config.anomaly_interval)

    def metadata(self) -> dict:
        cfg = self.config
        return {
            "bin_width": cfg.bin_width,
            "origin": cfg.start_time,
            "dataset_id": cfg.name,
            "anomaly_interval": list(cfg.anomaly_interval),
            "fit_range": list(cfg.fit_range) if cfg.fit_range else None,
            "duration_bins": cfg.duration_bins,
            "scenario": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        }


def peer_address(p: int) -> str:
    return f"198.51.{100 + p // 250}.{p % 250 + 1}"


def prefix_text(i: int) -> str:
    return f"10.{i // 256 % 256}.{i % 256}.0/24" if i < 65536 else f"172.{16 + i // 65536}.{i // 256 % 256}.0/24"


@dataclass
class _Route:
    peer: int
    prefix: int
    path: int = 0
    variant: int = 0
    up: bool = False
    pending: int = -1  # bin of the scheduled re-announcement


@dataclass
class _World:
    cfg: ScenarioConfig
    rng: np.random.Generator
    routes: list[_Route] = field(default_factory=list)
    by_peer: dict[int, list[int]] = field(default_factory=dict)
    paths: dict[tuple[int, int, int], tuple[int, ...]] = field(default_factory=dict)
    live: np.ndarray | None = None
    pending: dict[int, list[int]] = field(default_factory=dict)

    def as_path(self, r: _Route) -> tuple[int, ...]:
        key = (r.peer, r.prefix, r.path)
        path = self.paths.get(key)
        if path is None:
            transit = self.rng.integers(1000, 4000, size=int(self.rng.integers(1, 4)))
            path = (64512 + r.peer, *(int(a) for a in transit), 10000 + r.prefix % 50000)
            self.paths[key] = path
        return path


def _digest(r: _Route) -> str:
    return f"{fnv1a64(bytes([r.path % 256, r.variant % 256]) + r.peer.to_bytes(4, 'big')):016x}"


def _build_world(cfg: ScenarioConfig, rng: np.random.Generator) -> _World:
    w = _World(cfg, rng)
    for pfx in range(cfg.prefix_count):
        n = int(rng.integers(1, min(cfg.max_carriers, cfg.peer_count) + 1))
        for peer in sorted(rng.choice(cfg.peer_count, size=n, replace=False).tolist()):
            w.by_peer.setdefault(peer, []).append(len(w.routes))
            w.routes.append(_Route(peer, pfx))
    w.live = np.ones(cfg.peer_count, dtype=bool)
    return w


def _ts(cfg, b, rng, lo=1):
    return cfg.start_time + b * cfg.bin_width + int(rng.integers(lo, cfg.bin_width))


def _emit_announce(w: _World, r: _Route, ts: int, out: list):
    r.up = True
    r.pending = -1
    out.append(announce(ts, peer_address(r.peer), 64512 + r.peer, prefix_text(r.prefix),
                        w.as_path(r), peer_address(r.peer), _digest(r)))


def _emit_withdraw(r: _Route, ts: int, out: list):
    r.up = False
    out.append(withdraw(ts, peer_address(r.peer), 64512 + r.peer, prefix_text(r.prefix)))


def _table_transfer(w: _World, peer: int, bins: range, out_by_bin: dict):
    cfg, rng = w.cfg, w.rng
    idx = w.by_peer.get(peer, [])
    spread = max(1, len(bins))
    for k, ri in enumerate(idx):
        b = bins.start + k * spread // max(1, len(idx))
        _emit_announce(w, w.routes[ri], _ts(cfg, b, rng), out_by_bin.setdefault(b, []))


def _session_up(cfg, peer, b, out_by_bin):
    ts = cfg.start_time + b * cfg.bin_width
    for old, new in RESTORE_STATES:
        out_by_bin.setdefault(b, []).append(state_change(ts, peer_address(peer), 64512 + peer, old, new))


def generate(config: ScenarioConfig) -> Scenario:
    """Build the event stream for ``config``; same config, same bytes."""
    cfg = config
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    w = _build_world(cfg, rng)
    lo, hi = cfg.anomaly_interval
    extra: dict[int, list[UpdateEvent]] = {}

    # bin 0: every session comes up and sends its table
    for peer in range(cfg.peer_count):
        _session_up(cfg, peer, 0, extra)
        _table_transfer(w, peer, range(0, 1), extra)

    dropped: list[int] = []
    if cfg.kind == "blackout" and cfg.peer_drop_fraction > 0:
        n_drop = int(round(cfg.peer_drop_fraction * cfg.peer_count))
        dropped = sorted(rng.choice(cfg.peer_count, size=n_drop, replace=False).tolist())
    restore_at = hi - cfg.restore_bins + 1

    events: list[UpdateEvent] = []
    n_routes = len(w.routes)
    for b in range(cfg.duration_bins):
        out = extra.pop(b, [])
        in_anomaly = lo <= b <= hi
        worm = in_anomaly and cfg.kind == "worm"

        if dropped and b == lo:
            for peer in dropped:
                w.live[peer] = False
                out.append(state_change(cfg.start_time + b * cfg.bin_width, peer_address(peer),
                                        64512 + peer, 6, 1))
                for k, ri in enumerate(w.by_peer.get(peer, [])):
                    r = w.routes[ri]
                    r.pending = -1
                    if not r.up:
                        continue
                    wb = b + int(rng.integers(0, cfg.withdraw_wave_bins))
                    _emit_withdraw(r, _ts(cfg, wb, rng), extra.setdefault(wb, []) if wb != b else out)
                    if rng.random() < cfg.duplicate_withdraw_prob:
                        db = min(wb + 1, b + cfg.withdraw_wave_bins - 1)
                        _emit_withdraw(r, _ts(cfg, db, rng), extra.setdefault(db, []) if db != b else out)
        if dropped and b == restore_at:
            for peer in dropped:
                w.live[peer] = True
                extra[b] = out
                _session_up(cfg, peer, b, extra)
                _table_transfer(w, peer, range(b, b + cfg.restore_bins), extra)
                extra.pop(b)

        live_frac = float(w.live.mean())
        a_rate = cfg.announce_rate * live_frac * (cfg.announce_multiplier if worm else 1.0)
        w_rate = cfg.withdraw_rate * live_frac * (cfg.withdraw_multiplier if worm else 1.0)
        churn = min(0.95, cfg.churn_prob * (cfg.churn_multiplier if worm else 1.0))

        n_a = int(rng.poisson(a_rate))
        n_w = int(rng.poisson(w_rate))
        for _ in range(n_w):
            ri = int(rng.integers(n_routes))
            r = w.routes[ri]
            if not w.live[r.peer]:
                continue
            was_up = r.up
            _emit_withdraw(r, _ts(cfg, b, rng), out)
            if was_up and rng.random() < cfg.normal_duplicate_withdraw_prob:
                _emit_withdraw(r, _ts(cfg, b, rng), out)
            if was_up:
                r.pending = b + 1 + int(rng.geometric(1.0 / max(cfg.reannounce_delay, 1.0)))
                w.pending.setdefault(r.pending, []).append(ri)
        for _ in range(n_a):
            r = w.routes[int(rng.integers(n_routes))]
            if not w.live[r.peer]:
                continue
            u = rng.random()
            if u < churn:
                r.path = (r.path + 1 + int(rng.integers(max(cfg.paths_per_route - 1, 1)))) % cfg.paths_per_route
            elif u < churn + cfg.attr_change_prob:
                r.variant ^= 1
            _emit_announce(w, r, _ts(cfg, b, rng), out)
        for ri in _due(w, b):
            r = w.routes[ri]
            u = rng.random()
            if u < churn:
                r.path = (r.path + 1) % cfg.paths_per_route
            elif u < churn + cfg.attr_change_prob:
                r.variant ^= 1
            _emit_announce(w, r, _ts(cfg, b, rng), out)

        out.sort(key=lambda e: e.timestamp)
        events.extend(out)

    labels = np.zeros(cfg.duration_bins, dtype=bool)
    labels[lo:hi + 1] = True
    return Scenario(cfg, events, labels)


def _due(w: _World, b: int) -> list[int]:
    due = w.pending.pop(b, [])
    return [i for i in due if w.routes[i].pending == b and not w.routes[i].up and w.live[w.routes[i].peer]]


# Five days of one-minute bins: days 1-3 (after a one-hour warm-up) are the
# normal fit range, the anomaly starts an hour into day 4 and the rest of the
# stream is held-out normal traffic.
PRESET_DURATION = 7200
PRESET_FIT_RANGE = (60, 4319)


def _preset(name, kind, interval, seed, **kw) -> ScenarioConfig:
    return ScenarioConfig(kind=kind, duration_bins=PRESET_DURATION, anomaly_interval=interval,
                          fit_range=PRESET_FIT_RANGE, seed=seed, name=name, **kw)


PRESETS: dict[str, ScenarioConfig] = {
    "nimda-like": _preset("nimda-like", "worm", (4400, 4579), 2001918, announce_multiplier=8.0,
                          withdraw_multiplier=4.0, churn_multiplier=4.0),
    "slammer-like": _preset("slammer-like", "worm", (4460, 4579), 2003125, announce_multiplier=12.0,
                            withdraw_multiplier=6.0, churn_multiplier=5.0),
    "codered-like": _preset("codered-like", "worm", (4500, 4559), 2001719, announce_multiplier=5.0,
                            withdraw_multiplier=3.0, churn_multiplier=3.0),
    "eastcoast-like": _preset("eastcoast-like", "blackout", (4400, 4579), 2003814, peer_drop_fraction=0.4),
    "florida-like": _preset("florida-like", "blackout", (4380, 4619), 2004903, peer_drop_fraction=0.2),
    "katrina-like": _preset("katrina-like", "blackout", (4380, 4619), 2005829, peer_drop_fraction=0.3),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    for key in ("anomaly_interval", "fit_range"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return ScenarioConfig(**d)


def write_scenario(scenario: Scenario, path) -> None:
    """Event-log CSV plus a ``.meta.yaml`` sidecar with bin width and labels."""
    path = Path(path)
    save_event_log(path, scenario.events)
    path.with_name(path.stem + ".meta.yaml").write_text(
        yaml.safe_dump(scenario.metadata(), sort_keys=True), encoding="utf-8")

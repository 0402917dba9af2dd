import numpy as np
import pytest
import yaml
from scipy.stats import ks_2samp

from bgpad.events import is_sorted, read_event_log, validate_event, write_event_log
from bgpad.features import ExtractionConfig, extract_features
from bgpad.synth import PRESETS, ScenarioConfig, config_from_dict, generate, preset, write_scenario


def _small(**kw):
    base = dict(duration_bins=400, anomaly_interval=(250, 299), prefix_count=300, peer_count=6, seed=7)
    base.update(kw)
    return ScenarioConfig(**base)


def _features(scn):
    cfg = scn.config
    m = extract_features(scn.events, ExtractionConfig(bin_width=cfg.bin_width, origin=cfg.start_time),
                         anomaly_interval=cfg.anomaly_interval)
    # gap bins are materialised, so row i is bin i whenever bin 0 has traffic
    assert m.bin_index[0] == 0 and m.n_bins == m.bin_index[-1] + 1
    return m


def test_same_config_same_bytes(tmp_path):
    a, b = generate(_small()), generate(_small())
    assert write_event_log(a.events) == write_event_log(b.events)
    write_scenario(a, tmp_path / "a.csv")
    write_scenario(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert write_event_log(generate(_small(seed=8)).events) != write_event_log(a.events)


def test_events_sorted_valid_and_labelled():
    scn = generate(_small())
    assert is_sorted(scn.events)
    for ev in scn.events:
        validate_event(ev)
    assert scn.labels.size == 400
    assert np.flatnonzero(scn.labels).tolist() == list(range(250, 300))
    assert scn.metadata()["anomaly_interval"] == [250, 299]


def test_sidecar_round_trip(tmp_path):
    scn = generate(_small(fit_range=(0, 199)))
    write_scenario(scn, tmp_path / "s.csv")
    meta = yaml.safe_load((tmp_path / "s.meta.yaml").read_text())
    assert meta["fit_range"] == [0, 199] and meta["bin_width"] == 60
    assert config_from_dict(meta["scenario"]) == scn.config
    assert read_event_log(tmp_path / "s.csv") == scn.events


def test_unit_multipliers_leave_traffic_unchanged():
    m = _features(generate(_small(duration_bins=600, anomaly_interval=(300, 599), seed=11)))
    upd = m.column("Update")
    assert ks_2samp(upd[50:300], upd[300:]).pvalue > 0.01


def test_worm_raises_update_volume():
    m = _features(generate(_small(announce_multiplier=10.0, withdraw_multiplier=10.0)))
    upd = m.column("Update")
    normal = upd[20:250]
    assert upd[250:300].mean() > normal.mean() + 5 * normal.std()


def test_full_blackout_empties_table():
    cfg = _small(kind="blackout", peer_drop_fraction=1.0, withdraw_wave_bins=3, restore_bins=2)
    m = _features(generate(cfg))
    # after the withdrawal wave and before the restore, nothing is reachable
    quiet = slice(254, 297)
    assert np.all(m.column("NPeers")[quiet] == 0)
    assert np.all(m.column("ReachPrefix")[quiet] == 0)
    assert m.column("NPeers")[-1] == cfg.peer_count


def test_partial_blackout_drops_share_of_peers():
    cfg = _small(kind="blackout", peer_drop_fraction=0.5, peer_count=10)
    m = _features(generate(cfg))
    assert m.column("NPeers")[100] == 10
    assert m.column("NPeers")[270] == 5


@pytest.mark.parametrize("kw", [
    dict(kind="flood"),
    dict(anomaly_interval=(390, 400)),
    dict(anomaly_interval=(10, 5)),
    dict(announce_rate=-1.0),
    dict(peer_drop_fraction=1.5),
    dict(peer_count=0),
    dict(kind="blackout", anomaly_interval=(250, 252)),
    dict(fit_range=(200, 260)),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _small(**kw)


def test_presets():
    assert len(PRESETS) == 6
    assert preset("slammer-like", seed=3).seed == 3
    with pytest.raises(KeyError):
        preset("nope")
    for cfg in PRESETS.values():
        lo, hi = cfg.anomaly_interval
        assert cfg.fit_range[1] < lo and hi < cfg.duration_bins

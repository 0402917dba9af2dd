import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml

from bgpad.cli import main
from bgpad.config import ConfigError, PipelineConfig, dumps_config, loads_config
from bgpad.features import read_matrix
from bgpad.pipeline import read_verdicts

SCENARIO = dict(kind="worm", duration_bins=600, anomaly_interval=[400, 449], fit_range=[30, 349],
                prefix_count=400, peer_count=6, announce_multiplier=10.0, withdraw_multiplier=6.0,
                churn_multiplier=4.0, seed=3, name="short-worm")
STAGES = ["features", "correlate", "select", "train", "detect"]


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """Output directory after synth plus every per-dataset stage."""
    out = tmp_path_factory.mktemp("chain")
    scn = out / "scenario.yaml"
    scn.write_text(yaml.safe_dump(SCENARIO))
    assert main(["--out", str(out), "synth", "--scenario", str(scn)]) == 0
    for stage in STAGES:
        assert main(["--out", str(out), stage]) == 0, stage
    return out


def _snapshot(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_stage_chain_produces_verdicts_for_every_bin(chain):
    m = read_matrix(chain / "augmented.csv")
    v = read_verdicts(chain / "verdicts.csv", 5)
    assert v.raw.size == m.n_bins == 600
    assert v.smoothed.size == v.raw.size
    training = yaml.safe_load((chain / "training.yaml").read_text())
    assert training["converged"] and training["fit_range"] == [30, 349]
    # a strong worm is visible
    assert v.raw[400:450].mean() > 0.5 and v.raw[30:350].mean() < 0.1


def test_rerunning_stages_is_byte_identical(chain, tmp_path):
    again = tmp_path / "again"
    shutil.copytree(chain, again)
    for stage in STAGES:
        assert main(["--out", str(again), stage]) == 0
    assert _snapshot(again) == _snapshot(chain)


def test_report_reads_without_mutating(chain, tmp_path, capsys):
    d = tmp_path / "r"
    shutil.copytree(chain, d)
    before = _snapshot(d)
    assert main(["--out", str(d), "report"]) == 0
    text = capsys.readouterr().out
    assert "feature scores" in text and "verdicts:" in text
    after = _snapshot(d)
    # report only adds its own outputs
    assert {k: v for k, v in after.items() if k in before} == before
    assert set(after) - set(before) <= {p for p in after if str(p) == "summary.txt" or str(p).startswith("plots")}


def test_detect_prints_training_fraction(chain, tmp_path, capsys):
    d = tmp_path / "nu"
    shutil.copytree(chain, d)
    assert main(["--out", str(d), "train", "--nu", "0.05"]) == 0
    assert main(["--out", str(d), "detect"]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if "training-period abnormal fraction" in l)
    frac = float(line.split(":")[1].split()[0])
    assert abs(frac - 0.05) <= 0.03 and "nu=0.05" in line
    assert "block TPR" in out


def test_missing_artifact_exits_2(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "correlate", "--fit", "0", "10"]) == 2
    assert "bgpad features" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "select", "--k", "notanumber"]) == 1
    assert main(["nosuchcommand"]) == 1
    assert main([]) == 1
    assert main(["--out", str(tmp_path), "synth"]) == 1
    capsys.readouterr()


def test_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("fit_range: [0, 100]\nanomaly_interval: [50, 150]\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "repro-tables"]) == 1
    cfg.write_text("colour: blue\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "repro-tables"]) == 1


def test_config_round_trip():
    cfg = PipelineConfig(fit_range=(0, 99), anomaly_interval=(200, 250), nu=0.1, gamma=0.25, cluster_k=[2])
    assert loads_config(dumps_config(cfg)) == cfg
    assert loads_config("") == PipelineConfig()
    with pytest.raises(ConfigError):
        PipelineConfig(fit_range=(0, 100), anomaly_interval=(100, 120))
    with pytest.raises(ConfigError):
        loads_config("- a list\n")
    with pytest.raises(ConfigError):
        PipelineConfig(nu=0.0)


def test_repro_tables(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "repro-tables"]) == 0
    out = capsys.readouterr().out
    assert "109" in out and "105" in out
    assert "k=2:" in out and "k=3:" in out
    clusters = yaml.safe_load((tmp_path / "reference_clusters.yaml").read_text())
    assert [c["k"] for c in clusters] == [2, 3]
    d = np.loadtxt(tmp_path / "reference_distance.csv", delimiter=",", skiprows=1, usecols=range(1, 7))
    assert d[1, 4] == 109


def test_cluster_stage_reads_distance(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "repro-tables"]) == 0
    shutil.copy(tmp_path / "reference_distance.csv", tmp_path / "distance.csv")
    assert main(["--out", str(tmp_path), "cluster", "--k", "2", "--method", "kmedoids"]) == 0
    doc = yaml.safe_load((tmp_path / "clusters.yaml").read_text())
    assert doc[0]["method"] == "kmedoids" and sum(len(g) for g in doc[0]["groups"]) == 6
    capsys.readouterr()


def test_ingest_mrt(tmp_path, capsys):
    from conftest import DATA

    assert main(["--out", str(tmp_path), "ingest", str(DATA / "golden_1000.mrt")]) == 0
    assert (tmp_path / "events.csv").read_text() == (DATA / "golden_1000.events.csv").read_text()
    capsys.readouterr()


def test_console_script_help():
    exe = shutil.which("bgpad")
    cmd = [exe] if exe else [sys.executable, "-m", "bgpad.cli"]
    res = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "run-all" in res.stdout

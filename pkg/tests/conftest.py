"""Shared fixtures, hypothesis profile and the acceptance summary."""

from __future__ import annotations

import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))  # helper modules such as oracles.py

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"

ACCEPTANCE_TITLES = {
    "AC1": "distance golden values (109 computed where 105 is printed)",
    "AC2": "k=2 / k=3 event clustering, global inertia optima",
    "AC3": "balanced accuracy identities of the three reference rows",
    "AC4": "six synthetic presets: block TPR >= 0.90, FPR <= 0.10",
    "AC5": "nu-property on 500-point Gaussian data",
    "AC6": "SMO vs brute-force QP oracle on 200 small instances",
    "AC7": "statistics oracles and 2-sigma flag rate",
    "AC8": "40-event golden row and column identities on all presets",
    "AC9": "format round trips and MRT fuzzing",
}
_ac_results: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion a test belongs to")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "criterion", None)
    if crit:
        _ac_results.setdefault(crit, []).append(report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker:
        rep.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ac_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_TITLES, key=lambda s: int(s[2:])):
        res = _ac_results.get(name)
        status = "not run" if res is None else ("PASS" if all(res) else "FAIL")
        terminalreporter.write_line(f"{name} {status:7s} {ACCEPTANCE_TITLES[name]}")


# ---------------------------------------------------------------------------
# synthetic presets, generated once per session
# ---------------------------------------------------------------------------


@dataclass
class PresetRun:
    name: str
    scenario: object
    matrix: object
    result: object
    generate_seconds: float
    pipeline_seconds: float


@pytest.fixture(scope="session")
def preset_scenarios():
    from bgpad import synth
    from bgpad.features import ExtractionConfig, extract_features

    out = {}
    for name in synth.PRESETS:
        t0 = time.perf_counter()
        sc = synth.generate(synth.preset(name))
        meta = sc.metadata()
        m = extract_features(sc.events, ExtractionConfig(bin_width=meta["bin_width"], origin=meta["origin"]),
                             name, tuple(meta["anomaly_interval"]))
        out[name] = (sc, m, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="session")
def preset_runs(preset_scenarios):
    from bgpad.config import PipelineConfig
    from bgpad.pipeline import run_matrix

    cfg = PipelineConfig()
    runs = {}
    for name, (sc, m, gen_s) in preset_scenarios.items():
        t0 = time.perf_counter()
        res = run_matrix(m, tuple(sc.metadata()["fit_range"]), cfg)
        runs[name] = PresetRun(name, sc, m, res, gen_s, time.perf_counter() - t0)
    return runs

"""bgpad command line.

Each subcommand is one pipeline stage that reads and writes files in the
output directory, so stages can be rerun or inspected independently:

    bgpad --out run synth --preset slammer-like
    bgpad --out run features
    bgpad --out run correlate
    bgpad --out run select
    bgpad --out run train
    bgpad --out run detect

``run-all`` chains the stages over the synthetic presets and adds the
cross-event evaluation, clustering and report.  Exit status is 0 on success,
1 on invalid input or configuration, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evaluator, features, mrt, ocsvm, pipeline, selector, stats, synth
from .config import ConfigError, PipelineConfig, load_config, save_config
from .events import read_event_log, save_event_log

log = logging.getLogger("bgpad")

EVENTS = "events.csv"
FEATURES = "features.csv"
AUGMENTED = "augmented.csv"
SPECS = "correlation_specs.csv"
SELECTION = "selection.csv"
MODEL = "model.txt"
TRAINING = "training.yaml"
VERDICTS = "verdicts.csv"
ACCURACY = "accuracy.csv"
DISTANCE = "distance.csv"
CLUSTERS = "clusters.yaml"
SUMMARY = "summary.txt"

PRODUCER = {
    EVENTS: "ingest` or `bgpad synth",
    FEATURES: "features",
    AUGMENTED: "correlate",
    SELECTION: "select",
    MODEL: "train",
    VERDICTS: "detect",
    DISTANCE: "evaluate` or `bgpad repro-tables",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out(args) -> Path:
    out = Path(args.out if args.out is not None else args.cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input(args, explicit, default_name: str) -> Path:
    """Explicit path, or the conventional artifact in the output directory."""
    if explicit:
        p = Path(explicit)
        if not p.exists():
            raise FileNotFoundError(f"{p} does not exist")
        return p
    p = _out(args) / default_name
    if not p.exists():
        hint = PRODUCER.get(default_name)
        run = f"; run `bgpad {hint}` first" if hint else ""
        raise FileNotFoundError(f"missing upstream artifact {p}{run}")
    return p


def _seed(args) -> int:
    return args.cfg.seed if args.seed is None else args.seed


def _pair(value):
    return None if value is None else (int(value[0]), int(value[1]))


def _fit_range(args, matrix) -> tuple[int, int]:
    fit = _pair(getattr(args, "fit", None)) or args.cfg.fit_range or _pair(matrix.meta.get("fit_range"))
    if fit is None:
        raise ConfigError("no fit range: pass --fit LO HI or set fit_range in the config")
    return fit


def _events_sidecar(path: Path) -> dict:
    side = path.with_name(path.stem + ".meta.yaml")
    return (yaml.safe_load(side.read_text(encoding="utf-8")) or {}) if side.exists() else {}


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


def _dump(obj, path: Path) -> None:
    path.write_text(yaml.safe_dump(features._plain(obj), sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"{src} does not exist")
    fmt = args.format
    if fmt == "auto":
        fmt = "log" if src.suffix in (".csv", ".log", ".txt") else "mrt"
    out = _out(args)
    if fmt == "mrt":
        events, st = mrt.read_mrt(src, strict=args.strict)
        info = st.as_dict()
    else:
        events = read_event_log(src)
        info = {"events": len(events)}
    save_event_log(out / EVENTS, events)
    _dump(info, out / "ingest_stats.yaml")
    print(f"ingest: {len(events)} events -> {out / EVENTS}")
    for key, val in info.items():
        if key != "errors":
            print(f"  {key}: {val}")
    return 0


def cmd_synth(args) -> int:
    if args.scenario:
        data = yaml.safe_load(Path(args.scenario).read_text(encoding="utf-8")) or {}
        scfg = synth.config_from_dict(data)
    elif args.preset:
        scfg = synth.preset(args.preset)
    else:
        raise ConfigError("synth needs --preset NAME or --scenario FILE")
    if args.seed is not None:
        scfg = synth.replace(scfg, seed=args.seed)
    scen = synth.generate(scfg)
    out = _out(args)
    synth.write_scenario(scen, out / EVENTS)
    lo, hi = scfg.anomaly_interval
    print(f"synth: {scfg.name} ({scfg.kind}) {len(scen.events)} events, "
          f"{scfg.duration_bins} bins, anomaly [{lo}, {hi}] -> {out / EVENTS}")
    return 0


def cmd_features(args) -> int:
    src = _input(args, args.events, EVENTS)
    side = _events_sidecar(src)
    cfg = args.cfg
    width = args.bin_width or side.get("bin_width") or cfg.bin_width
    interval = _pair(args.anomaly) or cfg.anomaly_interval or _pair(side.get("anomaly_interval"))
    fit = _pair(args.fit) or cfg.fit_range or _pair(side.get("fit_range"))
    ecfg = features.ExtractionConfig(bin_width=int(width), origin=side.get("origin"),
                                     aw_same_path_only=args.aw_same_path)
    events = read_event_log(src)
    matrix = features.extract_features(events, ecfg, args.dataset_id or side.get("dataset_id", ""), interval)
    if fit is not None:
        matrix.meta["fit_range"] = list(fit)
    if args.rebin and args.rebin > 1:
        matrix = features.rebin(matrix, args.rebin)
    out = _out(args)
    features.write_matrix(matrix, out / FEATURES)
    print(f"features: {matrix.n_bins} bins x {len(matrix.columns)} columns -> {out / FEATURES}")
    return 0


def cmd_correlate(args) -> int:
    matrix = features.read_matrix(_input(args, args.matrix, FEATURES))
    fit = _fit_range(args, matrix)
    window = args.window or args.cfg.window
    alpha = args.alpha or args.cfg.alpha
    aug, specs = stats.generate_correlation_features(matrix, fit, window, alpha)
    out = _out(args)
    features.write_matrix(aug, out / AUGMENTED)
    stats.write_specs(specs, out / SPECS)
    n_sig = sum(s.significant for s in specs)
    n_deg = sum(s.degenerate for s in specs)
    print(f"correlate: {len(specs)} pairs, {n_sig} significant at alpha={alpha}, {n_deg} degenerate; "
          f"window {window} -> {out / AUGMENTED}")
    return 0


def cmd_select(args) -> int:
    matrix = features.read_matrix(_input(args, args.matrix, AUGMENTED))
    fit = _fit_range(args, matrix)
    cfg = args.cfg
    k = args.k or cfg.k
    n_base = cfg.n_base if args.n_base is None else args.n_base
    n_corr = cfg.n_corr if args.n_corr is None else args.n_corr
    report = selector.select_features(matrix, fit, k, n_base, n_corr, args.metric or cfg.score_metric,
                                      eval_rows=pipeline.selection_rows(matrix, fit))
    out = _out(args)
    selector.write_report(report, out / SELECTION)
    print(f"select: base {report.selected_base}")
    print(f"        correlation {report.selected_corr}")
    return 0


def cmd_train(args) -> int:
    matrix = features.read_matrix(_input(args, args.matrix, AUGMENTED))
    report = selector.read_report(_input(args, args.selection, SELECTION))
    fit = _fit_range(args, matrix)
    cfg = args.cfg
    if args.nu is not None:
        cfg.nu = args.nu
    if args.gamma is not None:
        cfg.gamma = args.gamma
    if args.tune:
        cfg.tune = True
    cfg.validate()
    validation = None
    if cfg.tune:
        ds = evaluator.LabeledDataset(matrix.dataset_id or "dataset", matrix, fit, cfg.guard)
        rows = ds.holdout_mask() | matrix.anomaly_mask()
        validation = (rows, matrix.anomaly_mask()[rows])
    names = report.selected
    if not names:
        raise ConfigError("selection report lists no selected features")
    model, diag, info = pipeline.train_on(matrix, names, fit, cfg, validation)
    out = _out(args)
    ocsvm.save_model(model, out / MODEL)
    _dump({"iterations": diag.iterations, "gap": diag.gap, "converged": diag.converged,
           "n_support": diag.n_support, "sv_fraction": diag.sv_fraction,
           "fraction_negative": diag.fraction_negative, "objective": diag.objective,
           "nu": model.nu, "gamma": model.kernel.gamma, "kernel": model.kernel.kind,
           "n_train": model.n_train, "fit_range": list(fit), **info}, out / TRAINING)
    state = "converged" if diag.converged else "NOT converged"
    print(f"train: nu={model.nu:g} gamma={model.kernel.gamma:g} on {model.n_train} bins, "
          f"{diag.iterations} iterations ({state}), {diag.n_support} support vectors -> {out / MODEL}")
    return 0


def cmd_detect(args) -> int:
    model = ocsvm.load_model(_input(args, args.model, MODEL))
    matrix = features.read_matrix(_input(args, args.matrix, AUGMENTED))
    k = args.k or args.cfg.k
    cfg = args.cfg
    missing = [n for n in model.feature_names if n not in matrix.columns]
    if missing:
        matrix = evaluator.derive_columns(matrix, model.feature_names, cfg.window)
    fit = _pair(args.fit) or cfg.fit_range or _pair(matrix.meta.get("fit_range"))
    verdicts = pipeline.detect(model, matrix, k, fit if args.own_normalization else None)
    out = _out(args)
    pipeline.write_verdicts(verdicts, matrix.bin_start, out / VERDICTS)
    print(f"detect: {int(verdicts.raw.sum())} of {verdicts.raw.size} bins abnormal "
          f"({int(verdicts.smoothed.sum())} after {k}-bin majority smoothing) -> {out / VERDICTS}")
    if fit is not None:
        rows = matrix.rows_for(*fit)
        if rows.any():
            print(f"  training-period abnormal fraction: {verdicts.raw[rows].mean():.4f} (nu={model.nu:g})")
    if matrix.anomaly_interval is not None and fit is not None:
        ds = evaluator.LabeledDataset(matrix.dataset_id or "dataset", matrix, fit, cfg.guard)
        oc = pipeline.block_outcome(verdicts, ds)
        print(f"  block TPR {oc.tpr:.3f}  FPR {oc.fpr:.3f}  (TP {oc.tp} FP {oc.fp} TN {oc.tn} FN {oc.fn})")
    return 0


def _named_paths(items, what: str) -> list[tuple[str, Path]]:
    pairs = []
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"{what} must be given as NAME=PATH, got {item!r}")
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"{what} {name!r}: {p} does not exist")
        pairs.append((name, p))
    return pairs


def _cross_evaluate(models, datasets, cfg, seed, out: Path):
    am = evaluator.accuracy_matrix(models, datasets, cfg.window, cfg.k, seed)
    dm = evaluator.distance_matrix(am)
    evaluator.write_square(am.names, am.values, out / ACCURACY)
    evaluator.write_square(dm.names, dm.values, out / DISTANCE)
    return am, dm


def cmd_evaluate(args) -> int:
    cfg = args.cfg
    models = [(n, ocsvm.load_model(p)) for n, p in _named_paths(args.model, "--model")]
    datasets = []
    for name, path in _named_paths(args.dataset, "--dataset"):
        m = features.read_matrix(path)
        fit = _pair(m.meta.get("fit_range")) or cfg.fit_range
        if fit is None:
            raise ConfigError(f"dataset {name!r} has no fit range in its sidecar or the config")
        datasets.append(evaluator.LabeledDataset(name, m, fit, cfg.guard))
    if not models:
        raise ConfigError("evaluate needs at least one --model NAME=PATH and matching --dataset NAME=PATH")
    out = _out(args)
    am, dm = _cross_evaluate(models, datasets, cfg, _seed(args), out)
    print(_square_text("accuracy (%)", am.names, am.values))
    print(_square_text("distance", dm.names, dm.values))
    return 0


def _square_text(title: str, names, values) -> str:
    w = max(8, *(len(n) for n in names)) + 1
    lines = [title, " " * w + "".join(f"{n[:w - 1]:>{w}}" for n in names)]
    for n, row in zip(names, values):
        cells = "".join(f"{'invalid' if not np.isfinite(v) else format(v, '.0f'):>{w}}" for v in row)
        lines.append(f"{n:<{w}}" + cells)
    return "\n".join(lines)


def _cluster(dm, cfg, seed, ks, method):
    found = []
    for k in ks:
        c = evaluator.cluster_events(dm, k, seed, cfg.restarts, method)
        found.append(c)
        groups = " | ".join("{" + ", ".join(g) + "}" for g in c.groups)
        print(f"k={k}: {groups}  (inertia {c.inertia:.2f})")
    return found


def cmd_cluster(args) -> int:
    names, values = evaluator.read_square(_input(args, args.distance, DISTANCE))
    dm = evaluator.DistanceMatrix(names, values)
    ks = args.k or args.cfg.cluster_k
    found = _cluster(dm, args.cfg, _seed(args), ks, args.method)
    evaluator.write_clusters(found, _out(args) / CLUSTERS)
    return 0


def cmd_repro_tables(args) -> int:
    am = evaluator.reference_accuracy_matrix()
    dm = evaluator.distance_matrix(am)
    out = _out(args)
    evaluator.write_square(am.names, am.values, out / "reference_accuracy.csv")
    evaluator.write_square(dm.names, dm.values, out / "reference_distance.csv")
    print(_square_text("reference accuracy matrix (%)", am.names, am.values))
    print()
    print(_square_text("distance matrix computed from it", dm.names, dm.values))
    diff = np.argwhere(np.triu(dm.values != evaluator.REFERENCE_DISTANCE_PRINTED))
    for i, j in diff:
        print(f"  note: {dm.names[i]}/{dm.names[j]} computes to {dm.values[i, j]:.0f}; "
              f"the reference table prints {evaluator.REFERENCE_DISTANCE_PRINTED[i, j]:.0f}")
    print()
    found = _cluster(dm, args.cfg, _seed(args), args.cfg.cluster_k, "kmeans")
    evaluator.write_clusters(found, out / "reference_clusters.yaml")
    return 0


def cmd_report(args) -> int:
    out = _out(args)
    lines = ["bgpad report", ""]
    sel_path = out / SELECTION
    aug_path = out / AUGMENTED
    if sel_path.exists():
        report = selector.read_report(sel_path)
        lines.append("feature scores (two-sigma flags, block majority vote)")
        lines.append(f"  {'feature':40s} {'score':>7s} {'TPR':>6s} {'FPR':>6s}  selected")
        for s in report.scores:
            c = s.confusion
            lines.append(f"  {s.name:40s} {s.score:7.3f} {c.tpr:6.3f} {c.fpr:6.3f}  {'yes' if s.selected else ''}")
        lines.append("")
        if aug_path.exists():
            matrix = features.read_matrix(aug_path)
            plots = out / "plots"
            plots.mkdir(exist_ok=True)
            for s in report.scores:
                if s.selected and s.name in matrix.columns:
                    selector.write_plot_csv(matrix, s, plots / f"{_safe(s.name)}.csv")
            lines.append(f"plot data for selected features in {plots}")
            lines.append("")
    if (out / TRAINING).exists():
        t = yaml.safe_load((out / TRAINING).read_text(encoding="utf-8")) or {}
        lines.append("training")
        for key in ("nu", "gamma", "n_train", "iterations", "converged", "n_support", "fraction_negative"):
            if key in t:
                lines.append(f"  {key}: {t[key]}")
        lines.append("")
    if (out / VERDICTS).exists():
        v = pipeline.read_verdicts(out / VERDICTS, args.cfg.k)
        lines.append(f"verdicts: {int(v.raw.sum())} of {v.raw.size} bins abnormal, "
                     f"{int(v.smoothed.sum())} after smoothing")
        lines.append("")
    for fname, title in ((ACCURACY, "accuracy (%)"), (DISTANCE, "distance")):
        if (out / fname).exists():
            names, vals = evaluator.read_square(out / fname)
            lines.append(_square_text(title, names, vals))
            lines.append("")
    if (out / CLUSTERS).exists():
        lines.append("clusters")
        for c in yaml.safe_load((out / CLUSTERS).read_text(encoding="utf-8")) or []:
            lines.append(f"  k={c['k']}: " + " | ".join("{" + ", ".join(g) + "}" for g in c["groups"]))
        lines.append("")
    if len(lines) == 2:
        raise FileNotFoundError(f"no pipeline artifacts in {out}; run the pipeline stages first")
    text = "\n".join(lines).rstrip() + "\n"
    (out / SUMMARY).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_run_all(args) -> int:
    cfg = args.cfg
    out = _out(args)
    names = args.preset or list(synth.PRESETS)
    models, datasets = [], []
    for name in names:
        scfg = synth.preset(name)
        sub = out / name
        sub.mkdir(parents=True, exist_ok=True)
        scen = synth.generate(scfg)
        synth.write_scenario(scen, sub / EVENTS)
        fit = cfg.fit_range or scfg.fit_range
        matrix = features.extract_features(
            scen.events, features.ExtractionConfig(bin_width=scfg.bin_width, origin=scfg.start_time),
            name, scfg.anomaly_interval)
        matrix.meta["fit_range"] = list(fit)
        features.write_matrix(matrix, sub / FEATURES)
        res = pipeline.run_matrix(matrix, fit, cfg)
        features.write_matrix(res.matrix, sub / AUGMENTED)
        stats.write_specs(res.specs, sub / SPECS)
        selector.write_report(res.selection, sub / SELECTION)
        ocsvm.save_model(res.model, sub / MODEL)
        pipeline.write_verdicts(res.verdicts, res.matrix.bin_start, sub / VERDICTS)
        oc = res.outcome
        print(f"{name:16s} block TPR {oc.tpr:.3f}  FPR {oc.fpr:.3f}  "
              f"training abnormal {res.training_abnormal_fraction:.3f}  features {res.selection.selected}")
        models.append((name, res.model))
        datasets.append(evaluator.LabeledDataset(name, matrix, fit, cfg.guard))
    if len(models) > 1:
        am, dm = _cross_evaluate(models, datasets, cfg, _seed(args), out)
        print(_square_text("accuracy (%)", am.names, am.values))
        print(_square_text("distance", dm.names, dm.values))
        ks = [k for k in cfg.cluster_k if k <= len(models)]
        evaluator.write_clusters(_cluster(dm, cfg, _seed(args), ks, "kmeans"), out / CLUSTERS)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="pipeline configuration (YAML)")
    p.add_argument("--seed", type=int, metavar="N", default=d, help="override the configured seed")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory (default: config output_dir)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bgpad", description="BGP anomaly detection pipeline.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common], description=help_)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "MRT dump or event log -> canonical event log")
    p.add_argument("input")
    p.add_argument("--format", choices=("auto", "mrt", "log"), default="auto")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed record")

    p = add("synth", cmd_synth, "generate a labelled synthetic event stream")
    p.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--scenario", metavar="YAML", help="scenario config file")

    p = add("features", cmd_features, "event log -> per-bin feature matrix")
    p.add_argument("--events", metavar="PATH")
    p.add_argument("--bin-width", type=int)
    p.add_argument("--anomaly", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--fit", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--dataset-id")
    p.add_argument("--rebin", type=int, metavar="FACTOR")
    p.add_argument("--aw-same-path", action="store_true", help="count AW only after a same-path announcement")

    p = add("correlate", cmd_correlate, "add rolling-correlation features for significant pairs")
    p.add_argument("--matrix", metavar="PATH")
    p.add_argument("--fit", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--window", type=int)
    p.add_argument("--alpha", type=float)

    p = add("select", cmd_select, "two-sigma scoring and feature selection")
    p.add_argument("--matrix", metavar="PATH")
    p.add_argument("--fit", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--k", type=int)
    p.add_argument("--n-base", type=int)
    p.add_argument("--n-corr", type=int)
    p.add_argument("--metric", choices=("youden", "f1"))

    p = add("train", cmd_train, "train the one-class SVM on the normal period")
    p.add_argument("--matrix", metavar="PATH")
    p.add_argument("--selection", metavar="PATH")
    p.add_argument("--fit", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--nu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tune", action="store_true",
                   help="grid-search (nu, gamma) on held-out and anomaly bins (optimistic afterwards)")

    p = add("detect", cmd_detect, "per-bin verdicts from a model")
    p.add_argument("--model", metavar="PATH")
    p.add_argument("--matrix", metavar="PATH")
    p.add_argument("--fit", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--k", type=int)
    p.add_argument("--own-normalization", action="store_true",
                   help="standardise with this matrix's fit range instead of the model's statistics")

    p = add("evaluate", cmd_evaluate, "cross-event accuracy and distance matrices")
    p.add_argument("--model", action="append", metavar="NAME=PATH")
    p.add_argument("--dataset", action="append", metavar="NAME=PATH")

    p = add("cluster", cmd_cluster, "group events by their distance matrix")
    p.add_argument("--distance", metavar="PATH")
    p.add_argument("--k", type=int, action="append")
    p.add_argument("--method", choices=("kmeans", "kmedoids"), default="kmeans")

    add("report", cmd_report, "summary text and plot CSVs from existing artifacts")
    add("repro-tables", cmd_repro_tables, "distance matrix and clusterings of the reference accuracy matrix")

    p = add("run-all", cmd_run_all, "synthetic presets through every stage plus evaluation")
    p.add_argument("--preset", action="append", choices=sorted(synth.PRESETS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        args.cfg = load_config(args.config) if args.config else PipelineConfig()
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"bgpad: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bgpad: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, mrt.MalformedRecord) as exc:
        print(f"bgpad: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``morphconn`` command line.

Exit codes: 0 ok, 2 usage/config error, 3 data validation error,
4 runtime failure.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config as C, errors
from .atlas import (build_cohort, import_freesurfer_tree, load_atlas, parse_morphometry_wide,
                    parse_phenotypes, write_morphometry_wide)
from .cohort import demographic_summary, stratify, summaries_to_json, summaries_to_text
from .evaluate import (compute_metrics, edges_to_csv, experiment_seeds, lobe_fractions,
                       metrics_grid_csv, rank_edges, run_experiment, summarize_repeats,
                       train_test_split, SplitSpec)
from .features import (apply_standardizer, build_features, fit_standardizer, read_feature_csv,
                       write_feature_cache, write_feature_csv)
from .forest import ForestModel, predict_batch, train_forest
from .seeds import derive_seed, file_sha256
from .select import read_selection_csv, select_features, write_selection_csv
from .synth import SynthSpec, write_cohort

log = logging.getLogger("morphconn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# flag dest -> dotted config key
OVERRIDES = {
    "seed": "seed",
    "jobs": "jobs",
    "out": "paths.out",
    "atlas": "paths.atlas",
    "phenotypes": "paths.phenotypes",
    "morphometry": "paths.morphometry",
    "alpha": "alpha",
    "selection_scope": "selection_scope",
    "standardization_scope": "standardization_scope",
    "pooled_t": "pooled_t",
    "n_trees": "forest.n_trees",
    "max_features": "forest.max_features",
    "max_depth": "forest.max_depth",
    "train_fraction": "split.train_fraction",
    "bands": "bands",
    "kinds": "feature_kinds",
    "top_k": "top_k",
    "edge_criterion": "edge_criterion",
    "repeats": "repeats",
    "strict_join": "strict_join",
}


def _max_features(s):
    return s if s in ("sqrt", "all") else int(s)


def _csv_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="JSON run configuration (or a previous run manifest)")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--jobs", type=int, help="parallel experiment cells")
    g.add_argument("--out", help="output directory")
    g.add_argument("--atlas")
    g.add_argument("--phenotypes")
    g.add_argument("--morphometry")
    g.add_argument("--alpha", type=float)
    g.add_argument("--selection-scope", choices=["train_only", "full_cohort"])
    g.add_argument("--standardization-scope", choices=["train_only", "full_cohort"])
    g.add_argument("--pooled-t", action="store_const", const=True,
                   help="Student's pooled-variance t-test instead of Welch")
    g.add_argument("--n-trees", type=int)
    g.add_argument("--max-features", type=_max_features)
    g.add_argument("--max-depth", type=int)
    g.add_argument("--train-fraction", type=float)
    g.add_argument("--bands", type=_csv_list, help="comma-separated band labels")
    g.add_argument("--kinds", type=lambda s: [k.upper() for k in _csv_list(s)],
                   help="comma-separated feature kinds (MF,MCF)")
    g.add_argument("--top-k", type=int)
    g.add_argument("--edge-criterion", choices=["pvalue", "gini_importance"])
    g.add_argument("--repeats", type=int, help="extra seeds for mean/sd metrics (extension)")
    g.add_argument("--lenient", dest="strict_join", action="store_const", const=False,
                   help="drop unmatched subjects instead of failing")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="morphconn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"morphconn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="every band x feature kind experiment")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--spec", required=True, help="synth spec JSON")

    p = sub.add_parser("ingest", parents=[common], help="validate inputs, write canonical CSV")
    p.add_argument("--freesurfer-dir", help="directory of per-subject stats directories")

    p = sub.add_parser("features", parents=[common], help="build an MF or MCF matrix")
    p.add_argument("--kind", type=str.upper, choices=["MF", "MCF"], required=True)
    p.add_argument("--band", help="age band label (default: first configured band)")

    p = sub.add_parser("select", parents=[common], help="t-test screening of a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--band")

    p = sub.add_parser("train", parents=[common], help="train a forest on selected features")
    p.add_argument("--features", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--band")

    p = sub.add_parser("report", parents=[common], help="evaluate a trained model")
    p.add_argument("--features", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--band")
    return parser


def effective_config(args) -> dict:
    file_cfg = C.load_config_file(args.config) if args.config else None
    overrides = {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}
    return C.resolve(file_cfg, overrides)


def _print_config(cfg, stream):
    stream.write("effective config: " + json.dumps(cfg, sort_keys=True) + "\n")


def _band(cfg, label):
    bands = C.parse_bands(cfg)
    if label is None:
        return bands[0]
    for b in bands:
        if b.label == label:
            return b
    raise errors.ConfigError(f"band {label!r} is not configured")


def _load_dataset(cfg):
    C.require_paths(cfg, "atlas", "phenotypes", "morphometry")
    p = cfg["paths"]
    atlas = load_atlas(p["atlas"])
    return build_cohort(parse_phenotypes(p["phenotypes"]),
                        parse_morphometry_wide(p["morphometry"], atlas), atlas,
                        strict=cfg["strict_join"])


def _out_dir(cfg) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _input_hashes(cfg):
    return {k: file_sha256(cfg["paths"][k]) for k in ("atlas", "phenotypes", "morphometry")}


# --------------------------------------------------------------------------
# run


def _run_cell(dataset, band, kind, exp_cfg, hashes, repeats, master):
    """One (band, kind) experiment; returns serialized outputs and its log."""
    buf = io.StringIO()
    handler = logging.StreamHandler(buf)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    cell_log = logging.getLogger(f"morphconn.cell.{band.label}.{kind}")
    cell_log.propagate = False
    cell_log.setLevel(logging.INFO)
    cell_log.addHandler(handler)
    try:
        report = run_experiment(dataset, band, kind, exp_cfg, hashes)
        cell_log.info("%s %s: %d/%d features selected, accuracy %.4f", band.label, kind,
                      report.selection["selected_count"], report.selection["n_features"],
                      report.metrics.accuracy)
        repeat_summary = None
        if repeats > 1:
            runs = [report.metrics]
            for r in range(1, repeats):
                seed_r = derive_seed(master, f"repeat/{r}")
                cfg_r = replace(exp_cfg, seed=seed_r)
                runs.append(run_experiment(dataset, band, kind, cfg_r, hashes).metrics)
                cell_log.info("repeat %d seed %d accuracy %.4f", r, seed_r, runs[-1].accuracy)
            repeat_summary = summarize_repeats(runs)
        edges = None if report.top_edges is None else edges_to_csv(report.top_edges)
        return {"band": band.label, "kind": kind, "json": report.to_json(), "text": report.to_text(),
                "edges": edges, "report": report, "repeats": repeat_summary,
                "seeds": report.seeds, "log": buf.getvalue()}
    finally:
        cell_log.removeHandler(handler)


def cmd_run(cfg, stdout) -> int:
    master = C.require_seed(cfg)
    dataset = _load_dataset(cfg)
    bands = C.parse_bands(cfg)
    kinds = [k.upper() for k in cfg["feature_kinds"]]
    exp_cfg = C.experiment_config(cfg)
    hashes = _input_hashes(cfg)
    out = _out_dir(cfg)
    cells = [(b, k) for b in bands for k in kinds]
    jobs = max(1, int(cfg["jobs"]))
    args = [(dataset, b, k, exp_cfg, hashes, int(cfg["repeats"]), master) for b, k in cells]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = [pool.submit(_run_cell, *a) for a in args]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(*a) for a in args]

    outputs = {}

    def emit(rel, text):
        _write(out / rel, text)
        outputs[rel] = file_sha256(out / rel)

    demo = {b.label: demographic_summary(stratify(dataset, b)) for b in bands
            if len(stratify(dataset, b))}
    emit("demographics.json", summaries_to_json(demo))
    emit("demographics.txt", summaries_to_text(demo))
    for r in results:
        stem = f"{r['band']}_{r['kind']}"
        emit(f"reports/{stem}.json", r["json"])
        emit(f"reports/{stem}.txt", r["text"])
        if r["edges"] is not None:
            emit(f"edges/{stem}.csv", r["edges"])
        emit(f"logs/{stem}.log", r["log"])
    emit("metrics_grid.csv", metrics_grid_csv([r["report"] for r in results]))
    emit("run.log", "".join(r["log"] for r in results))
    if int(cfg["repeats"]) > 1:
        emit("repeats.json", json.dumps(
            {"note": "extension: metrics mean/sd over repeated master seeds",
             "repeats": int(cfg["repeats"]),
             "cells": {f"{r['band']}_{r['kind']}": r["repeats"] for r in results}},
            indent=2) + "\n")
    manifest_cfg = dict(cfg)
    manifest_cfg.pop("jobs")  # output is independent of the job count
    manifest = {
        "tool": "morphconn",
        "version": __version__,
        "config": manifest_cfg,
        "inputs": {k: {"path": cfg["paths"][k], "sha256": v} for k, v in hashes.items()},
        "seeds": {"master": master,
                  "cells": {f"{r['band']}_{r['kind']}": r["seeds"] for r in results},
                  "tree_seed_rule": "SeedSequence([forest_seed, tree_index])",
                  "sub_seed_rule": "sha256(f'{master}/{name}')[:8] >> 1"},
        "outputs": outputs,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    for r in results:
        stdout.write(r["text"] + "\n")
    stdout.write(f"wrote {len(results)} reports and manifest to {out}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# stage commands


def cmd_synth(cfg, args, stdout) -> int:
    spec_doc = json.loads(Path(args.spec).read_text())
    if cfg["seed"] is not None:
        spec_doc["seed"] = cfg["seed"]
    atlas_ref = spec_doc.get("atlas", "bundled")
    if isinstance(atlas_ref, str) and atlas_ref != "bundled" and not Path(atlas_ref).is_absolute():
        spec_doc["atlas"] = str(Path(args.spec).parent / atlas_ref)
    spec = SynthSpec.from_dict(spec_doc)
    out = Path(cfg["paths"]["out"])
    paths = write_cohort(spec, out)
    for name, p in paths.items():
        stdout.write(f"{name}: {p}\n")
    return EXIT_OK


def cmd_ingest(cfg, args, stdout) -> int:
    C.require_paths(cfg, "atlas", "phenotypes")
    atlas = load_atlas(cfg["paths"]["atlas"])
    phenos = parse_phenotypes(cfg["paths"]["phenotypes"])
    if args.freesurfer_dir:
        morph = import_freesurfer_tree(args.freesurfer_dir, atlas, jobs=max(1, int(cfg["jobs"])))
    else:
        C.require_paths(cfg, "morphometry")
        morph = parse_morphometry_wide(cfg["paths"]["morphometry"], atlas)
    ds = build_cohort(phenos, morph, atlas, strict=cfg["strict_join"])
    out = _out_dir(cfg)
    write_morphometry_wide(ds.morphometry, atlas, out / "morphometry.csv")
    demo = {b.label: demographic_summary(stratify(ds, b)) for b in C.parse_bands(cfg)
            if len(stratify(ds, b))}
    _write(out / "demographics.json", summaries_to_json(demo))
    _write(out / "demographics.txt", summaries_to_text(demo))
    stdout.write(summaries_to_text(demo))
    if ds.dropped:
        stdout.write(f"dropped unmatched subjects: {', '.join(ds.dropped)}\n")
    stdout.write(f"{len(ds)} subjects written to {out / 'morphometry.csv'}\n")
    return EXIT_OK


def _labels_for(cfg, ids):
    C.require_paths(cfg, "phenotypes")
    groups = {p.subject_id: p.group for p in parse_phenotypes(cfg["paths"]["phenotypes"])}
    missing = [s for s in ids if s not in groups]
    if missing:
        raise errors.UnmatchedSubjects(missing)
    return np.array([1 if groups[s] == "ASD" else 0 for s in ids], dtype=np.int64)


def _split_ids(cfg, band, ids, labels):
    seed = experiment_seeds(C.require_seed(cfg), band.label, "MF")["split"]
    return train_test_split(ids, labels, SplitSpec(cfg["split"]["train_fraction"],
                                                   cfg["split"]["stratify"], seed))


def cmd_features(cfg, args, stdout) -> int:
    dataset = _load_dataset(cfg)
    band = _band(cfg, args.band)
    cohort = stratify(dataset, band)
    mask = None
    if cfg["standardization_scope"] == "train_only":
        train_ids, _ = _split_ids(cfg, band, cohort.subject_ids, cohort.labels)
        keep = set(train_ids)
        mask = np.array([s in keep for s in cohort.subject_ids])
    params = fit_standardizer(cohort, mask, cfg["standardization_scope"])
    fm = build_features(args.kind, apply_standardizer(params, cohort), cohort.atlas,
                        cohort.subject_ids, params)
    out = _out_dir(cfg)
    stem = f"features_{band.label}_{args.kind}"
    write_feature_csv(fm, out / f"{stem}.csv")
    write_feature_cache(fm, out / f"{stem}.npz")
    stdout.write(f"{fm.n_features} {args.kind} features for {len(fm.subject_ids)} subjects "
                 f"-> {out / (stem + '.csv')}\n")
    return EXIT_OK


def _load_features(cfg, path):
    C.require_paths(cfg, "atlas")
    return read_feature_csv(path, load_atlas(cfg["paths"]["atlas"]))


def cmd_select(cfg, args, stdout) -> int:
    fm = _load_features(cfg, args.features)
    band = _band(cfg, args.band)
    labels = _labels_for(cfg, fm.subject_ids)
    ids = list(fm.subject_ids)
    if cfg["selection_scope"] == "train_only":
        ids, _ = _split_ids(cfg, band, ids, labels)
        pos = {s: k for k, s in enumerate(fm.subject_ids)}
        labels = labels[[pos[s] for s in ids]]
    sel = select_features(fm, labels, cfg["alpha"], cfg["selection_scope"], ids, cfg["pooled_t"])
    out = _out_dir(cfg)
    path = out / (Path(args.features).stem.replace("features_", "selection_") + ".csv")
    write_selection_csv(sel, fm.atlas, path)
    stdout.write(f"{sel.selected_count}/{fm.n_features} selected at p < {cfg['alpha']} -> {path}\n")
    return EXIT_OK


def _train_rows(cfg, args, fm):
    band = _band(cfg, args.band)
    labels = _labels_for(cfg, fm.subject_ids)
    train_ids, test_ids = _split_ids(cfg, band, list(fm.subject_ids), labels)
    sel = read_selection_csv(args.selection, fm, cfg["alpha"], cfg["selection_scope"])
    chosen = fm.columns(sel.mask)
    if chosen.n_features == 0:
        raise errors.EmptyFeatureSet("selection contains no selected feature")
    pos = {s: k for k, s in enumerate(fm.subject_ids)}
    return band, sel, chosen, train_ids, test_ids, labels, pos


def cmd_train(cfg, args, stdout) -> int:
    fm = _load_features(cfg, args.features)
    band, _, chosen, train_ids, _, labels, pos = _train_rows(cfg, args, fm)
    seed = experiment_seeds(C.require_seed(cfg), band.label, fm.kind)["forest"]
    params = replace(C.forest_params(cfg), seed=seed)
    model = train_forest(chosen.rows(train_ids), labels[[pos[s] for s in train_ids]], params)
    out = _out_dir(cfg)
    path = out / (Path(args.features).stem.replace("features_", "model_") + ".json")
    _write(path, model.to_json())
    stdout.write(f"{params.n_trees} trees on {len(train_ids)} subjects x {chosen.n_features} "
                 f"features -> {path}\n")
    return EXIT_OK


def cmd_report(cfg, args, stdout) -> int:
    fm = _load_features(cfg, args.features)
    band, sel, chosen, _, test_ids, labels, pos = _train_rows(cfg, args, fm)
    model = ForestModel.from_json(Path(args.model).read_text())
    y_pred, _ = predict_batch(model, chosen.rows(test_ids))
    metrics = compute_metrics(labels[[pos[s] for s in test_ids]], y_pred)
    doc = {"band": band.label, "feature_kind": fm.kind, "metrics": metrics.to_dict(),
           "selected_count": sel.selected_count,
           "lobe_fractions": lobe_fractions(sel.selected_descriptors, fm.atlas)}
    out = _out_dir(cfg)
    stem = Path(args.features).stem.replace("features_", "report_")
    _write(out / f"{stem}.json", json.dumps(doc, indent=2) + "\n")
    if fm.kind == "MCF":
        edges = rank_edges(sel, fm.atlas, model, cfg["edge_criterion"], int(cfg["top_k"]))
        _write(out / f"{stem.replace('report_', 'edges_')}.csv", edges_to_csv(edges))
    stdout.write(json.dumps(doc["metrics"]) + "\n")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "select": cmd_select,
    "train": cmd_train,
    "report": cmd_report,
}


def _exit_code(exc) -> int:
    # inputs already parsed cleanly once a pipeline stage is running
    if isinstance(exc, errors.StageError):
        return EXIT_CONFIG if isinstance(exc.cause, errors.ConfigError) else EXIT_RUNTIME
    if isinstance(exc, errors.ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (errors.DataValidationError, KeyError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        _print_config(cfg, stdout)
        if args.command == "run":
            return cmd_run(cfg, stdout)
        return COMMANDS[args.command](cfg, args, stdout)
    except errors.MorphconnError as exc:
        if isinstance(exc, errors.StageError):
            detail = f"[{exc.stage}] {type(exc.cause).__name__}: {exc.cause}"
        else:
            detail = f"{type(exc).__name__}: {exc}"
        stderr.write(f"morphconn {args.command}: {detail}\n")
        return _exit_code(exc)
    except (OSError, ValueError) as exc:
        stderr.write(f"morphconn {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


def main_entry():  # console-script shim
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()

import io
import json
from pathlib import Path

import pytest

from morphconn import cli
from morphconn.config import DEFAULTS

SPEC = {"seed": 31, "atlas": 16,
        "bands": [{"label": "child", "age_min": 6, "age_max": 11, "n_td": 30, "n_asd": 30},
                  {"label": "teen", "age_min": 11, "age_max": 18, "n_td": 30, "n_asd": 30}],
        "mf_effect": [{"region": 0, "measure": "area", "shift": 1.5}],
        "mcf_random": {"count": 3, "coupling": 0.8, "seed": 2}}


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(list(map(str, argv)), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    code, out, err = call("synth", "--spec", root / "spec.json", "--out", root / "data")
    assert code == 0, err
    cfg = {"paths": {"atlas": "data/atlas.csv", "phenotypes": "data/phenotypes.csv",
                     "morphometry": "data/morphometry.csv", "out": "run"},
           "seed": 5, "forest": {"n_trees": 15}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def _snapshot(out_dir):
    return {str(p.relative_to(out_dir)): p.read_bytes()
            for p in sorted(Path(out_dir).rglob("*")) if p.is_file()}


def test_synth_writes_csvs(cohort):
    assert {p.name for p in (cohort / "data").iterdir()} == {"atlas.csv", "phenotypes.csv",
                                                             "morphometry.csv"}


def test_run_writes_six_reports_and_manifest(cohort):
    code, out, err = call("run", "--config", cohort / "cfg.json")
    assert code == 0, err
    assert out.startswith("effective config: ")
    run = cohort / "run"
    assert len(list((run / "reports").glob("*.json"))) == 6
    assert len(list((run / "edges").glob("*.csv"))) == 3
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"]["master"] == 5 and len(manifest["seeds"]["cells"]) == 6
    assert set(manifest["inputs"]) == {"atlas", "phenotypes", "morphometry"}
    assert all(len(v["sha256"]) == 64 for v in manifest["inputs"].values())
    assert (run / "metrics_grid.csv").read_text().startswith("band,MF_accuracy")


def test_run_deterministic_and_job_independent(cohort, tmp_path):
    out = tmp_path / "det"
    assert call("run", "--config", cohort / "cfg.json", "--out", out)[0] == 0
    first = _snapshot(out)
    assert call("run", "--config", cohort / "cfg.json", "--out", out)[0] == 0
    assert _snapshot(out) == first
    assert call("run", "--config", cohort / "cfg.json", "--out", out, "--jobs", 4)[0] == 0
    assert _snapshot(out) == first


def test_manifest_reruns_identically(cohort, tmp_path):
    out = tmp_path / "m"
    assert call("run", "--config", cohort / "cfg.json", "--out", out)[0] == 0
    reports = {k: v for k, v in _snapshot(out).items() if k.startswith(("reports", "edges"))}
    manifest = out / "manifest.json"
    saved = tmp_path / "manifest_copy.json"
    saved.write_bytes(manifest.read_bytes())
    assert call("run", "--config", saved)[0] == 0
    again = {k: v for k, v in _snapshot(out).items() if k.startswith(("reports", "edges"))}
    assert again == reports


def test_repeats_extension(cohort, tmp_path):
    code, _, err = call("run", "--config", cohort / "cfg.json", "--out", tmp_path / "r",
                        "--repeats", 2, "--bands", "6to11", "--kinds", "mf")
    assert code == 0, err
    doc = json.loads((tmp_path / "r" / "repeats.json").read_text())
    assert doc["cells"]["6to11_MF"]["accuracy"]["n"] == 2


def test_missing_atlas_is_exit_2(cohort, tmp_path):
    cfg = json.loads((cohort / "cfg.json").read_text())
    del cfg["paths"]["atlas"]
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = call("run", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == 2 and "paths.atlas" in err


def test_missing_seed_is_exit_2(cohort, tmp_path):
    cfg = json.loads((cohort / "cfg.json").read_text())
    del cfg["seed"]
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = call("run", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == 2 and "seed" in err


def test_bad_data_is_exit_3(cohort, tmp_path):
    bad = tmp_path / "pheno.csv"
    text = (cohort / "data" / "phenotypes.csv").read_text().splitlines()
    text[1] = text[1].replace("TD", "XX").replace("ASD", "XX")
    bad.write_text("\n".join(text) + "\n")
    code, _, err = call("run", "--config", cohort / "cfg.json", "--phenotypes", bad,
                        "--out", tmp_path / "o")
    assert code == 3, err


def test_runtime_failure_is_exit_4(cohort, tmp_path):
    # alpha 0 selects nothing, which fails the select stage
    code, _, err = call("run", "--config", cohort / "cfg.json", "--alpha", 0,
                        "--out", tmp_path / "o", "--kinds", "MF", "--bands", "6to11")
    assert code == 4 and "[select]" in err


def test_usage_error_is_exit_2():
    assert call("bogus")[0] == 2
    assert call("select")[0] == 2


def test_unknown_config_key_is_exit_2(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"alhpa": 0.1}))
    code, _, err = call("run", "--config", tmp_path / "c.json")
    assert code == 2 and "alhpa" in err


# -- flag precedence matrix --------------------------------------------------------------

# (flag, flag argv value, dotted key, file value, expected flag value)
MATRIX = [
    ("--seed", "7", "seed", 3, 7),
    ("--jobs", "2", "jobs", 3, 2),
    ("--alpha", "0.01", "alpha", 0.2, 0.01),
    ("--selection-scope", "full_cohort", "selection_scope", "train_only", "full_cohort"),
    ("--standardization-scope", "full_cohort", "standardization_scope", "train_only", "full_cohort"),
    ("--n-trees", "9", "forest.n_trees", 50, 9),
    ("--max-features", "all", "forest.max_features", 3, "all"),
    ("--max-depth", "4", "forest.max_depth", 8, 4),
    ("--train-fraction", "0.7", "split.train_fraction", 0.6, 0.7),
    ("--bands", "6to11,6to18", "bands", ["11to18"], ["6to11", "6to18"]),
    ("--kinds", "mcf", "feature_kinds", ["MF"], ["MCF"]),
    ("--top-k", "5", "top_k", 20, 5),
    ("--edge-criterion", "gini_importance", "edge_criterion", "pvalue", "gini_importance"),
    ("--repeats", "3", "repeats", 2, 3),
]


def _get(cfg, dotted):
    for k in dotted.split("."):
        cfg = cfg[k]
    return cfg


def _nest(dotted, value):
    doc = value
    for k in reversed(dotted.split(".")):
        doc = {k: doc}
    return doc


def _effective(argv):
    return cli.effective_config(cli.build_parser().parse_args(argv))


@pytest.mark.parametrize("flag, flag_value, key, file_value, expected", MATRIX)
def test_flag_precedence(tmp_path, flag, flag_value, key, file_value, expected):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(_nest(key, file_value)))
    assert _get(_effective(["run"]), key) == _get(DEFAULTS, key)
    assert _get(_effective(["run", "--config", str(path)]), key) == file_value
    assert _get(_effective(["run", "--config", str(path), flag, flag_value]), key) == expected
    assert _get(_effective(["run", flag, flag_value]), key) == expected


@pytest.mark.parametrize("flag, key, file_value", [("--pooled-t", "pooled_t", False),
                                                   ("--lenient", "strict_join", True)])
def test_switch_precedence(tmp_path, flag, key, file_value):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({key: file_value}))
    base = _get(_effective(["run", "--config", str(path)]), key)
    assert base == file_value
    assert _get(_effective(["run", "--config", str(path), flag]), key) == (not file_value)


def test_path_flags_override_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"paths": {"atlas": "a.csv", "out": "o"}}))
    cfg = _effective(["run", "--config", str(path), "--atlas", "/x/b.csv", "--out", "/x/o"])
    assert cfg["paths"]["atlas"] == "/x/b.csv" and cfg["paths"]["out"] == "/x/o"
    cfg = _effective(["run", "--config", str(path)])
    assert cfg["paths"]["atlas"] == str(tmp_path / "a.csv")


# -- stage commands ----------------------------------------------------------------------

def test_stage_commands_chain(cohort, tmp_path):
    base = ["--config", cohort / "cfg.json", "--out", tmp_path, "--band", "6to11"]
    code, out, err = call("features", "--kind", "mcf", *base)
    assert code == 0, err
    assert "effective config" in out
    feats = tmp_path / "features_6to11_MCF.csv"
    assert len(feats.read_text().splitlines()[0].split(",")) == 1 + 16 * 15 // 2
    code, out, err = call("select", "--features", feats, *base, "--alpha", 0.01)
    assert code == 0, err
    assert '"alpha": 0.01' in out
    sel = tmp_path / "selection_6to11_MCF.csv"
    code, _, err = call("train", "--features", feats, "--selection", sel, *base)
    assert code == 0, err
    model = tmp_path / "model_6to11_MCF.json"
    code, out, err = call("report", "--features", feats, "--selection", sel, "--model", model, *base)
    assert code == 0, err
    assert (tmp_path / "report_6to11_MCF.json").exists()
    assert (tmp_path / "edges_6to11_MCF.csv").exists()


def test_features_mcf_on_bundled_atlas(tmp_path):
    spec = {"seed": 1, "bands": [{"label": "a", "age_min": 6, "age_max": 11, "n_td": 6, "n_asd": 6}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert call("synth", "--spec", tmp_path / "s.json", "--out", tmp_path / "d")[0] == 0
    d = tmp_path / "d"
    code, _, err = call("features", "--kind", "mcf", "--atlas", d / "atlas.csv",
                        "--phenotypes", d / "phenotypes.csv", "--morphometry", d / "morphometry.csv",
                        "--seed", 1, "--out", tmp_path / "f", "--band", "6to11")
    assert code == 0, err
    header = (tmp_path / "f" / "features_6to11_MCF.csv").read_text().splitlines()[0]
    assert len(header.split(",")) == 1 + 10878


def test_ingest_writes_canonical_csv(cohort, tmp_path):
    code, out, err = call("ingest", "--config", cohort / "cfg.json", "--out", tmp_path)
    assert code == 0, err
    assert (tmp_path / "morphometry.csv").read_bytes() == \
        (cohort / "data" / "morphometry.csv").read_bytes()
    assert (tmp_path / "demographics.json").exists()

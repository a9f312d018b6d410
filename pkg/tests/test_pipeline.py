import json
import os

import numpy as np
import pytest

from tiestrength import cli
from tiestrength.learn import load_model
from tiestrength.pipeline import ConfigError, LockError, RunConfig, StageError, Workdir, run_pipeline
from tiestrength.synthetic import cdr_fixture, multiplex_fixture

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture(scope="module")
def village(tmp_path_factory):
    return multiplex_fixture(seed=3, n_households=120).write(tmp_path_factory.mktemp("village"))


@pytest.fixture(scope="module")
def calls(tmp_path_factory):
    return cdr_fixture(seed=4, n_groups=90).write(tmp_path_factory.mktemp("calls"))


def _village_cfg(village, workdir, **kw):
    base = dict(kind="multiplex", workdir=str(workdir), multiplex=village["multiplex"], layers=village["layers"],
                attributes=village["attributes"], learners=("forest_clf", "poisson"), n_trees=20, seed=5)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def village_run(village, tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    return wd, run_pipeline(_village_cfg(village, wd))


def test_village_report_contents(village_run):
    wd, rep = village_run
    ids = [m["id"] for m in rep["models"]]
    assert ids == ["forest_clf-w-m1", "poisson-w-m1"]
    clf, pois = rep["models"]
    acc = clf["accuracy"]
    assert np.all(np.diff(acc["fraction"]) >= 0) and acc["fraction"][-1] == 1.0
    assert {"0.05", "0.1", "1.0"} <= set(clf["named_accuracy"])
    conf = clf["confusion"]
    assert conf["labels"] == list(range(1, 13)) and np.array(conf["matrix"]).shape == (12, 12)
    assert np.array(conf["matrix"]).sum() == clf["n_eval"]
    imp = clf["importance"]
    assert imp["null"] == pytest.approx(1 / len(imp["features"]))
    assert sum(imp["values"]) == pytest.approx(1.0, abs=1e-9)
    names = [r["name"] for r in pois["linear"]["coefficients"]]
    assert "overlap" in names and "is_fm" in names and "sex_pair" not in names
    assert all("se" in r for r in pois["linear"]["coefficients"])
    assert "same_zip" not in names  # no zip codes in a village survey
    assert rep["ingest"]["share_strength_12"] > 0.3
    assert rep["sample"]["modeling_edges"] == rep["ingest"]["cross_household_edges"]


def test_village_golden_summary(village_run):
    wd, rep = village_run
    summary = {"ingest": rep["ingest"], "sample": rep["sample"], "config_hash": rep["config_hash"],
               "n_eval": [m["n_eval"] for m in rep["models"]]}
    path = os.path.join(GOLDEN, "village_summary.json")
    assert json.loads(open(path).read()) == json.loads(json.dumps(summary))


def test_artifacts_stamped_and_listed(village_run):
    wd, rep = village_run
    man = json.loads((wd / "manifest.json").read_text())
    for rel, entry in man["artifacts"].items():
        assert entry["config_hash"] == rep["config_hash"] and entry["seed"] == 5
        if rel.endswith(".json"):
            d = json.loads((wd / rel).read_text())
            meta = d.get("meta", d)
            assert meta["config_hash"] == rep["config_hash"], rel
    for rel in ("features.csv", "targets_w.csv", "models/poisson-w-m1.json", "report.json", "plots/accuracy.svg"):
        assert rel in man["artifacts"]
    assert "timing.json" not in man["artifacts"]
    timing = json.loads((wd / "timing.json").read_text())
    assert set(timing["seconds"]) == {"ingest", "features", "impute", "fit", "evaluate", "report"}


def test_rerun_byte_identical(village, village_run, tmp_path):
    wd, _ = village_run
    run_pipeline(_village_cfg(village, tmp_path, n_jobs=3))
    for root, _, files in os.walk(wd):
        for f in files:
            rel = os.path.relpath(os.path.join(root, f), wd)
            if rel in ("timing.json", "config.json"):
                continue
            assert (wd / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_saved_model_predicts_identically(village_run):
    wd, _ = village_run
    m = load_model(wd / "models" / "forest_clf-w-m1.json")
    from tiestrength.bowtie import FeatureTable
    ft = FeatureTable.from_csv(wd / "features_imputed.csv")
    X = ft.matrix(m.schema)[:50]
    np.testing.assert_array_equal(m.predict(X), load_model(wd / "models" / "forest_clf-w-m1.json").predict(X))


@pytest.mark.parametrize("model,excluded", [(2, "weighted_overlap"), (3, "overlap")])
def test_reduced_models_never_mention_excluded_column(village, tmp_path, model, excluded):
    rep = run_pipeline(_village_cfg(village, tmp_path, models=(model,), learners=("forest_reg", "poisson")))
    text = (tmp_path / "report.json").read_text() + (tmp_path / "report.md").read_text()
    tokens = set(text.replace('"', " ").replace("|", " ").replace(",", " ").split())
    assert excluded not in tokens
    assert all(excluded not in m["importance"]["features"] for m in rep["models"] if "importance" in m)


def test_cdr_six_linear_models(calls, tmp_path):
    cfg = RunConfig(kind="cdr", workdir=str(tmp_path), cdr=calls["cdr"], attributes=calls["attributes"],
                    learners=("ols", "lasso", "ridge"), targets=("y", "z"), n_trees=15, seed=1)
    rep = run_pipeline(cfg)
    ids = [m["id"] for m in rep["models"]]
    assert ids == [f"{L}-{t}-m1" for t in ("y", "z") for L in ("ols", "lasso", "ridge")]
    for m in rep["models"]:
        lin = m["linear"]
        assert lin["adj_r2"] is not None
        if m["learner"] != "ols":
            assert lin["lambda"] > 0 and lin["cv_chosen"] == lin["lambda"]
        assert "same_zip" in [r["name"] for r in lin["coefficients"]]
    imp = {a["attribute"] for a in rep["imputation"]["attributes"]}
    assert imp == {"age", "sex", "paired_zip"}
    fit = json.loads((tmp_path / "fit.json").read_text())
    for e in fit["models"]:
        assert e["transform"] == "log_then_center"
        assert "n_diff" in e["dropped_aliased"]
    # two rows per edge for y, one for z
    assert rep["models"][0]["n_eval"] == 2 * rep["models"][3]["n_eval"]
    assert not list((tmp_path / "plots").glob("importance_*"))


def test_single_orientation_y(calls, tmp_path):
    base = dict(kind="cdr", cdr=calls["cdr"], attributes=calls["attributes"], learners=("ols",), targets=("y",),
                n_trees=10, complete_case_only=True)
    both = run_pipeline(RunConfig(workdir=str(tmp_path / "both"), **base))
    one = run_pipeline(RunConfig(workdir=str(tmp_path / "one"), y_orientation="ij", **base))
    assert both["models"][0]["n_eval"] == 2 * one["models"][0]["n_eval"]
    assert both["config_hash"] != one["config_hash"]
    with pytest.raises(ConfigError, match="orientation"):
        RunConfig(**base, y_orientation="ji").validate()


def test_complete_case_and_sampling(calls, tmp_path):
    cfg = RunConfig(kind="cdr", workdir=str(tmp_path), cdr=calls["cdr"], attributes=calls["attributes"],
                    learners=("forest_reg",), targets=("z",), n_trees=10, complete_case_only=True,
                    sample_edges=600)
    rep = run_pipeline(cfg)
    assert rep["imputation"]["applied"] is False
    s = rep["sample"]
    assert s["sampled_edges"] == 600
    assert s["modeling_edges"] == 600 - s["dropped_incomplete"] and s["dropped_incomplete"] > 0
    assert not (tmp_path / "features_imputed.csv").exists()


def test_insample_mode(village, tmp_path):
    rep = run_pipeline(_village_cfg(village, tmp_path, learners=("forest_reg",), eval_mode="insample"))
    assert rep["eval_mode"] == "insample"
    assert rep["models"][0]["n_eval"] == rep["sample"]["modeling_edges"]


def test_config_validation(village, tmp_path):
    with pytest.raises(ConfigError, match="integer target"):
        RunConfig(kind="cdr", cdr="x", learners=("poisson",), targets=("y",)).validate()
    with pytest.raises(ConfigError, match="needs --edges"):
        RunConfig(kind="generic").validate()
    with pytest.raises(ConfigError, match="learner"):
        RunConfig(kind="generic", edges="x", learners=("svm",)).validate()
    with pytest.raises(ConfigError, match="target w"):
        _village_cfg(village, tmp_path, targets=("y",)).validate()


def test_stage_errors_name_the_stage(tmp_path):
    bad = tmp_path / "e.csv"
    bad.write_text("src,dst,weight\n1,2,1\n2,3,oops\n")
    with pytest.raises(StageError, match=r"stage 'ingest'.*e\.csv:3"):
        run_pipeline(RunConfig(kind="generic", edges=str(bad), workdir=str(tmp_path / "w")))
    assert not (tmp_path / "w" / ".tiestrength.lock").exists()


def test_lock_excludes_second_pipeline(village, tmp_path):
    cfg = _village_cfg(village, tmp_path)
    with Workdir(cfg).lock():
        with pytest.raises(LockError):
            run_pipeline(cfg)
        code = cli.main(["ingest", "--workdir", str(tmp_path), "--kind", "multiplex",
                         "--multiplex", village["multiplex"]])
        assert code == cli.EXIT_LOCKED


def test_cli_stage_by_stage_matches_pipeline(village, village_run, tmp_path):
    wd, _ = village_run
    common = ["--workdir", str(tmp_path), "--seed", "5", "--n-trees", "20"]
    assert cli.main(["ingest", *common, "--kind", "multiplex", "--multiplex", village["multiplex"],
                     "--layers", village["layers"], "--attributes", village["attributes"]]) == 0
    for stage in ("features", "impute"):
        assert cli.main([stage, *common]) == 0
    assert cli.main(["fit", *common, "--learners", "forest_clf", "poisson"]) == 0
    for stage in ("evaluate", "report"):
        assert cli.main([stage, *common]) == 0
    for rel in ("features.csv", "models/forest_clf-w-m1.json", "evaluation.json", "report.json"):
        assert (wd / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "e.csv"
    bad.write_text("src,dst\n1,2\n")
    assert cli.main(["pipeline", "--workdir", str(tmp_path / "a"), "--kind", "generic", "--edges", str(bad)]) == 2
    assert "missing columns" in capsys.readouterr().err
    assert cli.main(["pipeline", "--workdir", str(tmp_path / "b"), "--kind", "generic"]) == 3
    assert cli.main(["features", "--workdir", str(tmp_path / "empty")]) == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["fit", "--model", "4"])
    assert exc.value.code == 2


def test_exit_code_mapping():
    from tiestrength.ingest import ParseError
    from tiestrength.learn import ConvergenceError, RankDeficientError
    assert cli.exit_code(StageError("fit", ConvergenceError("diverged", [(1, 0.1, 2.0)]))) == cli.EXIT_NUMERICAL
    assert cli.exit_code(StageError("fit", RankDeficientError(["a"]))) == cli.EXIT_NUMERICAL
    assert cli.exit_code(StageError("ingest", ParseError("bad"))) == cli.EXIT_PARSE
    assert cli.exit_code(StageError("fit", ValueError("bad"))) == cli.EXIT_VALIDATION
    assert cli.exit_code(LockError("busy")) == cli.EXIT_LOCKED
    assert cli.exit_code(RuntimeError("?")) == cli.EXIT_OTHER

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hagnet import metrics as M
from hagnet.cli import cmd_eval, cmd_report, cmd_search, cmd_train, default_space, expand_space, main, sha256_file
from hagnet.graph import load_dataset, save_dataset
from hagnet.model import HagNetConfig

SMALL = ["--set", "hidden_dim=8", "--set", "embed_dim=8", "--set", "num_agg_layers=2"]
SMALL_OVERRIDES = {"hidden_dim": 8, "embed_dim": 8, "num_agg_layers": 2}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "stars.jsonl"
    assert main(["generate", "--task", "star_vs_path", "--n", "60", "--seed", "2", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def run(tmp_path_factory, data):
    out = tmp_path_factory.mktemp("run") / "cfg2"
    argv = ["train", "--config", "cfg2", "--dataset", str(data), "--epochs", "3", "--seed", "1",
            "--out", str(out)] + SMALL
    assert main(argv) == 0
    return out


# -- generate ------------------------------------------------------------------------


def test_generate_line_count(tmp_path):
    out = tmp_path / "d.jsonl"
    assert main(["generate", "--task", "star_vs_path", "--n", "200", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 200


def test_generate_is_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        main(["generate", "--task", "triangle_parity", "--n", "40", "--seed", "7", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_generate_unwritable_path(tmp_path):
    target = tmp_path / "missing-dir" / "d.jsonl"
    assert main(["generate", "--task", "star_vs_path", "--n", "20", "--out", str(target)]) == 3


def test_generate_too_small(tmp_path):
    assert main(["generate", "--task", "star_vs_path", "--n", "1", "--out", str(tmp_path / "x")]) == 2


# -- train ---------------------------------------------------------------------------


def test_train_writes_five_folds(run):
    doc = json.loads((run / "metrics.json").read_text())
    assert len(doc["folds"]) == 5
    assert set(doc["summary"]) == {"er", "auroc", "aupr_harmonic", "mstd_er"}
    for f in range(5):
        assert (run / f"fold{f}_curves.csv").is_file()
        assert (run / f"fold{f}.ckpt").is_file()


def test_train_metrics_recomputable_from_predictions(run):
    doc = json.loads((run / "metrics.json").read_text())
    for fold in doc["folds"]:
        if fold["metrics"]["aupr_harmonic"] is None:
            continue
        p = M.ScoredPredictions(fold["scores"], fold["labels"])
        assert fold["metrics"]["aupr_harmonic"] == M.aupr_harmonic(p)
        assert fold["metrics"]["er"] == M.error_rate(p)
    aupr = [f["metrics"]["aupr_harmonic"] for f in doc["folds"]]
    assert doc["summary"]["aupr_harmonic"]["mean"] == pytest.approx(np.mean(aupr), abs=1e-15)


def test_train_mstd_matches_curves(run):
    doc = json.loads((run / "metrics.json").read_text())
    for fold in doc["folds"]:
        with open(run / f"fold{fold['fold']}_curves.csv") as fh:
            er = [float(r["eval_er"]) for r in csv.DictReader(fh)]
        assert fold["metrics"]["mstd_er"] == M.mstd(er, 5)


def test_train_is_byte_deterministic(tmp_path, data, run):
    argv = ["train", "--config", "cfg2", "--dataset", str(data), "--epochs", "3", "--seed", "1",
            "--out", str(tmp_path / "again")] + SMALL
    assert main(argv) == 0
    assert (tmp_path / "again" / "metrics.json").read_bytes() == (run / "metrics.json").read_bytes()


def test_manifest_hashes_verify(run, data):
    man = json.loads((run / "manifest.json").read_text())
    assert man["dataset"]["sha256"] == sha256_file(data)
    listed = {a["path"] for a in man["artifacts"]}
    on_disk = {p.name for p in run.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for art in man["artifacts"]:
        assert sha256_file(run / art["path"]) == art["sha256"]
    assert man["started_at"] <= man["finished_at"]


def test_train_reports_every_violation_and_trains_nothing(tmp_path, data, capsys):
    out = tmp_path / "never"
    argv = ["train", "--config", "cfg2", "--dataset", str(data), "--out", str(out), "--folds", "1",
            "--set", "num_agg_layers=0", "--set", "combine=mul", "--set", 'readout_merge="cat"']
    assert main(argv) == 2
    err = capsys.readouterr().err
    for needle in ("num_agg_layers", "combine", "readout_merge", "folds"):
        assert needle in err
    assert not out.exists()


def test_train_unknown_config_name(tmp_path, data):
    assert main(["train", "--config", "cfg9", "--dataset", str(data), "--out", str(tmp_path / "x")]) == 2


def test_train_baseline_config(tmp_path, data):
    man = cmd_train("sage", data, folds=2, epochs=1, out=tmp_path / "sage",
                    overrides={"num_layers": 2, "hidden_dim": 4, "embed_dim": 4})
    assert man["config"]["model"] == "sage"


# -- eval ----------------------------------------------------------------------------


def test_eval_matches_final_epoch(run, data, tmp_path):
    doc = json.loads((run / "metrics.json").read_text())
    ds = load_dataset(data)
    fold = doc["folds"][2]
    subset = tmp_path / "fold2.jsonl"
    save_dataset([ds.graphs[i] for i in fold["test_indices"]], subset)
    got = cmd_eval(run / "fold2.ckpt", subset)
    with open(run / "fold2_curves.csv") as fh:
        last = list(csv.DictReader(fh))[-1]
    assert got["er"] == float(last["eval_er"])
    assert got["f1_1"] == float(last["f1_1"])


def test_eval_is_invariant_to_node_order(run, data, tmp_path):
    ds = load_dataset(data)
    rng = np.random.default_rng(0)
    shuffled = tmp_path / "perm.jsonl"
    save_dataset([g.permuted(rng.permutation(g.num_nodes)) for g in ds.graphs], shuffled)
    a = cmd_eval(run / "fold0.ckpt", data)
    b = cmd_eval(run / "fold0.ckpt", shuffled)
    assert a["er"] == b["er"]
    assert a["aupr_harmonic"] == pytest.approx(b["aupr_harmonic"], abs=1e-9)


def test_eval_empty_dataset(run, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["eval", "--checkpoint", str(run / "fold0.ckpt"), "--dataset", str(empty)]) == 2


def test_eval_bad_checkpoint(tmp_path, data):
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"\x00" * 32)
    assert main(["eval", "--checkpoint", str(junk), "--dataset", str(data)]) == 2


# -- search --------------------------------------------------------------------------


def test_default_space_points_are_valid():
    points = expand_space(default_space())
    assert len(points) > 100
    for cfg in points:
        assert isinstance(cfg, HagNetConfig) and not cfg.problems()
        assert len(cfg.agg_kinds) <= 2 and len(cfg.readout_kinds) <= 2


def test_explicit_space_gives_two_rows(tmp_path, data):
    space = {"configs": ["cfg1", "cfg2"], "base": SMALL_OVERRIDES}
    rows = cmd_search(space, data, budget=5, out=tmp_path / "s", folds=2, epochs=1)
    assert [r["rank"] for r in rows] == [1, 2]
    assert sorted(r["candidate"] for r in rows) == [0, 1]


def test_budget_one_trains_one(tmp_path, data):
    space = default_space()
    space["base"] = SMALL_OVERRIDES
    rows = cmd_search(space, data, budget=1, out=tmp_path / "s", folds=2, epochs=1)
    assert len(rows) == 1


def test_ranking_matches_offline_sort(tmp_path, data):
    space = {"base": SMALL_OVERRIDES,
             "grid": {"combine": ["sum", "cat", "rnn"], "agg_kinds": [["max"], ["sum", "mean"]]}}
    assert main(["search", "--space", _write(tmp_path / "space.json", space), "--dataset", str(data),
                 "--budget", "4", "--folds", "2", "--epochs", "2", "--out", str(tmp_path / "s")]) == 0
    with open(tmp_path / "s" / "search.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    key = lambda r: (-float(r["aupr_harmonic"]), float(r["mstd_er"]), float(r["er"]), int(r["candidate"]))
    assert [r["rank"] for r in sorted(rows, key=key)] == ["1", "2", "3", "4"]


def test_search_empty_space(tmp_path, data):
    space = _write(tmp_path / "space.json", {"grid": {"combine": []}})
    assert main(["search", "--space", space, "--dataset", str(data), "--budget", "3",
                 "--out", str(tmp_path / "s")]) == 2


def test_search_budget_zero(tmp_path, data):
    assert main(["search", "--dataset", str(data), "--budget", "0", "--out", str(tmp_path / "s")]) == 2


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


# -- report --------------------------------------------------------------------------


def test_report_two_runs(run, tmp_path, data):
    other = tmp_path / "sage"
    cmd_train("sage", data, folds=5, epochs=3, seed=1, out=other,
              overrides={"num_layers": 2, "hidden_dim": 4, "embed_dim": 4})
    rows = cmd_report([run, other / "manifest.json"], out=tmp_path / "rep")
    assert [r["run"] for r in rows] == ["cfg2", "sage"]
    text = (tmp_path / "rep" / "report.txt").read_text().splitlines()
    assert len(text) == 3
    cells = text[1].split()[1:]
    for c in cells:
        mean, std = c.split("±")
        assert len(mean.split(".")[1]) == 1 and len(std.split(".")[1]) == 1
    # mstd column recomputed from the bundled curves, in percent
    spreads = []
    for f in range(5):
        with open(tmp_path / "rep" / "curves" / "cfg2" / f"fold{f}_curves.csv") as fh:
            er = [100 * float(r["eval_er"]) for r in csv.DictReader(fh)]
        spreads.append(M.mstd(er, 5))
    assert rows[0]["mstd_mean"] == pytest.approx(np.mean(spreads), abs=1e-12)


def test_report_missing_artifact(run, tmp_path):
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(run, copy)
    (copy / "fold3_curves.csv").unlink()
    assert main(["report", str(copy), "--out", str(tmp_path / "rep")]) == 2


def test_report_tampered_artifact(run, tmp_path):
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(run, copy)
    with open(copy / "fold0_curves.csv", "a") as fh:
        fh.write("\n")
    assert main(["report", str(copy), "--out", str(tmp_path / "rep")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hagnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout

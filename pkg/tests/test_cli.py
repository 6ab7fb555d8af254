import json
import subprocess
import sys

import pytest

from micropls.cli import main, read_config
from micropls.core_data import save_dataset

from synth import raw_counts


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    d = raw_counts(30, 150, 10, seed=4)
    save_dataset(d, root / "x.csv", root / "y.txt")
    return root


def run(files, tmp_path, *args):
    return main([*args[:1], "--data", str(files / "x.csv"), *args[1:], "--out", str(tmp_path)])


def test_preprocess_outputs(files, tmp_path):
    assert run(files, tmp_path, "preprocess") == 0
    kept = (tmp_path / "kept_genes.csv").read_text().splitlines()
    assert kept[0] == "# micropls kept-genes v1" and kept[1] == "index,gene_id"
    header = (tmp_path / "preprocessed_matrix.csv").read_text().splitlines()[0].split(",")
    assert len(header) - 1 == len(kept) - 2
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["config"]["floor"] == 100.0 and prov["config"]["delimiter"] == ","
    assert len(prov["inputs"]["data"]["sha256"]) == 64 and prov["argv"][0] == "preprocess"


@pytest.mark.parametrize("cmd,outs", [("rle", ["rle_stats.csv", "rle.svg"]), ("boxstats", ["box_stats.csv", "boxplot.svg"]),
                                      ("pca", ["pca_scores.csv", "pca.svg"])])
def test_diagnostics(files, tmp_path, cmd, outs):
    assert run(files, tmp_path, cmd, "--labels", str(files / "y.txt"), "--log") == 0
    for name in outs:
        assert (tmp_path / name).stat().st_size > 0
    assert (tmp_path / outs[1]).read_text().startswith("<svg")


def test_select(files, tmp_path):
    assert run(files, tmp_path, "select", "--labels", str(files / "y.txt"), "--preprocessed", "--p-keep", "7") == 0
    rows = (tmp_path / "ranking.csv").read_text().splitlines()
    assert rows[1] == "gene_id,ratio,rank" and rows[2].endswith(",1")
    assert len((tmp_path / "selected_genes.csv").read_text().splitlines()) == 2 + 7


def test_cv_deterministic(files, tmp_path):
    args = ["cv", "--labels", str(files / "y.txt"), "--method", "kma", "--method", "knn", "--k", "5",
            "--seed", "7", "--preprocessed", "--p-keep-grid", "10,20"]
    assert run(files, tmp_path / "a", *args) == 0
    assert run(files, tmp_path / "b", *args) == 0
    for name in ("cv_report.csv", "cv_folds.csv", "cv_table.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = (tmp_path / "a" / "cv_report.csv").read_text().splitlines()
    assert report[0] == "# micropls cv-report v1" and len(report) == 4


def test_cv_repeats_labelled(files, tmp_path):
    assert run(files, tmp_path, "cv", "--labels", str(files / "y.txt"), "--method", "knn", "--k", "3",
               "--repeats", "2") == 0
    assert "EXTENSION" in (tmp_path / "cv_table.txt").read_text()


def test_train_predict_and_mismatch(files, tmp_path, capsys):
    assert run(files, tmp_path / "t", "train", "--labels", str(files / "y.txt"), "--method", "plsda",
               "--preprocessed", "--p-keep", "15", "--no-tune") == 0
    model = str(tmp_path / "t" / "model.txt")
    assert run(files, tmp_path / "p", "predict", "--model", model) == 0
    preds = (tmp_path / "p" / "predictions.csv").read_text().splitlines()
    assert preds[1] == "sample,predicted" and len(preds) == 32
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(",".join(line.split(",")[:20]) for line in (files / "x.csv").read_text().splitlines()))
    capsys.readouterr()
    assert main(["predict", "--data", str(bad), "--model", model, "--out", str(tmp_path / "q")]) == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "code=3" in err[0] and "gene count mismatch" in err[0]


def test_exit_codes(files, tmp_path, capsys):
    assert main(["cv", "--bogus"]) == 2
    assert main(["preprocess", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 3
    flat = tmp_path / "flat.csv"
    flat.write_text("1,2\n3,4\n")
    assert main(["preprocess", "--data", str(flat), "--out", str(tmp_path)]) == 3
    assert main(["cv", "--data", str(files / "x.csv"), "--labels", str(files / "y.txt"), "--method", "lda",
                 "--ridge", "0", "--no-tune", "--k", "3", "--out", str(tmp_path)]) == 4
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln]
    assert all(ln.startswith("micropls: error code=") for ln in lines) and len(lines) == 4


def test_config_layering(files, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ninput.data = {files / 'x.csv'}\ninput.labels = {files / 'y.txt'}\n"
                   "harness.k = 3\nharness.seed = 5\nmodel.method = knn\n")
    assert read_config(cfg)["k"] == "3"
    assert main(["cv", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path)]) == 0
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["seed"] == 6 and prov["config"]["k"] == 3 and prov["config"]["method"] == ["knn"]
    cfg.write_text("nonsense = 1\n")
    assert main(["cv", "--config", str(cfg)]) == 2


def test_out_env(files, tmp_path, monkeypatch):
    monkeypatch.setenv("MICROPLS_OUT", str(tmp_path / "env"))
    assert main(["boxstats", "--data", str(files / "x.csv")]) == 0
    assert (tmp_path / "env" / "box_stats.csv").exists()


def test_console_script_module(files, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "micropls.cli", "cv", "--frob"], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.count("\n") == 1

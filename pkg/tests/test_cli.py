import json

import pytest

from ppgbp.cli import EXIT_CONFIG, EXIT_CONTAMINATION, EXIT_DATA, EXIT_OK, main
from ppgbp.io import write_record, write_windowset

CFG = {"cohort": {"n_subjects": 6, "duration_s": 45, "noise_std": 0.05, "seed": 2},
       "model": {"kind": "cnn1d", "conv": [[4, 9, 4], [4, 5, 2]], "dense": [8]},
       "train": {"epochs": 2, "batch_size": 32},
       "split": {"train": 0.5, "val": 0.25, "test": 0.25}}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CFG))

    def pipeline(tag):
        d = root / tag
        codes = [
            main(["synth", "--config", str(cfg), "--out", str(d / "syn")]),
            main(["preprocess", "--config", str(cfg), "--in", str(d / "syn" / "ppg"),
                  "--out", str(d / "win")]),
            main(["train", "--config", str(cfg), "--in", str(d / "win"), "--out", str(d / "model")]),
            main(["eval", "--in", str(d / "model"), "--out", str(d / "eval")]),
        ]
        return d, codes

    return root, pipeline


def test_pipeline_succeeds_and_is_byte_identical(run):
    root, pipeline = run
    a, ca = pipeline("a")
    b, cb = pipeline("b")
    assert ca == cb == [EXIT_OK] * 4
    for rel in ["syn/manifest.json", "syn/ppg/S0000.csv", "win/windows.csv", "win/manifest.json",
                "model/checkpoint.json", "eval/report.json", "eval/bins.csv", "eval/summary.csv"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_manifest_contents(run):
    root, pipeline = run
    d, _ = pipeline("m")
    man = json.loads((d / "win" / "manifest.json").read_text())
    assert man["tool"] == "ppgbp" and len(man["config_hash"]) == 64
    assert "S0000.csv" in man["inputs"]
    assert "time" not in json.dumps(man).lower().replace("const_time", "")


def test_report_and_sweep(run, tmp_path):
    root, pipeline = run
    d, _ = pipeline("r")
    assert main(["report", "--in", str(d), "--out", str(tmp_path / "rep")]) == EXIT_OK
    assert any(p.name.startswith("binned_error") for p in (tmp_path / "rep").iterdir())
    assert main(["preprocess", "--in", str(d / "syn" / "ppg"), "--out", str(tmp_path / "sw"),
                 "--sweep", "--policy", "const_beats:7"]) == EXIT_OK
    lines = (tmp_path / "sw" / "acceptance.csv").read_text().splitlines()
    assert lines[0] == "length,n_windows,n_accepted,fraction" and len(lines) == 11
    assert (tmp_path / "sw" / "const_beats_20" / "windows.csv").exists()


def test_rppg_finetune(run, tmp_path):
    root, pipeline = run
    d, _ = pipeline("f")
    assert main(["preprocess", "--in", str(d / "syn" / "rppg"), "--out", str(tmp_path / "rw")]) == 0
    cfg = tmp_path / "ft.json"
    cfg.write_text(json.dumps({"checkpoint": str(d / "model" / "checkpoint.json"),
                               "train": {"epochs": 2}}))
    code = main(["finetune", "--config", str(cfg), "--in", str(tmp_path / "rw"),
                 "--out", str(tmp_path / "ft"), "--personalize"])
    assert code == EXIT_OK
    rows = (tmp_path / "ft" / "table1.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[2].startswith("with personalization")


def test_config_error_leaves_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cohort": {"n_subjects": 0}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.json"]


def test_unparseable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_bad_policy(tmp_path):
    assert main(["preprocess", "--in", str(tmp_path), "--out", str(tmp_path / "o"),
                 "--policy", "beats:7"]) == EXIT_CONFIG


def test_missing_inputs_is_data_error(tmp_path):
    assert main(["preprocess", "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_all_noise_gives_empty_set(tmp_path, rng):
    from ppgbp.dsp import TimeSeries
    x = TimeSeries(rng.normal(size=3000), 125.0)
    (tmp_path / "in").mkdir()
    write_record(tmp_path / "in", "N0000", x, x)
    assert main(["preprocess", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "windows.json").read_text())
    assert man["n_windows"] == 0
    assert sum(man["rejection_log"].values()) + sum(man["record_failures"].values()) > 0


def test_contamination_exit_code(run, tmp_path):
    root, pipeline = run
    d, _ = pipeline("c")
    cfg = tmp_path / "e.json"
    cfg.write_text(json.dumps({"checkpoint": str(d / "model" / "checkpoint.json"),
                               "train": str(d / "model" / "train.csv"),
                               "test": str(d / "model" / "train.csv")}))
    code = main(["eval", "--config", str(cfg), "--in", str(d / "model"), "--out", str(tmp_path / "x")])
    assert code == EXIT_CONTAMINATION
    assert not (tmp_path / "x").exists()


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "ppgbp", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "synth" in out.stdout

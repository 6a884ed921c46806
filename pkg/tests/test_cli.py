import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hqtcn.cli import ablation_cells, load_config, main, parse_grid
from hqtcn.errors import ConfigurationError


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_ini(path, text):
    path.write_text(text)
    return path


class TestParamcount:
    @pytest.mark.parametrize("argv,want", [
        (("hqtcn", 1, 5, 8, 2), (48, 264, 312)),
        (("hqtcn", 64, 12, 8, 2), (6152, 264, 6416)),
        (("qcnn_baseline", 64, 249, 8, 2), (127496, 264, 127760)),
        (("qcnn", 1, 240, 8, 2), (1928, 264, 2192)),
    ])
    def test_breakdown(self, capsys, argv, want):
        code, out, _ = run_cli(capsys, "paramcount", *argv)
        assert code == 0
        assert out.splitlines() == [f"classical {want[0]}", f"quantum {want[1]}", f"total {want[2]}"]

    def test_unknown_model(self, capsys):
        code, _, err = run_cli(capsys, "paramcount", "lstm", 1, 5, 8, 2)
        assert code == 2 and "lstm" in err

    def test_console_script(self):
        out = subprocess.run([sys.executable, "-m", "hqtcn", "paramcount", "hqtcn", "1", "5", "8", "2"],
                             capture_output=True, text=True, check=True).stdout
        assert out.splitlines()[-1] == "total 312"


class TestConfig:
    def test_unknown_key_names_it(self, tmp_path, capsys):
        ini = write_ini(tmp_path / "c.ini", "[train]\nlearning_rate = 0.1\n")
        code, _, err = run_cli(capsys, "train", "--config", ini, "--out", tmp_path / "o")
        assert code == 2 and "learning_rate" in err

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigurationError, match="optim"):
            load_config(str(write_ini(tmp_path / "c.ini", "[optim]\nlr = 1\n")))

    def test_bad_value(self, tmp_path):
        with pytest.raises(ConfigurationError, match="epochs"):
            load_config(str(write_ini(tmp_path / "c.ini", "[train]\nepochs = many\n")))

    def test_inline_comments(self, tmp_path):
        cfg = load_config(str(write_ini(tmp_path / "c.ini", "[train]\nepochs = 7   ; short run\nlr =\n")))
        assert cfg.resolve().train.epochs == 7 and cfg.resolve().train.lr == 0.005

    def test_task_defaults(self):
        narma = load_config(None).resolve()
        assert (narma.model.kernel, narma.model.dilation, narma.train.lr) == (5, 2, 0.005)
        cfg = load_config(None)
        cfg.data.kind = "synth"
        synth = cfg.resolve()
        assert (synth.model.kernel, synth.model.dilation, synth.train.lr) == (12, 3, 0.001)

    def test_snapshot_round_trips(self, tmp_path):
        cfg = load_config(None).resolve()
        again = load_config(str(write_ini(tmp_path / "r.ini", cfg.to_ini()))).resolve()
        assert again.as_dict() == cfg.as_dict()


class TestNarmaGen:
    def test_default_manifest_and_bytes(self, tmp_path, capsys):
        assert run_cli(capsys, "narma-gen", "--seed", 3, "--out", tmp_path / "a")[0] == 0
        assert run_cli(capsys, "narma-gen", "--seed", 3, "--out", tmp_path / "b")[0] == 0
        for name in ("narma.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["sizes"] == {"train": 168, "val": 36, "test": 36}

    def test_too_short(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "narma-gen", "--length", 20, "--out", tmp_path)
        assert code == 2 and err.startswith("error:")

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run_cli(capsys, "narma-gen", "--out", blocker / "sub")[0] == 1


@pytest.fixture(scope="module")
def narma_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("narma_run")
    ini = write_ini(out / "c.ini", "[train]\nepochs = 2\nseeds = 0,1\n")
    assert main(["train", "--config", str(ini), "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_outputs(self, narma_run):
        recs = [json.loads(line) for line in (narma_run / "runs.jsonl").read_text().splitlines()]
        assert [r["seed"] for r in recs] == [0, 1]
        assert all(r["param_count"]["total"] == 312 for r in recs)
        assert {"config", "train_loss", "val_loss", "test_metric", "wall_clock_s"} <= set(recs[0])
        assert (narma_run / "resolved_config.ini").exists()
        assert (narma_run / "params" / "hqtcn_seed1.npy").exists()
        with (narma_run / "predictions.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["t", "split", "truth", "prediction", "model", "seed"]
        assert len(rows) == 2 * (240 - 8) and rows[0]["t"] == "8"
        with (narma_run / "summary.csv").open() as fh:
            summary = next(csv.DictReader(fh))
        assert summary["total_params"] == "312" and summary["partial"] == "False"

    def test_eval_reproduces_recorded_metric(self, narma_run, capsys):
        assert run_cli(capsys, "eval", narma_run)[0] == 0
        for line in (narma_run / "eval.jsonl").read_text().splitlines():
            r = json.loads(line)
            assert r["test_metric"] == r["recorded_test_metric"]

    def test_eval_missing_run(self, tmp_path, capsys):
        assert run_cli(capsys, "eval", tmp_path)[0] == 2

    def test_qcnn_baseline_on_synthetic(self, tmp_path, capsys):
        ini = write_ini(tmp_path / "c.ini", "[data]\nkind = synth\ntrain_subjects = 4\nval_subjects = 2\n"
                                            "test_subjects = 2\n[train]\nepochs = 0\nseeds = 0\n")
        code, out, _ = run_cli(capsys, "train", "--config", ini, "--model", "qcnn_baseline", "--out", tmp_path)
        assert code == 0
        rec = json.loads((tmp_path / "runs.jsonl").read_text())
        assert rec["param_count"] == {"classical": 127496, "quantum": 264, "total": 127760}
        assert "127496/264/127760" in out


class TestAblate:
    def test_grid_parsing(self):
        assert parse_grid(["d=1,2,3"]) == ("d", [1, 2, 3])
        for bad in (["d=1", "L=2"], ["K=3"], ["d=a"], [], ["n="]):
            with pytest.raises(ConfigurationError):
                parse_grid(bad)

    def test_multi_axis_exit_code(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "ablate", "--grid", "d=1,2", "--grid", "L=1", "--out", tmp_path)
        assert code == 2 and "one axis" in err

    def test_formula_columns(self):
        assert [r["receptive_field"] for r in ablation_cells("d", [1, 2, 3, 4])] == [12, 23, 34, 45]
        assert [r["quantum_params"] for r in ablation_cells("L", [1, 2, 3])] == [132, 264, 396]
        assert [r["total_params"] for r in ablation_cells("n", [8])] == [6416]

    def test_counts_only_csv(self, tmp_path, capsys):
        assert run_cli(capsys, "ablate", "--grid", "L=1,3", "--counts-only", "--out", tmp_path)[0] == 0
        with (tmp_path / "ablation.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["value"] for r in rows] == ["1", "3"]
        assert [r["quantum_params"] for r in rows] == ["132", "396"]
        assert all(r["status"] == "counts only" and r["mean"] == "" for r in rows)
        assert (tmp_path / "resolved_config.ini").exists()

    def test_oversized_cell_skipped(self, tmp_path, capsys):
        ini = write_ini(tmp_path / "c.ini", "[data]\nkind = synth\ntrain_subjects = 2\nval_subjects = 2\n"
                                            "test_subjects = 2\nchannels = 2\nsteps = 40\n[train]\nepochs = 0\n")
        assert run_cli(capsys, "ablate", "--config", ini, "--grid", "n=16", "--seed", 0, "--out", tmp_path)[0] == 0
        with (tmp_path / "ablation.csv").open() as fh:
            row = next(csv.DictReader(fh))
        assert row["status"].startswith("skipped") and row["total_params"]


class TestGradcheck:
    def test_pass(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--points", 2)
        assert code == 0
        assert out.splitlines()[-1] == "max relative deviation < 1e-5: PASS"
        assert "272 coordinates" in out  # 132 * 2 + 8

    def test_corrupt_fails(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--points", 1, "--corrupt")
        assert code == 1 and out.splitlines()[-1].endswith("FAIL")


def test_synth_gen_files(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "synth-gen", "--train-subjects", 2, "--val-subjects", 2, "--test-subjects", 2,
                         "--channels", 3, "--steps", 20, "--out", tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert sum(len(v) for v in manifest["splits"].values()) == 6
    first = sorted(tmp_path.glob("*.csv"))[0]
    assert first.read_text().splitlines()[0].startswith("# channels=3 steps=20 label=")
    assert np.loadtxt(first, delimiter=",", comments="#").shape == (3, 20)

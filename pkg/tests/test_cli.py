import hashlib
import json
import os

import numpy as np
import pytest

from permubench import cli

from helpers import make_synthetic_npz

FIXTURE = os.path.join(os.path.dirname(__file__), "data", "reference_means.csv")


@pytest.fixture
def data_dir(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    make_synthetic_npz(d / "breastmnist.npz", num_classes=2, train_per_class=8,
                       n_val=8, n_test=12, channels=3, seed=1, class_shift=90)
    return str(d)


@pytest.fixture
def fast_config(tmp_path):
    p = tmp_path / "fast.json"
    p.write_text(json.dumps({"train": {"per_class": 4, "batch_size": 4, "epochs": 1}}))
    return str(p)


class TestParsing:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            cli.main([])
        assert e.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["run", "--frobnicate"])
        assert e.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["explode"])
        assert e.value.code == 2

    def test_bad_seed_list(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["run", "--seeds", "3,five"])
        assert e.value.code == 2

    def test_bad_model_name_exits_2(self, data_dir, tmp_path):
        code = cli.main(["run", "--data-dir", data_dir, "--out-dir",
                         str(tmp_path / "o"), "--models", "resnet50"])
        assert code == 2


class TestSelftest:
    def test_exit_zero(self, capsys):
        assert cli.main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out


class TestRun:
    def test_slice_writes_24_records(self, data_dir, tmp_path, fast_config, capsys):
        out = str(tmp_path / "out")
        code = cli.main(["run", "--config", fast_config, "--data-dir", data_dir,
                         "--out-dir", out, "--models", "abmil",
                         "--datasets", "breastmnist", "--seeds", "3"])
        assert code == 0
        lines = open(os.path.join(out, "records.csv")).read().splitlines()
        assert len(lines) == 1 + 24
        assert "completed 1 cells" in capsys.readouterr().out

    def test_missing_data_exits_1(self, tmp_path, fast_config):
        code = cli.main(["run", "--config", fast_config, "--data-dir",
                         str(tmp_path / "nodata"), "--out-dir", str(tmp_path / "o"),
                         "--models", "abmil", "--datasets", "breastmnist",
                         "--seeds", "3"])
        assert code == 1


class TestInjectReport:
    def test_inject_then_report(self, tmp_path, capsys):
        store = str(tmp_path / "store")
        assert cli.main(["inject", "--means", FIXTURE, "--out-dir", store]) == 0
        assert "3360 records" in capsys.readouterr().out
        rep = str(tmp_path / "rep")
        assert cli.main(["report", "--out-dir", store, "--report-dir", rep]) == 0
        ranks = json.loads(open(os.path.join(rep, "ranks.json")).read())
        for model, want in (("abmil", 3.29), ("minimalvit", 3.43),
                            ("transmil", 1.71), ("zachvit", 1.57)):
            assert abs(ranks["clean"][model] - want) <= 0.01

    def test_report_determinism(self, tmp_path):
        store = str(tmp_path / "store")
        cli.main(["inject", "--means", FIXTURE, "--out-dir", store])
        rep = str(tmp_path / "rep")
        cli.main(["report", "--out-dir", store, "--report-dir", rep])

        def digest():
            out = {}
            for dirpath, _, files in os.walk(rep):
                for f in files:
                    p = os.path.join(dirpath, f)
                    out[os.path.relpath(p, rep)] = hashlib.sha256(
                        open(p, "rb").read()).hexdigest()
            return out

        first = digest()
        cli.main(["report", "--out-dir", store, "--report-dir", rep])
        assert digest() == first

    def test_report_without_store_exits_1(self, tmp_path):
        assert cli.main(["report", "--out-dir", str(tmp_path / "empty")]) == 1


class TestDumps:
    def test_corrupt_writes_batches(self, data_dir, tmp_path):
        out = str(tmp_path / "dumps")
        code = cli.main(["corrupt", "--data-dir", data_dir, "--out-dir", out,
                         "--datasets", "breastmnist", "--count", "5"])
        assert code == 0
        files = sorted(os.listdir(out))
        assert "breastmnist_clean.npy" in files
        assert len(files) == 16
        arr = np.load(os.path.join(out, "breastmnist_gaussian_noise_2.npy"))
        assert arr.shape == (5, 28, 28, 3)
        assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_attack_writes_batches(self, data_dir, tmp_path, fast_config):
        out = str(tmp_path / "adv")
        code = cli.main(["attack", "--config", fast_config, "--data-dir", data_dir,
                         "--out-dir", out, "--models", "abmil",
                         "--datasets", "breastmnist", "--seeds", "3", "--count", "6"])
        assert code == 0
        files = sorted(os.listdir(out))
        assert len(files) == 8
        adv = np.load(os.path.join(out, "breastmnist_abmil_s3_pgd_8over255.npy"))
        assert adv.shape == (6, 28, 28, 3)
        assert adv.min() >= 0.0 and adv.max() <= 1.0

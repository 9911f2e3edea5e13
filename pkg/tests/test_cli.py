import json

import numpy as np
import pytest

from swepipe import cli, swedio


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    code = run(
        [
            "gen", "--n", "3", "--snr", "inf", "--seed", "4", "--preset", "desk",
            "--out", str(out), "--train-frac", "0.67", "--val-frac", "0.33",
        ]
    )
    assert code == 0
    return out


class TestGen:
    def test_dataset_readable(self, gen_dir):
        ds = swedio.read_dataset(gen_dir)
        assert len(ds.samples) == 3
        assert ds.samples[0].volumes.shape == (2, 32, 64, 16)

    def test_noisy_gen(self, tmp_path):
        out = tmp_path / "noisy"
        assert run(
            ["gen", "--n", "1", "--snr", "11", "--seed", "1", "--preset", "desk",
             "--out", str(out), "--train-frac", "1.0", "--val-frac", "0.0"]
        ) == 0
        ds = swedio.read_dataset(out)
        assert ds.samples[0].snr_db == 11.0


class TestTrainAndEval:
    def test_full_cli_cascade(self, gen_dir, tmp_path):
        runs = tmp_path / "runs"
        code = run(
            [
                "train-recon", "--dataset", str(gen_dir), "--out", str(runs),
                "--mode", "patch", "--patch-ap", "33", "--patch-lp", "10",
                "--channels", "4", "--batch", "8", "--epochs", "1",
                "--max-steps", "2", "--seed", "0",
            ]
        )
        assert code == 0
        assert (runs / "recon.swec").exists()
        assert (runs / "recon_report.json").exists()

        code = run(
            [
                "train-denoiser", "--dataset", str(gen_dir), "--out", str(runs),
                "--recon-ckpt", str(runs / "recon.swec"), "--channels", "8",
                "--batch", "2", "--epochs", "1", "--max-steps", "2", "--seed", "0",
            ]
        )
        assert code == 0
        assert (runs / "denoiser.swec").exists()

        out = tmp_path / "eval"
        code = run(
            [
                "eval", "--recon-ckpt", str(runs / "recon.swec"),
                "--denoiser-ckpt", str(runs / "denoiser.swec"),
                "--dataset", str(gen_dir), "--split", "val", "--out", str(out),
            ]
        )
        assert code == 0
        assert (out / "report.json").exists()
        assert run(["report", "--run", str(out / "report.json")]) == 0

        inf_out = tmp_path / "infer"
        code = run(
            [
                "infer", "--recon-ckpt", str(runs / "recon.swec"),
                "--denoiser-ckpt", str(runs / "denoiser.swec"),
                "--dataset", str(gen_dir), "--sample", "0", "--out", str(inf_out),
            ]
        )
        assert code == 0
        y = swedio.read_tensor(inf_out / "y_kpa.swed")
        assert y.shape == (64, 24)
        assert (inf_out / "panel.png").exists()


class TestExitCodes:
    def test_missing_dataset_is_data_error(self, tmp_path):
        code = run(
            ["train-recon", "--dataset", str(tmp_path / "missing"), "--out",
             str(tmp_path), "--max-steps", "1"]
        )
        assert code == 3

    def test_bad_config_key_is_config_error(self, gen_dir, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nnot_a_real_key = 1\n")
        code = run(
            ["train-recon", "--config", str(cfg), "--dataset", str(gen_dir),
             "--out", str(tmp_path)]
        )
        assert code == 2

    def test_sample_out_of_range_is_data_error(self, gen_dir, tmp_path):
        code = run(
            ["infer", "--recon-ckpt", "x", "--denoiser-ckpt", "y",
             "--dataset", str(gen_dir), "--sample", "99", "--out", str(tmp_path)]
        )
        assert code == 3


class TestConfigFile:
    def test_config_fills_defaults_and_flags_override(self, gen_dir, tmp_path):
        cfg = tmp_path / "train.ini"
        cfg.write_text(
            "[train]\nmax-steps = 1\nepochs = 1\nchannels = 4\n"
            "[patch]\npatch-ap = 33\npatch-lp = 10\n"
        )
        runs = tmp_path / "runs"
        code = run(
            ["train-recon", "--config", str(cfg), "--dataset", str(gen_dir),
             "--out", str(runs), "--seed", "0"]
        )
        assert code == 0
        report = json.loads((runs / "recon_report.json").read_text())
        assert report["steps"] == 1
        assert report["config"]["base_channels"] == 4
        assert report["config"]["input_shape"] == [32, 33, 10]

"""End-to-end CLI contracts: artifacts, determinism, exit codes."""

import hashlib
import json
import os

import numpy as np
import pytest

from geoop.cli import main
from geoop.pdegen import read_gnod
from geoop.train import load_checkpoint


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def gen_args(out, samples=3, nx=64, steps=6, seed=1, extra=()):
    return [
        "gen", "--equation", "advection", "--beta", "1.0",
        "--samples", str(samples), "--nx", str(nx), "--steps", str(steps),
        "--seed", str(seed), "--threads", "1", "--out", str(out), *extra,
    ]


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny.gnod"
    assert main(gen_args(path, samples=4, nx=32, steps=8)) == 0
    return path


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory, tiny_dataset):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.gnoc"
    code = main([
        "train", "--data", str(tiny_dataset), "--out", str(path),
        "--width", "8", "--modes", "4", "--layers", "1", "--epochs", "1",
        "--batch", "4", "--pushforward", "2", "--seed", "5", "--quiet",
    ])
    assert code == 0
    return path


class TestGen:
    def test_smoke_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.gnod", tmp_path / "b.gnod"
        assert main(gen_args(a)) == 0
        assert main(gen_args(b)) == 0
        assert sha(a) == sha(b)

    def test_unsupported_equation_exit_2(self, tmp_path, capsys):
        code = main([
            "gen", "--equation", "navier_stokes", "--samples", "1",
            "--out", str(tmp_path / "x.gnod"),
        ])
        assert code == 2
        assert "out of scope" in capsys.readouterr().err

    def test_parameter_cycling_recorded(self, tmp_path):
        out = tmp_path / "c.gnod"
        assert main([
            "gen", "--equation", "burgers", "--nu", "0.1,0.01", "--samples", "4",
            "--nx", "64", "--steps", "4", "--seed", "2", "--threads", "1",
            "--out", str(out),
        ]) == 0
        ds = read_gnod(str(out))
        assert ds.sample_params == [0.1, 0.01, 0.1, 0.01]

    def test_config_file_with_flag_precedence(self, tmp_path):
        cfg_path = tmp_path / "gen.json"
        cfg_path.write_text(json.dumps({"equation": "advection", "samples": 2,
                                        "nx": 32, "steps": 4, "seed": 9}))
        out = tmp_path / "d.gnod"
        assert main(["gen", "--config", str(cfg_path), "--samples", "3",
                     "--threads", "1", "--out", str(out)]) == 0
        ds = read_gnod(str(out))
        assert ds.n_samples == 3  # flag beat the config file
        assert ds.spec.seed == 9  # config fields applied

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"equation": "advection", "wat": 1}))
        assert main(["gen", "--config", str(cfg_path), "--out", str(tmp_path / "x")]) == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_artifact_embeds_resolved_config(self, tiny_dataset):
        ds = read_gnod(str(tiny_dataset))
        echo = ds.meta["config"]
        assert echo["equation"] == "advection"
        assert echo["seed"] == 1


class TestTrain:
    def test_checkpoint_written(self, tiny_checkpoint):
        ckpt = load_checkpoint(str(tiny_checkpoint))
        assert ckpt.config["cli"]["augment"] == "none"
        assert ckpt.config["epochs_done"] == 1

    def test_missing_dataset_exit_2(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope.gnod")]) == 2

    def test_rank_zero_exit_2(self, tiny_dataset, tmp_path):
        code = main([
            "train", "--data", str(tiny_dataset), "--mcl", "--rank", "0",
            "--out", str(tmp_path / "x.gnoc"), "--quiet",
        ])
        assert code == 2

    def test_baseline_vs_mcl_differ_only_in_slot_sections(self, tiny_dataset, tmp_path):
        common = [
            "train", "--data", str(tiny_dataset), "--width", "8", "--modes", "4",
            "--layers", "1", "--epochs", "1", "--batch", "4", "--pushforward", "1",
            "--seed", "5", "--quiet",
        ]
        base_path = tmp_path / "base.gnoc"
        mcl_path = tmp_path / "mcl.gnoc"
        assert main(common + ["--out", str(base_path)]) == 0
        assert main(common + ["--mcl", "--rank", "2", "--out", str(mcl_path)]) == 0
        base = load_checkpoint(str(base_path))
        mcl = load_checkpoint(str(mcl_path))
        base_keys = set(base.params)
        mcl_keys = set(mcl.params)
        extra = mcl_keys - base_keys
        assert extra == {"layer0.mcl_u", "layer0.mcl_v", "layer0.mcl_alpha"}


class TestEvalDiag:
    def test_eval_artifacts(self, tiny_checkpoint, tiny_dataset, tmp_path):
        prefix = str(tmp_path / "run")
        code = main([
            "eval", "--checkpoint", str(tiny_checkpoint), "--data", str(tiny_dataset),
            "--rollout", "4", "--steps", "1,4", "--out-prefix", prefix,
        ])
        assert code == 0
        report = json.loads((tmp_path / "run.report.json").read_text())
        assert report["per_step"]["step"] == [1, 2, 3, 4]
        csv_lines = (tmp_path / "run.metrics.csv").read_text().strip().split("\n")
        assert len(csv_lines) == 5

    def test_eval_deterministic(self, tiny_checkpoint, tiny_dataset, tmp_path):
        p1, p2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        for prefix in (p1, p2):
            assert main([
                "eval", "--checkpoint", str(tiny_checkpoint), "--data",
                str(tiny_dataset), "--rollout", "3", "--out-prefix", prefix,
            ]) == 0
        assert (tmp_path / "r1.report.json").read_bytes() == (tmp_path / "r2.report.json").read_bytes()
        assert (tmp_path / "r1.metrics.csv").read_bytes() == (tmp_path / "r2.metrics.csv").read_bytes()

    def test_eval_missing_file_exit_2(self, tiny_dataset):
        assert main(["eval", "--checkpoint", "missing.gnoc", "--data", str(tiny_dataset)]) == 2

    def test_diag_columns(self, tiny_checkpoint, tiny_dataset, tmp_path):
        out = tmp_path / "diag.csv"
        code = main([
            "diag", "--checkpoints", str(tiny_checkpoint), "--data", str(tiny_dataset),
            "--rollout", "3", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:3] == ["step", "energy_true", "entropy_true"]
        assert header[3].startswith("energy_") and header[4].startswith("entropy_")
        assert len(lines) == 4

    def test_diag_truth_columns_match_dataset(self, tiny_checkpoint, tiny_dataset, tmp_path):
        out = tmp_path / "diag2.csv"
        assert main([
            "diag", "--checkpoints", str(tiny_checkpoint), "--data", str(tiny_dataset),
            "--rollout", "2", "--out", str(out),
        ]) == 0
        ds = read_gnod(str(tiny_dataset))
        line1 = out.read_text().strip().split("\n")[1].split(",")
        field = ds.data[:, 1, :, 0]
        expected = float(np.mean([np.sum(f * f) * ds.dx for f in field]))
        assert float(line1[1]) == pytest.approx(expected, rel=1e-8)


class TestVerify:
    def test_suite_filter_and_exit_zero(self, capsys):
        assert main(["verify", "--suite", "lie"]) == 0
        out = capsys.readouterr().out
        assert "suite lie:" in out
        assert "numerics" not in out

    def test_unknown_suite_exit_2(self):
        assert main(["verify", "--suite", "wat"]) == 2

    def test_corrupted_build_detected(self, monkeypatch):
        import geoop.lie

        def broken(gen, z):
            return z * 1.001  # violates the skew-update contract

        monkeypatch.setattr(geoop.lie, "mcl_step", broken)
        assert main(["verify", "--suite", "lie"]) == 1


class TestUsage:
    def test_no_command_exit_2(self):
        assert main([]) == 2

    def test_unknown_flag_exit_2(self):
        assert main(["gen", "--frobnicate", "1"]) == 2

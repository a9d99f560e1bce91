import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from eicue.cli import main
from eicue.features import load_tensor_file

CFG_SMALL = """\
# tiny run for tests
max_steps = 4
batch_size = 2
d_seg = 8
d_proj = 8
c_classes = 3
k_eigenvectors = 3
seed = 11
"""


def run_cli(args):
    return main(list(args))


@pytest.fixture()
def synth_dir(tmp_path):
    data = tmp_path / "data"
    code = run_cli(["synth", "--out", str(data), "--samples", "5", "--objects", "3",
                    "--height", "6", "--width", "6", "--dim", "8", "--seed", "3"])
    assert code == 0
    return data


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text(CFG_SMALL, encoding="utf-8")
    return p


class TestSynth:
    def test_layout(self, synth_dir):
        ids = (synth_dir / "index.txt").read_text().split()
        assert len(ids) == 5
        for sid in ids:
            for suffix in (".k.npy", ".kaug.npy", ".img.npy", ".gt.npy"):
                assert (synth_dir / f"{sid}{suffix}").is_file()

    def test_round_trips_through_loader(self, synth_dir):
        grid = load_tensor_file(synth_dir / "sample0000.k.npy")
        assert (grid.h, grid.w, grid.d) == (6, 6, 8)

    def test_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run_cli(["synth", "--out", str(out), "--samples", "3",
                            "--objects", "3", "--height", "6", "--width", "6",
                            "--dim", "8", "--seed", "9"]) == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    def test_object_count_respected(self, synth_dir):
        from eicue.features import load_label_file
        labels = set()
        for i in range(5):
            labels |= set(load_label_file(synth_dir / f"sample{i:04d}.gt.npy").labels.tolist())
        assert labels == {0, 1, 2}

    def test_refuses_overwrite(self, synth_dir):
        code = run_cli(["synth", "--out", str(synth_dir), "--samples", "1",
                        "--objects", "2", "--height", "6", "--width", "6"])
        assert code == 2


class TestTrain:
    def test_train_writes_outputs(self, synth_dir, cfg_path, tmp_path):
        out = tmp_path / "run"
        code = run_cli(["train", "--config", str(cfg_path), "--data", str(synth_dir),
                        "--out", str(out)])
        assert code == 0
        assert (out / "metrics.csv").is_file()
        assert (out / "checkpoint_final.bin").is_file()
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,l_total,l_corr,l_eig,l_obj,l_sc,lambda_nce,wall_ms"
        assert len(lines) == 5  # header + 4 steps

    def test_missing_data_dir_exit_3(self, cfg_path, tmp_path):
        code = run_cli(["train", "--config", str(cfg_path),
                        "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert code == 3

    def test_malformed_config_exit_2(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("max_steps = banana\n")
        code = run_cli(["train", "--config", str(bad), "--data", str(synth_dir),
                        "--out", str(tmp_path / "o")])
        assert code == 2

    def test_periodic_checkpoints(self, synth_dir, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(CFG_SMALL + "checkpoint_every = 2\n", encoding="utf-8")
        out = tmp_path / "run"
        assert run_cli(["train", "--config", str(cfg), "--data", str(synth_dir),
                        "--out", str(out)]) == 0
        assert (out / "checkpoint_2.bin").is_file()
        assert (out / "checkpoint_4.bin").is_file()
        assert (out / "checkpoint_final.bin").is_file()

    def test_train_determinism_byte_identical(self, synth_dir, cfg_path, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run_cli(["train", "--config", str(cfg_path), "--data", str(synth_dir),
                            "--out", str(out)]) == 0
            outs.append(out)
        m1 = (outs[0] / "metrics.csv").read_bytes()
        m2 = (outs[1] / "metrics.csv").read_bytes()
        assert m1 == m2
        c1 = (outs[0] / "checkpoint_final.bin").read_bytes()
        c2 = (outs[1] / "checkpoint_final.bin").read_bytes()
        assert c1 == c2


class TestEval:
    @pytest.fixture()
    def trained(self, synth_dir, cfg_path, tmp_path):
        out = tmp_path / "run"
        assert run_cli(["train", "--config", str(cfg_path), "--data", str(synth_dir),
                        "--out", str(out)]) == 0
        return out / "checkpoint_final.bin"

    def test_eval_outputs(self, synth_dir, cfg_path, trained, tmp_path):
        out = tmp_path / "eval"
        code = run_cli(["eval", "--config", str(cfg_path), "--data", str(synth_dir),
                        "--out", str(out), "--checkpoint", str(trained)])
        assert code == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "name,acc,miou,iou_0,iou_1,iou_2"
        assert lines[1].startswith("unsupervised,")
        assert (out / "sample0000.pred.pgm").is_file()
        assert (out / "sample0000.pred.ppm").is_file()

    def test_eval_dim_mismatch_exit_2(self, synth_dir, cfg_path, trained, tmp_path):
        other_cfg = tmp_path / "other.txt"
        other_cfg.write_text(CFG_SMALL.replace("d_seg = 8", "d_seg = 16"))
        code = run_cli(["eval", "--config", str(other_cfg), "--data", str(synth_dir),
                        "--out", str(tmp_path / "e2"), "--checkpoint", str(trained)])
        assert code == 2

    def test_eval_determinism(self, synth_dir, cfg_path, trained, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert run_cli(["eval", "--config", str(cfg_path), "--data", str(synth_dir),
                            "--out", str(out), "--checkpoint", str(trained)]) == 0
            outs.append(out)
        assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
        assert ((outs[0] / "sample0000.pred.ppm").read_bytes()
                == (outs[1] / "sample0000.pred.ppm").read_bytes())

    def test_probe_flag(self, synth_dir, cfg_path, trained, tmp_path):
        out = tmp_path / "evalp"
        code = run_cli(["eval", "--config", str(cfg_path), "--data", str(synth_dir),
                        "--out", str(out), "--checkpoint", str(trained),
                        "--probe", "--probe-epochs", "20"])
        assert code == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert any(line.startswith("linear_probe,") for line in lines)


class TestEigInspect:
    def test_outputs(self, synth_dir, cfg_path, tmp_path):
        out = tmp_path / "eig"
        code = run_cli(["eig-inspect", "--config", str(cfg_path), "--data", str(synth_dir),
                        "--out", str(out), "--k", "3"])
        assert code == 0
        assert (out / "sample0000.eigvals.csv").is_file()
        for j in range(3):
            assert (out / f"sample0000.eig{j}.pgm").is_file()
        assert not (out / "sample0000.eig3.pgm").exists()
        report = (out / "eigengap.txt").read_text().splitlines()
        assert len(report) == 5
        assert all(" k=" in line for line in report)

    def test_eigengap_selects_object_count(self, tmp_path):
        # well-separated synthetic objects: the spectral gap sits at the
        # object count
        data = tmp_path / "d"
        assert run_cli(["synth", "--out", str(data), "--samples", "2", "--objects", "4",
                        "--height", "12", "--width", "12", "--dim", "16",
                        "--noise", "0.02", "--seed", "5"]) == 0
        out = tmp_path / "eig"
        assert run_cli(["eig-inspect", "--data", str(data), "--out", str(out)]) == 0
        for line in (out / "eigengap.txt").read_text().splitlines():
            assert line.endswith("k=4")


class TestMatte:
    def test_two_region_fixture(self, tmp_path):
        data = tmp_path / "d"
        assert run_cli(["synth", "--out", str(data), "--samples", "1", "--objects", "2",
                        "--height", "8", "--width", "8", "--dim", "8",
                        "--noise", "0.01", "--seed", "2"]) == 0
        out = tmp_path / "m"
        code = run_cli(["matte", "--data", str(data), "--out", str(out)])
        assert code == 0
        raw = (out / "sample0000.matte.pgm").read_bytes()
        assert raw.startswith(b"P5\n8 8\n255\n")
        body = raw.split(b"\n", 3)[3]
        from eicue.features import load_label_file
        gt = load_label_file(data / "sample0000.gt.npy").labels
        pred = (np.frombuffer(body, dtype=np.uint8) > 127).astype(int)
        agree = max((pred == gt).mean(), (pred == 1 - gt).mean())
        assert agree >= 0.95

    def test_fixed_threshold_flag(self, tmp_path):
        data = tmp_path / "d"
        assert run_cli(["synth", "--out", str(data), "--samples", "1", "--objects", "2",
                        "--height", "8", "--width", "8", "--dim", "8", "--seed", "2"]) == 0
        out1 = tmp_path / "m1"
        out2 = tmp_path / "m2"
        for out in (out1, out2):
            assert run_cli(["matte", "--data", str(data), "--out", str(out),
                            "--threshold", "fixed:0.5"]) == 0
        assert ((out1 / "sample0000.matte.pgm").read_bytes()
                == (out2 / "sample0000.matte.pgm").read_bytes())

    def test_degenerate_input_exit_4(self, tmp_path):
        # a single-patch sample has no nontrivial eigenvector to matte
        data = tmp_path / "d"
        assert run_cli(["synth", "--out", str(data), "--samples", "1", "--objects", "1",
                        "--height", "1", "--width", "1", "--dim", "4",
                        "--seed", "1"]) == 0
        out = tmp_path / "m"
        code = run_cli(["matte", "--data", str(data), "--out", str(out)])
        assert code == 4


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "eicue.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout


def test_unknown_command_exit_2():
    with pytest.raises(SystemExit) as ei:
        main(["bogus"])
    assert ei.value.code == 2

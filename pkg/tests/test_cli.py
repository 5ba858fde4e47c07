import csv

import numpy as np

from transrx import harness as H
from transrx.cli import main
from transrx.config import SimConfig


def tiny_config(tmp_path):
    c = SimConfig()
    c.waveform.num_subcarriers = 16
    c.waveform.bits_per_symbol = 2
    c.model.num_blocks, c.model.d_model, c.model.ffn_dim, c.model.num_heads = 1, 16, 16, 2
    c.train.batch_size, c.train.steps, c.train.checkpoint_interval = 2, 3, 2
    c.sweep.snr_db = (2.0,)
    c.sweep.receivers = ("ls-lmmse", "transrx:transrx.ckpt")
    c.sweep.min_bits, c.sweep.max_blocks = 1000, 3
    path = tmp_path / "tiny.ini"
    c.save(path)
    return path


def test_dump_config_defaults(capsys):
    assert main(["dump-config", "--defaults"]) == 0
    assert SimConfig.from_text(capsys.readouterr().out) == SimConfig()


def test_train_then_sweep(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert main(["train", str(cfg), "--print-every", "1"]) == 0
    assert (tmp_path / "transrx.ckpt").exists()
    log = list(csv.reader(open(tmp_path / "train_log.csv")))
    assert log[0] == ["step", "bce", "rate", "grad_norm", "lr", "wallclock_s"] and len(log) == 4
    assert main(["train", str(cfg), "--resume", "--steps", "1"]) == 0
    assert len(list(csv.reader(open(tmp_path / "train_log.csv")))) == 5
    assert main(["sweep", str(cfg)]) == 0
    rows = H.read_results_csv(tmp_path / "sweep.csv")
    assert [r.receiver for r in rows] == ["ls-lmmse", "transrx:transrx.ckpt"]
    assert (tmp_path / "sweep_plot.csv").exists()


def test_demo_image(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    img = tmp_path / "in.pgm"
    H.write_pnm(img, np.arange(64, dtype=np.uint8).reshape(8, 8) * 3)
    out = tmp_path / "out.pgm"
    rc = main(["demo-image", str(cfg), "--image", str(img), "--snr", "100",
               "--receiver", "perfect-csi", "--out", str(out)])
    assert rc == 0
    assert "PSNR inf" in capsys.readouterr().out
    assert out.read_bytes() == img.read_bytes()


def test_selftest_quick_and_dump(tmp_path, capsys):
    path = tmp_path / "qam16.csv"
    assert main(["selftest", "--quick", "--dump-constellation", str(path),
                 "--bits-per-symbol", "4"]) == 0
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["index", "label", "real", "imag"] and len(rows) == 17
    assert "FAIL" not in capsys.readouterr().out


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["sweep", str(tmp_path / "missing.ini")]) == 2
    cfg = tiny_config(tmp_path)
    assert main(["demo-image", str(cfg), "--image", str(cfg), "--snr", "1",
                 "--receiver", "ls-lmmse"]) == 2

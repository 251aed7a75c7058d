import numpy as np
import pytest
from PIL import Image

from vitcae.cli import main
from vitcae.config import TrainConfig, dump_config

from conftest import TINY


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(dump_config(TrainConfig(**TINY)))
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--epochs", "2", "--seed", "1"]) == 0
    return cfg, out


def _report(capsys):
    lines = capsys.readouterr().out.strip().splitlines()
    return dict(line.split("\t", 1) for line in lines)


def test_train_outputs(run_dir):
    cfg, out = run_dir
    for name in ("checkpoint.npz", "diagnostics.csv", "diagnostics.json", "losses.csv", "config.cfg",
                 "drift.png", "losses.png"):
        assert (out / name).is_file(), name
    saved = (out / "config.cfg").read_text()
    assert "seed = 1" in saved and "epochs = 2" in saved


def test_reconstruct_and_inputs(run_dir, capsys, tmp_path):
    _, out = run_dir
    assert main(["reconstruct", "--out", str(out), "--count", "3"]) == 0
    rep = _report(capsys)
    assert rep["images"] == "3" and float(rep["mse"]) >= 0
    assert np.load(out / "reconstruct.npy").shape == (3, 3, 16, 16)
    img = (np.random.default_rng(0).random((16, 16, 3)) * 255).astype(np.uint8)
    png = tmp_path / "x.png"
    Image.fromarray(img).save(png)
    npy = tmp_path / "x.npy"
    np.save(npy, np.zeros((2, 3, 16, 16)))
    assert main(["reconstruct", "--out", str(tmp_path), "--checkpoint", str(out / "checkpoint.npz"),
                 "--input", str(png), str(npy)]) == 0
    assert _report(capsys)["images"] == "3"


def test_inpaint(run_dir, capsys, tmp_path):
    _, out = run_dir
    mask = tmp_path / "m.npy"
    np.save(mask, np.eye(4, dtype=bool))
    assert main(["inpaint", "--out", str(out), "--count", "2", "--mask", str(mask)]) == 0
    assert float(_report(capsys)["masked_fraction"]) == 0.25
    assert main(["inpaint", "--out", str(out), "--count", "2"]) == 0
    assert (out / "inpaint.png").is_file()


def test_generate_is_seeded(run_dir, capsys):
    _, out = run_dir
    assert main(["generate", "--out", str(out), "--count", "4", "--seed", "9"]) == 0
    first = np.load(out / "generate.npy")
    assert main(["generate", "--out", str(out), "--count", "4", "--seed", "9"]) == 0
    assert np.array_equal(first, np.load(out / "generate.npy"))
    assert _report(capsys)["seed"] == "9"


def test_interpolate(run_dir, capsys):
    _, out = run_dir
    assert main(["interpolate", "--out", str(out), "--index-a", "0", "--index-b", "2", "--steps", "5"]) == 0
    assert np.load(out / "interpolate.npy").shape == (5, 3, 16, 16)
    assert main(["interpolate", "--out", str(out), "--steps", "1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_export_diag(run_dir, capsys, tmp_path):
    _, out = run_dir
    assert main(["export-diag", "--checkpoint", str(out / "checkpoint.npz"), "--out", str(tmp_path),
                 "--no-figures"]) == 0
    assert _report(capsys)["records"] == "8"
    assert (tmp_path / "diagnostics.csv").read_bytes() == (out / "diagnostics.csv").read_bytes()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["reconstruct", "--out", str(tmp_path / "nothing")]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])

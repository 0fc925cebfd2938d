import csv
import json

import numpy as np
import pytest
import torch

from pixcue.checkpoint import load_checkpoint, save_checkpoint
from pixcue.cli import main
from pixcue.formats import load_image, load_probabilities, read_pgm, save_probabilities, to_gray8
from pixcue.recon_net import Architecture, init_params, zero_params
from pixcue.training import Checkpoint, TrainingConfig

TINY = {
    "size": 32,
    "phantoms": {"count": 6},
    "mask": {"kind": "random", "accel": 4, "center_fraction": 0.125, "seed": 0},
    "stress_mask": {"kind": "random", "accel": 6, "center_fraction": 0.0625, "seed": 0},
    "noise_sigmas": [0.0, 0.01],
    "noise_pairs": 1,
    "training": {"epochs": 1, "iterations": 2, "hidden": 4, "learning_rate": 1e-3},
    "mc": {"passes": 3, "dropout_fraction": 0.2},
    "anomaly": {"cases": 2},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def read_csv(p):
    with open(p, newline="") as fh:
        return list(csv.DictReader(fh))


# --- simulate ----------------------------------------------------------------------


def test_simulate_counts_and_reproducibility(tmp_path):
    cfg = write_config(tmp_path, {**TINY, "phantoms": {"count": 3}, "noise_sigma": 0.01})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(a), "--check"]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(b)]) == 0
    assert len(list(a.glob("phantom_*.pxi"))) == 3
    assert manifest(a)["files"] == manifest(b)["files"]
    assert set(manifest(a)["files"]) == {p.name for p in a.iterdir()} - {"manifest.json"}
    main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "c")])
    assert manifest(tmp_path / "c")["files"]["phantom_000.pxi"] != manifest(a)["files"]["phantom_000.pxi"]


def test_simulate_zero_ellipse_spec(tmp_path):
    cfg = write_config(tmp_path, {"size": 16, "phantoms": {"specs": [{"size": 16, "ellipses": []}]}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert np.all(load_image(out / "phantom_000.pxi") == 0)
    assert (out / "mask.mask").read_text().startswith("16\n")


# --- train / reconstruct / uncertainty ----------------------------------------------


def test_train_lr_zero_equals_init(tmp_path):
    cfg = {**TINY, "training": {**TINY["training"], "learning_rate": 0.0, "epochs": 2}}
    out = tmp_path / "t"
    assert main(["train", "--config", write_config(tmp_path, cfg), "--out", str(out), "--check"]) == 0
    ckpt = load_checkpoint(out / "checkpoint.pxc")
    init = init_params(Architecture(2, 4, 8), 0).state_dict()
    for k, v in ckpt.net.state_dict().items():
        assert torch.equal(v, init[k])
    rows = read_csv(out / "loss_history.csv")
    assert len(rows) == 2 and list(rows[0]) == ["epoch", "train_loss", "val_loss"]


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--config", write_config(tmp_path, {**TINY, "phantoms": {"count": 1}}), "--out", str(out)])
    return out


def zero_checkpoint(path, n_bits=8):
    arch = Architecture(2, 4, n_bits)
    cfg = TrainingConfig(iterations=2, hidden=4, n_bits=n_bits)
    save_checkpoint(Checkpoint(zero_params(arch), cfg, 0.0), path)
    return path


def test_reconstruct_zero_checkpoint(tmp_path, simulated):
    ck = zero_checkpoint(tmp_path / "zero.pxc")
    out = tmp_path / "r"
    args = ["reconstruct", "--checkpoint", str(ck), "--kspace", str(simulated / "kspace_000.pxi"),
            "--mask", str(simulated / "mask.mask"), "--out", str(out), "--check"]
    assert main(args) == 0
    np.testing.assert_allclose(load_image(out / "recon.pxi"), 0.5, atol=1e-6)
    p = load_probabilities(out / "probabilities.pxp")
    np.testing.assert_allclose(p.astype(np.float64).sum(axis=-1), 1.0, atol=1e-5)


def test_reconstruct_paths_from_config(tmp_path, simulated):
    zero_checkpoint(tmp_path / "zero.pxc")
    cfg = {"checkpoint": "zero.pxc", "kspace": "sim/kspace_000.pxi", "mask": "sim/mask.mask"}
    assert main(["reconstruct", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "r")]) == 0


def test_uncertainty_one_hot_volume_is_zero(tmp_path):
    p = np.zeros((4, 4, 16), np.float32)
    p[..., 3] = 1
    save_probabilities(tmp_path / "p.pxp", p)
    for method in ("pixcue-exact", "pixcue-fast"):
        out = tmp_path / method
        assert main(["uncertainty", "--method", method, "--probabilities", str(tmp_path / "p.pxp"),
                     "--out", str(out), "--check"]) == 0
        assert np.all(load_image(out / "uncertainty.pxi") == 0)


def test_uncertainty_fast_close_to_exact_on_gaussian(tmp_path):
    c = np.arange(256)
    p = np.exp(-0.5 * ((c - 128) / 5) ** 2)
    vol = np.broadcast_to(p / p.sum(), (2, 2, 256)).astype(np.float32)
    save_probabilities(tmp_path / "g.pxp", vol)
    vals = {}
    for method in ("pixcue-exact", "pixcue-fast"):
        main(["uncertainty", "--method", method, "--probabilities", str(tmp_path / "g.pxp"), "--out", str(tmp_path / method)])
        vals[method] = float(load_image(tmp_path / method / "uncertainty.pxi")[0, 0])
    assert abs(vals["pixcue-fast"] - vals["pixcue-exact"]) / vals["pixcue-exact"] <= 11 / 25


def test_uncertainty_mc_without_dropout_is_zero(tmp_path, simulated):
    ck = tmp_path / "init.pxc"
    save_checkpoint(Checkpoint(init_params(Architecture(2, 4, 8), 1), TrainingConfig(iterations=2, hidden=4), 0.0), ck)
    cfg = write_config(tmp_path, {"mc": {"passes": 2, "dropout_fraction": 0.0}})
    out = tmp_path / "mc"
    args = ["uncertainty", "--config", cfg, "--method", "mc", "--checkpoint", str(ck),
            "--kspace", str(simulated / "kspace_000.pxi"), "--mask", str(simulated / "mask.mask"),
            "--reference", str(simulated / "phantom_000.pxi"), "--out", str(out)]
    assert main(args) == 0
    assert np.all(load_image(out / "uncertainty.pxi") == 0)
    assert len(read_csv(out / "pairs.csv")) == 32 * 32


def test_missing_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["reconstruct", "--out", str(tmp_path / "x")]) == 2
    assert "missing input" in capsys.readouterr().err


# --- experiments and report --------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_report(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = root / "report"
    code = main(["experiment", "exp1", "exp2", "exp3", "exp4", "exp5", "exp6", "--config", str(cfg), "--out", str(out)])
    return code, out


def test_experiment_outputs(tiny_report):
    code, out = tiny_report
    assert code == 0
    joint = read_csv(out / "exp5" / "joint.csv")
    assert len(joint) == 100
    fits = json.loads((out / "exp6" / "fits.json").read_text())
    assert sorted((f["metric"], f["model"]) for f in fits) == sorted(
        (m, k) for m in ("nmse", "psnr_db", "ssim") for k in ("linear", "exponential")
    )
    rows = read_csv(out / "exp1" / "metrics.csv")
    assert list(rows[0]) == ["id", "contrast_profile", "accel", "noise_sigma", "nmse", "psnr_db", "ssim",
                             "mean_uncertainty_pixcue_exact", "mean_uncertainty_pixcue_fast", "mean_uncertainty_mc"]
    assert len(rows) == 1
    m = manifest(out)
    assert m["mc_runtime"]["ratio_mc_meandist_to_pixcue"] > 0
    listed = set(m["files"])
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk


def test_experiment_is_reproducible(tiny_report, tmp_path):
    _, out = tiny_report
    cfg = write_config(tmp_path, {**TINY, "checkpoint": str(out / "checkpoint.pxc")})
    again = tmp_path / "again"
    assert main(["experiment", "exp1", "--config", cfg, "--out", str(again)]) == 0
    first = manifest(out)["files"]
    for name, digest in manifest(again)["files"].items():
        assert first[f"exp1/{name}"] == digest


def test_unknown_experiment(tmp_path):
    assert main(["experiment", "exp9", "--out", str(tmp_path / "x")]) == 2


def test_report(tiny_report, tmp_path, capsys):
    _, out = tiny_report
    dest = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(dest)]) == 0
    text = capsys.readouterr().out
    for p in out.rglob("*.csv"):
        assert str(p.relative_to(out)) in text
    src = load_image(out / "exp1" / f"uncertainty_exact_{read_csv(out / 'exp1' / 'metrics.csv')[0]['id'].zfill(3)}.pxi")
    pgm = next(dest.joinpath("exp1").glob("uncertainty_exact_*.pgm"))
    g = read_pgm(pgm)
    v = src.astype(float)
    oracle = np.floor((v - v.min()) / (v.max() - v.min()) * 255 + 0.5)
    np.testing.assert_array_equal(g, oracle)
    np.testing.assert_array_equal(g, to_gray8(src))


def test_report_empty_dir_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == 2

import csv
import json

import numpy as np
import pytest

from augrmixat.cli import main
from augrmixat.formats import read_dataset, read_tensor, write_checkpoint
from augrmixat.model import Dense, Flatten, LayerStack


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(d), "--n", "300", "--classes", "3", "--size", "8", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"mode": "standard", "epochs": 1, "arch": "mlp"}))
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(out), "--threads", "1"]) == 0
    return out


def test_gen_data_balanced_and_deterministic(data_dir, tmp_path):
    X, y, meta = read_dataset(data_dir)
    assert np.bincount(y).tolist() == [100, 100, 100]
    assert X.min() >= 0 and X.max() <= 1
    assert meta["num_classes"] == 3 and meta["seed"] == 1 and meta["name"] == "shapes"
    main(["gen-data", "--out", str(tmp_path), "--n", "300", "--classes", "3", "--size", "8", "--seed", "1"])
    for name in ("images.at1", "labels.at1", "meta.json"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_gen_data_unwritable_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--out", str(blocker / "sub"), "--n", "9"]) == 2
    assert "cannot write" in capsys.readouterr().err
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--n", "2", "--classes", "3"]) == 2


def test_train_outputs(trained):
    assert {"manifest.json", "metrics.csv", "model_final.atc"} <= {p.name for p in trained.iterdir()}
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["config"]["mode"] == "standard"
    assert manifest["config"]["attack"]["step"] == 0.007  # defaults are materialised
    assert len(manifest["dataset_checksum"]) == 64 and manifest["version"]
    rows = list(csv.DictReader((trained / "metrics.csv").open()))
    assert len(rows) == 1 and set(rows[0]) == {"epoch", "lr", "ce", "js_aug", "js_adv", "total", "train_top1",
                                               "wall_ms"}


def test_train_schema_errors(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda2": -1}))
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"epochs": 1, "lamda1": 2, "attack": {"epsilon": 1}}))
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "lamda1" in err and "attack.epsilon" in err


def test_train_seed_override_and_periodic_checkpoints(data_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "standard", "epochs": 2, "arch": "mlp", "seed": 5, "checkpoint_every": 1}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(out), "--seed", "9"]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 9
    assert (out / "model_epoch001.atc").exists() and (out / "model_epoch002.atc").exists()


def test_train_divergence_exit_code(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "standard", "epochs": 2, "arch": "mlp", "lr0": 1e30}))
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(tmp_path / "o")]) == 3
    assert "diverged at epoch 0" in capsys.readouterr().err


def test_manifest_rerun_is_byte_identical(data_dir, trained, tmp_path):
    out = tmp_path / "rerun"
    assert main(["train", "--manifest", str(trained / "manifest.json"), "--data", str(data_dir),
                 "--out", str(out), "--threads", "1"]) == 0
    assert (out / "model_final.atc").read_bytes() == (trained / "model_final.atc").read_bytes()


def test_attack_defaults_and_degenerate_cases(data_dir, trained, tmp_path):
    model = str(trained / "model_final.atc")
    assert main(["attack", "--model", model, "--data", str(data_dir), "--out", str(tmp_path / "a")]) == 0
    res = json.loads((tmp_path / "a" / "results.json").read_text())
    assert (res["method"], res["eps"], res["step"], res["iters"], res["n"]) == ("pgd", 0.031, 0.003, 20, 300)
    assert res["robust_top1"] <= res["clean_top1"]
    main(["attack", "--model", model, "--data", str(data_dir), "--eps", "0", "--method", "fgsm",
          "--out", str(tmp_path / "b")])
    res0 = json.loads((tmp_path / "b" / "results.json").read_text())
    assert res0["robust_top1"] == res0["clean_top1"]
    main(["attack", "--model", model, "--source-model", model, "--data", str(data_dir), "--out", str(tmp_path / "c")])
    assert json.loads((tmp_path / "c" / "results.json").read_text())["robust_top1"] == res["robust_top1"]


def test_attack_missing_checkpoint(data_dir, tmp_path):
    assert main(["attack", "--model", str(tmp_path / "nope.atc"), "--data", str(data_dir)]) == 2


def test_eval_perfect_stub_and_identities(data_dir, tmp_path, capsys):
    # a stub that reads the label back out of a constant image would need labels; instead check identities on a
    # trained model and perfection on a model whose data it cannot get wrong (single class present)
    X, y, _ = read_dataset(data_dir)
    d = Dense(64, 3, np.float32)
    d.params["bias"][...] = [5.0, 0.0, 0.0]
    stub = LayerStack([Flatten(), d], (1, 8, 8))
    write_checkpoint(tmp_path / "stub.atc", stub)
    from augrmixat.formats import write_dataset
    write_dataset(tmp_path / "zero", X[y == 0], y[y == 0], {"num_classes": 3, "name": "c0", "seed": 0})
    assert main(["eval", "--model", str(tmp_path / "stub.atc"), "--data", str(tmp_path / "zero"),
                 "--corruption", "all", "--out", str(tmp_path / "e")]) == 0
    res = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert res["mce"] == 0.0 and res["mca"] == 1.0 and len(res["ce"]) == 8
    assert (tmp_path / "e" / "corruption.csv").read_text().startswith("kind,ce\n")


def test_eval_corruption_and_occlusion(data_dir, trained, tmp_path, capsys):
    model = str(trained / "model_final.atc")
    assert main(["eval", "--model", model, "--data", str(data_dir), "--corruption", "contrast",
                 "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "eval.json").read_text())
    assert res["mca"] == 1.0 - res["mce"]
    assert main(["eval", "--model", model, "--data", str(data_dir), "--occlusion", "targeted",
                 "--out", str(tmp_path)]) == 0
    occ = json.loads((tmp_path / "eval.json").read_text())["occlusion"]
    assert "targeted_top2" in occ and occ["block_frac"] == 0.4
    capsys.readouterr()
    assert main(["eval", "--model", model, "--data", str(data_dir), "--corruption", "fog"]) == 2
    err = capsys.readouterr().err
    assert "gaussian_noise" in err and "defocus_blur" in err


def test_sweep_writes_table(data_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "arch": "mlp", "attack": {"iters": 1}}))
    assert main(["sweep", "--config", str(cfg), "--data", str(data_dir), "--lambda1", "1", "--lambda2", "1",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "lambda1,lambda2,clean,fgsm,pgd10,pgd20,cw20,corr,occ"
    assert len(lines) == 2
    row = next(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert float(row["lambda1"]) == 1.0 and 0 <= float(row["pgd10"]) <= 1


def test_corrupt_and_mask(data_dir, tmp_path):
    assert main(["corrupt", "--data", str(data_dir), "--out", str(tmp_path / "c"), "--kind", "brightness",
                 "--severity", "2"]) == 0
    X, _, _ = read_dataset(data_dir)
    Xc, _, meta = read_dataset(tmp_path / "c")
    np.testing.assert_allclose(Xc, np.clip(X + 0.1, 0, 1), atol=1e-7)
    assert meta["corruption"]["kind"] == "brightness"
    assert main(["corrupt", "--data", str(data_dir), "--out", str(tmp_path / "d"), "--kind", "fog"]) == 2
    assert main(["mask", "--out", str(tmp_path / "m.at1"), "--size", "32", "--gamma", "0.5"]) == 0
    mask = read_tensor(tmp_path / "m.at1")
    assert mask.dtype == np.uint8 and mask.sum() == 512

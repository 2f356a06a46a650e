import json

import numpy as np
import pytest

from lenslesskit import arrayio
from lenslesskit.cli import main


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def dataset_section(n=8, sigma=0.01, ambient=0.1, scene_dir=None):
    section = {
        "n_records": n,
        "scene_shape": [16, 16],
        "psf": {"kind": "random_spots", "shape": [5, 5], "params": {"n_spots": 3}, "seed": 2},
        "noise": {"kind": "gaussian", "sigma": sigma},
        "ambient_level": ambient,
        "n_frames": 4,
        "split_fraction": 0.75,
    }
    if scene_dir is not None:
        section["scene_dir"] = str(scene_dir)
    return section


def admm_pipeline(mode="direct_sub", n_iter=8):
    return {
        "background_mode": mode,
        "inverter": {"kind": "admm", "n_iter": n_iter},
    }


def build_dataset_via_cli(tmp_path, seed=5, **kwargs):
    tmp_path.mkdir(parents=True, exist_ok=True)
    out = tmp_path / f"run_seed{seed}"
    cfg_path = write_config(
        tmp_path, {"seed": seed, "out_dir": str(out), "dataset": dataset_section(**kwargs)},
        name=f"sim{seed}.json",
    )
    assert main(["simulate-dataset", "--config", str(cfg_path)]) == 0
    return out / "dataset"


def test_simulate_dataset_and_provenance(tmp_path):
    ds = build_dataset_via_cli(tmp_path)
    assert (ds / "manifest.json").exists()
    assert (ds / "records" / "00000" / "y.llia").exists()
    run = json.loads((ds.parent / "run.json").read_text())
    assert run["command"] == "simulate-dataset"
    assert len(run["config_sha256"]) == 64
    assert run["seed"] == 5


def test_simulate_dataset_reproducible_bit_for_bit(tmp_path):
    ds_a = build_dataset_via_cli(tmp_path / "a")
    ds_b = build_dataset_via_cli(tmp_path / "b")
    assert (ds_a / "manifest.json").read_bytes() == (ds_b / "manifest.json").read_bytes()
    assert (ds_a / "records" / "00003" / "y.llia").read_bytes() == (
        ds_b / "records" / "00003" / "y.llia"
    ).read_bytes()


def test_seed_override_changes_data(tmp_path):
    ds_a = build_dataset_via_cli(tmp_path, seed=5)
    cfg_path = write_config(
        tmp_path,
        {"seed": 5, "out_dir": str(tmp_path / "c"), "dataset": dataset_section()},
        name="sim_c.json",
    )
    assert main(["simulate-dataset", "--config", str(cfg_path), "--seed", "6"]) == 0
    a = (ds_a / "records" / "00000" / "y.llia").read_bytes()
    c = (tmp_path / "c" / "dataset" / "records" / "00000" / "y.llia").read_bytes()
    assert a != c


def test_evaluate_command_and_determinism(tmp_path):
    ds = build_dataset_via_cli(tmp_path)
    eval_doc = {
        "out_dir": str(tmp_path / "eval1"),
        "evaluate": {
            "manifest": str(ds),
            "pipelines": [
                {"name": "none", "pipeline": admm_pipeline(mode="none")},
                {"name": "direct", "pipeline": admm_pipeline(mode="direct_sub")},
            ],
        },
    }
    cfg = write_config(tmp_path, eval_doc, name="eval1.json")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    eval_doc["out_dir"] = str(tmp_path / "eval2")
    cfg2 = write_config(tmp_path, eval_doc, name="eval2.json")
    assert main(["evaluate", "--config", str(cfg2)]) == 0
    t1 = (tmp_path / "eval1" / "evaluate_metrics.csv").read_bytes()
    t2 = (tmp_path / "eval2" / "evaluate_metrics.csv").read_bytes()
    assert t1 == t2
    text = t1.decode()
    assert "none" in text and "direct" in text


def test_evaluate_identity_on_ground_truth_emits_inf_sentinel(tmp_path):
    # all-black scenes, no noise, no background: y == x == 0, wiener returns 0
    scene_dir = tmp_path / "scenes"
    scene_dir.mkdir()
    for i in range(3):
        arrayio.write_png(scene_dir / f"{i}.png", np.zeros((16, 16, 3)))
    ds = build_dataset_via_cli(
        tmp_path, seed=9, sigma=0.0, ambient=0.0, scene_dir=scene_dir
    )
    doc = {
        "out_dir": str(tmp_path / "evalz"),
        "evaluate": {
            "manifest": str(ds),
            "pipelines": [
                {"name": "identity", "pipeline": {"background_mode": "none",
                                                   "inverter": {"kind": "wiener"}}}
            ],
        },
    }
    cfg = write_config(tmp_path, doc, name="evalz.json")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    text = (tmp_path / "evalz" / "evaluate_metrics.csv").read_text()
    assert "inf" in text


def test_reconstruct_command(tmp_path):
    ds = build_dataset_via_cli(tmp_path)
    doc = {
        "out_dir": str(tmp_path / "recon"),
        "reconstruct": {
            "manifest": str(ds),
            "pipeline": admm_pipeline(),
            "split": "test",
            "save_png": True,
        },
    }
    cfg = write_config(tmp_path, doc, name="recon.json")
    assert main(["reconstruct", "--config", str(cfg)]) == 0
    metrics = (tmp_path / "recon" / "reconstruct_metrics.csv").read_text()
    assert "psnr" in metrics
    pngs = list((tmp_path / "recon" / "reconstructions").glob("*.png"))
    llias = list((tmp_path / "recon" / "reconstructions").glob("*.llia"))
    assert pngs and llias


def test_train_then_evaluate_consistency(tmp_path):
    """Checkpoint's recorded validation loss matches independent evaluation."""
    ds = build_dataset_via_cli(tmp_path, seed=11, ambient=0.0)
    train_doc = {
        "seed": 3,
        "out_dir": str(tmp_path / "train"),
        "train": {
            "manifest": str(ds),
            "pipeline": {
                "background_mode": "none",
                "inverter": {"kind": "le_admm", "n_iter": 2, "n_unrolled": 2},
            },
            "config": {"lr0": 0.02, "epochs": 3, "batch_size": 4},
        },
    }
    cfg = write_config(tmp_path, train_doc, name="train.json")
    assert main(["train", "--config", str(cfg)]) == 0
    ckpt = tmp_path / "train" / "checkpoint"
    recorded = json.loads((ckpt / "spec.json").read_text())["val_loss"]

    eval_doc = {
        "out_dir": str(tmp_path / "eval_ckpt"),
        "evaluate": {
            "manifest": str(ds),
            "pipelines": [{"name": "ckpt", "pipeline": str(ckpt)}],
            "split": "test",
        },
    }
    cfg2 = write_config(tmp_path, eval_doc, name="eval_ckpt.json")
    assert main(["evaluate", "--config", str(cfg2)]) == 0
    rows = (tmp_path / "eval_ckpt" / "evaluate_metrics.csv").read_text().splitlines()
    mse = float(rows[1].split(",")[-1])
    assert mse == pytest.approx(recorded, abs=recorded * 1e-6)


def test_analyze_mismatch_zero_delta(tmp_path):
    doc = {
        "seed": 1,
        "out_dir": str(tmp_path / "mm0"),
        "mismatch": {
            "psf": {"kind": "random_spots", "shape": [5, 5], "params": {"n_spots": 3}, "seed": 1},
            "grid_shape": [16, 16],
            "epsilons": [0.0],
            "delta_l1": 0.0,
            "noise_sigma": 0.0,
            "background_level": 0.0,
        },
    }
    cfg = write_config(tmp_path, doc, name="mm0.json")
    assert main(["analyze-mismatch", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "mm0" / "mismatch_report.json").read_text())
    for row in report["norms"]:
        for key in ("model_mismatch", "noise_amp", "external", "residual"):
            assert row[key] < 1e-10
    assert report["residual_loglog_slope"] is None


def test_analyze_mismatch_sweep_slope(tmp_path):
    doc = {
        "seed": 2,
        "out_dir": str(tmp_path / "mm"),
        "mismatch": {
            "psf": {"kind": "gaussian_speckle", "shape": [7, 7], "seed": 3},
            "grid_shape": [20, 20],
            "epsilons": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            "delta_l1": 0.3,
            "noise_sigma": 0.005,
            "background_level": 0.1,
            "mode": "direct_sub",
            "n_frames": 16,
        },
    }
    cfg = write_config(tmp_path, doc, name="mm.json")
    assert main(["analyze-mismatch", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "mm" / "mismatch_report.json").read_text())
    assert 1.8 <= report["residual_loglog_slope"] <= 2.2
    assert (tmp_path / "mm" / "mismatch_sweep.csv").exists()


def test_invalid_configs_exit_2(tmp_path):
    # unknown top-level key
    cfg = write_config(tmp_path, {"bogus": 1}, name="bad1.json")
    assert main(["simulate-dataset", "--config", str(cfg)]) == 2
    # unknown nested key
    bad = {"dataset": dataset_section()}
    bad["dataset"]["unknown_knob"] = 3
    cfg = write_config(tmp_path, bad, name="bad2.json")
    assert main(["simulate-dataset", "--config", str(cfg)]) == 2
    # missing required section for the command
    cfg = write_config(tmp_path, {"seed": 1}, name="bad3.json")
    assert main(["evaluate", "--config", str(cfg)]) == 2
    # not JSON at all
    path = tmp_path / "bad4.json"
    path.write_text("{nope")
    assert main(["simulate-dataset", "--config", str(path)]) == 2
    # missing config file
    assert main(["simulate-dataset", "--config", str(tmp_path / "nope.json")]) == 2
    # schema-valid but semantically invalid parameter values
    bad = {"dataset": dataset_section()}
    bad["dataset"]["split_fraction"] = 1.5
    cfg = write_config(tmp_path, bad, name="bad5.json")
    assert main(["simulate-dataset", "--config", str(cfg)]) == 2


def test_runtime_error_exits_3(tmp_path):
    ds = build_dataset_via_cli(tmp_path)
    # valid config, but a train-split record file is gone by run time
    manifest = json.loads((ds / "manifest.json").read_text())
    victim = next(r for r in manifest["records"] if r["split"] == "train")
    (ds / victim["path"] / "y.llia").unlink()
    doc = {
        "out_dir": str(tmp_path / "ev"),
        "evaluate": {
            "manifest": str(ds),
            "pipelines": [{"name": "p", "pipeline": admm_pipeline()}],
            "split": "train",
        },
    }
    cfg = write_config(tmp_path, doc, name="ev.json")
    assert main(["evaluate", "--config", str(cfg)]) == 3

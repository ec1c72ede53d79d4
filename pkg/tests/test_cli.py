import hashlib
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from aeroseg.cli import main
from aeroseg.data import load_mask, read_manifest, save_raw, split_of
from aeroseg.eval import read_csv


def tree_hash(root):
    h = hashlib.sha256()
    for d, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            p = os.path.join(d, name)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


def run(*argv):
    return subprocess.run([sys.executable, "-m", "aeroseg", *argv], capture_output=True, text=True)


def synth(out, seed=7, train=1, val=1, test=1):
    assert main(["synth", "--seed", str(seed), "--train", str(train), "--val", str(val),
                 "--test", str(test), "--out", str(out)]) == 0


def test_synth_twice_identical(tmp_path):
    d = tmp_path / "d"
    synth(d)
    first = tree_hash(d)
    synth(d)
    assert tree_hash(d) == first
    # a second directory differs only in the recorded --out value
    synth(tmp_path / "e")
    for sub in ("images", "masks"):
        assert tree_hash(d / sub) == tree_hash(tmp_path / "e" / sub)
    assert (d / "manifest.tsv").read_bytes() == (tmp_path / "e" / "manifest.tsv").read_bytes()
    synth(tmp_path / "f", seed=8)
    assert tree_hash(d / "images") != tree_hash(tmp_path / "f" / "images")


def test_synth_writes_config_and_index(tmp_path):
    synth(tmp_path)
    cfg = (tmp_path / "config.txt").read_text()
    assert "seed=7" in cfg and "decoy_fraction=" in cfg
    index = (tmp_path / "index.txt").read_text().split()
    assert "manifest.tsv" in index and "config.txt" in index
    assert "images/scene000.ppm" in index and "masks/scene002.meta.tsv" in index
    for name in index:
        assert (tmp_path / name).exists()


def test_eval_on_perfect_maps(tmp_path):
    synth(tmp_path / "d", val=0, test=2)
    pred = tmp_path / "pred"
    pred.mkdir()
    for e in split_of(read_manifest(tmp_path / "d" / "manifest.tsv"), "test"):
        save_raw(pred / f"{e.scene_id}.map", load_mask(e.mask).astype(np.float32))
    assert main(["eval", "--pred", str(pred), "--manifest", str(tmp_path / "d" / "manifest.tsv"),
                 "--grid-step", "0.05", "--out", str(tmp_path / "ev")]) == 0
    rows = read_csv(tmp_path / "ev" / "sweep.csv")
    assert [r.threshold for r in rows][::19] == [0.05, 1.0]
    assert all(r.f_measure == 1.0 for r in rows)
    assert (tmp_path / "ev" / "per_image" / "scene001.csv").exists()
    assert "grid_step=0.05" in (tmp_path / "ev" / "config.txt").read_text()


def test_unknown_flag_fails():
    r = run("synth", "--out", "x", "--bogus")
    assert r.returncode != 0 and "unrecognized" in r.stderr


def test_unknown_command_fails():
    r = run("frobnicate")
    assert r.returncode != 0 and r.stderr


def test_missing_file_fails(tmp_path):
    r = run("eval", "--pred", str(tmp_path), "--manifest", str(tmp_path / "nope.tsv"),
            "--out", str(tmp_path / "o"))
    assert r.returncode != 0 and "nope.tsv" in r.stderr


def test_missing_prediction_fails(tmp_path):
    synth(tmp_path / "d", val=0)
    r = run("eval", "--pred", str(tmp_path / "empty"), "--manifest", str(tmp_path / "d" / "manifest.tsv"),
            "--out", str(tmp_path / "o"))
    assert r.returncode == 1 and "error" in r.stderr


def test_count_needs_a_threshold(tmp_path):
    synth(tmp_path / "d")
    r = run("count", "--pred", str(tmp_path), "--manifest", str(tmp_path / "d" / "manifest.tsv"),
            "--out", str(tmp_path / "o"))
    assert r.returncode == 1 and "--threshold" in r.stderr


def test_help_lists_every_command():
    r = run("--help")
    assert r.returncode == 0
    for cmd in ("synth", "train", "predict", "eval", "tree-opt", "count", "ablate"):
        assert cmd in r.stdout


@pytest.mark.slow
def test_full_pipeline_smoke(tmp_path):
    t0 = time.perf_counter()
    d, m = tmp_path / "d", str(tmp_path / "d" / "manifest.tsv")
    assert run("synth", "--seed", "100", "--train", "2", "--val", "1", "--test", "1", "--out", str(d)).returncode == 0
    r = run("train", "--manifest", m, "--epochs", "1", "--iters", "200", "--seed", "0", "--out", str(tmp_path / "m"))
    assert r.returncode == 0, r.stderr
    for name in ("model.bin", "model.bin.cfg", "losses.csv", "runlog.txt", "config.txt", "index.txt"):
        assert (tmp_path / "m" / name).exists()
    model = str(tmp_path / "m" / "model.bin")
    for split in ("val", "test"):
        r = run("predict", "--model", model, "--manifest", m, "--split", split, "--out", str(tmp_path / f"p_{split}"))
        assert r.returncode == 0, r.stderr
    r = run("eval", "--pred", str(tmp_path / "p_test"), "--manifest", m, "--out", str(tmp_path / "ev"))
    assert r.returncode == 0 and "best mean F" in r.stdout
    r = run("count", "--pred", str(tmp_path / "p_test"), "--val-pred", str(tmp_path / "p_val"),
            "--manifest", m, "--out", str(tmp_path / "ct"))
    assert r.returncode == 0, r.stderr
    lines = (tmp_path / "ct" / "counts.csv").read_text().splitlines()
    assert lines[2].startswith("scene003,")
    assert time.perf_counter() - t0 < 600

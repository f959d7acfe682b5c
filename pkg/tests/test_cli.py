import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dkspose.cli import _load_scenes, main
from dkspose.toy import load_checkpoint


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--out", str(out), "--n-scenes", "3", "--n-points", "6000", "--seed", "4"]) == 0
    return out


def test_gen_layout(gen_dir):
    assert len(list((gen_dir / "scenes").glob("scene_*.json"))) == 3
    assert len(list((gen_dir / "scenes").glob("scene_*.d16"))) == 3
    doc = json.loads(sorted((gen_dir / "models").glob("model_*.json"))[0].read_text())
    assert len(doc["edge_points"]) == 8


def test_gen_is_deterministic(gen_dir, tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--n-scenes", "3", "--n-points", "6000", "--seed", "4"]) == 0
    for f in sorted((gen_dir / "scenes").iterdir()):
        assert (tmp_path / "scenes" / f.name).read_bytes() == f.read_bytes()


def test_estimate_eval_round(gen_dir, tmp_path):
    scenes = str(gen_dir / "scenes")
    assert main(["estimate", "--scenes", scenes, "--out", str(tmp_path / "a"), "--repeat", "2"]) == 0
    assert main(["estimate", "--scenes", scenes, "--out", str(tmp_path / "b"), "--repeat", "2"]) == 0
    assert main(["estimate", "--scenes", scenes, "--out", str(tmp_path / "c"), "--repeat", "2",
                 "--no-filter-background"]) == 0
    poses = (tmp_path / "a" / "poses.csv").read_bytes()
    assert poses == (tmp_path / "b" / "poses.csv").read_bytes() == (tmp_path / "c" / "poses.csv").read_bytes()
    timing = list(csv.reader((tmp_path / "a" / "timing.csv").open()))
    assert timing[0] == ["stage", "ms_per_frame"] and [r[0] for r in timing[1:]] == [
        "network_forward", "pose_estimation", "total"]

    assert main(["eval", "--scenes", scenes, "--poses", str(tmp_path / "a" / "poses.csv"),
                 "--out", str(tmp_path / "e")]) == 0
    rows = list(csv.DictReader((tmp_path / "e" / "eval.csv").open()))
    assert rows[-1]["class_id"] == "ALL"
    # instances under the minimum cluster size get no pose and score as misses
    sizes = {}
    for sc in _load_scenes(gen_dir / "scenes"):
        for inst in sc.instances:
            n = int(np.count_nonzero(sc.instance_label == inst.instance_id))
            sizes.setdefault(inst.class_id, []).append(n)
    for r in rows[:-1]:
        hit = np.mean([n >= 30 for n in sizes[int(r["class_id"])]])
        assert float(r["add_s_auc"]) == pytest.approx(100 * hit, abs=1e-6)
    assert len(poses.decode().splitlines()) - 1 == sum(n >= 30 for v in sizes.values() for n in v)


def test_noisy_estimate_matches_between_modes(gen_dir, tmp_path):
    scenes = str(gen_dir / "scenes")
    for name, extra in (("f", []), ("u", ["--no-filter-background"])):
        assert main(["estimate", "--scenes", scenes, "--out", str(tmp_path / name), "--repeat", "1",
                     "--offset-sigma", "0.005"] + extra) == 0
    assert (tmp_path / "f" / "poses.csv").read_bytes() == (tmp_path / "u" / "poses.csv").read_bytes()


@pytest.mark.parametrize("selector", ["dks", "fps"])
def test_keypoints(gen_dir, tmp_path, selector):
    assert main(["keypoints", "--scenes", str(gen_dir / "scenes"), "--out", str(tmp_path),
                 "--selector", selector, "--k-keypoints", "10"]) == 0
    rows = list(csv.DictReader((tmp_path / "keypoints.csv").open()))
    assert len(rows) == 30 and all(int(r["instance_id"]) >= 0 for r in rows)


def test_train_toy(gen_dir, tmp_path):
    args = ["train-toy", "--scenes", str(gen_dir / "scenes"), "--epochs", "2", "--batch-points", "2048"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    hist = (tmp_path / "a" / "loss_history.csv").read_text()
    assert hist.splitlines()[0] == "epoch,loss" and len(hist.splitlines()) == 3
    assert hist == (tmp_path / "b" / "loss_history.csv").read_text()
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
    mdl = load_checkpoint(tmp_path / "a" / "model.bin")
    assert main(["keypoints", "--scenes", str(gen_dir / "scenes"), "--out", str(tmp_path / "k"),
                 "--checkpoint", str(tmp_path / "a" / "model.bin")]) == 0
    assert np.all(np.isfinite(mdl.flat()))


def test_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


class TestExitCodes:
    def test_configuration(self, tmp_path, gen_dir):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("no_such_key = 3\n")
        assert main(["estimate", "--scenes", str(gen_dir / "scenes"), "--config", str(cfg)]) == 2
        assert main(["gen", "--out", str(tmp_path), "--n-points", "0"]) == 2

    def test_validation(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["estimate", "--scenes", str(tmp_path / "empty"), "--out", str(tmp_path)]) == 3

    def test_bad_pose_file(self, tmp_path, gen_dir):
        bad = tmp_path / "p.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["eval", "--scenes", str(gen_dir / "scenes"), "--poses", str(bad), "--out", str(tmp_path)]) == 3

    def test_bad_suite(self, tmp_path):
        s = tmp_path / "s.json"
        s.write_text(json.dumps({"n_scenes": -1}))
        assert main(["bench", "--suite", str(s), "--out", str(tmp_path)]) == 2

    def test_argparse_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["estimate"])
        assert info.value.code == 2


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "dkspose.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "selfcheck" in out.stdout

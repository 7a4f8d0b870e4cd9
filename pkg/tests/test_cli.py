import json
import logging

import pytest

from memosort.cli import main
from memosort.formats import read_mot


@pytest.fixture
def suite_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    assert main(["synth", "--suite", "--out", str(out)]) == 0
    return out


def test_synth_suite_writes_folders(suite_dir):
    names = sorted(p.name for p in suite_dir.iterdir())
    assert names == sorted(["crossing", "occlusion_5", "occlusion_10", "occlusion_20", "spin_after_jump"])
    for p in suite_dir.iterdir():
        assert {f.name for f in p.iterdir()} == {"gt.txt", "det.txt", "meta.json"}


def test_track_then_eval(suite_dir, tmp_path, capsys, caplog):
    scn = suite_dir / "crossing"
    out = tmp_path / "res.txt"
    with caplog.at_level(logging.WARNING):
        assert main(["track", "--dets", str(scn / "det.txt"), "--out", str(out), "--frame-size", "1280", "720"]) == 0
    assert "plain Kalman filter" in caplog.text
    assert len(read_mot(out)) > 0
    capsys.readouterr()
    assert main(["eval", "--truth", str(scn / "gt.txt"), "--results", str(scn / "gt.txt")]) == 0
    assert "MOTA 1.0000" in capsys.readouterr().out
    rep = tmp_path / "r.json"
    assert main(["eval", "--truth", str(scn / "gt.txt"), "--results", str(out), "--json", str(rep)]) == 0
    assert 0.0 < json.loads(rep.read_text())["mota"] <= 1.0


def test_missing_weights_falls_back(suite_dir, tmp_path, caplog):
    scn = suite_dir / "occlusion_5"
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    with caplog.at_level(logging.WARNING):
        assert main(["track", "--dets", str(scn / "det.txt"), "--out", str(a),
                     "--weights", str(tmp_path / "nope.bin")]) == 0
    assert "not found" in caplog.text
    assert main(["track", "--dets", str(scn / "det.txt"), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_outputs_are_byte_identical(suite_dir, tmp_path):
    scn = suite_dir / "spin_after_jump"
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}.txt"
        assert main(["track", "--dets", str(scn / "det.txt"), "--out", str(out)]) == 0
        runs.append(out.read_bytes())
    assert runs[0] == runs[1]


def test_train_small(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}, "hidden": 8}))
    w = tmp_path / "w.bin"
    assert main(["train", "--config", str(cfg), "--out", str(w), "--count", "2", "--frames", "40"]) == 0
    assert w.exists() and (tmp_path / "w.loss.txt").read_text().startswith("epoch")
    res = tmp_path / "res.txt"
    dets = tmp_path / "s"
    assert main(["synth", "--out", str(dets), "--frames", "30"]) == 0
    assert main(["track", "--config", str(cfg), "--weights", str(w), "--dets", str(dets / "det.txt"),
                 "--out", str(res)]) == 0


def test_config_dump(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MEMOSORT_SEED", raising=False)
    assert main(["config", "--seed", "7"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["seed"] == 7 and data["tracker"]["tau_high"] == 0.6
    monkeypatch.setenv("MEMOSORT_SEED", "9")
    assert main(["config", "--seed", "7"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 9


def test_errors_and_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 2
    assert main(["track", "--dets", "x.txt"]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("1,-1,10,20,abc\n")
    assert main(["track", "--dets", str(bad), "--out", str(tmp_path / "o.txt")]) == 1
    assert f"{bad}:1:" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nope": 1}')
    assert main(["config", "--config", str(cfg)]) == 1
    assert main(["track", "--dets", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o.txt")]) == 1


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)

import json

import numpy as np
import pytest

from memosort.formats import (
    SEED_ENV,
    ConfigError,
    MotFormatError,
    MotLine,
    RunConfig,
    config_from_dict,
    load_config,
    load_scenario,
    parse_detections,
    parse_line,
    parse_tracks,
    read_mot,
    save_scenario,
    write_detections,
    write_mot,
    write_results,
)
from memosort.geometry import BBox, Detection
from memosort.synthgen import ScenarioConfig, generate


def test_parse_example_line():
    row = parse_line("1,-1,10,20,30,40,0.9,-1,-1,-1")
    assert (row.frame, row.id, row.score) == (1, -1, 0.9)
    assert row.box() == BBox(25, 40, 30, 40)


def test_short_rows_get_defaults():
    row = parse_line("3,7,0,0,5,5")
    assert row.score == 1.0 and row.extra == (-1.0, -1.0, -1.0)


@pytest.mark.parametrize("text", ["1,-1,10,20,abc", "1,-1,10,20,abc,4", "0,1,1,1,1,1", "1,1,1,1,0,1",
                                  "1,1,1,nan,1,1", "1.5,1,1,1,1,1"])
def test_bad_rows_name_the_line(text, tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1,-1,10,20,30,40,0.9,-1,-1,-1\n" + text + "\n")
    with pytest.raises(MotFormatError) as info:
        read_mot(path)
    assert info.value.lineno == 2
    assert f"{path}:2:" in str(info.value)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    assert parse_detections(path) == {}
    assert parse_tracks(path) == []
    path.write_text("\n\n")
    assert read_mot(path) == []


def test_detection_scores_clipped(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("2,-1,0,0,4,4,1.4\n1,-1,0,0,4,4,-0.2\n")
    dets = parse_detections(path)
    assert list(dets) == [1, 2]
    assert dets[1][0].score == 0.0 and dets[2][0].score == 1.0


def test_results_round_trip_is_exact(tmp_path, rng):
    traj = {}
    for f in range(1, 6):
        for i in (2, 1):
            traj[(f, i)] = (BBox(*rng.uniform(50, 500, 2), *rng.uniform(5, 90, 2)), float(rng.random()))
    path = tmp_path / "res.txt"
    write_results(traj, path)
    back = {(r.frame, r.id): (r.box(), r.score) for r in read_mot(path)}
    assert back.keys() == traj.keys()
    for k in traj:
        a, b = traj[k][0], back[k][0]
        assert np.allclose(tuple(a), tuple(b), rtol=1e-14)
        assert back[k][1] == traj[k][1]
    # the rows themselves are a fixed point
    again = tmp_path / "again.txt"
    write_results({(r.frame, r.id): (r.box(), r.score) for r in read_mot(path)}, again)
    assert [parse_line(t) for t in path.read_text().splitlines()] == \
        [parse_line(t) for t in again.read_text().splitlines()]


def test_tlwh_rows_are_bit_exact(tmp_path):
    rows = [MotLine(1, 1, 0.1, 0.2, 10.3, 20.7, 0.33), MotLine(1, 4, 1e-7, 3.0, 5.5, 6.25, 1.0)]
    write_mot(rows, tmp_path / "r.txt")
    assert read_mot(tmp_path / "r.txt") == rows


def test_results_ordering_and_empty(tmp_path):
    write_results({}, tmp_path / "none.txt")
    assert (tmp_path / "none.txt").read_text() == ""
    traj = {(2, 5): (BBox(10, 10, 4, 4), 0.9), (1, 9): (BBox(10, 10, 4, 4), 0.9),
            (1, 3): (BBox(20, 10, 4, 4), 0.8)}
    write_results(traj, tmp_path / "r.txt")
    keys = [tuple(map(int, line.split(",")[:2])) for line in (tmp_path / "r.txt").read_text().splitlines()]
    assert keys == [(1, 3), (1, 9), (2, 5)]


def test_write_detections_keeps_frame_order(tmp_path):
    dets = {2: [Detection(BBox(5, 5, 2, 2), 0.5, 2)],
            1: [Detection(BBox(9, 9, 2, 2), 0.4, 1), Detection(BBox(1, 1, 2, 2), 0.7, 1)]}
    write_detections(dets, tmp_path / "d.txt")
    back = parse_detections(tmp_path / "d.txt")
    assert [d.score for d in back[1]] == [0.4, 0.7] and len(back[2]) == 1


# ----------------------------------------------------------------- config


def test_default_config_round_trip(tmp_path):
    cfg = load_config(env={})
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    again = load_config(path, env={})
    assert again.to_json() == cfg.to_json()
    assert again == cfg


def test_partial_config_overrides():
    cfg = config_from_dict({"tracker": {"tau_high": 0.7}, "mat": {"theta_center": 0.1172},
                            "train": {"epochs": 3}, "seed": 4}, env={})
    assert cfg.tracker.tau_high == 0.7 and cfg.tracker.mat.theta_center == 0.1172
    assert cfg.train.epochs == 3 and cfg.seed == 4 and cfg.train.seed == 4
    assert cfg.tracker.tau_low == 0.1


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"tracker": {"bogus": 1}},
    {"mat": {"theta": 1}},
    {"tracker": {"min_hits": 2.5}},
    {"tracker": {"use_mo_iou": "yes"}},
    {"noise": {"sigma_pos": "big"}},
    {"tracker": {"tau_low": 0.9}},
    {"tracker": []},
    {"hidden": 0},
    {"train": {"seed": 3}},
])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data, env={})


def test_seed_env_override():
    assert config_from_dict({"seed": 3}, env={SEED_ENV: "11"}).seed == 11
    assert config_from_dict({"seed": 3}, env={SEED_ENV: "11"}).train.seed == 11
    with pytest.raises(ConfigError):
        config_from_dict({}, env={SEED_ENV: "x"})


def test_invalid_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json", env={})


def test_config_dump_is_sorted_json():
    text = RunConfig().to_json()
    data = json.loads(text)
    assert list(data) == sorted(data)
    assert text.endswith("\n")


# ---------------------------------------------------------------- scenarios


def test_scenario_round_trip(tmp_path):
    scn = generate(ScenarioConfig(frames=30, n_targets=4, miss_rate=0.2), seed=8)
    back = load_scenario(save_scenario(scn, tmp_path / "s"))
    assert (back.frames, back.width, back.height, back.seed, back.regimes) == \
        (scn.frames, scn.width, scn.height, scn.seed, scn.regimes)
    assert np.allclose(back.truth, scn.truth, rtol=1e-14)
    assert back.det_ids == scn.det_ids
    for f in range(1, 31):
        assert [d.score for d in back.frame_detections(f)] == [d.score for d in scn.frame_detections(f)]


def test_scenario_without_meta(tmp_path):
    scn = generate(ScenarioConfig(frames=20, n_targets=3, noise_sigma=0.0), seed=1)
    folder = save_scenario(scn, tmp_path / "s")
    (folder / "meta.json").unlink()
    back = load_scenario(folder)
    assert back.frames == 20
    assert back.det_ids == scn.det_ids
    assert back.width <= scn.width and back.height <= scn.height

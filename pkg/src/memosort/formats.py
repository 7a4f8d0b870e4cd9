"""File formats: MOT-style text rows, JSON run configs, scenario folders.

A text row is ``frame,id,left,top,w,h,score,-1,-1,-1``. Raw detections use
id ``-1``. Floats are written with ``repr`` so a written file parses back to
the same values bit for bit.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from collections import defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .assign import solve
from .geometry import BBox, Detection, MatConfig, iou_matrix
from .mekf import NoiseModel, Normalizer
from .pipeline import TrackerConfig
from .synthgen import Scenario
from .trainer import TrainConfig

SEED_ENV = "MEMOSORT_SEED"


class MotFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class MotLine(NamedTuple):
    frame: int
    id: int
    left: float
    top: float
    w: float
    h: float
    score: float = 1.0
    extra: tuple[float, float, float] = (-1.0, -1.0, -1.0)

    @classmethod
    def from_box(cls, frame: int, oid: int, box, score: float = 1.0) -> "MotLine":
        left, top, w, h = BBox(*box).to_tlwh()
        return cls(int(frame), int(oid), left, top, w, h, float(score))

    def box(self) -> BBox:
        return BBox.from_tlwh(self.left, self.top, self.w, self.h)

    def format(self) -> str:
        vals = [repr(float(v)) for v in (self.left, self.top, self.w, self.h, self.score)]
        extra = [_fmt_placeholder(v) for v in self.extra]
        return ",".join([str(self.frame), str(self.id), *vals, *extra])


def _fmt_placeholder(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _parse_int(tok: str) -> int:
    v = float(tok)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {tok!r}")
    return int(v)


def parse_line(text: str, lineno: int = 1, path="<input>") -> MotLine:
    parts = [p.strip() for p in text.strip().split(",")]
    if len(parts) < 6:
        raise MotFormatError(path, lineno, f"expected at least 6 fields, got {len(parts)}")
    try:
        frame = _parse_int(parts[0])
        oid = _parse_int(parts[1])
        left, top, w, h = (float(p) for p in parts[2:6])
        score = float(parts[6]) if len(parts) > 6 else 1.0
        extra = tuple(float(p) for p in parts[7:10])
    except ValueError as exc:
        raise MotFormatError(path, lineno, str(exc)) from None
    extra = extra + (-1.0,) * (3 - len(extra))
    if frame < 1:
        raise MotFormatError(path, lineno, f"frame must be >= 1, got {frame}")
    if not all(math.isfinite(v) for v in (left, top, w, h, score)):
        raise MotFormatError(path, lineno, "non-finite value")
    if w <= 0 or h <= 0:
        raise MotFormatError(path, lineno, f"box size must be positive, got {w}x{h}")
    return MotLine(frame, oid, left, top, w, h, score, extra)


def read_mot(path) -> list[MotLine]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                rows.append(parse_line(text, lineno, path))
    return rows


def write_mot(rows: Iterable[MotLine], path) -> None:
    rows = sorted(rows, key=lambda r: (r.frame, r.id))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(r.format() + "\n")


def parse_detections(path) -> dict[int, list[Detection]]:
    """Frame-sorted detections (center format); scores clipped to [0, 1]."""
    out: dict[int, list[Detection]] = defaultdict(list)
    for r in read_mot(path):
        out[r.frame].append(Detection(r.box(), min(1.0, max(0.0, r.score)), r.frame))
    return dict(sorted(out.items()))


def parse_tracks(path) -> list[tuple[int, int, BBox]]:
    """``(frame, id, box)`` rows of a ground-truth or results file."""
    return [(r.frame, r.id, r.box()) for r in read_mot(path)]


def write_results(trajectories, path) -> None:
    """``trajectories``: ``{(frame, id): (box, score)}`` as produced by the tracker."""
    write_mot((MotLine.from_box(f, i, box, score) for (f, i), (box, score) in trajectories.items()), path)


def write_detections(dets_by_frame: dict[int, list[Detection]], path) -> None:
    rows = []
    for f in sorted(dets_by_frame):
        rows += [MotLine.from_box(f, -1, d.box, d.score) for d in dets_by_frame[f]]
    # stable sort keeps the within-frame order of detections
    write_mot(rows, path)


# ----------------------------------------------------------------- config


@dataclasses.dataclass
class RunConfig:
    tracker: TrackerConfig = dataclasses.field(default_factory=TrackerConfig)
    noise: NoiseModel = dataclasses.field(default_factory=NoiseModel)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    weights: str | None = None
    seed: int = 0
    frame_width: float = 1920.0
    frame_height: float = 1080.0
    vel_gain: float = 20.0
    hidden: int = 64

    def normalizer(self) -> Normalizer:
        return Normalizer(self.frame_width, self.frame_height, self.vel_gain)

    def to_dict(self) -> dict:
        tracker = dataclasses.asdict(self.tracker)
        mat = tracker.pop("mat")
        return {
            "tracker": tracker,
            "mat": mat,
            "noise": dataclasses.asdict(self.noise),
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "seed"},
            "weights": self.weights,
            "seed": self.seed,
            "frame_width": self.frame_width,
            "frame_height": self.frame_height,
            "vel_gain": self.vel_gain,
            "hidden": self.hidden,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class ConfigError(ValueError):
    pass


def _coerce(where: str, default, value):
    """Type-check ``value`` against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if default is None:
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, str))):
            raise ConfigError(f"{where}: unexpected value {value!r}")
        return value
    return value


def _section(cls, data, where: str, skip=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(f"{where}.{k}", getattr(defaults, k), v) for k, v in data.items()}
    return kwargs


def config_from_dict(data: dict, env: dict | None = None) -> RunConfig:
    """Validate a config mapping. Missing keys take defaults; unknown keys
    are an error. ``MEMOSORT_SEED`` in ``env`` overrides ``seed``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    base = RunConfig()
    top = set(base.to_dict())
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    try:
        mat = MatConfig(**_section(MatConfig, data.get("mat", {}), "mat"))
        tracker = TrackerConfig(mat=mat, **_section(TrackerConfig, data.get("tracker", {}), "tracker", skip=("mat",)))
        noise = NoiseModel(**_section(NoiseModel, data.get("noise", {}), "noise"))
        train = TrainConfig(**_section(TrainConfig, data.get("train", {}), "train", skip=("seed",)))
        kwargs = {}
        for key in ("weights", "seed", "frame_width", "frame_height", "vel_gain", "hidden"):
            if key in data:
                kwargs[key] = _coerce(key, getattr(base, key), data[key])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(tracker=tracker, noise=noise, train=train, **kwargs)
    if cfg.weights is not None and not isinstance(cfg.weights, str):
        raise ConfigError("weights: expected a path string")
    if cfg.frame_width <= 0 or cfg.frame_height <= 0 or cfg.hidden < 1:
        raise ConfigError("frame size and hidden width must be positive")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def load_config(path=None, env: dict | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, env)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, env)


# --------------------------------------------------------------- scenarios


def save_scenario(scn: Scenario, folder) -> Path:
    """Write ``gt.txt``, ``det.txt`` and ``meta.json`` into ``folder``."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    write_mot((MotLine.from_box(f, i, b) for f, i, b in scn.truth_rows()), folder / "gt.txt")
    write_detections(scn.detections, folder / "det.txt")
    meta = {
        "name": scn.name,
        "frames": scn.frames,
        "width": scn.width,
        "height": scn.height,
        "seed": scn.seed,
        "regimes": {str(k): v for k, v in sorted(scn.regimes.items())},
        "det_sources": {str(f): ids for f, ids in sorted(scn.det_ids.items()) if ids},
    }
    (folder / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return folder


def _match_sources(truth: np.ndarray, dets: list[Detection], frame: int) -> list[int]:
    """Attribute detections to truth ids by IoU (>= 0.5) when the source is unknown."""
    ids = [-1] * len(dets)
    present = np.flatnonzero(~np.isnan(truth[:, frame - 1, 0]))
    if not dets or not len(present):
        return ids
    cost = 1.0 - iou_matrix(np.array([d.box for d in dets]), truth[present, frame - 1])
    for r, c in solve(cost, 0.5).matches:
        ids[r] = int(present[c]) + 1
    return ids


def load_scenario(folder) -> Scenario:
    """Inverse of :func:`save_scenario`. ``meta.json`` is optional; without it
    the frame count and arena come from the data and detections are tied to
    truth ids by IoU. Truth ids are renumbered 1..N in sorted order; frames
    where a target has no truth row hold NaN."""
    folder = Path(folder)
    meta = {}
    if (folder / "meta.json").exists():
        meta = json.loads((folder / "meta.json").read_text(encoding="utf-8"))
    gt = read_mot(folder / "gt.txt")
    dets = parse_detections(folder / "det.txt") if (folder / "det.txt").exists() else {}
    orig_ids = sorted({r.id for r in gt})
    new_id = {o: k + 1 for k, o in enumerate(orig_ids)}
    last = max([r.frame for r in gt] + list(dets) + [0])
    frames = int(meta.get("frames", last))
    truth = np.full((len(orig_ids), frames, 4), np.nan)
    for r in gt:
        truth[new_id[r.id] - 1, r.frame - 1] = r.box()
    if meta:
        width, height = float(meta["width"]), float(meta["height"])
    else:
        edges = [r.left + r.w for r in gt] + [d.box.x + d.box.w / 2 for ds in dets.values() for d in ds]
        bottoms = [r.top + r.h for r in gt] + [d.box.y + d.box.h / 2 for ds in dets.values() for d in ds]
        width, height = max(edges + [1.0]), max(bottoms + [1.0])
    detections = {f: dets.get(f, []) for f in range(1, frames + 1)}
    sources = meta.get("det_sources")
    det_ids = {}
    for f in range(1, frames + 1):
        if sources is not None:
            det_ids[f] = list(sources.get(str(f), []))
        else:
            det_ids[f] = _match_sources(truth, detections[f], f)
    regimes = {int(k): v for k, v in meta.get("regimes", {}).items()} or {i: "unknown" for i in new_id.values()}
    return Scenario(meta.get("name", folder.name), frames, width, height, int(meta.get("seed", 0)), regimes,
                    truth, detections, det_ids)

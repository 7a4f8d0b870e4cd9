"""Deterministic synthetic tracking scenarios.

Ground-truth trajectories come from a small set of motion regimes, then get
corrupted into detections (Gaussian box noise, random misses, scripted
occlusions, overlap-dependent confidence).

Random draws use numpy's PCG64 (``np.random.default_rng(seed)``) in this
order, so a scenario is reproducible from ``(config, seed)``:

1. per target, in id order: regime (only when not pinned by the config), then
   the regime's parameters in the order they appear in ``_draw_params``;
2. per frame, per target in id order: 4 standard normals (box noise), then
   one uniform (miss test). Both are drawn even if the detection is dropped.

Frames are numbered from 1, like MOT text files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox, Detection, iou_matrix

REGIMES = ("constant_velocity", "circular", "figure_spin", "stop_and_dash", "spin_after_jump")
NON_MARKOVIAN = ("circular", "figure_spin", "stop_and_dash", "spin_after_jump")


@dataclass(frozen=True)
class OcclusionEvent:
    """``target`` produces no detection for frames ``start <= f < end``."""

    target: int
    start: int
    end: int
    occluder: int | None = None


@dataclass(frozen=True)
class TargetSpec:
    """A hand-placed target: regime plus explicit parameter overrides."""

    regime: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    frames: int = 100
    width: float = 1280.0
    height: float = 720.0
    n_targets: int = 4
    regime_mix: tuple[tuple[str, float], ...] = (
        ("constant_velocity", 0.25),
        ("circular", 0.25),
        ("figure_spin", 0.25),
        ("stop_and_dash", 0.25),
    )
    targets: tuple[TargetSpec, ...] | None = None
    noise_sigma: float = 0.02
    miss_rate: float = 0.0
    occlusions: tuple[OcclusionEvent, ...] = ()
    conf_base: float = 0.9
    conf_penalty: float = 0.6
    conf_floor: float = 0.05
    name: str = "scenario"

    def __post_init__(self):
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValueError("miss_rate must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name, _ in self.regime_mix:
            if name not in REGIMES:
                raise ValueError(f"unknown regime {name!r}")
        if self.targets is not None:
            for t in self.targets:
                if t.regime not in REGIMES:
                    raise ValueError(f"unknown regime {t.regime!r}")

    @property
    def target_count(self) -> int:
        return len(self.targets) if self.targets is not None else self.n_targets


@dataclass
class Scenario:
    name: str
    frames: int
    width: float
    height: float
    seed: int
    regimes: dict[int, str]
    truth: np.ndarray  # (targets, frames, 4), center format, row k is target id k + 1
    detections: dict[int, list[Detection]]
    det_ids: dict[int, list[int]]  # source target id of each detection (for training)

    @property
    def ids(self) -> list[int]:
        return list(range(1, len(self.truth) + 1))

    def truth_rows(self):
        """Yield ``(frame, id, BBox)`` for every ground-truth box (gaps skipped)."""
        for f in range(1, self.frames + 1):
            for k in range(len(self.truth)):
                if not np.isnan(self.truth[k, f - 1, 0]):
                    yield f, k + 1, BBox(*self.truth[k, f - 1])

    def frame_detections(self, frame: int) -> list[Detection]:
        return self.detections.get(frame, [])

    def target_detections(self, target_id: int) -> np.ndarray:
        """``(frames, 4)`` detection boxes of one target, NaN where missing."""
        out = np.full((self.frames, 4), np.nan)
        for f, dets in self.detections.items():
            for d, tid in zip(dets, self.det_ids[f]):
                if tid == target_id:
                    out[f - 1] = d.box
        return out


# --------------------------------------------------------------- regimes


def _draw_params(regime: str, rng: np.random.Generator, cfg: ScenarioConfig) -> dict:
    W, H = cfg.width, cfg.height
    p = {
        "x0": rng.uniform(0.2 * W, 0.8 * W),
        "y0": rng.uniform(0.25 * H, 0.75 * H),
        "w0": rng.uniform(40.0, 90.0),
        "aspect": rng.uniform(1.8, 2.8),
    }
    if regime == "constant_velocity":
        speed = rng.uniform(1.0, 6.0)
        ang = rng.uniform(0.0, 2 * math.pi)
        p.update(vx=speed * math.cos(ang), vy=speed * math.sin(ang))
    elif regime == "circular":
        p.update(radius=rng.uniform(40.0, 120.0), period=rng.uniform(40.0, 120.0),
                 phase=rng.uniform(0.0, 2 * math.pi), direction=float(rng.choice([-1.0, 1.0])))
    elif regime == "figure_spin":
        speed = rng.uniform(0.0, 1.5)
        ang = rng.uniform(0.0, 2 * math.pi)
        p.update(vx=speed * math.cos(ang), vy=speed * math.sin(ang), amp=rng.uniform(30.0, 60.0),
                 period=rng.uniform(20.0, 36.0), phase=rng.uniform(0.0, 2 * math.pi),
                 spin=rng.uniform(0.2, 0.35))
    elif regime == "stop_and_dash":
        p.update(seed=int(rng.integers(0, 2**31 - 1)))
    elif regime == "spin_after_jump":
        p.update(vx=float(rng.choice([-1.0, 1.0])) * rng.uniform(0.8, 2.0), period=int(rng.integers(28, 36)),
                 offset=int(rng.integers(0, 28)))
    return p


def _trajectory(regime: str, p: dict, frames: int) -> np.ndarray:
    t = np.arange(frames, dtype=np.float64)
    w0 = p["w0"]
    h0 = w0 * p["aspect"]
    w = np.full(frames, w0)
    h = np.full(frames, h0)
    if regime == "constant_velocity":
        x = p["x0"] + p["vx"] * t
        y = p["y0"] + p["vy"] * t
    elif regime == "circular":
        ang = p["phase"] + p["direction"] * 2 * math.pi * t / p["period"]
        x = p["x0"] + p["radius"] * np.cos(ang)
        y = p["y0"] + p["radius"] * np.sin(ang)
    elif regime == "figure_spin":
        ang = p["phase"] + 2 * math.pi * t / p["period"]
        x = p["x0"] + p["vx"] * t + p["amp"] * np.sin(ang)
        y = p["y0"] + p["vy"] * t + 0.5 * p["amp"] * np.sin(2 * ang)
        # apparent width swells and shrinks in phase with the lateral swing
        w = w0 * (1.0 + p["spin"] * np.sin(ang))
        h = h0 * (1.0 + 0.08 * np.cos(2 * ang))
    elif regime == "stop_and_dash":
        local = np.random.default_rng(p["seed"])
        vx = np.zeros(frames)
        vy = np.zeros(frames)
        f = 0
        moving = bool(local.random() < 0.5)
        while f < frames:
            if moving:
                n = int(local.integers(5, 13))
                speed = local.uniform(8.0, 15.0)
                ang = local.uniform(0.0, 2 * math.pi)
                vx[f : f + n] = speed * math.cos(ang)
                vy[f : f + n] = speed * math.sin(ang)
            else:
                n = int(local.integers(10, 26))
            f += n
            moving = not moving
        x = p["x0"] + np.concatenate([[0.0], np.cumsum(vx)[:-1]])
        y = p["y0"] + np.concatenate([[0.0], np.cumsum(vy)[:-1]])
    elif regime == "spin_after_jump":
        period = p["period"]
        phase = (t + p["offset"]) % period
        x = p["x0"] + p["vx"] * t
        y = np.full(frames, p["y0"])
        jump = (phase >= 8) & (phase < 20)
        # 12-frame parabolic hop, body tucks (shorter box) while airborne
        s = np.where(jump, (phase - 8) / 12.0, 0.0)
        y = y - np.where(jump, 160.0 * s * (1 - s), 0.0)
        h = h * np.where(jump, 1.0 - 0.6 * s * (1 - s), 1.0)
        spin = phase >= 20
        sp = np.where(spin, (phase - 20) / (period - 20), 0.0)
        w = w * np.where(spin, 1.0 + 0.35 * np.sin(2 * math.pi * 2 * sp), 1.0)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return np.stack([x, y, w, h], axis=1)


def _fold(v, lo, hi):
    """Reflect ``v`` into ``[lo, hi]`` (triangle wave)."""
    span = hi - lo
    u = np.mod(v - lo, 2 * span)
    return lo + np.where(u <= span, u, 2 * span - u)


def _confine(track: np.ndarray, width: float, height: float) -> np.ndarray:
    out = track.copy()
    out[:, 2] = np.minimum(out[:, 2], 0.9 * width)
    out[:, 3] = np.minimum(out[:, 3], 0.9 * height)
    out[:, 0] = _fold(out[:, 0], out[:, 2] / 2, width - out[:, 2] / 2)
    out[:, 1] = _fold(out[:, 1], out[:, 3] / 2, height - out[:, 3] / 2)
    return out


# ------------------------------------------------------------ detections


def _occluded_fraction(truth_frame: np.ndarray) -> np.ndarray:
    """Share of each box covered by boxes whose bottom edge is lower (nearer)."""
    n = len(truth_frame)
    frac = np.zeros(n)
    if n < 2:
        return frac
    x, y, w, h = truth_frame.T
    bottom = y + h / 2
    for i in range(n):
        covered = 0.0
        for j in range(n):
            if j == i or bottom[j] <= bottom[i]:
                continue
            ox = max(0.0, min(x[i] + w[i] / 2, x[j] + w[j] / 2) - max(x[i] - w[i] / 2, x[j] - w[j] / 2))
            oy = max(0.0, min(y[i] + h[i] / 2, y[j] + h[j] / 2) - max(y[i] - h[i] / 2, y[j] - h[j] / 2))
            covered += ox * oy
        frac[i] = min(1.0, covered / (w[i] * h[i]))
    return frac


def generate(cfg: ScenarioConfig, seed: int = 0) -> Scenario:
    rng = np.random.default_rng(seed)
    n = cfg.target_count
    regimes: dict[int, str] = {}
    truth = np.zeros((n, cfg.frames, 4))
    names = [r for r, _ in cfg.regime_mix]
    weights = np.array([wt for _, wt in cfg.regime_mix], dtype=np.float64)
    for k in range(n):
        if cfg.targets is not None:
            spec = cfg.targets[k]
            regime = spec.regime
            params = _draw_params(regime, rng, cfg)
            params.update(spec.params)
        else:
            regime = names[int(rng.choice(len(names), p=weights / weights.sum()))]
            params = _draw_params(regime, rng, cfg)
        regimes[k + 1] = regime
        truth[k] = _confine(_trajectory(regime, params, cfg.frames), cfg.width, cfg.height)

    hidden = np.zeros((n, cfg.frames), dtype=bool)
    for ev in cfg.occlusions:
        hidden[ev.target - 1, max(ev.start - 1, 0) : max(ev.end - 1, 0)] = True

    detections: dict[int, list[Detection]] = {}
    det_ids: dict[int, list[int]] = {}
    for f in range(cfg.frames):
        frame_truth = truth[:, f]
        occ = _occluded_fraction(frame_truth)
        dets, ids = [], []
        for k in range(n):
            noise = rng.standard_normal(4)
            u = rng.random()
            if hidden[k, f] or u < cfg.miss_rate:
                continue
            x, y, w, h = frame_truth[k]
            box = np.array([x, y, w, h]) + cfg.noise_sigma * noise * np.array([w, h, w, h])
            box[2:] = np.maximum(box[2:], 1.0)
            score = min(1.0, max(cfg.conf_floor, cfg.conf_base - cfg.conf_penalty * occ[k]))
            dets.append(Detection(BBox(*box), float(score), f + 1))
            ids.append(k + 1)
        detections[f + 1] = dets
        det_ids[f + 1] = ids
    return Scenario(cfg.name, cfg.frames, cfg.width, cfg.height, seed, regimes, truth, detections, det_ids)


def max_pair_iou(scn: Scenario) -> float:
    best = 0.0
    for f in range(scn.frames):
        m = iou_matrix(scn.truth[:, f], scn.truth[:, f])
        np.fill_diagonal(m, 0.0)
        best = max(best, float(m.max()) if m.size else 0.0)
    return best


# --------------------------------------------------------- canonical suite


def _crossing_config(name: str, gap: int, frames: int = 80, noise: float = 0.03) -> ScenarioConfig:
    """Two walkers of different build pass each other; the farther one is
    hidden for ``gap`` frames around the crossing."""
    mid = frames // 2
    near = TargetSpec("constant_velocity", {"x0": 250.0, "y0": 380.0, "w0": 70.0, "aspect": 2.6,
                                            "vx": 10.0, "vy": 0.0})
    far = TargetSpec("constant_velocity", {"x0": 250.0 + 10.0 * mid + 4.0 * mid, "y0": 370.0, "w0": 62.0,
                                           "aspect": 2.4, "vx": -4.0, "vy": 0.0})
    start = mid - gap // 2
    return ScenarioConfig(
        frames=frames, targets=(near, far), noise_sigma=noise,
        occlusions=(OcclusionEvent(target=2, start=start, end=start + gap, occluder=1),) if gap else (),
        name=name,
    )


def _spin_after_jump_config() -> ScenarioConfig:
    frames = 120
    a = TargetSpec("spin_after_jump", {"x0": 300.0, "y0": 420.0, "w0": 60.0, "aspect": 2.5,
                                       "vx": 3.0, "period": 32, "offset": 0})
    b = TargetSpec("spin_after_jump", {"x0": 300.0 + 6.0 * 60, "y0": 424.0, "w0": 58.0, "aspect": 2.4,
                                       "vx": -3.0, "period": 32, "offset": 4})
    return ScenarioConfig(
        frames=frames, targets=(a, b), noise_sigma=0.03,
        occlusions=(OcclusionEvent(target=2, start=57, end=65, occluder=1),),
        name="spin_after_jump",
    )


SUITE_SEEDS = {"crossing": 11, "occlusion_5": 12, "occlusion_10": 13, "occlusion_20": 14, "spin_after_jump": 15}


def occlusion_suite() -> list[Scenario]:
    """The fixed occlusion benchmark set, always generated from the same seeds."""
    configs = [
        _crossing_config("crossing", gap=0),
        _crossing_config("occlusion_5", gap=5),
        _crossing_config("occlusion_10", gap=10),
        _crossing_config("occlusion_20", gap=20, frames=100),
        _spin_after_jump_config(),
    ]
    return [generate(c, SUITE_SEEDS[c.name]) for c in configs]


def spin_config(frames: int = 100, n_targets: int = 4, noise: float = 0.02, name: str = "figure_spin") -> ScenarioConfig:
    return ScenarioConfig(frames=frames, n_targets=n_targets, regime_mix=(("figure_spin", 1.0),),
                          noise_sigma=noise, name=name)

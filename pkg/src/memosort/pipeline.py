"""Per-frame tracker: confidence cascade, two-stage association, lifecycle.

Each frame:

1. every live track is predicted with the memory-assisted filter;
2. detections with score >= ``tau_high`` are matched against all live tracks
   on ``1 - [(1 - lam) * MoIoU + lam * appearance]`` where each track picks
   its own ``(p, q)`` from its filtered velocity;
3. detections with ``tau_low <= score < tau_high`` are matched against the
   tracks left over, on ``1 - IoU``;
4. matched tracks are updated, the rest coast; leftover high detections open
   tentative tracks; tracks idle longer than ``max_age`` are dropped.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .assign import solve
from .geometry import BBox, Detection, MatConfig, iou_matrix, mat_params, mo_iou_matrix
from .mekf import MIN_SIZE, MeKF, Memory, TrackState

log = logging.getLogger(__name__)

AppearanceHook = Callable[["Track", Detection], float]


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass(frozen=True)
class TrackerConfig:
    tau_high: float = 0.6
    tau_low: float = 0.1
    mat: MatConfig = field(default_factory=MatConfig)
    gate_high: float = 0.85
    gate_low: float = 0.5
    min_hits: int = 3
    max_age: int = 30
    appearance_weight: float = 0.0
    use_mo_iou: bool = True

    def __post_init__(self):
        if not (0.0 <= self.tau_low <= self.tau_high <= 1.0):
            raise ValueError(f"need 0 <= tau_low <= tau_high <= 1, got {self.tau_low}, {self.tau_high}")
        if not (0.0 <= self.appearance_weight <= 1.0):
            raise ValueError("appearance_weight must lie in [0, 1]")
        if self.min_hits < 1 or self.max_age < 0:
            raise ValueError("min_hits must be >= 1 and max_age >= 0")


@dataclass
class Track:
    id: int
    state: TrackState
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    age_since_update: int = 0
    score: float = 0.0

    def box(self) -> BBox:
        return self.state.box()


class OutOfOrderFrameError(ValueError):
    pass


class Tracker:
    def __init__(self, config: TrackerConfig | None = None, kf: MeKF | None = None):
        self.config = config or TrackerConfig()
        self.kf = kf or MeKF()
        self.tracks: list[Track] = []
        self.frame: int | None = None
        self._next_id = 1
        self._hook: AppearanceHook | None = None
        self.diagnostics: list[str] = []

    def register_appearance_hook(self, hook: AppearanceHook | None) -> None:
        """Plug a ``(track, detection) -> similarity in [0, 1]`` function into
        the first association stage (weighted by ``appearance_weight``)."""
        self._hook = hook

    # ------------------------------------------------------------------

    def _appearance(self, tracks: list[Track], dets: list[Detection]) -> np.ndarray:
        sim = np.zeros((len(tracks), len(dets)))
        for i, t in enumerate(tracks):
            for j, d in enumerate(dets):
                v = float(self._hook(t, d))
                if not (0.0 <= v <= 1.0):
                    msg = f"appearance similarity {v} outside [0, 1] clamped"
                    log.warning(msg)
                    self.diagnostics.append(msg)
                    v = min(1.0, max(0.0, v)) if np.isfinite(v) else 0.0
                sim[i, j] = v
        return sim

    def _stage1_cost(self, tracks, pred_boxes, prev_means, dets):
        det_boxes = np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4)
        if self.config.use_mo_iou:
            wh = np.maximum(prev_means[:, 2:4], MIN_SIZE)
            p, q = mat_params(prev_means[:, 4], prev_means[:, 5], prev_means[:, 7], wh[:, 0], wh[:, 1],
                              self.config.mat)
            sim = mo_iou_matrix(pred_boxes, det_boxes, p, q)
        else:
            sim = iou_matrix(pred_boxes, det_boxes)
        lam = self.config.appearance_weight
        if lam > 0 and self._hook is not None:
            sim = (1.0 - lam) * sim + lam * self._appearance(tracks, dets)
        elif lam > 0:
            sim = (1.0 - lam) * sim
        return 1.0 - sim

    def step(self, frame_dets: Iterable[Detection], frame: int | None = None):
        """Advance one frame. Returns ``[(track_id, BBox, score)]`` for
        confirmed tracks updated this frame."""
        dets = list(frame_dets)
        frames = {d.frame for d in dets}
        if len(frames) > 1:
            raise ValueError(f"detections from several frames in one step: {sorted(frames)}")
        if frame is None:
            frame = frames.pop() if frames else (self.frame + 1 if self.frame is not None else 1)
        elif frames and frames != {frame}:
            raise ValueError(f"detections belong to frame {frames.pop()}, not {frame}")
        if self.frame is not None and frame <= self.frame:
            raise OutOfOrderFrameError(f"frame {frame} does not follow frame {self.frame}")
        self.frame = frame
        cfg = self.config

        high = [d for d in dets if d.score >= cfg.tau_high]
        low = [d for d in dets if cfg.tau_low <= d.score < cfg.tau_high]

        tracks = self.tracks
        n = len(tracks)
        kf = self.kf
        if n:
            mean = np.stack([t.state.mean for t in tracks])
            cov = np.stack([t.state.cov for t in tracks])
            h = np.stack([t.state.memory.h for t in tracks])
            c = np.stack([t.state.memory.c for t in tracks])
            pred_mean, pred_cov, _ = kf.predict_batch(mean, cov, h)
            pred_boxes = pred_mean[:, :4].copy()
            pred_boxes[:, 2:4] = np.maximum(pred_boxes[:, 2:4], MIN_SIZE)
        else:
            mean = pred_mean = np.zeros((0, 8))
            pred_boxes = np.zeros((0, 4))

        det_of_track: dict[int, Detection] = {}
        remaining = list(range(n))
        unmatched_high = list(range(len(high)))
        if n and high:
            cost = self._stage1_cost(tracks, pred_boxes, mean, high)
            res = solve(cost, cfg.gate_high)
            for r, col in res.matches:
                det_of_track[r] = high[col]
            remaining = res.unmatched_rows
            unmatched_high = res.unmatched_cols
        if remaining and low:
            cost = 1.0 - iou_matrix(pred_boxes[remaining], np.array([d.box for d in low]))
            res = solve(cost, cfg.gate_low)
            for r, col in res.matches:
                det_of_track[remaining[r]] = low[col]

        if n:
            z = np.zeros((n, 4))
            mask = np.zeros(n)
            for r, d in det_of_track.items():
                z[r] = d.box
                mask[r] = 1.0
            new_mean, new_cov, new_h, new_c = kf.update_batch(pred_mean, pred_cov, h, c, z, mask)
            for r, t in enumerate(tracks):
                t.state = TrackState(new_mean[r], new_cov[r], Memory(new_h[r], new_c[r]))
                if r in det_of_track:
                    t.hits += 1
                    t.age_since_update = 0
                    t.score = det_of_track[r].score
                    if t.status is TrackStatus.LOST or (
                        t.status is TrackStatus.TENTATIVE and t.hits >= cfg.min_hits
                    ):
                        t.status = TrackStatus.CONFIRMED
                else:
                    t.hits = 0
                    t.age_since_update += 1
                    if t.status is TrackStatus.CONFIRMED:
                        t.status = TrackStatus.LOST

        kept = []
        for t in tracks:
            if t.status is TrackStatus.TENTATIVE and t.age_since_update > 0:
                continue
            if t.age_since_update > cfg.max_age:
                continue
            kept.append(t)

        born = [high[j] for j in unmatched_high]
        if born:
            b_mean, b_cov, b_h, b_c = kf.initiate_batch(np.array([d.box for d in born]))
            for k, d in enumerate(born):
                t = Track(self._next_id, TrackState(b_mean[k], b_cov[k], Memory(b_h[k], b_c[k])),
                          score=d.score)
                self._next_id += 1
                if cfg.min_hits <= 1:
                    t.status = TrackStatus.CONFIRMED
                kept.append(t)
        self.tracks = kept

        out = []
        for t in kept:
            if t.status is TrackStatus.CONFIRMED and t.age_since_update == 0:
                out.append((t.id, t.box(), t.score))
        out.sort(key=lambda r: r[0])
        return out


def run_sequence(dets_by_frame: dict[int, list[Detection]], config: TrackerConfig | None = None,
                 kf: MeKF | None = None, frames: Iterable[int] | None = None,
                 hook: AppearanceHook | None = None) -> dict[tuple[int, int], tuple[BBox, float]]:
    """Track a whole sequence. Returns ``{(frame, id): (box, score)}``.

    ``frames`` defaults to every frame from 1 to the last frame with
    detections, so empty frames still advance the tracks.
    """
    tracker = Tracker(config, kf)
    if hook is not None:
        tracker.register_appearance_hook(hook)
    if frames is None:
        last = max(dets_by_frame) if dets_by_frame else 0
        frames = range(1, last + 1)
    out: dict[tuple[int, int], tuple[BBox, float]] = {}
    for f in frames:
        for tid, box, score in tracker.step(dets_by_frame.get(f, []), frame=f):
            out[(f, tid)] = (box, score)
    return out

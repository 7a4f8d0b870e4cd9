"""Center-format boxes and the IoU family used for association.

All metric functions accept anything array-like with a trailing axis of
length 4 (``[x, y, w, h]``, center format) and broadcast over the leading
axes, so the same code serves scalar checks and full cost matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class _BoxFields(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class BBox(_BoxFields):
    """Axis-aligned box ``[x, y, w, h]`` with ``(x, y)`` the center."""

    __slots__ = ()

    def __new__(cls, x, y, w, h):
        x, y, w, h = float(x), float(y), float(w), float(h)
        if not all(math.isfinite(v) for v in (x, y, w, h)):
            raise ValueError(f"non-finite box {(x, y, w, h)}")
        if w <= 0 or h <= 0:
            raise ValueError(f"box must have positive extent, got w={w}, h={h}")
        return super().__new__(cls, x, y, w, h)

    @classmethod
    def from_tlwh(cls, left, top, w, h) -> "BBox":
        return cls(left + w / 2.0, top + h / 2.0, w, h)

    def to_tlwh(self) -> tuple[float, float, float, float]:
        return (self.x - self.w / 2.0, self.y - self.h / 2.0, self.w, self.h)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class MatConfig:
    """Thresholds and levels for the motion-adaptive choice of (p, q).

    Defaults are the DanceTrack values. ``sportsmot()`` gives the other
    published threshold pair.
    """

    m_slow: float = 2.0
    m_fast: float = 1.0
    n_slow: float = 0.5
    n_fast: float = 0.6
    theta_center: float = 0.0406
    theta_height: float = 0.0090

    def __post_init__(self):
        for name in ("m_slow", "m_fast", "n_slow", "n_fast", "theta_center", "theta_height"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"MatConfig.{name} must be finite and >= 0, got {v}")

    @classmethod
    def dancetrack(cls) -> "MatConfig":
        return cls()

    @classmethod
    def sportsmot(cls) -> "MatConfig":
        return cls(theta_center=0.1172, theta_height=0.0062)


def _split(boxes):
    a = np.asarray(boxes, dtype=np.float64)
    return a[..., 0], a[..., 1], a[..., 2], a[..., 3]


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def _overlap_1d(c1, s1, c2, s2):
    # same as min(right edges) - max(left edges), but exact and symmetric
    # for coincident intervals (no edge cancellation)
    reach = (s1 + s2) / 2.0 - np.abs(c1 - c2)
    return np.maximum(np.minimum(np.minimum(s1, s2), reach), 0.0)


def _iou(a, b):
    ax, ay, aw, ah = _split(a)
    bx, by, bw, bh = _split(b)
    inter = _overlap_1d(ax, aw, bx, bw) * _overlap_1d(ay, ah, by, bh)
    union = aw * ah + bw * bh - inter
    return inter / union


def iou(a, b):
    """Intersection over union; broadcasts over leading axes."""
    return _scalar_or_array(_iou(a, b))


def expand(b, p):
    """Scale width and height by ``2p + 1`` about the same center."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr < 0) or not np.all(np.isfinite(p_arr)):
        raise ValueError(f"expansion level must be finite and >= 0, got {p}")
    arr = np.asarray(b, dtype=np.float64)
    scale = 2.0 * p_arr + 1.0
    out = np.stack(
        np.broadcast_arrays(arr[..., 0], arr[..., 1], arr[..., 2] * scale, arr[..., 3] * scale),
        axis=-1,
    )
    if isinstance(b, BBox) and out.ndim == 1:
        return BBox(*out)
    return out


def eiou(a, b, p):
    """IoU of both boxes after expansion by level ``p``."""
    return _scalar_or_array(_iou(expand(a, p), expand(b, p)))


def _hiou(a, b, q):
    _, ay, _, ah = _split(a)
    _, by, _, bh = _split(b)
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise ValueError(f"height exponent must be >= 0, got {q}")
    inter = _overlap_1d(ay, ah, by, bh)
    base = inter / (ah + bh - inter)
    # numpy already gives 0.0 ** 0 == 1.0, which is the convention we want
    return np.power(base, q)


def hiou(a, b, q):
    """Vertical 1-D IoU raised to the power ``q`` (``q = 0`` ignores height)."""
    return _scalar_or_array(_hiou(a, b, q))


def mo_iou(a, b, p, q):
    """Motion-adaptive IoU: expansion IoU times height IoU."""
    return _scalar_or_array(_iou(expand(a, p), expand(b, p)) * _hiou(a, b, q))


def mat_params(vx, vy, vh, w, h, cfg: MatConfig):
    """Select ``(p, q)`` from normalized center and height speeds.

    Velocities are per-frame; ``w`` and ``h`` are the box extents the speeds
    are normalized by. Works elementwise on arrays.
    """
    vx, vy, vh, w, h = (np.asarray(v, dtype=np.float64) for v in (vx, vy, vh, w, h))
    if np.any(w <= 0) or np.any(h <= 0):
        raise ValueError("box extents must be positive")
    center_speed = np.sqrt((vx / w) ** 2 + (vy / h) ** 2)
    height_speed = np.abs(vh / h)
    p = np.where(center_speed <= cfg.theta_center, cfg.m_slow, cfg.m_fast)
    q = np.where(height_speed <= cfg.theta_height, cfg.n_slow, cfg.n_fast)
    return _scalar_or_array(p), _scalar_or_array(q)


def iou_matrix(rows, cols):
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    cols = np.asarray(cols, dtype=np.float64).reshape(-1, 4)
    return np.asarray(_iou(rows[:, None, :], cols[None, :, :])).reshape(len(rows), len(cols))


def mo_iou_matrix(rows, cols, p, q):
    """Mo-IoU between every row box and column box with per-row ``(p, q)``."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    cols = np.asarray(cols, dtype=np.float64).reshape(-1, 4)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (len(rows),))[:, None]
    q = np.broadcast_to(np.asarray(q, dtype=np.float64), (len(rows),))[:, None]
    r, c = rows[:, None, :], cols[None, :, :]
    out = _iou(expand(r, p), expand(c, p)) * _hiou(r, c, q)
    return np.asarray(out).reshape(len(rows), len(cols))


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    frame: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")

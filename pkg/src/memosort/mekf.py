"""Memory-assisted Kalman filter.

A constant-velocity Kalman filter over ``[x, y, w, h, vx, vy, vw, vh]`` whose
prediction and update steps receive additive corrections from small neural
networks driven by a recurrent memory of the track's own history:

* memory gate:      (h, c) <- LSTM(normalized filtered state, (h, c))
* prediction gate:  mean' = F mean + d_f(h),  cov' = F cov F^T + u_f(h) u_f(h)^T + Q
* update gate:      gain = cov' H^T (H cov' H^T + R + u_h u_h^T)^-1,
                    innovation = z - H mean' - d_h(mean')

With every network output at zero (the default initialization) the filter is
exactly a plain Kalman filter. A network emitting a non-finite value is
replaced by zero compensation for that step, so the plain filter is always
the fallback.

The ``*_forward`` / ``*_backward`` functions are batched over axis 0 and keep
the caches needed for backpropagation through time; :class:`MeKF` wraps them
for single tracks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .geometry import BBox
from .nnet import GateWeights, lstm_backward, lstm_step, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

STATE_DIM = 8
MEAS_DIM = 4

F = np.block([[np.eye(4), np.eye(4)], [np.zeros((4, 4)), np.eye(4)]])
H = np.hstack([np.eye(4), np.zeros((4, 4))])

# indices of Q / R diagonal entries that scale with width (else height)
_WIDTH_IDX8 = np.array([0, 2, 4, 6])
_HEIGHT_IDX8 = np.array([1, 3, 5, 7])
_WIDTH_IDX4 = np.array([0, 2])
_HEIGHT_IDX4 = np.array([1, 3])
MIN_SIZE = 1.0


@dataclass(frozen=True)
class NoiseModel:
    """Scale-proportional process / measurement noise (per-frame std as a
    fraction of box width or height)."""

    sigma_pos: float = 0.05
    sigma_vel: float = 0.00625
    sigma_meas: float = 0.05
    init_vel_factor: float = 10.0

    def _sig8(self):
        return np.array([self.sigma_pos] * 4 + [self.sigma_vel] * 4)

    def q_diag(self, mean):
        """Diagonal of Q for each row of ``mean`` (uses the row's w, h)."""
        wh = _wh8(mean)
        return (self._sig8() * wh) ** 2

    def q_diag_grad(self, mean, dq):
        """Pull a gradient on ``q_diag(mean)`` back onto ``mean``."""
        coeff = 2.0 * self._sig8() ** 2 * _wh8(mean) * dq
        out = np.zeros_like(mean)
        out[:, 2] = coeff[:, _WIDTH_IDX8].sum(axis=1)
        out[:, 3] = coeff[:, _HEIGHT_IDX8].sum(axis=1)
        return out

    def r_diag(self, mean):
        wh = _wh8(mean)[:, :4]
        return (self.sigma_meas * wh) ** 2

    def r_diag_grad(self, mean, dr):
        coeff = 2.0 * self.sigma_meas**2 * _wh8(mean)[:, :4] * dr
        out = np.zeros_like(mean)
        out[:, 2] = coeff[:, _WIDTH_IDX4].sum(axis=1)
        out[:, 3] = coeff[:, _HEIGHT_IDX4].sum(axis=1)
        return out

    def initial_cov(self, box):
        w, h = box[2], box[3]
        pos = self.sigma_pos * np.array([w, h, w, h])
        std = np.concatenate([pos, self.init_vel_factor * pos])
        return np.diag(std**2)


def _wh8(mean):
    w = mean[:, 2:3]
    h = mean[:, 3:4]
    return np.hstack([w, h, w, h, w, h, w, h])


@dataclass(frozen=True)
class Normalizer:
    """Maps pixel states to the unit-frame coordinates the networks see.

    Velocity components are multiplied by ``vel_gain`` on the way in so that
    per-frame motion is not drowned out by absolute position.
    """

    frame_w: float = 1920.0
    frame_h: float = 1080.0
    vel_gain: float = 20.0

    def scale8(self, n: int = 1):
        s = np.array([self.frame_w, self.frame_h] * 4)
        return np.broadcast_to(s, (n, STATE_DIM)).copy()

    def gain8(self):
        return np.array([1.0] * 4 + [self.vel_gain] * 4)


def _bdiag(d):
    out = np.zeros(d.shape + (d.shape[-1],))
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


def _diag(m):
    return np.diagonal(m, axis1=-2, axis2=-1)


def _finite_rows(a):
    return np.all(np.isfinite(a), axis=1)


def _guarded_mlp(mlp, x, diagnostics, label):
    out, cache = mlp_forward(mlp, x)
    ok = _finite_rows(out)
    if not ok.all():
        msg = f"{label}: non-finite network output in {int((~ok).sum())} row(s); using zero compensation"
        log.warning(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
        out = np.where(ok[:, None], out, 0.0)
    return out, cache, ok


# ---------------------------------------------------------- memory gate


def mug_forward(weights: GateWeights, norm_scale, gain, mean, h, c):
    x = mean / norm_scale * gain
    h_new, c_new, cache = lstm_step(weights.lstm, x, h, c)
    return h_new, c_new, (cache, norm_scale, gain)


def mug_backward(weights: GateWeights, dh_new, dc_new, cache):
    lcache, norm_scale, gain = cache
    dx, dh, dc, grads = lstm_backward(weights.lstm, dh_new, dc_new, lcache)
    return dx * gain / norm_scale, dh, dc, grads


# ------------------------------------------------------ prediction gate


def spg_forward(weights: GateWeights, noise: NoiseModel, norm_scale, mean, cov, h, diagnostics=None):
    """Compensated prediction. Returns ``(mean', cov', d_f, cache)``."""
    a1, c1, ok1 = _guarded_mlp(weights.mlps[0], h, diagnostics, "state offset head")
    a2, c2, ok2 = _guarded_mlp(weights.mlps[1], h, diagnostics, "state covariance head")
    ok = ok1 & ok2
    a1 = np.where(ok[:, None], a1, 0.0)
    a2 = np.where(ok[:, None], a2, 0.0)
    d_f = norm_scale * a1
    u_f = norm_scale * a2
    pred_mean = mean @ F.T + d_f
    pred_cov = F @ cov @ F.T + linalg.outer(u_f) + _bdiag(noise.q_diag(mean))
    cache = (mean, u_f, c1, c2, ok, norm_scale)
    return pred_mean, pred_cov, d_f, cache


def spg_backward(weights: GateWeights, noise: NoiseModel, d_pred_mean, d_pred_cov, cache):
    """Returns ``(d_mean, d_cov, d_h, (mlp1_grads, mlp2_grads))``."""
    mean, u_f, c1, c2, ok, norm_scale = cache
    d_cov = F.T @ d_pred_cov @ F
    d_mean = d_pred_mean @ F + noise.q_diag_grad(mean, _diag(d_pred_cov))
    okc = ok[:, None]
    da1 = np.where(okc, d_pred_mean * norm_scale, 0.0)
    du = np.einsum("bij,bj->bi", d_pred_cov + np.swapaxes(d_pred_cov, 1, 2), u_f)
    da2 = np.where(okc, du * norm_scale, 0.0)
    dh1, g1 = mlp_backward(weights.mlps[0], da1, c1)
    dh2, g2 = mlp_backward(weights.mlps[1], da2, c2)
    return d_mean, d_cov, dh1 + dh2, (g1, g2)


# ---------------------------------------------------------- update gate


def _safe_inverse(s, mask, diagnostics):
    try:
        return linalg.spd_inverse(s), mask
    except linalg.NotPositiveDefiniteError:
        mask = mask.copy()
        inv = np.zeros_like(s)
        for k in range(len(s)):
            try:
                inv[k] = linalg.spd_inverse(s[k])
            except linalg.NotPositiveDefiniteError:
                inv[k] = np.eye(s.shape[-1])
                if mask[k]:
                    msg = "innovation covariance not positive definite; update skipped"
                    log.warning(msg)
                    if diagnostics is not None:
                        diagnostics.append(msg)
                mask[k] = 0.0
        return inv, mask


def sug_forward(weights: GateWeights, noise: NoiseModel, norm_scale, gain, pred_mean, pred_cov, z, mask,
                diagnostics=None):
    """Compensated update for rows with ``mask == 1``; other rows keep the
    prediction. Returns ``(mean, cov, innovation, cache)``.
    """
    mask = np.asarray(mask, dtype=np.float64)
    z = np.where(mask[:, None] > 0, z, 0.0)
    scale4 = norm_scale[:, :4]
    x_in = pred_mean / norm_scale * gain
    a3, c3, ok3 = _guarded_mlp(weights.mlps[2], x_in, diagnostics, "measurement offset head")
    a4, c4, ok4 = _guarded_mlp(weights.mlps[3], x_in, diagnostics, "measurement covariance head")
    ok = ok3 & ok4
    a3 = np.where(ok[:, None], a3, 0.0)
    a4 = np.where(ok[:, None], a4, 0.0)
    d_h = scale4 * a3
    u_h = scale4 * a4
    s = pred_cov[:, :4, :4] + _bdiag(noise.r_diag(pred_mean)) + linalg.outer(u_h)
    s_inv, mask = _safe_inverse(s, mask, diagnostics)
    pht = pred_cov[:, :, :4]
    gain_k = pht @ s_inv
    innov = z - pred_mean[:, :4] - d_h
    m = mask[:, None]
    mean = pred_mean + m * np.einsum("bij,bj->bi", gain_k, innov)
    hp = pred_cov[:, :4, :]
    cov = pred_cov - m[:, :, None] * (gain_k @ hp)
    cov = linalg.symmetrize(cov)
    clamped = mean[:, 2:4] < MIN_SIZE
    mean[:, 2:4] = np.maximum(mean[:, 2:4], MIN_SIZE)
    cache = (pred_mean, pred_cov, u_h, s_inv, gain_k, innov, mask, clamped, c3, c4, ok, norm_scale, gain)
    return mean, cov, innov, cache


def sug_backward(weights: GateWeights, noise: NoiseModel, d_mean, d_cov, d_innov, cache):
    """Returns ``(d_pred_mean, d_pred_cov, (mlp3_grads, mlp4_grads))``.

    ``d_innov`` is any loss gradient taken directly on the innovation.
    """
    pred_mean, pred_cov, u_h, s_inv, gain_k, innov, mask, clamped, c3, c4, ok, norm_scale, gain = cache
    m = mask[:, None]
    d_mean = d_mean.copy()
    d_mean[:, 2:4] = np.where(clamped, 0.0, d_mean[:, 2:4])
    d_cov = linalg.symmetrize(d_cov)

    d_pc = d_cov.copy()
    d_g = -m[:, :, None] * d_cov
    hp = pred_cov[:, :4, :]
    d_k = d_g @ np.swapaxes(hp, 1, 2)
    d_pc[:, :4, :] += np.swapaxes(gain_k, 1, 2) @ d_g

    d_pm = d_mean.copy()
    d_k += m[:, :, None] * d_mean[:, :, None] * innov[:, None, :]
    d_in = m * np.einsum("bji,bj->bi", gain_k, d_mean) + d_innov
    d_pm[:, :4] -= d_in
    d_dh = -d_in

    pht = pred_cov[:, :, :4]
    d_pht = d_k @ np.swapaxes(s_inv, 1, 2)
    d_sinv = linalg.symmetrize(np.swapaxes(pht, 1, 2) @ d_k)
    d_s = -np.swapaxes(s_inv, 1, 2) @ d_sinv @ np.swapaxes(s_inv, 1, 2)
    d_pc[:, :, :4] += d_pht
    d_pc[:, :4, :4] += d_s
    d_pm += noise.r_diag_grad(pred_mean, _diag(d_s))

    scale4 = norm_scale[:, :4]
    okc = ok[:, None]
    du = np.einsum("bij,bj->bi", d_s + np.swapaxes(d_s, 1, 2), u_h)
    da4 = np.where(okc, du * scale4, 0.0)
    da3 = np.where(okc, d_dh * scale4, 0.0)
    dx3, g3 = mlp_backward(weights.mlps[2], da3, c3)
    dx4, g4 = mlp_backward(weights.mlps[3], da4, c4)
    d_pm += (dx3 + dx4) * gain / norm_scale
    return d_pm, d_pc, (g3, g4)


# ------------------------------------------------------------ per-track API


@dataclass
class Memory:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "Memory":
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass
class TrackState:
    mean: np.ndarray
    cov: np.ndarray
    memory: Memory

    def box(self) -> BBox:
        x, y, w, h = self.mean[:4]
        return BBox(x, y, max(w, MIN_SIZE), max(h, MIN_SIZE))


@dataclass
class Prediction:
    mean: np.ndarray
    cov: np.ndarray
    offset: np.ndarray
    memory: Memory


class MeKF:
    """Single-track (and batched) front end to the gate functions.

    ``weights=None`` builds zero-output gates, i.e. a plain Kalman filter.
    """

    def __init__(self, weights: GateWeights | None = None, noise: NoiseModel | None = None,
                 normalizer: Normalizer | None = None):
        self.weights = weights if weights is not None else GateWeights.init(0)
        self.noise = noise or NoiseModel()
        self.normalizer = normalizer or Normalizer()
        self.diagnostics: list[str] = []

    @property
    def hidden(self) -> int:
        return self.weights.lstm.hidden

    def _scale(self, n):
        return self.normalizer.scale8(n)

    # -- batched -----------------------------------------------------------

    def initiate_batch(self, boxes):
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        n = len(boxes)
        mean = np.hstack([boxes, np.zeros((n, 4))])
        cov = np.stack([self.noise.initial_cov(b) for b in boxes]) if n else np.zeros((0, 8, 8))
        h0 = np.zeros((n, self.hidden))
        h, c, _ = mug_forward(self.weights, self._scale(n), self.normalizer.gain8(), mean, h0, h0)
        return mean, cov, h, c

    def predict_batch(self, mean, cov, h):
        pm, pc, off, _ = spg_forward(self.weights, self.noise, self._scale(len(mean)), mean, cov, h,
                                     self.diagnostics)
        return pm, pc, off

    def update_batch(self, pred_mean, pred_cov, h, c, z, mask):
        """Update (mask 1) or coast (mask 0) every row, then advance memory."""
        n = len(pred_mean)
        scale = self._scale(n)
        gain = self.normalizer.gain8()
        mean, cov, _, _ = sug_forward(self.weights, self.noise, scale, gain, pred_mean, pred_cov, z, mask,
                                      self.diagnostics)
        h, c, _ = mug_forward(self.weights, scale, gain, mean, h, c)
        return mean, cov, h, c

    # -- single track ------------------------------------------------------

    def initiate(self, box) -> TrackState:
        mean, cov, h, c = self.initiate_batch(np.asarray(box, dtype=np.float64)[None])
        return TrackState(mean[0], cov[0], Memory(h[0], c[0]))

    def mug_update(self, memory: Memory, mean) -> Memory:
        h, c, _ = mug_forward(self.weights, self._scale(1), self.normalizer.gain8(),
                              np.asarray(mean, dtype=np.float64)[None], memory.h[None], memory.c[None])
        return Memory(h[0], c[0])

    def spg_predict(self, state: TrackState) -> Prediction:
        pm, pc, off = self.predict_batch(state.mean[None], state.cov[None], state.memory.h[None])
        return Prediction(pm[0], pc[0], off[0], state.memory)

    def sug_update(self, pred: Prediction, det) -> TrackState:
        z = np.asarray(det, dtype=np.float64)[None, :4]
        mean, cov, h, c = self.update_batch(pred.mean[None], pred.cov[None], pred.memory.h[None],
                                            pred.memory.c[None], z, np.ones(1))
        return TrackState(mean[0], cov[0], Memory(h[0], c[0]))

    def predict_only_step(self, state: TrackState) -> TrackState:
        pred = self.spg_predict(state)
        mean, cov, h, c = self.update_batch(pred.mean[None], pred.cov[None], pred.memory.h[None],
                                            pred.memory.c[None], np.zeros((1, 4)), np.zeros(1))
        return TrackState(mean[0], cov[0], Memory(h[0], c[0]))

    def step(self, state: TrackState, det=None) -> TrackState:
        if det is None:
            return self.predict_only_step(state)
        return self.sug_update(self.spg_predict(state), det)

"""Training the gate networks by backpropagation through the filter.

A window is ``W`` consecutive frames of one target: its ground-truth boxes
and its detections (NaN rows where the detection is missing). The filter is
initialized from the first detection and then, for every later frame,

    predict  ->  score the prediction against the truth (Gaussian NLL on the
                 predicted box with the filter's own predicted variances)
             ->  if a detection exists: score the compensated innovation
                 (squared, normalized) and update; else coast
             ->  advance the memory.

Loss = ``alpha_pred * mean(NLL) + alpha_meas * mean(innovation^2)``, both
averaged over the scored steps and then over the windows of a batch. All
coordinates inside the loss are divided by the frame size.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mekf import (
    NoiseModel,
    Normalizer,
    mug_backward,
    mug_forward,
    sug_backward,
    sug_forward,
    spg_backward,
    spg_forward,
)
from .nnet import (
    GateWeights,
    OptState,
    adamw_step,
    clip_by_global_norm,
    grads_to_dict,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class TrainingDiverged(RuntimeError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    window: int = 20
    stride: int = 10
    min_coverage: float = 0.8
    batch_size: int = 8
    epochs: int = 30
    alpha_pred: float = 1.0
    alpha_meas: float = 0.1
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    seed: int = 0
    max_windows: int | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window length must be >= 2")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class Windows:
    """A stack of training windows (all the same length)."""

    truth: np.ndarray  # (N, W, 4)
    dets: np.ndarray  # (N, W, 4), NaN = missing
    frame_size: np.ndarray  # (N, 2) width, height

    def __len__(self):
        return len(self.truth)

    def subset(self, idx) -> "Windows":
        return Windows(self.truth[idx], self.dets[idx], self.frame_size[idx])

    @classmethod
    def concat(cls, parts: list["Windows"]) -> "Windows":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, 0, 4)), np.zeros((0, 0, 4)), np.zeros((0, 2)))
        return cls(np.concatenate([p.truth for p in parts]), np.concatenate([p.dets for p in parts]),
                   np.concatenate([p.frame_size for p in parts]))


def build_dataset(scenarios, window: int = 20, stride: int = 10, min_coverage: float = 0.8,
                  regimes=None) -> Windows:
    """Cut per-target windows of ``window`` frames every ``stride`` frames.

    A window is kept when the first frame has a detection, at least
    ``min_coverage`` of its frames do, and the truth has no gaps. ``regimes`` optionally restricts the
    targets used.
    """
    truth, dets, sizes = [], [], []
    for scn in scenarios:
        for tid in scn.ids:
            if regimes is not None and scn.regimes[tid] not in regimes:
                continue
            d = scn.target_detections(tid)
            t = scn.truth[tid - 1]
            for start in range(0, scn.frames - window + 1, stride):
                dw = d[start : start + window]
                present = ~np.isnan(dw[:, 0])
                if not present[0] or present.mean() < min_coverage:
                    continue
                if np.isnan(t[start : start + window]).any():
                    continue
                truth.append(t[start : start + window])
                dets.append(dw)
                sizes.append((scn.width, scn.height))
    if not truth:
        return Windows(np.zeros((0, window, 4)), np.zeros((0, window, 4)), np.zeros((0, 2)))
    return Windows(np.array(truth), np.array(dets), np.array(sizes, dtype=np.float64))


def gaussian_nll(residual, var):
    """Per-row diagonal Gaussian negative log-likelihood."""
    return 0.5 * np.sum(residual**2 / var + np.log(var) + LOG_2PI, axis=-1)


# ------------------------------------------------------------------ loss


def _scales(frame_size):
    fw, fh = frame_size[:, 0:1], frame_size[:, 1:2]
    return np.hstack([fw, fh] * 4)


def window_loss(weights: GateWeights, batch: Windows, noise: NoiseModel | None = None,
                vel_gain: float = 20.0, alpha_pred: float = 1.0, alpha_meas: float = 0.1,
                need_grad: bool = True):
    """Mean loss over the windows in ``batch`` and, optionally, its gradient.

    Returns ``(loss, grads_or_None, per_window_loss)``.
    """
    noise = noise or NoiseModel()
    n, W, _ = batch.truth.shape
    scale = _scales(batch.frame_size)
    scale4 = scale[:, :4]
    gain = Normalizer(vel_gain=vel_gain).gain8()
    hidden = weights.lstm.hidden
    present = ~np.isnan(batch.dets[..., 0])
    dets = np.where(present[..., None], batch.dets, 0.0)

    z0 = dets[:, 0]
    mean = np.hstack([z0, np.zeros((n, 4))])
    cov = np.stack([noise.initial_cov(b) for b in z0])
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    h, c, mug0 = mug_forward(weights, scale, gain, mean, h, c)

    steps = []
    nll_total = np.zeros(n)
    meas_total = np.zeros(n)
    n_meas = np.maximum(present[:, 1:].sum(axis=1), 1)
    n_pred = W - 1
    for t in range(1, W):
        pm, pc, _, spg_cache = spg_forward(weights, noise, scale, mean, cov, h)
        var = np.diagonal(pc[:, :4, :4], axis1=1, axis2=2) / scale4**2
        resid = (batch.truth[:, t] - pm[:, :4]) / scale4
        nll_total += gaussian_nll(resid, var)
        mask = present[:, t].astype(np.float64)
        mean, cov, innov, sug_cache = sug_forward(weights, noise, scale, gain, pm, pc, dets[:, t], mask)
        innov_n = innov / scale4
        meas_total += mask * np.sum(innov_n**2, axis=1)
        h, c, mug_cache = mug_forward(weights, scale, gain, mean, h, c)
        steps.append((spg_cache, sug_cache, mug_cache, var, resid, innov_n, mask))

    per_window = alpha_pred * nll_total / n_pred + alpha_meas * meas_total / n_meas
    loss = float(per_window.mean())
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"non-finite loss {loss}")
    if not need_grad:
        return loss, None, per_window

    # ---- backward ----
    w_pred = alpha_pred / (n * n_pred)
    w_meas = (alpha_meas / (n * n_meas))[:, None]
    d_mean = np.zeros((n, 8))
    d_cov = np.zeros((n, 8, 8))
    d_h = np.zeros((n, hidden))
    d_c = np.zeros((n, hidden))
    lstm_acc = [0.0, 0.0, 0.0]
    mlp_acc: list[list | None] = [None] * 4

    def add_mlp(k, g):
        if mlp_acc[k] is None:
            mlp_acc[k] = [(dw, db) for dw, db in g]
        else:
            mlp_acc[k] = [(a + dw, b + db) for (a, b), (dw, db) in zip(mlp_acc[k], g)]

    for spg_cache, sug_cache, mug_cache, var, resid, innov_n, mask in reversed(steps):
        dx, d_h, d_c, lg = mug_backward(weights, d_h, d_c, mug_cache)
        lstm_acc = [a + g for a, g in zip(lstm_acc, lg)]
        d_mean = d_mean + dx
        d_innov = w_meas * 2.0 * innov_n * mask[:, None] / scale4
        d_pm, d_pc, (g3, g4) = sug_backward(weights, noise, d_mean, d_cov, d_innov, sug_cache)
        add_mlp(2, g3)
        add_mlp(3, g4)
        # NLL terms on the prediction
        d_resid = w_pred * resid / var
        d_var = w_pred * 0.5 * (1.0 / var - resid**2 / var**2)
        d_pm[:, :4] -= d_resid / scale4
        idx = np.arange(4)
        d_pc[:, idx, idx] += d_var / scale4**2
        d_mean, d_cov, dh_spg, (g1, g2) = spg_backward(weights, noise, d_pm, d_pc, spg_cache)
        add_mlp(0, g1)
        add_mlp(1, g2)
        d_h = d_h + dh_spg
    _, _, _, lg = mug_backward(weights, d_h, d_c, mug0)
    lstm_acc = [a + g for a, g in zip(lstm_acc, lg)]
    grads = grads_to_dict(lstm_acc, mlp_acc)
    return loss, grads, per_window


def plain_kf_loss(batch: Windows, noise: NoiseModel | None = None, alpha_pred: float = 1.0,
                  alpha_meas: float = 0.1, hidden: int = 64) -> float:
    """Loss of the zero-compensation filter (the baseline training must beat)."""
    return window_loss(GateWeights.init(0, hidden=hidden), batch, noise, alpha_pred=alpha_pred,
                       alpha_meas=alpha_meas, need_grad=False)[0]


# ----------------------------------------------------------------- train


@dataclass
class TrainResult:
    weights: GateWeights
    history: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, train, val
    baseline_val: float = float("nan")
    best_epoch: int = 0

    def loss_log(self) -> str:
        lines = ["epoch\ttrain\tvalidation"]
        lines += [f"{e}\t{tr!r}\t{va!r}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


def split(data: Windows, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_val = int(round(val_fraction * len(data)))
    if val_fraction > 0 and len(data) > 1:
        n_val = max(1, n_val)
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))


def evaluate_loss(weights, data: Windows, cfg: TrainConfig, noise=None, vel_gain=20.0,
                  chunk: int = 256) -> float:
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(data), chunk):
        part = data.subset(slice(s, s + chunk))
        _, _, per = window_loss(weights, part, noise, vel_gain, cfg.alpha_pred, cfg.alpha_meas, need_grad=False)
        total += float(per.sum())
    return total / len(data)


def train(data: Windows, cfg: TrainConfig | None = None, weights: GateWeights | None = None,
          noise: NoiseModel | None = None, vel_gain: float = 20.0, hidden: int = 64,
          progress=None) -> TrainResult:
    """AdamW over shuffled mini-batches; keeps the best weights on validation."""
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise ValueError("training needs a nonempty dataset")
    if cfg.max_windows is not None and len(data) > cfg.max_windows:
        data = data.subset(np.arange(cfg.max_windows))
    rng = np.random.default_rng(cfg.seed)
    weights = weights.copy() if weights is not None else GateWeights.init(rng, hidden=hidden, mlp_hidden=hidden)
    train_set, val_set = split(data, cfg.val_fraction, cfg.seed)
    if len(val_set) == 0:
        val_set = train_set
    params = weights.params()
    opt = OptState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)

    baseline = evaluate_loss(weights, val_set, cfg, noise, vel_gain)
    initial_train = evaluate_loss(weights, train_set, cfg, noise, vel_gain)
    result = TrainResult(weights=weights.copy(), baseline_val=baseline)
    result.history.append((0, initial_train, baseline))
    best = baseline
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[s : s + cfg.batch_size])
            batch = train_set.subset(idx)
            loss, grads, _ = window_loss(weights, batch, noise, vel_gain, cfg.alpha_pred, cfg.alpha_meas)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: non-finite batch loss")
            if abs(loss) > 1e3 * max(abs(initial_train), 1.0):
                raise TrainingDiverged(f"epoch {epoch}: loss {loss:.4g} vs initial {initial_train:.4g}")
            clip_by_global_norm(grads, cfg.clip_norm)
            adamw_step(params, grads, opt)
            total += loss * len(idx)
            count += len(idx)
        if not weights.all_finite():
            raise TrainingDiverged(f"epoch {epoch}: non-finite weights")
        val = evaluate_loss(weights, val_set, cfg, noise, vel_gain)
        result.history.append((epoch, total / count, val))
        if progress is not None:
            progress(epoch, total / count, val)
        log.info("epoch %d train %.6f val %.6f", epoch, total / count, val)
        if val < best:
            best = val
            result.weights = weights.copy()
            result.best_epoch = epoch
    return result

"""Independent reference implementations used as test oracles.

Nothing here shares code with the production paths: the Kalman filter is the
textbook formulation with an explicit matrix inverse, and assignment is plain
enumeration.
"""
from __future__ import annotations

import itertools

import numpy as np


class TextbookKalman:
    """Constant-velocity Kalman filter over ``[x, y, w, h, vx, vy, vw, vh]``.

    Accepts a single state (``x`` of shape ``(8,)``) or a batch (``(B, 8)``).
    """

    def __init__(self, sigma_pos=0.05, sigma_vel=0.00625, sigma_meas=0.05, init_vel_factor=10.0):
        self.sigma_pos = sigma_pos
        self.sigma_vel = sigma_vel
        self.sigma_meas = sigma_meas
        self.init_vel_factor = init_vel_factor
        self.F = np.eye(8)
        for i in range(4):
            self.F[i, i + 4] = 1.0
        self.H = np.zeros((4, 8))
        for i in range(4):
            self.H[i, i] = 1.0

    @staticmethod
    def _diag(std):
        return std[..., :, None] ** 2 * np.eye(std.shape[-1])

    def initiate(self, z):
        z = np.asarray(z, dtype=float)
        x = np.concatenate([z, np.zeros_like(z)], axis=-1)
        w, h = z[..., 2], z[..., 3]
        pos_std = np.stack([self.sigma_pos * w, self.sigma_pos * h, self.sigma_pos * w, self.sigma_pos * h], -1)
        P = self._diag(np.concatenate([pos_std, self.init_vel_factor * pos_std], axis=-1))
        return x, P

    def predict(self, x, P):
        w, h = x[..., 2], x[..., 3]
        std = np.stack([self.sigma_pos * w, self.sigma_pos * h, self.sigma_pos * w, self.sigma_pos * h,
                        self.sigma_vel * w, self.sigma_vel * h, self.sigma_vel * w, self.sigma_vel * h], -1)
        x = x @ self.F.T
        P = self.F @ P @ self.F.T + self._diag(std)
        return x, P

    def update(self, x, P, z):
        w, h = x[..., 2], x[..., 3]
        std = np.stack([self.sigma_meas * w, self.sigma_meas * h, self.sigma_meas * w, self.sigma_meas * h], -1)
        S = self.H @ P @ self.H.T + self._diag(std)
        K = P @ self.H.T @ np.linalg.inv(S)
        y = z - x @ self.H.T
        x = x + (K @ y[..., None])[..., 0]
        P = (np.eye(8) - K @ self.H) @ P
        x[..., 2:4] = np.maximum(x[..., 2:4], 1.0)
        return x, P


def brute_force_assignment(cost):
    """Minimum total cost over all maximum-cardinality matchings (small inputs)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    best = np.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = min(best, sum(cost[i, j] for i, j in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = min(best, sum(cost[i, j] for j, i in enumerate(rows)))
    return float(best) if (n and m) else 0.0


def monte_carlo_iou(a, b, n=1_000_000, rng=0):
    """Area-sampling estimate of IoU for center-format boxes."""
    rng = np.random.default_rng(rng)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.minimum(a[:2] - a[2:] / 2, b[:2] - b[2:] / 2)
    hi = np.maximum(a[:2] + a[2:] / 2, b[:2] + b[2:] / 2)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box):
        return np.all(np.abs(pts - box[:2]) <= box[2:] / 2, axis=1)

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0

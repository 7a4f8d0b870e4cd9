"""Quick built-in consistency checks (run by ``memosort selftest``).

Every check is seeded, so the report text is identical from run to run.
"""
from __future__ import annotations

import numpy as np

from .assign import solve
from .mekf import MeKF
from .nnet import GateWeights, grad_check
from .reference import TextbookKalman, brute_force_assignment
from .synthgen import ScenarioConfig, generate
from .trainer import build_dataset, window_loss


def randomize_gates(weights: GateWeights, rng, out_std: float = 0.002, bias_std: float = 0.1) -> GateWeights:
    """Small random output layers and biases so every gate contributes
    without swamping the filter (keeps finite differences well conditioned)."""
    for name, a in weights.named_arrays():
        if name.startswith("mlp") and name.endswith(".W1"):
            a[...] = rng.normal(0.0, out_std, a.shape)
        elif ".b" in name:
            a[...] = rng.normal(0.0, bias_std, a.shape)
    return weights


def random_walk_boxes(rng, n: int, steps: int) -> np.ndarray:
    """``(n, steps, 4)`` noisy constant-velocity measurement sequences."""
    start = np.column_stack([rng.uniform(100, 1800, n), rng.uniform(100, 1000, n),
                             rng.uniform(20, 200, n), rng.uniform(40, 400, n)])
    vel = rng.normal(0.0, 3.0, (n, 4)) * np.array([1.0, 1.0, 0.1, 0.1])
    t = np.arange(steps)[None, :, None]
    z = start[:, None, :] + vel[:, None, :] * t
    z = z + rng.normal(0.0, 1.0, z.shape) * 0.03 * np.repeat(start[:, None, 2:4], 2, axis=-1)
    z[..., 2:4] = np.maximum(z[..., 2:4], 2.0)
    return z


def check_degeneracy(n: int = 200, steps: int = 50, seed: int = 0) -> float:
    """Max abs difference (means and covariances) between the zero-gate
    filter and the textbook Kalman filter."""
    rng = np.random.default_rng(seed)
    z = random_walk_boxes(rng, n, steps)
    kf = MeKF()
    ref = TextbookKalman()
    mean, cov, h, c = kf.initiate_batch(z[:, 0])
    x, P = ref.initiate(z[:, 0])
    worst = max(np.abs(mean - x).max(), np.abs(cov - P).max())
    ones = np.ones(n)
    for t in range(1, steps):
        pm, pc, _ = kf.predict_batch(mean, cov, h)
        x, P = ref.predict(x, P)
        worst = max(worst, np.abs(pm - x).max(), np.abs(pc - P).max())
        mean, cov, h, c = kf.update_batch(pm, pc, h, c, z[:, t], ones)
        x, P = ref.update(x, P, z[:, t])
        worst = max(worst, np.abs(mean - x).max(), np.abs(cov - P).max())
    return float(worst)


def check_gradients(window: int = 5, hidden: int = 8, samples: int = 5, seed: int = 0) -> float:
    scn = generate(ScenarioConfig(frames=40, n_targets=3, miss_rate=0.15), seed=seed)
    data = build_dataset([scn], window=window, stride=window, min_coverage=0.6)
    batch = data.subset(np.arange(min(4, len(data))))
    rng = np.random.default_rng(seed)
    weights = randomize_gates(GateWeights.init(rng, hidden=hidden, mlp_hidden=hidden, zero_output=False), rng)
    _, grads, _ = window_loss(weights, batch)
    err, _ = grad_check(lambda: window_loss(weights, batch, need_grad=False)[0], weights.params(), grads,
                        samples_per_tensor=samples, rng=seed)
    return err


def check_assignment(trials: int = 300, max_size: int = 6, seed: int = 0) -> int:
    """Number of random matrices where the solver misses the brute-force optimum."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        n, m = rng.integers(1, max_size + 1, size=2)
        cost = rng.uniform(0.0, 1.0, (n, m))
        if rng.random() < 0.3:
            cost = np.round(cost * 4) / 4  # ties
        got = solve(cost).total_cost(cost)
        if abs(got - brute_force_assignment(cost)) > 1e-9:
            failures += 1
    return failures


def run(out=print) -> bool:
    results = []
    err = check_degeneracy()
    results.append(("kalman degeneracy", err <= 1e-9, f"max abs diff {err:.3e}"))
    err = check_gradients()
    results.append(("gradient check", err < 1e-4, f"max rel err {err:.3e}"))
    bad = check_assignment()
    results.append(("assignment oracle", bad == 0, f"{bad} mismatches / 300"))
    for name, ok, detail in results:
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in results)

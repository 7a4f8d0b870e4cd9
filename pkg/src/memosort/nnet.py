"""Hand-written MLP / LSTM cell with exact backward passes, AdamW, and the
weight-file format for the filter's gate networks.

Everything is batched along axis 0 and computed in float64. Backward
functions take the cache produced by the matching forward call.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
_MAGIC = b"MKFW"


class WeightFileError(Exception):
    pass


class SchemaVersionError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


class CorruptWeightFileError(WeightFileError):
    pass


def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------- MLP


@dataclass
class MlpParams:
    """Feed-forward net: tanh on hidden layers, identity on the output.

    ``weights[k]`` has shape ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(B, fan_in)`` maps as ``x @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k} input {w.shape[0]} does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, zero_output: bool = True) -> "MlpParams":
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            if last and zero_output:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def named(self, prefix: str):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.W{k}", w
            yield f"{prefix}.b{k}", b


def mlp_forward(p: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != p.in_dim:
        raise ValueError(f"MLP expects input dim {p.in_dim}, got {x.shape[-1]}")
    acts = [x]
    a = x
    n = len(p.weights)
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w + b
        a = z if k == n - 1 else np.tanh(z)
        acts.append(a)
    out = a[0] if single else a
    return out, (acts, single)


def mlp_backward(p: MlpParams, dout, cache):
    """Returns ``(dx, grads)`` with grads as a list of ``(dW, db)`` per layer."""
    acts, single = cache
    d = np.asarray(dout, dtype=np.float64)
    if single:
        d = d[None, :]
    n = len(p.weights)
    grads = [None] * n
    for k in range(n - 1, -1, -1):
        if k != n - 1:
            d = d * (1.0 - acts[k + 1] ** 2)
        grads[k] = (acts[k].T @ d, d.sum(axis=0))
        d = d @ p.weights[k].T
    return (d[0] if single else d), grads


# -------------------------------------------------------------------- LSTM


@dataclass
class LstmParams:
    """LSTM cell; gate blocks are ordered input, forget, candidate, output."""

    wx: np.ndarray  # (in, 4H)
    wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        hidden = self.wh.shape[0]
        if self.wh.shape != (hidden, 4 * hidden) or self.wx.shape[1] != 4 * hidden:
            raise ValueError(f"inconsistent LSTM shapes {self.wx.shape}, {self.wh.shape}")
        if self.b.shape != (4 * hidden,):
            raise ValueError(f"LSTM bias must have shape ({4 * hidden},)")

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def in_dim(self) -> int:
        return self.wx.shape[0]

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            wx=rng.uniform(-bound, bound, size=(in_dim, 4 * hidden)),
            wh=rng.uniform(-bound, bound, size=(hidden, 4 * hidden)),
            b=np.zeros(4 * hidden),
        )

    @classmethod
    def zeros(cls, in_dim: int, hidden: int) -> "LstmParams":
        return cls(np.zeros((in_dim, 4 * hidden)), np.zeros((hidden, 4 * hidden)), np.zeros(4 * hidden))

    def named(self, prefix: str):
        yield f"{prefix}.Wx", self.wx
        yield f"{prefix}.Wh", self.wh
        yield f"{prefix}.b", self.b


def lstm_step(p: LstmParams, x, h, c):
    x, h, c = (np.asarray(v, dtype=np.float64) for v in (x, h, c))
    single = x.ndim == 1
    if single:
        x, h, c = x[None], h[None], c[None]
    H = p.hidden
    if x.shape[-1] != p.in_dim or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(f"LSTM expects input {p.in_dim}, hidden {H}; got {x.shape}, {h.shape}, {c.shape}")
    z = x @ p.wx + h @ p.wh + p.b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (x, h, c, i, f, g, o, tc, single)
    if single:
        return h_new[0], c_new[0], cache
    return h_new, c_new, cache


def lstm_backward(p: LstmParams, dh_new, dc_new, cache):
    """Returns ``(dx, dh, dc, (dWx, dWh, db))``."""
    x, h, c, i, f, g, o, tc, single = cache
    dh_new = np.asarray(dh_new, dtype=np.float64).reshape(h.shape)
    dc_new = np.asarray(dc_new, dtype=np.float64).reshape(c.shape)
    do = dh_new * tc
    dct = dc_new + dh_new * o * (1.0 - tc**2)
    di = dct * g
    dg = dct * i
    df = dct * c
    dc = dct * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)],
        axis=1,
    )
    grads = (x.T @ dz, h.T @ dz, dz.sum(axis=0))
    dx = dz @ p.wx.T
    dh = dz @ p.wh.T
    if single:
        return dx[0], dh[0], dc[0], grads
    return dx, dh, dc, grads


# ------------------------------------------------------------ gate weights


@dataclass
class GateWeights:
    """All learnable parameters of the memory-assisted filter.

    ``mlps`` holds, in order: state-offset head (memory -> 8), state
    covariance factor head (memory -> 8), measurement-offset head
    (prediction -> 4), measurement covariance factor head (prediction -> 4).
    """

    lstm: LstmParams
    mlps: tuple[MlpParams, MlpParams, MlpParams, MlpParams]

    @property
    def arch(self) -> dict:
        return {
            "state_dim": self.lstm.in_dim,
            "meas_dim": self.mlps[2].out_dim,
            "hidden": self.lstm.hidden,
            "mlp_hidden": [w.shape[1] for w in self.mlps[0].weights[:-1]],
        }

    @classmethod
    def init(
        cls,
        rng: np.random.Generator | int | None = 0,
        state_dim: int = 8,
        meas_dim: int = 4,
        hidden: int = 64,
        mlp_hidden: int | list[int] = 64,
        zero_output: bool = True,
    ) -> "GateWeights":
        rng = np.random.default_rng(rng)
        mids = [mlp_hidden] if isinstance(mlp_hidden, int) else list(mlp_hidden)
        lstm = LstmParams.init(state_dim, hidden, rng)
        mlps = (
            MlpParams.init([hidden, *mids, state_dim], rng, zero_output),
            MlpParams.init([hidden, *mids, state_dim], rng, zero_output),
            MlpParams.init([state_dim, *mids, meas_dim], rng, zero_output),
            MlpParams.init([state_dim, *mids, meas_dim], rng, zero_output),
        )
        return cls(lstm, mlps)

    @classmethod
    def from_arch(cls, arch: dict) -> "GateWeights":
        w = cls.init(0, arch["state_dim"], arch["meas_dim"], arch["hidden"], list(arch["mlp_hidden"]))
        for _, a in w.named_arrays():
            a[...] = 0.0
        return w

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = list(self.lstm.named("lstm"))
        for k, m in enumerate(self.mlps, start=1):
            out.extend(m.named(f"mlp{k}"))
        return out

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_arrays())

    def copy(self) -> "GateWeights":
        new = GateWeights.from_arch(self.arch)
        for (_, dst), (_, src) in zip(new.named_arrays(), self.named_arrays()):
            dst[...] = src
        return new

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.named_arrays()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())


def grads_to_dict(lstm_grads, mlp_grads) -> dict[str, np.ndarray]:
    """Pack backward outputs into the ``named_arrays`` naming scheme."""
    out = {"lstm.Wx": lstm_grads[0], "lstm.Wh": lstm_grads[1], "lstm.b": lstm_grads[2]}
    for k, layers in enumerate(mlp_grads, start=1):
        for j, (dw, db) in enumerate(layers):
            out[f"mlp{k}.W{j}"] = dw
            out[f"mlp{k}.b{j}"] = db
    return out


# ------------------------------------------------------------------ AdamW


@dataclass
class OptState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], s: OptState):
    """One AdamW update with decoupled weight decay, applied in place.

    Returns ``(params, s)`` for convenience; both are the mutated inputs.
    """
    s.step += 1
    t = s.step
    bc1 = 1.0 - s.beta1**t
    bc2 = 1.0 - s.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = s.m.setdefault(name, np.zeros_like(p))
        v = s.v.setdefault(name, np.zeros_like(p))
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * g * g
        if s.weight_decay:
            p *= 1.0 - s.lr * s.weight_decay
        p -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
    return params, s


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------- gradient check


def relative_error(analytic, numeric, floor: float = 1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(f, x0: float, steps=(3e-3, 1e-3, 3e-4, 1e-4, 3e-5)) -> float:
    """Derivative of scalar ``f`` at ``x0`` by the 5-point central stencil.

    With several ``steps`` the estimate is taken where two neighbouring step
    sizes agree best: large steps suffer truncation error, small ones
    roundoff in ``f``.
    """
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    est = np.array([(8 * (f(x0 + h) - f(x0 - h)) - (f(x0 + 2 * h) - f(x0 - 2 * h))) / (12 * h) for h in steps])
    if len(est) == 1:
        return float(est[0])
    k = int(np.argmin(np.abs(np.diff(est))))
    return float(est[k + 1])


def grad_check(loss_fn, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               steps=(3e-3, 1e-3, 3e-4, 1e-4, 3e-5), samples_per_tensor: int | None = None, rng=0,
               floor: float = 1e-8, scale_floor: float = 1e-6):
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must read the arrays in ``params`` (they are perturbed in
    place and restored). With ``samples_per_tensor`` only that many entries
    of each tensor are probed. The relative error denominator never drops
    below ``max(floor, scale_floor * largest |gradient|)``: entries that
    many orders below the largest one sit under the roundoff of the loss
    itself. Returns ``(max_rel_err, worst_name)``.
    """
    rng = np.random.default_rng(rng)
    gmax = max((float(np.abs(grads[n]).max()) for n in params if grads[n].size), default=0.0)
    floor = max(floor, scale_floor * gmax)
    worst, worst_name = 0.0, None
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if samples_per_tensor is not None and flat.size > samples_per_tensor:
            idx = np.sort(rng.choice(flat.size, samples_per_tensor, replace=False))
        g = grads[name].reshape(-1)
        for k in idx:
            orig = flat[k]

            def at(v):
                flat[k] = v
                return loss_fn()

            num = central_difference(at, orig, steps)
            flat[k] = orig
            err = float(relative_error(g[k], num, floor))
            if err > worst:
                worst, worst_name = err, f"{name}[{k}]"
    return worst, worst_name


# ------------------------------------------------------------ weight files
#
# Layout (all integers little-endian):
#   4 bytes   magic  b"MKFW"
#   4 bytes   uint32 header length N
#   N bytes   UTF-8 JSON header: {"schema_version", "arch", "tensors": [[name, shape], ...],
#             "payload_bytes", "crc32"}
#   payload   float64 little-endian values of every tensor, in header order, C order


def save_weights(weights: GateWeights, path) -> None:
    arrays = weights.named_arrays()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "schema_version": SCHEMA_VERSION,
        "arch": weights.arch,
        "tensors": [[name, list(a.shape)] for name, a in arrays],
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(_MAGIC + struct.pack("<I", len(head)) + head + payload)


def load_weights(path, expected_arch: dict | None = None, hidden: int | None = None) -> GateWeights:
    """Read a weight file written by :func:`save_weights`.

    ``expected_arch`` (or just ``hidden``) pins the architecture the caller
    was built for; a file with different shapes raises ShapeMismatchError.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise CorruptWeightFileError(f"{path}: not a gate weight file")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise CorruptWeightFileError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptWeightFileError(f"{path}: unreadable header ({exc})") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {header.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    payload = blob[8 + n :]
    if len(payload) != header["payload_bytes"]:
        raise CorruptWeightFileError(
            f"{path}: payload has {len(payload)} bytes, header says {header['payload_bytes']}"
        )
    if zlib.crc32(payload) != header["crc32"]:
        raise CorruptWeightFileError(f"{path}: checksum mismatch")

    arch = header["arch"]
    want = dict(expected_arch) if expected_arch else dict(arch)
    if hidden is not None:
        want["hidden"] = hidden
    if want != arch:
        raise ShapeMismatchError(f"{path}: file architecture {arch} != expected {want}")
    weights = GateWeights.from_arch(arch)
    targets = weights.named_arrays()
    table = header["tensors"]
    if [(nm, tuple(s)) for nm, s in table] != [(nm, a.shape) for nm, a in targets]:
        raise ShapeMismatchError(f"{path}: tensor table does not match architecture {arch}")
    values = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for _, a in targets:
        a[...] = values[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    return weights

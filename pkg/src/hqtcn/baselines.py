"""Reference models: a standalone QCNN and a small causal dilated TCN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import CircuitParams, qcnn_forward, qcnn_forward_batch, qcnn_vjp, quantum_param_count
from .errors import ConfigurationError
from .model import TimeSeries, _split


# ---------------------------------------------------------------------------
# Standalone QCNN
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QcnnBaselineParams:
    """Affine map from a whole flattened ``C x T`` input to ``n`` angles, then the circuit."""

    weight: np.ndarray  # (C*T, n)
    bias: np.ndarray  # (n,)
    circuit: CircuitParams

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape[1] != b.shape[0] or b.shape[0] != self.circuit.n_qubits:
            raise ValueError(f"input-layer shapes {w.shape}/{b.shape} do not match the circuit")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size + self.circuit.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias, self.circuit.flat()])

    @classmethod
    def from_flat(cls, flat, in_features: int, n_qubits: int, n_layers: int) -> "QcnnBaselineParams":
        flat = np.asarray(flat, dtype=float)
        nw = in_features * n_qubits
        expected = nw + n_qubits + quantum_param_count(n_qubits, n_layers)
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {flat.shape}")
        return cls(flat[:nw].reshape(in_features, n_qubits), flat[nw:nw + n_qubits],
                   CircuitParams.from_flat(flat[nw + n_qubits:], n_qubits, n_layers))


def qcnn_baseline_param_count(channels: int, steps: int, n_qubits: int = 8,
                              n_layers: int = 2) -> tuple[int, int, int]:
    classical = (channels * steps + 1) * n_qubits
    quantum = quantum_param_count(n_qubits, n_layers)
    return classical, quantum, classical + quantum


def qcnn_baseline_forward(X: TimeSeries, params: QcnnBaselineParams) -> float:
    x = X.values.reshape(-1)
    if x.shape[0] != params.weight.shape[0]:
        raise ValueError(
            f"input has {x.shape[0]} values, the input layer expects {params.weight.shape[0]}"
        )
    return qcnn_forward(x @ params.weight + params.bias, params.circuit)


def lookback_windows(X: TimeSeries, lookback: int) -> np.ndarray:
    """For each step ``t``, the trailing ``lookback`` samples (zero-padded on
    the left), flattened channel-major; shape ``(T, C*lookback)``."""
    padded = np.concatenate([np.zeros((X.channels, lookback - 1)), X.values], axis=1)
    win = np.lib.stride_tricks.sliding_window_view(padded, lookback, axis=1)
    return np.ascontiguousarray(win.transpose(1, 0, 2)).reshape(X.steps, -1)


class QcnnBaselineModel:
    """Classification feeds the whole sequence once; regression slides a
    zero-padded ``lookback`` window so every step gets a prediction."""

    name = "qcnn"
    start = 0

    def __init__(self, n_qubits: int, n_layers: int, channels: int, lookback: int, task: str):
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.channels = channels
        self.lookback = lookback
        self.task = task

    def param_count(self) -> tuple[int, int, int]:
        return qcnn_baseline_param_count(self.channels, self.lookback, self.n_qubits, self.n_layers)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        fan_in = self.channels * self.lookback
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (fan_in, self.n_qubits))
        b = rng.uniform(-bound, bound, self.n_qubits)
        return QcnnBaselineParams(w, b, CircuitParams.random(rng, self.n_qubits, self.n_layers)).flat()

    def unflatten(self, flat) -> QcnnBaselineParams:
        return QcnnBaselineParams.from_flat(flat, self.channels * self.lookback, self.n_qubits, self.n_layers)

    def _inputs(self, series: Sequence[TimeSeries]) -> list[np.ndarray]:
        if self.task == "classification":
            for x in series:
                if x.steps != self.lookback or x.channels != self.channels:
                    raise ValueError(
                        f"series is {x.channels}x{x.steps}, model expects {self.channels}x{self.lookback}"
                    )
            return [x.values.reshape(1, -1) for x in series]
        return [lookback_windows(x, self.lookback) for x in series]

    def outputs(self, flat, series: Sequence[TimeSeries], threads: int = 1) -> list[np.ndarray]:
        p = self.unflatten(flat)
        rows = self._inputs(series)
        out = qcnn_forward_batch(np.concatenate(rows) @ p.weight + p.bias, p.circuit, threads)
        return _split(out, [r.shape[0] for r in rows])

    def vjp(self, flat, series: Sequence[TimeSeries], upstream_fn, threads: int = 1):
        p = self.unflatten(flat)
        rows = self._inputs(series)
        sizes = [r.shape[0] for r in rows]
        x = np.concatenate(rows)
        captured = {}

        def upstream(out):
            captured["out"] = _split(out, sizes)
            return np.concatenate(upstream_fn(captured["out"]))

        _, dtheta, de = qcnn_vjp(x @ p.weight + p.bias, p.circuit, upstream, threads)
        grad = np.concatenate([(x.T @ de).ravel(), de.sum(axis=0), dtheta])
        return captured["out"], grad


# ---------------------------------------------------------------------------
# Causal dilated TCN
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TcnBaselineParams:
    """Stacked causal convolutions (ReLU after each) and a per-step linear readout.

    ``convs[i] = (weight (out, in, k), bias (out,))`` with dilation ``2**i``.
    Tap ``j`` of a kernel reads ``x[t - dilation * (k - 1 - j)]``.
    """

    convs: tuple[tuple[np.ndarray, np.ndarray], ...]
    readout_weight: np.ndarray  # (hidden,)
    readout_bias: float

    @property
    def dilations(self) -> list[int]:
        return [2**i for i in range(len(self.convs))]

    @property
    def kernel(self) -> int:
        return self.convs[0][0].shape[2]

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(self.dilations)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in self.convs) + self.readout_weight.size + 1

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for w, b in self.convs for a in (w, b)]
        return np.concatenate(parts + [self.readout_weight, [self.readout_bias]])


def tcn_param_count(channels: int, hidden: int = 24, kernel: int = 3, n_blocks: int = 2) -> int:
    total, c_in = 0, channels
    for _ in range(n_blocks):
        total += hidden * c_in * kernel + hidden
        c_in = hidden
    return total + hidden + 1


def tcn_unflatten(flat, channels: int, hidden: int, kernel: int, n_blocks: int) -> TcnBaselineParams:
    flat = np.asarray(flat, dtype=float)
    expected = tcn_param_count(channels, hidden, kernel, n_blocks)
    if flat.shape != (expected,):
        raise ValueError(f"expected {expected} parameters, got {flat.shape}")
    convs, pos, c_in = [], 0, channels
    for _ in range(n_blocks):
        nw = hidden * c_in * kernel
        w = flat[pos:pos + nw].reshape(hidden, c_in, kernel)
        b = flat[pos + nw:pos + nw + hidden]
        convs.append((w, b))
        pos += nw + hidden
        c_in = hidden
    return TcnBaselineParams(tuple(convs), flat[pos:pos + hidden], float(flat[pos + hidden]))


def _causal_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int) -> np.ndarray:
    k = w.shape[2]
    pad = dilation * (k - 1)
    t = x.shape[1]
    xp = np.concatenate([np.zeros((x.shape[0], pad)), x], axis=1)
    y = np.repeat(b[:, None], t, axis=1)
    for j in range(k):
        y += w[:, :, j] @ xp[:, j * dilation:j * dilation + t]
    return y


def _causal_conv_backward(x, w, dilation, dy):
    k = w.shape[2]
    pad = dilation * (k - 1)
    t = x.shape[1]
    xp = np.concatenate([np.zeros((x.shape[0], pad)), x], axis=1)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for j in range(k):
        sl = slice(j * dilation, j * dilation + t)
        dw[:, :, j] = dy @ xp[:, sl].T
        dxp[:, sl] += w[:, :, j].T @ dy
    return dxp[:, pad:], dw, dy.sum(axis=1)


def tcn_series_forward(values: np.ndarray, params: TcnBaselineParams) -> np.ndarray:
    """Per-step outputs for a ``C x T`` input."""
    if params.receptive_field > values.shape[1]:
        raise ConfigurationError(
            f"receptive field {params.receptive_field} exceeds series length {values.shape[1]}"
        )
    h = values
    for (w, b), dil in zip(params.convs, params.dilations):
        h = np.maximum(_causal_conv(h, w, b, dil), 0.0)
    return params.readout_weight @ h + params.readout_bias


def tcn_baseline_forward(X: TimeSeries, params: TcnBaselineParams, task: str = "regression"):
    out = tcn_series_forward(X.values, params)
    return float(out.mean()) if task == "classification" else out


def tcn_series_vjp(values: np.ndarray, params: TcnBaselineParams, upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of ``sum_t upstream[t] * out[t]``."""
    acts = [values]
    pre = []
    for (w, b), dil in zip(params.convs, params.dilations):
        z = _causal_conv(acts[-1], w, b, dil)
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    g = np.asarray(upstream, dtype=float)
    d_readout_w = acts[-1] @ g
    d_readout_b = g.sum()
    dh = np.outer(params.readout_weight, g)
    grads = []
    for i in range(len(params.convs) - 1, -1, -1):
        dz = dh * (pre[i] > 0)
        dh, dw, db = _causal_conv_backward(acts[i], params.convs[i][0], params.dilations[i], dz)
        grads.append((dw, db))
    grads.reverse()
    parts = [a.ravel() for dw, db in grads for a in (dw, db)]
    return np.concatenate(parts + [d_readout_w, [d_readout_b]])


class TcnModel:
    name = "tcn"
    start = 0

    def __init__(self, channels: int, task: str, hidden: int = 24, kernel: int = 3, n_blocks: int = 2):
        self.channels = channels
        self.task = task
        self.hidden = hidden
        self.kernel = kernel
        self.n_blocks = n_blocks

    def param_count(self) -> tuple[int, int, int]:
        total = tcn_param_count(self.channels, self.hidden, self.kernel, self.n_blocks)
        return total, 0, total

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts, c_in = [], self.channels
        for _ in range(self.n_blocks):
            bound = 1.0 / math.sqrt(c_in * self.kernel)
            parts.append(rng.uniform(-bound, bound, self.hidden * c_in * self.kernel))
            parts.append(rng.uniform(-bound, bound, self.hidden))
            c_in = self.hidden
        bound = 1.0 / math.sqrt(self.hidden)
        parts.append(rng.uniform(-bound, bound, self.hidden + 1))
        return np.concatenate(parts)

    def unflatten(self, flat) -> TcnBaselineParams:
        return tcn_unflatten(flat, self.channels, self.hidden, self.kernel, self.n_blocks)

    def outputs(self, flat, series: Sequence[TimeSeries], threads: int = 1) -> list[np.ndarray]:
        p = self.unflatten(flat)
        return [tcn_series_forward(x.values, p) for x in series]

    def vjp(self, flat, series: Sequence[TimeSeries], upstream_fn, threads: int = 1):
        p = self.unflatten(flat)
        outs = [tcn_series_forward(x.values, p) for x in series]
        ups = upstream_fn(outs)
        grad = np.zeros(p.size)
        for x, g in zip(series, ups):
            grad += tcn_series_vjp(x.values, p, g)
        return outs, grad

"""HQTCN: dilated temporal windows -> shared linear embedding -> shared QCNN.

A window ending at step ``t`` samples ``K`` points spaced ``d`` apart,
``t - d(K-1), ..., t - d, t``. No padding is used, so the first window ends
at ``t = d(K-1)`` and a length-``T`` series yields ``T - d(K-1)`` windows.
Windows are flattened channel-major (all ``K`` samples of channel 0, then
channel 1, ...). Every window goes through the *same* embedding and circuit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .circuit import CircuitParams, qcnn_forward_batch, qcnn_vjp, quantum_param_count
from .errors import ConfigurationError, DataError

TASKS = ("regression", "classification")


@dataclass(frozen=True)
class TimeSeries:
    """``C x T`` real series plus either a per-step target or a binary label."""

    values: np.ndarray
    target: np.ndarray | None = None
    label: int | None = None
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] == 0:
            raise DataError(f"series values must be a nonempty C x T matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("series values contain NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.target is not None:
            y = np.array(self.target, dtype=float).reshape(-1)
            if y.shape[0] != v.shape[1]:
                raise DataError(f"target has {y.shape[0]} steps, series has {v.shape[1]}")
            if not np.all(np.isfinite(y)):
                raise DataError("target contains NaN or Inf")
            y.setflags(write=False)
            object.__setattr__(self, "target", y)
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    kernel: int = 5
    dilation: int = 2
    n_qubits: int = 8
    n_layers: int = 2
    task: str = "regression"

    def __post_init__(self):
        if self.kernel < 1:
            raise ConfigurationError(f"kernel must be >= 1, got {self.kernel}")
        if self.dilation < 1:
            raise ConfigurationError(f"dilation must be >= 1, got {self.dilation}")
        if self.n_qubits < 2 or self.n_qubits % 2:
            raise ConfigurationError(f"qubit count must be even and >= 2, got {self.n_qubits}")
        if self.n_layers < 1:
            raise ConfigurationError(f"layer count must be >= 1, got {self.n_layers}")
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def start(self) -> int:
        """First time index with a full window."""
        return self.dilation * (self.kernel - 1)


@dataclass(frozen=True)
class HqtcnParams:
    weight: np.ndarray  # (C*K, n)
    bias: np.ndarray  # (n,)
    circuit: CircuitParams

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape[1] != b.shape[0] or b.shape[0] != self.circuit.n_qubits:
            raise ValueError(
                f"embedding shapes {w.shape}/{b.shape} do not match {self.circuit.n_qubits} qubits"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("embedding parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size + self.circuit.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias, self.circuit.flat()])

    @classmethod
    def from_flat(cls, flat, in_features: int, cfg: ModelConfig) -> "HqtcnParams":
        flat = np.asarray(flat, dtype=float)
        n = cfg.n_qubits
        nw = in_features * n
        expected = nw + n + quantum_param_count(n, cfg.n_layers)
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {flat.shape}")
        return cls(
            flat[:nw].reshape(in_features, n),
            flat[nw:nw + n],
            CircuitParams.from_flat(flat[nw + n:], n, cfg.n_layers),
        )

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, cfg: ModelConfig) -> "HqtcnParams":
        """Uniform ``±1/sqrt(fan_in)`` embedding, circuit angles uniform on [0, 2π)."""
        fan_in = channels * cfg.kernel
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (fan_in, cfg.n_qubits))
        b = rng.uniform(-bound, bound, cfg.n_qubits)
        return cls(w, b, CircuitParams.random(rng, cfg.n_qubits, cfg.n_layers))


def receptive_field(kernel: int, dilation: int) -> int:
    if kernel < 1 or dilation < 1:
        raise ValueError("kernel and dilation must be >= 1")
    return dilation * (kernel - 1) + 1


def window_indices(t: int, kernel: int, dilation: int) -> list[int]:
    if kernel < 1 or dilation < 1:
        raise ValueError("kernel and dilation must be >= 1")
    first = t - dilation * (kernel - 1)
    if first < 0:
        raise ValueError(f"t={t} is before the first full window at t={dilation * (kernel - 1)}")
    return list(range(first, t + 1, dilation))


def extract_windows(X: TimeSeries, cfg: ModelConfig) -> np.ndarray:
    """All full windows as rows of a ``(T - d(K-1), C*K)`` array."""
    need = cfg.start + 1
    if X.steps < need:
        raise DataError(
            f"series has {X.steps} steps; kernel {cfg.kernel} with dilation "
            f"{cfg.dilation} needs at least {need}"
        )
    # (C, T) -> strided view of shape (C, n_windows, K)
    span = np.lib.stride_tricks.sliding_window_view(X.values, cfg.start + 1, axis=1)
    win = span[:, :, ::cfg.dilation]
    return np.ascontiguousarray(win.transpose(1, 0, 2)).reshape(win.shape[1], -1)


def linear_embed(w: np.ndarray, params: HqtcnParams) -> np.ndarray:
    """``w @ W + b`` for a single window or a stack of windows."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != params.weight.shape[0]:
        raise ValueError(f"window has {w.shape[-1]} features, embedding expects {params.weight.shape[0]}")
    return w @ params.weight + params.bias


def hqtcn_forward(X: TimeSeries, params: HqtcnParams, cfg: ModelConfig, threads: int = 1) -> np.ndarray:
    """One circuit output per window, in time order."""
    return qcnn_forward_batch(linear_embed(extract_windows(X, cfg), params), params.circuit, threads)


def aggregate(outputs) -> float:
    o = np.asarray(outputs, dtype=float).reshape(-1)
    if o.size == 0:
        raise ValueError("cannot aggregate an empty output sequence")
    return float(o.mean())


def model_output(X: TimeSeries, params: HqtcnParams, cfg: ModelConfig, threads: int = 1):
    """Classification: the window-mean score. Regression: per-step predictions
    for ``t = d(K-1), ..., T-1``."""
    o = hqtcn_forward(X, params, cfg, threads)
    return aggregate(o) if cfg.task == "classification" else o


def model_param_count(channels: int, kernel: int, n_qubits: int, n_layers: int) -> tuple[int, int, int]:
    """(classical, quantum, total)."""
    if min(channels, kernel, n_qubits, n_layers) < 1:
        raise ValueError("all dimensions must be positive")
    classical = (channels * kernel + 1) * n_qubits
    quantum = quantum_param_count(n_qubits, n_layers)
    return classical, quantum, classical + quantum


def embedded_vjp(windows: np.ndarray, params: HqtcnParams,
                 upstream: np.ndarray | Callable[[np.ndarray], np.ndarray],
                 threads: int = 1) -> tuple[np.ndarray, HqtcnParams]:
    """Outputs and parameter gradient for a stack of flattened windows."""
    e = linear_embed(windows, params)
    outputs, dtheta, de = qcnn_vjp(e, params.circuit, upstream, threads)
    grad = HqtcnParams(
        windows.T @ de,
        de.sum(axis=0),
        CircuitParams.from_flat(dtheta, params.circuit.n_qubits, params.circuit.n_layers),
    )
    return outputs, grad


def hqtcn_gradient(X: TimeSeries, params: HqtcnParams, cfg: ModelConfig, upstream,
                   threads: int = 1) -> HqtcnParams:
    """Chain rule through circuit, embedding and windows: returns
    ``sum_t upstream[t] * d o_t / d params`` shaped like ``params``."""
    windows = extract_windows(X, cfg)
    g = np.asarray(upstream, dtype=float).reshape(-1)
    if g.shape[0] != windows.shape[0]:
        raise ValueError(f"upstream has {g.shape[0]} entries for {windows.shape[0]} windows")
    return embedded_vjp(windows, params, g, threads)[1]


class HqtcnModel:
    """Flat-parameter adapter used by the trainer."""

    name = "hqtcn"

    def __init__(self, cfg: ModelConfig, channels: int):
        self.cfg = cfg
        self.channels = channels

    @property
    def start(self) -> int:
        return self.cfg.start

    def param_count(self) -> tuple[int, int, int]:
        c = self.cfg
        return model_param_count(self.channels, c.kernel, c.n_qubits, c.n_layers)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return HqtcnParams.init(rng, self.channels, self.cfg).flat()

    def unflatten(self, flat) -> HqtcnParams:
        return HqtcnParams.from_flat(flat, self.channels * self.cfg.kernel, self.cfg)

    def outputs(self, flat, series: Sequence[TimeSeries], threads: int = 1) -> list[np.ndarray]:
        p = self.unflatten(flat)
        wins = [extract_windows(x, self.cfg) for x in series]
        out = qcnn_forward_batch(linear_embed(np.concatenate(wins), p), p.circuit, threads)
        return _split(out, [w.shape[0] for w in wins])

    def vjp(self, flat, series: Sequence[TimeSeries], upstream_fn, threads: int = 1):
        """``upstream_fn`` maps per-series outputs to per-series upstream weights."""
        p = self.unflatten(flat)
        wins = [extract_windows(x, self.cfg) for x in series]
        sizes = [w.shape[0] for w in wins]
        captured = {}

        def upstream(out):
            captured["out"] = _split(out, sizes)
            return np.concatenate(upstream_fn(captured["out"]))

        _, grad = embedded_vjp(np.concatenate(wins), p, upstream, threads)
        return captured["out"], grad.flat()


def _split(a: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    return np.split(a, np.cumsum(sizes)[:-1]) if sizes else []

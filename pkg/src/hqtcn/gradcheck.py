"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .circuit import CircuitParams, qcnn_forward_batch, qcnn_gradient, qcnn_vjp
from .model import HqtcnParams, ModelConfig, TimeSeries, hqtcn_forward, hqtcn_gradient

REL_TOL = 1e-5
ABS_FLOOR = 1e-7
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckReport:
    name: str
    points: int
    coords: int  # coordinates checked per point
    max_abs: float
    max_rel: float
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.name}: {self.points} point(s) x {self.coords} coordinates, "
                f"max abs deviation {self.max_abs:.3e}, max relative deviation {self.max_rel:.3e} "
                f"(tolerance {REL_TOL:g} relative, {ABS_FLOOR:g} absolute floor): {verdict}")


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up.flat[i] += h
        down.flat[i] -= h
        g.flat[i] = (f(up) - f(down)) / (2 * h)
    return g


def compare(grad: np.ndarray, reference: np.ndarray) -> tuple[float, float, bool]:
    """Max absolute and relative deviation, and whether every coordinate is
    within ``max(REL_TOL * |ref|, ABS_FLOOR)``."""
    diff = np.abs(np.asarray(grad) - np.asarray(reference))
    scale = np.abs(reference)
    rel = diff / np.maximum(scale, ABS_FLOOR / REL_TOL)
    ok = bool(np.all(diff <= np.maximum(REL_TOL * scale, ABS_FLOOR)))
    return float(diff.max(initial=0.0)), float(rel.max(initial=0.0)), ok


def _merge(name: str, results: list[tuple[float, float, bool]], coords: int) -> CheckReport:
    return CheckReport(name, len(results), coords,
                       max(r[0] for r in results), max(r[1] for r in results),
                       all(r[2] for r in results))


def circuit_check(seed: int = 0, n_qubits: int = 8, n_layers: int = 2, points: int = 20,
                  corrupt: bool = False) -> tuple[CheckReport, CheckReport]:
    """Parameter-shift and adjoint circuit gradients against central
    differences over every angle and every input feature."""
    rng = np.random.default_rng(seed)
    shift, adjoint = [], []
    coords = 0
    for _ in range(points):
        params = CircuitParams.random(rng, n_qubits, n_layers)
        x = rng.uniform(-np.pi, np.pi, n_qubits)
        flat = params.flat()

        def f_theta(t):
            return float(qcnn_forward_batch(x[None, :], CircuitParams.from_flat(t, n_qubits, n_layers))[0])

        def f_x(v):
            return float(qcnn_forward_batch(v[None, :], params)[0])

        ref = np.concatenate([central_difference(f_theta, flat), central_difference(f_x, x)])
        dtheta, dx = qcnn_gradient(x, params)
        ps = np.concatenate([dtheta, dx])
        _, adj_theta, adj_x = qcnn_vjp(x[None, :], params, np.ones(1))
        adj = np.concatenate([adj_theta, adj_x[0]])
        if corrupt:
            ps[0] += 1e-3
            adj[0] += 1e-3
        shift.append(compare(ps, ref))
        adjoint.append(compare(adj, ref))
        coords = ref.size
    return (_merge("parameter-shift vs finite differences", shift, coords),
            _merge("adjoint vs finite differences", adjoint, coords))


def model_check(seed: int = 0, corrupt: bool = False) -> CheckReport:
    """Chain-rule gradient of a weighted sum of per-window outputs on a tiny
    end-to-end instance (C=2, T=8, K=3, d=1, n=4, L=1)."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(kernel=3, dilation=1, n_qubits=4, n_layers=1)
    X = TimeSeries(rng.standard_normal((2, 8)))
    params = HqtcnParams.init(rng, 2, cfg)
    flat = params.flat()
    upstream = rng.standard_normal(X.steps - cfg.start)

    def loss(theta):
        return float(upstream @ hqtcn_forward(X, HqtcnParams.from_flat(theta, 2 * cfg.kernel, cfg), cfg))

    ref = central_difference(loss, flat)
    grad = hqtcn_gradient(X, params, cfg, upstream).flat()
    if corrupt:
        grad[0] += 1e-3
    return _merge("end-to-end chain rule vs finite differences", [compare(grad, ref)], ref.size)


def run_all(seed: int = 0, points: int = 20, corrupt: bool = False) -> list[CheckReport]:
    return [*circuit_check(seed, points=points, corrupt=corrupt), model_check(seed, corrupt=corrupt)]

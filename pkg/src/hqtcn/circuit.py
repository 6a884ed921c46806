"""QCNN ansatz: angle embedding, ring convolution, controlled-rotation pooling.

Each layer acts on the full register (no qubit is physically removed):

* convolution: one 15-parameter two-qubit unit on every ring pair
  ``(0,1), (1,2), ..., (n-1,0)``. The unit is
  ``Rot(c)⊗Rot(d) · exp(-i(αXX + βYY + γZZ)/2) · Rot(a)⊗Rot(b)`` with
  ``Rot(φ, θ, ω) = RZ(ω) RY(θ) RZ(φ)``, parameters ordered
  ``a1 a2 a3 b1 b2 b3 α β γ c1 c2 c3 d1 d2 d3``.
* pooling: controlled ``Rot(φ, θ, ω)`` with control ``2k+1`` and target
  ``2k`` for ``k < n/2``.

Pooled qubits are never read again; the readout is ``<Z>`` on qubit 0, which
equals the expectation on the reduced state after tracing the pooled qubits.

Every primitive is ``exp(-i θ G / 2)`` with ``G³ = G``: Pauli strings
(``G² = I``) for convolution, ``|1><1| ⊗ P`` for pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import quantum as qs
from .parallel import chunk_slices, ordered_map

CONV_SIZE = 15
POOL_SIZE = 3

_I, _X, _Y, _Z = qs.PAULI_I, qs.PAULI_X, qs.PAULI_Y, qs.PAULI_Z
_P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def _rot_generators(first: bool) -> list[np.ndarray]:
    k = (lambda p: np.kron(p, _I)) if first else (lambda p: np.kron(_I, p))
    return [k(_Z), k(_Y), k(_Z)]


CONV_GENERATORS = np.array(
    _rot_generators(True)
    + _rot_generators(False)
    + [np.kron(_X, _X), np.kron(_Y, _Y), np.kron(_Z, _Z)]
    + _rot_generators(True)
    + _rot_generators(False)
)
POOL_GENERATORS = np.array([np.kron(_P1, _Z), np.kron(_P1, _Y), np.kron(_P1, _Z)])


def quantum_param_count(n: int, n_layers: int) -> int:
    if n % 2:
        raise ValueError(f"qubit count must be even, got {n}")
    return n_layers * (CONV_SIZE * n + POOL_SIZE * (n // 2))


@dataclass(frozen=True)
class CircuitParams:
    """Circuit angles, ``conv`` of shape ``(L, n, 15)``, ``pool`` ``(L, n/2, 3)``.

    Flat layout (used by every gradient): layer by layer, that layer's
    convolution block then its pooling block, row-major.
    """

    n_qubits: int
    n_layers: int
    conv: np.ndarray
    pool: np.ndarray

    def __post_init__(self):
        n, L = self.n_qubits, self.n_layers
        if n < 2 or n % 2:
            raise ValueError(f"qubit count must be even and >= 2, got {n}")
        if L < 1:
            raise ValueError(f"layer count must be >= 1, got {L}")
        conv = np.array(self.conv, dtype=float).reshape(L, n, CONV_SIZE)
        pool = np.array(self.pool, dtype=float).reshape(L, n // 2, POOL_SIZE)
        if not (np.all(np.isfinite(conv)) and np.all(np.isfinite(pool))):
            raise ValueError("circuit parameters must be finite")
        conv.setflags(write=False)
        pool.setflags(write=False)
        object.__setattr__(self, "conv", conv)
        object.__setattr__(self, "pool", pool)

    @classmethod
    def zeros(cls, n_qubits: int = 8, n_layers: int = 2) -> "CircuitParams":
        return cls.from_flat(np.zeros(quantum_param_count(n_qubits, n_layers)), n_qubits, n_layers)

    @classmethod
    def random(cls, rng: np.random.Generator, n_qubits: int = 8, n_layers: int = 2,
               scale: float = 2 * math.pi) -> "CircuitParams":
        flat = rng.uniform(0.0, scale, quantum_param_count(n_qubits, n_layers))
        return cls.from_flat(flat, n_qubits, n_layers)

    @classmethod
    def from_flat(cls, flat, n_qubits: int, n_layers: int) -> "CircuitParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (quantum_param_count(n_qubits, n_layers),):
            raise ValueError(
                f"expected {quantum_param_count(n_qubits, n_layers)} parameters, got {flat.shape}"
            )
        per_conv = n_qubits * CONV_SIZE
        per_layer = per_conv + (n_qubits // 2) * POOL_SIZE
        layers = flat.reshape(n_layers, per_layer)
        return cls(n_qubits, n_layers, layers[:, :per_conv], layers[:, per_conv:])

    def flat(self) -> np.ndarray:
        L = self.n_layers
        return np.concatenate([self.conv.reshape(L, -1), self.pool.reshape(L, -1)], axis=1).ravel()

    @property
    def size(self) -> int:
        return quantum_param_count(self.n_qubits, self.n_layers)


@dataclass(frozen=True)
class Block:
    kind: str  # "conv" or "pool"
    qubits: tuple[int, int]  # (first, second); pool: (control, target)
    offset: int  # start in the flat parameter vector

    @property
    def generators(self) -> np.ndarray:
        return CONV_GENERATORS if self.kind == "conv" else POOL_GENERATORS

    @property
    def size(self) -> int:
        return CONV_SIZE if self.kind == "conv" else POOL_SIZE


def ring_pairs(active: Sequence[int]) -> list[tuple[int, int]]:
    m = len(active)
    return [(active[i], active[(i + 1) % m]) for i in range(m)]


def pool_pairs(n: int) -> list[tuple[int, int]]:
    return [(2 * k + 1, 2 * k) for k in range(n // 2)]


@lru_cache(maxsize=None)
def circuit_layout(n: int, n_layers: int) -> tuple[Block, ...]:
    blocks = []
    offset = 0
    for _ in range(n_layers):
        for pair in ring_pairs(range(n)):
            blocks.append(Block("conv", pair, offset))
            offset += CONV_SIZE
        for pair in pool_pairs(n):
            blocks.append(Block("pool", pair, offset))
            offset += POOL_SIZE
    return tuple(blocks)


def _primitives(generators: np.ndarray, angles) -> np.ndarray:
    """``exp(-i θ_k G_k / 2)`` for every generator at once (each ``G^3 = G``)."""
    theta = np.asarray(angles, dtype=float).reshape(-1, 1, 1) / 2
    g2 = generators @ generators
    return (np.eye(4) - g2) + np.cos(theta) * g2 - 1j * np.sin(theta) * generators


def block_unitary(generators: np.ndarray, angles) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for p in _primitives(generators, angles):
        u = p @ u
    return u


def block_unitary_and_derivatives(generators: np.ndarray, angles) -> tuple[np.ndarray, np.ndarray]:
    """The block unitary and its derivative w.r.t. each angle, shape ``(m, 4, 4)``."""
    prims = _primitives(generators, angles)
    m = len(prims)
    # before[k] = P_{k-1}...P_0, after[k] = P_{m-1}...P_{k+1}
    before = [np.eye(4, dtype=complex)]
    for p in prims[:-1]:
        before.append(p @ before[-1])
    after = [np.eye(4, dtype=complex)] * m
    acc = np.eye(4, dtype=complex)
    for k in range(m - 1, -1, -1):
        after[k] = acc
        acc = acc @ prims[k]
    derivs = np.array([
        after[k] @ (-0.5j * generators[k] @ prims[k]) @ before[k] for k in range(m)
    ])
    return acc, derivs


def _block_angles(blk: Block, flat: np.ndarray) -> np.ndarray:
    return flat[blk.offset:blk.offset + blk.size]


# ---------------------------------------------------------------------------
# Typed, single-state operations
# ---------------------------------------------------------------------------


def embed_batch(features: np.ndarray) -> np.ndarray:
    """RY angle embedding of every row of ``features`` into a ``(B, 2**n)`` array."""
    half = np.asarray(features, dtype=float) / 2
    c, s = np.cos(half), np.sin(half)
    b, n = half.shape
    psi = np.stack([c[:, 0], s[:, 0]], axis=1)
    for i in range(1, n):
        f = np.stack([c[:, i], s[:, i]], axis=1)
        psi = (psi[:, :, None] * f[:, None, :]).reshape(b, -1)
    return psi.astype(complex)


def angle_embed(features, n_qubits: int | None = None) -> qs.StateVector:
    x = np.asarray(features, dtype=float).reshape(-1)
    if n_qubits is not None and x.shape[0] != n_qubits:
        raise ValueError(f"expected {n_qubits} features, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    return qs.StateVector(x.shape[0], embed_batch(x[None, :])[0])


def conv_sublayer(state: qs.StateVector, layer_params, active: Sequence[int] | None = None) -> qs.StateVector:
    n = state.n_qubits
    active = list(range(n)) if active is None else list(active)
    params = np.asarray(layer_params, dtype=float).reshape(len(active), CONV_SIZE)
    psi = state.amplitudes.reshape(1, -1)
    for (q0, q1), angles in zip(ring_pairs(active), params):
        psi = qs.apply_2q(psi, block_unitary(CONV_GENERATORS, angles), q0, q1, n)
    return qs.StateVector(n, psi[0])


def pool_sublayer(state: qs.StateVector, layer_params) -> qs.StateVector:
    n = state.n_qubits
    params = np.asarray(layer_params, dtype=float).reshape(n // 2, POOL_SIZE)
    psi = state.amplitudes.reshape(1, -1)
    for (ctrl, tgt), angles in zip(pool_pairs(n), params):
        psi = qs.apply_2q(psi, block_unitary(POOL_GENERATORS, angles), ctrl, tgt, n)
    return qs.StateVector(n, psi[0])


def qcnn_forward(features, params: CircuitParams) -> float:
    """Embed, run every conv/pool layer, return ``<Z_0>``."""
    state = angle_embed(features, params.n_qubits)
    for layer in range(params.n_layers):
        state = conv_sublayer(state, params.conv[layer])
        state = pool_sublayer(state, params.pool[layer])
    return qs.expectation_pauli_z(state, 0)


# ---------------------------------------------------------------------------
# Batched hot path
# ---------------------------------------------------------------------------


def _unitaries(params: CircuitParams) -> list[np.ndarray]:
    flat = params.flat()
    return [block_unitary(b.generators, _block_angles(b, flat))
            for b in circuit_layout(params.n_qubits, params.n_layers)]


def _check_features(features: np.ndarray, n: int) -> np.ndarray:
    e = np.asarray(features, dtype=float)
    if e.ndim != 2 or e.shape[1] != n:
        raise ValueError(f"features must have shape (batch, {n}), got {e.shape}")
    return e


def qcnn_forward_batch(features: np.ndarray, params: CircuitParams, threads: int = 1) -> np.ndarray:
    """``<Z_0>`` for each row of ``features`` (shape ``(B, n)``)."""
    n = params.n_qubits
    e = _check_features(features, n)
    blocks = circuit_layout(n, params.n_layers)
    us = _unitaries(params)

    def run(sl: slice) -> np.ndarray:
        psi = embed_batch(e[sl])
        for blk, u in zip(blocks, us):
            psi = qs.apply_2q(psi, u, blk.qubits[0], blk.qubits[1], n)
        return qs.z_expectation(psi, 0, n)

    parts = ordered_map(run, chunk_slices(e.shape[0]), threads)
    return np.concatenate(parts) if parts else np.zeros(0)


def qcnn_vjp(features: np.ndarray, params: CircuitParams,
             upstream: np.ndarray | Callable[[np.ndarray], np.ndarray],
             threads: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint-mode vector-Jacobian product.

    ``upstream`` is either an array with one weight per row or a callable
    mapping the forward outputs to that array (so a loss gradient can be
    formed without a second forward pass). Returns
    ``(outputs, dparams, dfeatures)``: ``dparams`` is
    ``sum_b upstream[b] * d out_b / d theta`` in the flat layout, summed
    chunk by chunk in chunk order, and
    ``dfeatures[b] = upstream[b] * d out_b / d features[b]``.
    """
    n = params.n_qubits
    e = _check_features(features, n)
    blocks = circuit_layout(n, params.n_layers)
    flat = params.flat()
    mats = [block_unitary_and_derivatives(b.generators, _block_angles(b, flat)) for b in blocks]
    slices = chunk_slices(e.shape[0])

    def forward(sl: slice) -> np.ndarray:
        psi = embed_batch(e[sl])
        for blk, (u, _) in zip(blocks, mats):
            psi = qs.apply_2q(psi, u, blk.qubits[0], blk.qubits[1], n)
        return psi

    finals = ordered_map(forward, slices, threads)
    outputs = (np.concatenate([qs.z_expectation(p, 0, n) for p in finals])
               if finals else np.zeros(0))
    g = upstream(outputs) if callable(upstream) else upstream
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.shape[0] != e.shape[0]:
        raise ValueError(f"upstream has {g.shape[0]} entries for {e.shape[0]} rows")

    def backward(job):
        sl, psi = job
        lam = qs.apply_z(psi, 0, n) * g[sl, None]
        dtheta = np.zeros(flat.shape[0])
        for blk, (u, du) in zip(reversed(blocks), reversed(mats)):
            psi, lam, overlap = qs.unapply_2q_with_overlap(psi, lam, u, blk.qubits[0], blk.qubits[1], n)
            dtheta[blk.offset:blk.offset + blk.size] = 2.0 * np.real(np.einsum("kab,ab->k", du, overlap))
        return dtheta, _embedding_vjp(psi, lam, e[sl])

    parts = ordered_map(backward, list(zip(slices, finals)), threads)
    dtheta = np.zeros(flat.shape[0])
    for d, _ in parts:
        dtheta += d
    dx = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, n))
    return outputs, dtheta, dx


def _embedding_vjp(psi: np.ndarray, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-row gradient through the RY embedding; ``psi``/``lam`` are the state
    and co-state right after embedding."""
    b, n = x.shape
    dx = np.zeros((b, n))
    half = x / 2
    for i in range(n - 1, -1, -1):
        v = psi.reshape(b, 2**i, 2, -1)
        w = lam.reshape(b, 2**i, 2, -1)
        # d/dx <RY(x)> = Im <lam| Y |psi>
        dx[:, i] = np.real(
            np.sum(w[:, :, 1].conj() * v[:, :, 0] - w[:, :, 0].conj() * v[:, :, 1], axis=(1, 2))
        )
        if i:
            c, s = np.cos(half[:, i]), np.sin(half[:, i])
            inv = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], 1)
            psi = qs.apply_1q(psi, inv, i, n)
            lam = qs.apply_1q(lam, inv, i, n)
    return dx


# ---------------------------------------------------------------------------
# Parameter-shift reference gradient
# ---------------------------------------------------------------------------

SHIFT = math.pi / 2
# Four-term rule for generators with spectrum {0, ±1}.
_C_NEAR = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_C_FAR = (math.sqrt(2) - 1) / (4 * math.sqrt(2))


def _shift_terms(controlled: bool) -> list[tuple[float, float]]:
    """(coefficient, shift) pairs whose weighted sum of evaluations is the derivative."""
    if not controlled:
        return [(0.5, SHIFT), (-0.5, -SHIFT)]
    return [(_C_NEAR, SHIFT), (-_C_NEAR, -SHIFT), (-_C_FAR, 3 * SHIFT), (_C_FAR, -3 * SHIFT)]


def qcnn_gradient(features, params: CircuitParams, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of :func:`qcnn_forward` by parameter shifts.

    Pauli-generator angles (convolution, embedding) use the two-point
    ``±π/2`` rule; controlled-rotation angles (pooling) use the four-term
    rule at ``±π/2, ±3π/2``. Returns ``(dparams_flat, dfeatures)``; their
    combined length is ``params.size + n``.

    Shifted circuits share the unshifted prefix up to the shifted block, so
    the state before each block is computed once and every shifted variant
    of that block is pushed through the remaining blocks as one batch.
    """
    n, L = params.n_qubits, params.n_layers
    x = np.asarray(features, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise ValueError(f"expected {n} features, got {x.shape[0]}")
    flat = params.flat()
    blocks = circuit_layout(n, L)
    us = _unitaries(params)

    def finish(psi: np.ndarray, start: int) -> np.ndarray:
        for blk, u in zip(blocks[start:], us[start:]):
            psi = qs.apply_2q(psi, u, blk.qubits[0], blk.qubits[1], n)
        return qs.z_expectation(psi, 0, n)

    prefix = [embed_batch(x[None, :])]
    for blk, u in zip(blocks, us):
        prefix.append(qs.apply_2q(prefix[-1], u, blk.qubits[0], blk.qubits[1], n))

    def block_grad(k: int) -> np.ndarray:
        blk = blocks[k]
        angles = _block_angles(blk, flat)
        terms = _shift_terms(blk.kind == "pool")
        rows = []
        for j in range(blk.size):
            for _, s in terms:
                shifted = angles.copy()
                shifted[j] += s
                u = block_unitary(blk.generators, shifted)
                rows.append(qs.apply_2q(prefix[k], u, blk.qubits[0], blk.qubits[1], n))
        values = finish(np.concatenate(rows), k + 1).reshape(blk.size, len(terms))
        return values @ np.array([c for c, _ in terms])

    dtheta = np.concatenate(ordered_map(block_grad, range(len(blocks)), threads))

    terms = _shift_terms(False)
    shifted_x = np.repeat(x[None, :], n * len(terms), axis=0)
    for i in range(n):
        for t, (_, s) in enumerate(terms):
            shifted_x[i * len(terms) + t, i] += s
    values = finish(embed_batch(shifted_x), 0).reshape(n, len(terms))
    dx = values @ np.array([c for c, _ in terms])
    return dtheta, dx

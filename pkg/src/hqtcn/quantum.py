"""Dense n-qubit simulation: pure states, density matrices, gates, partial trace.

Bit-order convention: qubit 0 is the most significant bit of a basis index, so
for ``n`` qubits the basis state ``|b_0 b_1 ... b_{n-1}>`` sits at index
``sum(b_q << (n - 1 - q))``. Every routine in the package follows it.

Two layers live here. The typed layer (:class:`StateVector`,
:class:`DensityMatrix`, :class:`Gate` and the functions operating on them) is
immutable and validated. The batched kernels at the bottom operate on raw
``(batch, 2**n)`` complex arrays and carry the hot path of the circuit
simulator; they skip validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

MAX_QUBITS = 12
NORM_TOL = 1e-10

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _check_qubits(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in [1, {MAX_QUBITS}], got {n!r}")


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state over ``n_qubits`` qubits."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_qubits(self.n_qubits)
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"{self.n_qubits} qubits need {2**self.n_qubits} amplitudes, got {amps.shape[0]}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm={norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = False) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = int(round(math.log2(amps.shape[0]))) if amps.shape[0] > 0 else 0
        if 2**n != amps.shape[0]:
            raise ValueError(f"amplitude count {amps.shape[0]} is not a power of two")
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state as a ``2**n x 2**n`` Hermitian, unit-trace matrix."""

    n_qubits: int
    entries: np.ndarray

    def __post_init__(self):
        _check_qubits(self.n_qubits)
        rho = _frozen(self.entries)
        dim = 2**self.n_qubits
        if rho.shape != (dim, dim):
            raise ValueError(f"expected shape {(dim, dim)}, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > NORM_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) > NORM_TOL:
            raise ValueError(f"density matrix trace is {np.trace(rho)!r}, expected 1")
        object.__setattr__(self, "entries", rho)

    def expectation(self, observable: np.ndarray) -> float:
        """Tr[H rho] for a Hermitian ``observable`` on all qubits."""
        return float(np.real(np.trace(np.asarray(observable) @ self.entries)))


@dataclass(frozen=True)
class Gate:
    """A one- or two-qubit unitary."""

    matrix: np.ndarray

    def __post_init__(self):
        u = _frozen(self.matrix)
        if u.shape not in ((2, 2), (4, 4)):
            raise ValueError(f"gate must be 2x2 or 4x4, got {u.shape}")
        if np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > NORM_TOL:
            raise ValueError("gate matrix is not unitary")
        object.__setattr__(self, "matrix", u)

    @property
    def arity(self) -> int:
        return 1 if self.matrix.shape[0] == 2 else 2


def basis_state(n: int) -> StateVector:
    """|0...0> on ``n`` qubits."""
    _check_qubits(n)
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1.0
    return StateVector(n, amps)


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """exp(-i angle P / 2) for the Pauli named by ``axis``."""
    p = PAULIS[axis.upper()]
    return math.cos(angle / 2) * PAULI_I - 1j * math.sin(angle / 2) * p


def make_rotation(axis: str, angle: float) -> Gate:
    if axis.upper() not in PAULIS:
        raise ValueError(f"rotation axis must be one of X, Y, Z, got {axis!r}")
    if not math.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle!r}")
    return Gate(rotation_matrix(axis, float(angle)))


def cnot() -> Gate:
    return Gate(CNOT)


def apply_gate(state: StateVector, g: Gate, targets: Sequence[int]) -> StateVector:
    """Apply ``g`` to ``targets``; for two-qubit gates the first target is the
    more significant factor of the 4x4 matrix (control, for CNOT)."""
    targets = [int(t) for t in targets]
    if len(targets) != g.arity:
        raise ValueError(f"{g.arity}-qubit gate given {len(targets)} targets")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate target qubits {targets}")
    for t in targets:
        if not 0 <= t < state.n_qubits:
            raise ValueError(f"target {t} out of range for {state.n_qubits} qubits")
    psi = state.amplitudes.reshape(1, -1)
    if g.arity == 1:
        out = apply_1q(psi, g.matrix, targets[0], state.n_qubits)
    else:
        out = apply_2q(psi, g.matrix, targets[0], targets[1], state.n_qubits)
    return StateVector(state.n_qubits, out[0])


def expectation_pauli_z(state: StateVector, q: int) -> float:
    if not 0 <= q < state.n_qubits:
        raise ValueError(f"qubit {q} out of range for {state.n_qubits} qubits")
    return float(z_expectation(state.amplitudes.reshape(1, -1), q, state.n_qubits)[0])


def density_from_state(state: StateVector) -> DensityMatrix:
    a = state.amplitudes
    return DensityMatrix(state.n_qubits, np.outer(a, a.conj()))


def partial_trace(rho: DensityMatrix, traced: Iterable[int]) -> DensityMatrix:
    """Reduced state on the qubits not in ``traced``; kept qubits keep their
    relative order (and the MSB convention)."""
    n = rho.n_qubits
    traced = sorted({int(q) for q in traced})
    if not traced or len(traced) >= n:
        raise ValueError("traced set must be a proper nonempty subset of the qubits")
    if traced[0] < 0 or traced[-1] >= n:
        raise ValueError(f"traced qubits {traced} out of range for {n} qubits")
    kept = [q for q in range(n) if q not in traced]
    t = rho.entries.reshape((2,) * (2 * n))
    # Row index letters a.., column letters shared with row on traced qubits.
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows = list(letters[:n])
    cols = [rows[q] if q in traced else letters[n + q] for q in range(n)]
    out = [rows[q] for q in kept] + [cols[q] for q in kept]
    reduced = np.einsum("".join(rows + cols) + "->" + "".join(out), t)
    dim = 2 ** len(kept)
    return DensityMatrix(len(kept), reduced.reshape(dim, dim))


# ---------------------------------------------------------------------------
# Batched kernels on raw (batch, 2**n) arrays.
# ---------------------------------------------------------------------------


def apply_1q(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply a 2x2 matrix on qubit ``q``; ``u`` may be ``(2, 2)`` or one matrix
    per row ``(batch, 2, 2)``."""
    b = psi.shape[0]
    v = psi.reshape(b, 2**q, 2, 2 ** (n - q - 1))
    if u.ndim == 2:
        out = np.einsum("ij,bljr->blir", u, v)
    else:
        out = np.einsum("bij,bljr->blir", u, v)
    return out.reshape(b, -1)


def _pair_perm(q0: int, q1: int, n: int) -> list[int]:
    return [0] + [1 + i for i in range(n) if i != q0 and i != q1] + [1 + q0, 1 + q1]


def _to_pair_last(psi: np.ndarray, perm: list[int], n: int) -> np.ndarray:
    b = psi.shape[0]
    return psi.reshape((b,) + (2,) * n).transpose(perm).reshape(-1, 4)


def _from_pair_last(w: np.ndarray, perm: list[int], b: int, n: int) -> np.ndarray:
    w = w.reshape((b,) + (2,) * n).transpose(np.argsort(perm))
    return np.ascontiguousarray(w).reshape(b, -1)


def apply_2q(psi: np.ndarray, u: np.ndarray, q0: int, q1: int, n: int) -> np.ndarray:
    """Apply a 4x4 matrix on ordered qubits ``(q0, q1)`` to every row."""
    perm = _pair_perm(q0, q1, n)
    w = _to_pair_last(psi, perm, n) @ u.T
    return _from_pair_last(w, perm, psi.shape[0], n)


def unapply_2q_with_overlap(
    psi: np.ndarray, lam: np.ndarray, u: np.ndarray, q0: int, q1: int, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One reverse step of adjoint differentiation through a 4x4 block.

    Given the state ``psi`` and co-state ``lam`` just after ``u`` acted on
    ``(q0, q1)``, return ``(U^dag psi, U^dag lam, M)`` with
    ``M[a, b] = sum conj(lam[.., a, ..]) * (U^dag psi)[.., b, ..]`` over every
    other index including the batch.
    """
    b = psi.shape[0]
    perm = _pair_perm(q0, q1, n)
    uc = u.conj()
    psi_prev = _to_pair_last(psi, perm, n) @ uc
    lam_t = _to_pair_last(lam, perm, n)
    overlap = lam_t.conj().T @ psi_prev
    lam_prev = lam_t @ uc
    return (
        _from_pair_last(psi_prev, perm, b, n),
        _from_pair_last(lam_prev, perm, b, n),
        overlap,
    )


def z_expectation(psi: np.ndarray, q: int, n: int) -> np.ndarray:
    """<Z_q> for every row of ``psi``."""
    b = psi.shape[0]
    p = np.abs(psi.reshape(b, 2**q, 2, 2 ** (n - q - 1))) ** 2
    return p[:, :, 0, :].sum(axis=(1, 2)) - p[:, :, 1, :].sum(axis=(1, 2))


def apply_z(psi: np.ndarray, q: int, n: int) -> np.ndarray:
    b = psi.shape[0]
    out = psi.reshape(b, 2**q, 2, 2 ** (n - q - 1)).copy()
    out[:, :, 1, :] *= -1
    return out.reshape(b, -1)

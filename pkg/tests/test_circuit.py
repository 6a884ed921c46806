import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from hqtcn import quantum as qs
from hqtcn.circuit import (
    CircuitParams,
    angle_embed,
    block_unitary,
    block_unitary_and_derivatives,
    circuit_layout,
    CONV_GENERATORS,
    conv_sublayer,
    pool_sublayer,
    POOL_GENERATORS,
    qcnn_forward,
    qcnn_forward_batch,
    qcnn_gradient,
    qcnn_vjp,
    quantum_param_count,
)
from hqtcn.gradcheck import central_difference, circuit_check

from test_quantum import dense_on, random_state

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0 + 0j, -1.0])
I2 = np.eye(2)


def rz(a):
    return expm(-0.5j * a * Z)


def ry(a):
    return expm(-0.5j * a * Y)


def rot(phi, theta, omega):
    return rz(omega) @ ry(theta) @ rz(phi)


def conv_unit(p):
    a, b, (al, be, ga), c, d = p[0:3], p[3:6], p[6:9], p[9:12], p[12:15]
    inter = expm(-0.5j * (al * np.kron(X, X) + be * np.kron(Y, Y) + ga * np.kron(Z, Z)))
    return np.kron(rot(*c), rot(*d)) @ inter @ np.kron(rot(*a), rot(*b))


def pool_unit(p):
    """Controlled Rot; first factor is the control."""
    p0, p1 = np.diag([1, 0]), np.diag([0, 1])
    return np.kron(p0, I2) + np.kron(p1, rot(*p))


def dense_forward(x, params: CircuitParams):
    """Full 2^n x 2^n matrix pipeline on the density matrix: Tr[Z_0 U rho U^dag]."""
    n = params.n_qubits
    psi = reduce(np.kron, [ry(v) @ np.array([1, 0]) for v in x])
    rho = np.outer(psi, psi.conj())
    for layer in range(params.n_layers):
        u = np.eye(2**n, dtype=complex)
        for i in range(n):
            u = dense_on(conv_unit(params.conv[layer, i]), [i, (i + 1) % n], n) @ u
        for k in range(n // 2):
            u = dense_on(pool_unit(params.pool[layer, k]), [2 * k + 1, 2 * k], n) @ u
        rho = u @ rho @ u.conj().T
    z0 = reduce(np.kron, [Z] + [I2] * (n - 1))
    return float(np.real(np.trace(z0 @ rho)))


class TestParams:
    @pytest.mark.parametrize("L,count", [(1, 132), (2, 264), (3, 396)])
    def test_counts(self, L, count):
        assert quantum_param_count(8, L) == count
        assert CircuitParams.zeros(8, L).size == count

    def test_odd_qubits(self):
        with pytest.raises(ValueError):
            quantum_param_count(7, 1)

    def test_flat_round_trip(self):
        p = CircuitParams.random(np.random.default_rng(0), 8, 2)
        q = CircuitParams.from_flat(p.flat(), 8, 2)
        assert np.array_equal(p.conv, q.conv) and np.array_equal(p.pool, q.pool)

    def test_layout_offsets_cover_vector(self):
        blocks = circuit_layout(8, 2)
        assert [b.kind for b in blocks[:9]] == ["conv"] * 8 + ["pool"]
        assert sum(b.size for b in blocks) == 264
        assert [b.offset for b in blocks] == sorted(b.offset for b in blocks)

    def test_non_finite_rejected(self):
        conv = np.zeros((1, 8, 15))
        conv[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            CircuitParams(8, 1, conv, np.zeros((1, 4, 3)))


class TestUnits:
    def test_zero_params_identity(self):
        assert np.allclose(block_unitary(CONV_GENERATORS, np.zeros(15)), np.eye(4), atol=1e-10)
        assert np.allclose(block_unitary(POOL_GENERATORS, np.zeros(3)), np.eye(4), atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-7, 7), min_size=15, max_size=15))
    def test_conv_unit_matches_definition(self, angles):
        assert np.allclose(block_unitary(CONV_GENERATORS, angles), conv_unit(angles), atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-7, 7), min_size=3, max_size=3))
    def test_pool_unit_matches_controlled_rot(self, angles):
        assert np.allclose(block_unitary(POOL_GENERATORS, angles), pool_unit(angles), atol=1e-10)

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for gens in (CONV_GENERATORS, POOL_GENERATORS):
            a = rng.uniform(-3, 3, len(gens))
            _, du = block_unitary_and_derivatives(gens, a)
            for k in range(len(gens)):
                e = np.zeros(len(gens))
                e[k] = 1e-6
                fd = (block_unitary(gens, a + e) - block_unitary(gens, a - e)) / 2e-6
                assert np.allclose(du[k], fd, atol=1e-8)


class TestEmbedding:
    def test_zero_features(self):
        s = angle_embed(np.zeros(8))
        assert s.amplitudes[0] == 1 and qs.expectation_pauli_z(s, 0) == 1

    def test_pi_on_first(self):
        s = angle_embed([math.pi] + [0] * 7)
        assert abs(qs.expectation_pauli_z(s, 0) + 1) < 1e-12
        for q in range(1, 8):
            assert abs(qs.expectation_pauli_z(s, q) - 1) < 1e-12

    def test_half_pi(self):
        assert abs(qs.expectation_pauli_z(angle_embed([math.pi / 2] * 8), 0)) < 1e-10

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            angle_embed(np.zeros(3), n_qubits=8)


class TestSublayers:
    def test_conv_zero_identity(self):
        s = random_state(np.random.default_rng(2), 8)
        assert np.allclose(conv_sublayer(s, np.zeros((8, 15))).amplitudes, s.amplitudes, atol=1e-10)

    def test_conv_single_alpha_matches_dense(self):
        p = np.zeros((8, 15))
        p[0, 6] = 0.7
        s = qs.basis_state(8)
        want = dense_on(expm(-0.35j * np.kron(X, X)), [0, 1], 8) @ s.amplitudes
        assert np.allclose(conv_sublayer(s, p).amplitudes, want, atol=1e-10)

    def test_conv_norm_preserved(self):
        rng = np.random.default_rng(3)
        s = random_state(rng, 8)
        for _ in range(100):
            s = conv_sublayer(s, rng.uniform(-np.pi, np.pi, (8, 15)))
        assert abs(np.linalg.norm(s.amplitudes) - 1) < 1e-10

    def test_pool_zero_identity(self):
        s = random_state(np.random.default_rng(4), 8)
        assert np.allclose(pool_sublayer(s, np.zeros((4, 3))).amplitudes, s.amplitudes, atol=1e-10)

    def test_pool_control_zero_leaves_target(self):
        rng = np.random.default_rng(5)
        s = angle_embed(rng.uniform(-3, 3, 8) * np.array([1, 0, 1, 0, 1, 0, 1, 0]))
        out = pool_sublayer(s, rng.uniform(-3, 3, (4, 3)))
        assert np.allclose(out.amplitudes, s.amplitudes, atol=1e-12)

    def test_pool_control_one_matches_controlled_matrix(self):
        # control (qubit 1) in |1>, target (qubit 0) in |+>
        s = angle_embed([math.pi / 2, math.pi] + [0] * 6)
        params = np.zeros((4, 3))
        params[0] = (math.pi, 0, 0)
        want = dense_on(pool_unit(params[0]), [1, 0], 8) @ s.amplitudes
        assert np.allclose(pool_sublayer(s, params).amplitudes, want, atol=1e-10)
        # RZ(pi) on |+> gives |->: relative sign between |0> and |1> of the target flips
        a = pool_sublayer(s, params).amplitudes.reshape(2, 2, -1)[:, 1, 0]
        assert abs(a[0] / a[1] + 1) < 1e-10


class TestForward:
    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_zero_everything(self, L):
        assert abs(qcnn_forward(np.zeros(8), CircuitParams.zeros(8, L)) - 1) < 1e-12

    def test_flipped_measured_qubit(self):
        assert abs(qcnn_forward([math.pi] + [0] * 7, CircuitParams.zeros(8, 2)) + 1) < 1e-12

    def test_zero_params_equals_embedding_alone(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.uniform(-np.pi, np.pi, 8)
            assert abs(qcnn_forward(x, CircuitParams.zeros(8, 2)) - math.cos(x[0])) < 1e-10

    @pytest.mark.parametrize("n", [4, 8])
    def test_matches_dense_pipeline(self, n):
        rng = np.random.default_rng(7 + n)
        for _ in range(10):
            p = CircuitParams.random(rng, n, 2)
            x = rng.uniform(-np.pi, np.pi, n)
            assert abs(qcnn_forward(x, p) - dense_forward(x, p)) < 1e-9

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        p = CircuitParams.random(rng, 8, 2)
        xs = rng.uniform(-3, 3, (1100, 8))
        batch = qcnn_forward_batch(xs, p)
        assert np.all(np.abs(batch) <= 1 + 1e-12)
        for i in (0, 511, 512, 1099):
            assert abs(batch[i] - qcnn_forward(xs[i], p)) < 1e-12

    def test_threads_bitwise_equal(self):
        rng = np.random.default_rng(9)
        p = CircuitParams.random(rng, 8, 2)
        xs = rng.uniform(-3, 3, (1500, 8))
        assert np.array_equal(qcnn_forward_batch(xs, p, threads=1), qcnn_forward_batch(xs, p, threads=3))
        up = rng.standard_normal(1500)
        a = qcnn_vjp(xs, p, up, threads=1)
        b = qcnn_vjp(xs, p, up, threads=4)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)


class TestGradients:
    def test_closed_form_single_qubit(self):
        p = CircuitParams.zeros(8, 1)
        _, dx = qcnn_gradient(np.zeros(8), p)
        assert abs(dx[0]) < 1e-12
        _, dx = qcnn_gradient([math.pi / 2] + [0] * 7, p)
        assert abs(dx[0] + 1) < 1e-12

    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_length(self, L):
        dtheta, dx = qcnn_gradient(np.zeros(8), CircuitParams.zeros(8, L))
        assert dtheta.size + dx.size == 132 * L + 8

    @pytest.mark.parametrize("L", [1, 3])
    def test_shift_matches_fd_h1e4(self, L):
        rng = np.random.default_rng(10 + L)
        p = CircuitParams.random(rng, 8, L)
        x = rng.uniform(-3, 3, 8)
        flat = p.flat()
        fd = central_difference(
            lambda t: qcnn_forward_batch(x[None], CircuitParams.from_flat(t, 8, L))[0], flat, h=1e-4)
        dtheta, dx = qcnn_gradient(x, p)
        assert np.all(np.abs(dtheta - fd) <= np.maximum(1e-5 * np.abs(fd), 1e-7))
        fdx = central_difference(lambda v: qcnn_forward_batch(v[None], p)[0], x, h=1e-4)
        assert np.all(np.abs(dx - fdx) <= np.maximum(1e-5 * np.abs(fdx), 1e-7))

    def test_adjoint_equals_shift(self):
        rng = np.random.default_rng(12)
        p = CircuitParams.random(rng, 8, 2)
        xs = rng.uniform(-3, 3, (5, 8))
        w = rng.standard_normal(5)
        out, dtheta, dx = qcnn_vjp(xs, p, w)
        want = sum(wi * qcnn_gradient(x, p)[0] for wi, x in zip(w, xs))
        assert np.allclose(dtheta, want, atol=1e-12)
        for i in range(5):
            assert np.allclose(dx[i], w[i] * qcnn_gradient(xs[i], p)[1], atol=1e-12)
        assert np.allclose(out, qcnn_forward_batch(xs, p))

    def test_callable_upstream(self):
        rng = np.random.default_rng(13)
        p = CircuitParams.random(rng, 4, 1)
        xs = rng.uniform(-3, 3, (6, 4))
        a = qcnn_vjp(xs, p, lambda out: 2 * out)
        b = qcnn_vjp(xs, p, 2 * qcnn_forward_batch(xs, p))
        assert np.allclose(a[1], b[1]) and np.allclose(a[2], b[2])

    def test_upstream_length_checked(self):
        p = CircuitParams.zeros(4, 1)
        with pytest.raises(ValueError):
            qcnn_vjp(np.zeros((3, 4)), p, np.ones(2))

    def test_suite_fails_on_corruption(self):
        shift, adjoint = circuit_check(seed=3, n_qubits=4, n_layers=1, points=1, corrupt=True)
        assert not shift.passed and not adjoint.passed
        shift, adjoint = circuit_check(seed=3, n_qubits=4, n_layers=1, points=2)
        assert shift.passed and adjoint.passed

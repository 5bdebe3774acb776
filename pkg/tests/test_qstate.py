import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reduction_lab.qstate import (
    DOWN_DOWN,
    DOWN_UP,
    PSI_INITIAL,
    SINGLET,
    TRIPLET_ZERO,
    UP_DOWN,
    UP_UP,
    HermiticityError,
    NormError,
    Observable,
    SphereCoordinates,
    StateVector,
    SubspaceError,
    bloch_coordinates,
    commutator_norm,
    expectation,
    hamiltonian,
    make_state,
    project_degenerate,
    s_squared,
    sigma_1z,
    sigma_2z,
    theta_phi_state,
    variance,
)

# Independent construction from single-particle Pauli matrices.
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]])
PZ = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2)


def total_spin_squared_oracle():
    comps = [0.5 * (np.kron(p, I2) + np.kron(I2, p)) for p in (PX, PY, PZ)]
    return sum(c @ c for c in comps)


def rand_state(rng):
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    return StateVector(v / np.linalg.norm(v))


angles = st.tuples(
    st.floats(0.0, math.pi, allow_nan=False),
    st.floats(0.0, 2 * math.pi, exclude_max=True, allow_nan=False),
)


class TestMakeState:
    def test_initial_state(self):
        assert make_state([0.5, 0.5, -0.5, 0.5]) == PSI_INITIAL
        np.testing.assert_array_equal(PSI_INITIAL.amplitudes, [0.5, 0.5, -0.5, 0.5])

    def test_basis(self):
        assert make_state([1, 0, 0, 0]) == UP_UP

    def test_rejects_unnormalised(self):
        with pytest.raises(NormError):
            make_state([1, 1, 0, 0])

    def test_rescales_small_deviation(self):
        s = make_state([1 + 1e-7, 0, 0, 0])
        assert abs(np.linalg.norm(s.amplitudes) - 1) < 1e-15

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            make_state([1, 0, 0])

    def test_state_is_read_only(self):
        with pytest.raises(ValueError):
            PSI_INITIAL.amplitudes[0] = 1.0


class TestOperators:
    def test_hamiltonian_spectrum(self):
        h = hamiltonian()
        np.testing.assert_array_equal(h.apply(UP_UP), UP_UP.amplitudes)
        np.testing.assert_array_equal(h.apply(DOWN_DOWN), -DOWN_DOWN.amplitudes)
        mix = make_state([0, 0.6, 0.8j, 0])
        np.testing.assert_array_equal(h.apply(mix), np.zeros(4))

    def test_hamiltonian_from_single_particle_spins(self):
        # sum of single-particle z-spins with eigenvalues +-1/2
        h = 0.5 * (np.kron(PZ, I2) + np.kron(I2, PZ))
        np.testing.assert_array_equal(hamiltonian().matrix, h)

    def test_local_spins_from_kron(self):
        np.testing.assert_array_equal(sigma_1z().matrix, np.kron(PZ, I2))
        np.testing.assert_array_equal(sigma_2z().matrix, np.kron(I2, PZ))

    def test_sigma1z_examples(self):
        obs = sigma_1z()
        assert expectation(PSI_INITIAL, obs) == 0.0
        assert expectation(UP_DOWN, obs) == 1.0
        assert expectation(DOWN_UP, obs) == -1.0
        assert expectation(UP_UP, obs) == 1.0
        assert expectation(DOWN_DOWN, obs) == -1.0
        assert expectation(UP_UP, obs) + expectation(DOWN_DOWN, obs) == 0.0

    def test_s_squared_matches_spin_algebra(self):
        np.testing.assert_allclose(s_squared().matrix, total_spin_squared_oracle(), atol=1e-15)

    def test_s_squared_examples(self):
        obs = s_squared()
        assert expectation(SINGLET, obs) == pytest.approx(0.0, abs=1e-15)
        assert expectation(TRIPLET_ZERO, obs) == pytest.approx(2.0, abs=1e-15)
        assert expectation(UP_DOWN, obs) == 1.0

    def test_observable_rejects_non_hermitian(self):
        m = np.zeros((4, 4))
        m[0, 1] = 1.0
        with pytest.raises(HermiticityError):
            Observable(m)

    def test_is_diagonal(self):
        assert hamiltonian().is_diagonal()
        assert not s_squared().is_diagonal()


class TestSphereMap:
    def test_north_pole(self):
        assert theta_phi_state(SphereCoordinates(0.0, 0.0)) == UP_DOWN

    def test_singlet(self):
        s = theta_phi_state(SphereCoordinates(math.pi / 2, math.pi))
        assert s.fidelity(SINGLET) == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(s.amplitudes, SINGLET.amplitudes, atol=1e-15)

    def test_triplet(self):
        s = theta_phi_state(SphereCoordinates(math.pi / 2, 0.0))
        np.testing.assert_allclose(s.amplitudes, TRIPLET_ZERO.amplitudes, atol=1e-15)

    def test_coordinate_ranges(self):
        with pytest.raises(ValueError):
            SphereCoordinates(-0.1, 0.0)
        with pytest.raises(ValueError):
            SphereCoordinates(0.0, 2 * math.pi)

    def test_inverse_singlet(self):
        c = bloch_coordinates(SINGLET)
        assert c.theta == pytest.approx(math.pi / 2, abs=1e-15)
        assert c.phi == pytest.approx(math.pi, abs=1e-15)

    def test_inverse_removes_global_phase(self):
        c = bloch_coordinates(StateVector(cmath.exp(0.7j) * UP_DOWN.amplitudes))
        assert (c.theta, c.phi) == (0.0, 0.0)

    def test_south_pole(self):
        c = bloch_coordinates(DOWN_UP)
        assert (c.theta, c.phi) == (math.pi, 0.0)

    def test_outside_subspace(self):
        with pytest.raises(SubspaceError):
            bloch_coordinates(PSI_INITIAL)

    @settings(max_examples=300, deadline=None)
    @given(angles, st.floats(0.0, 2 * math.pi))
    def test_round_trip(self, tp, gphase):
        theta, phi = tp
        state = theta_phi_state(SphereCoordinates(theta, phi))
        state = StateVector(cmath.exp(1j * gphase) * state.amplitudes)
        back = theta_phi_state(bloch_coordinates(state))
        assert back.fidelity(state) > 1 - 1e-12

    def test_project_degenerate(self):
        s = project_degenerate(PSI_INITIAL)
        assert s.fidelity(SINGLET) == pytest.approx(1.0, abs=1e-15)
        with pytest.raises(SubspaceError):
            project_degenerate(UP_UP)


class TestExpectationAndVariance:
    def test_variance_examples(self):
        assert variance(UP_UP, hamiltonian()) == 0.0
        assert variance(PSI_INITIAL, hamiltonian()) == 0.5
        assert variance(TRIPLET_ZERO, s_squared()) == pytest.approx(0.0, abs=1e-15)

    def test_commutator_examples(self):
        assert commutator_norm(hamiltonian(), sigma_1z()) == 0.0
        assert commutator_norm(hamiltonian(), s_squared()) == 0.0
        assert commutator_norm(sigma_1z(), s_squared()) == 2.0

    def test_complex_expectation_rejected(self):
        # bypass the Hermiticity check to reach the expectation guard
        obs = Observable(np.zeros((4, 4)))
        object.__setattr__(obs, "matrix", np.diag([1j, 0, 0, 0]))
        with pytest.raises(HermiticityError):
            expectation(UP_UP, obs)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_variance_matches_moments(self, seed):
        rng = np.random.default_rng(seed)
        state = rand_state(rng)
        for obs in (hamiltonian(), sigma_1z(), s_squared()):
            m = obs.matrix
            psi = state.amplitudes
            second = np.vdot(psi, m @ m @ psi).real
            first = np.vdot(psi, m @ psi).real
            assert variance(state, obs) == pytest.approx(second - first**2, abs=1e-12)
            assert variance(state, obs) >= 0.0


GRID = [(t, p) for t in np.linspace(0, math.pi, 40) for p in np.linspace(0, 2 * math.pi, 40, endpoint=False)]


def test_local_spin_identity_on_grid():
    obs = sigma_1z()
    for theta, phi in GRID:
        state = theta_phi_state(SphereCoordinates(theta, phi))
        assert abs(expectation(state, obs) - (2 * math.cos(theta / 2) ** 2 - 1)) < 1e-12


def test_total_spin_identity_on_grid():
    obs = s_squared()
    for theta, phi in GRID:
        state = theta_phi_state(SphereCoordinates(theta, phi))
        assert abs(expectation(state, obs) - (1 + math.sin(theta) * math.cos(phi))) < 1e-12


def test_triplet_singlet_expansion_on_grid():
    for theta, phi in GRID:
        a = math.cos(theta / 2)
        b = cmath.exp(1j * phi) * math.sin(theta / 2)
        expanded = ((a + b) * TRIPLET_ZERO.amplitudes + (a - b) * SINGLET.amplitudes) / math.sqrt(2)
        state = theta_phi_state(SphereCoordinates(theta, phi))
        assert np.max(np.abs(state.amplitudes - expanded)) < 1e-12

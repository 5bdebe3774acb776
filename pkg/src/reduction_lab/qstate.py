"""Exact linear algebra for two distinguishable spin-1/2 particles.

States live in C^4 with the product basis fixed as
``(uu, ud, du, dd)`` where ``u``/``d`` denote spin up/down along z.
Vectors in the degenerate zero-energy subspace span(ud, du) are
parameterised by sphere coordinates::

    |theta, phi> = cos(theta/2) |ud> + exp(i phi) sin(theta/2) |du>
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DIM = 4
BASIS_LABELS = ("uu", "ud", "du", "dd")

NORM_INPUT_TOL = 1e-6
IDENTITY_TOL = 1e-12
SUBSPACE_TOL = 1e-6
POLE_TOL = 1e-9
IMAG_TOL = 1e-9


class NormError(ValueError):
    """Amplitudes are too far from unit norm to be a state."""


class SubspaceError(ValueError):
    """State has weight outside the degenerate span(ud, du) subspace."""


class HermiticityError(ValueError):
    """Matrix or expectation value is not Hermitian/real within tolerance."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalised 4-component amplitude vector in the ``(uu, ud, du, dd)`` basis."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (DIM,):
            raise ValueError(f"expected {DIM} amplitudes, got shape {amps.shape}")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > 2 * IDENTITY_TOL:
            raise NormError(f"state norm^2 {norm2!r} is not 1")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return np.array_equal(self.amplitudes, other.amplitudes)

    def __hash__(self):
        return hash(self.amplitudes.tobytes())

    def inner(self, other: StateVector) -> complex:
        """Return <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: StateVector) -> float:
        """Return |<self|other>|^2, insensitive to global phase."""
        return abs(self.inner(other)) ** 2


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian 4x4 matrix."""

    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (DIM, DIM):
            raise ValueError(f"expected a {DIM}x{DIM} matrix, got shape {mat.shape}")
        dev = float(np.max(np.abs(mat - mat.conj().T)))
        if dev > IDENTITY_TOL:
            raise HermiticityError(f"matrix deviates from its adjoint by {dev:.3g}")
        object.__setattr__(self, "matrix", _frozen(mat))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, Observable):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def apply(self, state: StateVector) -> np.ndarray:
        return self.matrix @ state.amplitudes

    def is_diagonal(self) -> bool:
        return not np.any(self.matrix - np.diag(np.diag(self.matrix)))


@dataclass(frozen=True)
class SphereCoordinates:
    """Point on the sphere of the degenerate subspace, theta in [0, pi], phi in [0, 2 pi)."""

    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta={self.theta!r} outside [0, pi]")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise ValueError(f"phi={self.phi!r} outside [0, 2 pi)")


def make_state(amplitudes: Sequence[complex]) -> StateVector:
    """Build a state from amplitudes whose norm is within 1e-6 of one.

    The result is rescaled to exact unit norm.
    """
    amps = np.asarray(amplitudes, dtype=complex)
    if amps.shape != (DIM,):
        raise ValueError(f"expected {DIM} amplitudes, got shape {amps.shape}")
    norm = math.sqrt(float(np.vdot(amps, amps).real))
    if abs(norm - 1.0) > NORM_INPUT_TOL:
        raise NormError(f"input norm {norm!r} deviates from 1 by more than {NORM_INPUT_TOL}")
    return StateVector(amps / norm)


def basis_state(label: str) -> StateVector:
    amps = np.zeros(DIM, dtype=complex)
    amps[BASIS_LABELS.index(label)] = 1.0
    return StateVector(amps)


UP_UP = basis_state("uu")
UP_DOWN = basis_state("ud")
DOWN_UP = basis_state("du")
DOWN_DOWN = basis_state("dd")

_R2 = 1 / math.sqrt(2)
SINGLET = make_state([0, _R2, -_R2, 0])
TRIPLET_ZERO = make_state([0, _R2, _R2, 0])
PSI_INITIAL = make_state([0.5, 0.5, -0.5, 0.5])


def hamiltonian() -> Observable:
    """Zeeman Hamiltonian with eigenvalues +1 (uu), 0 (ud, du), -1 (dd)."""
    return Observable(np.diag([1.0, 0.0, 0.0, -1.0]), name="H")


def sigma_1z() -> Observable:
    """z-spin of particle 1 with eigenvalues +1/-1."""
    return Observable(np.diag([1.0, 1.0, -1.0, -1.0]), name="Sigma1z")


def sigma_2z() -> Observable:
    """z-spin of particle 2 with eigenvalues +1/-1."""
    return Observable(np.diag([1.0, -1.0, 1.0, -1.0]), name="Sigma2z")


def s_squared() -> Observable:
    """Total spin squared: 2 on the triplet, 0 on the singlet."""
    mat = np.array(
        [
            [2, 0, 0, 0],
            [0, 1, 1, 0],
            [0, 1, 1, 0],
            [0, 0, 0, 2],
        ],
        dtype=float,
    )
    return Observable(mat, name="S2")


def theta_phi_state(coords: SphereCoordinates) -> StateVector:
    """Map sphere coordinates to cos(theta/2)|ud> + e^{i phi} sin(theta/2)|du>."""
    half = 0.5 * coords.theta
    amps = np.zeros(DIM, dtype=complex)
    amps[1] = math.cos(half)
    amps[2] = complex(math.cos(coords.phi), math.sin(coords.phi)) * math.sin(half)
    return make_state(amps)


def bloch_coordinates(state: StateVector) -> SphereCoordinates:
    """Invert :func:`theta_phi_state` up to global phase.

    The ud amplitude is made real and non-negative; phi is pinned to 0 at
    the poles where it is undefined.
    """
    amps = state.amplitudes
    outside = max(abs(amps[0]), abs(amps[3]))
    if outside >= SUBSPACE_TOL:
        raise SubspaceError(f"uu/dd amplitude magnitude {outside:.3g} >= {SUBSPACE_TOL}")
    b, c = amps[1], amps[2]
    theta = 2.0 * math.atan2(abs(c), abs(b))
    if theta < POLE_TOL or math.pi - theta < POLE_TOL:
        return SphereCoordinates(min(max(theta, 0.0), math.pi), 0.0)
    rel = c * b.conjugate()
    phi = math.atan2(rel.imag, rel.real) % (2 * math.pi)
    if phi >= 2 * math.pi:
        phi = 0.0
    return SphereCoordinates(theta, phi)


def project_degenerate(state: StateVector) -> StateVector:
    """Normalised projection onto span(ud, du)."""
    amps = np.array(state.amplitudes)
    amps[0] = amps[3] = 0.0
    norm = math.sqrt(float(np.vdot(amps, amps).real))
    if norm < IDENTITY_TOL:
        raise SubspaceError("state has no weight in the degenerate subspace")
    return StateVector(amps / norm)


def expectation(state: StateVector, obs: Observable) -> float:
    """Return <psi|A|psi>, checked to be real."""
    value = complex(np.vdot(state.amplitudes, obs.matrix @ state.amplitudes))
    if abs(value.imag) > IMAG_TOL:
        raise HermiticityError(f"expectation has imaginary part {value.imag:.3g}")
    return value.real


def variance(state: StateVector, obs: Observable) -> float:
    """Return <A^2> - <A>^2, evaluated as ||(A - <A>) psi||^2."""
    mean = expectation(state, obs)
    centred = obs.matrix @ state.amplitudes - mean * state.amplitudes
    return max(float(np.vdot(centred, centred).real), 0.0)


def commutator_norm(a: Observable, b: Observable) -> float:
    """Max absolute entry of AB - BA."""
    comm = a.matrix @ b.matrix - b.matrix @ a.matrix
    return float(np.max(np.abs(comm)))

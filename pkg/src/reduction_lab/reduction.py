"""Energy-based stochastic reduction dynamics.

The state obeys the norm-preserving Ito equation::

    d psi = [-i H - 1/8 sum_k s_k^2 (A_k - <A_k>)^2] psi dt
            + sum_k (s_k / 2) (A_k - <A_k>) psi dW_k

where the generators ``A_k`` commute with ``H`` and with each other.
Expectations of observables commuting with every generator are
martingales and generator variances are supermartingales, so each run
ends in a joint eigenstate of the generators.

Integration is Euler-Maruyama followed by renormalisation.  Each
trajectory runs the same compiled scalar loop fed by its own counter-based
noise stream (see :mod:`reduction_lab.noise`), so its numbers do not depend
on which other trajectories share its batch or worker.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import noise
from .qstate import (
    DIM,
    HermiticityError,
    Observable,
    StateVector,
    commutator_norm,
    expectation,
    hamiltonian,
    sigma_1z,
    sigma_2z,
    variance,
)

COMMUTE_TOL = 1e-10
MAX_NORM_DRIFT = 0.5
NOISE_BLOCK = 256
WORKERS_ENV = "REDUCTION_LAB_WORKERS"

SNAPSHOT_FIELDS = ("time", "mean_energy", "energy_variance", "generator_variance")


class ModelError(ValueError):
    pass


class EmptyModelError(ModelError):
    pass


class NonCommutingError(ModelError):
    def __init__(self, first: str, second: str, norm: float):
        super().__init__(f"{first} and {second} do not commute (||[A, B]||_max = {norm:.3g})")
        self.pair = (first, second)
        self.norm = norm


class StepError(RuntimeError):
    """Pre-renormalisation norm moved by more than 0.5; dt is far too large."""


class NotCollapsedError(ValueError):
    pass


class NoCollapseError(RuntimeError):
    """Raised when trajectories hit ``max_steps`` before collapsing.

    ``trajectory`` holds the unfinished run for single-trajectory calls;
    ensemble callers attach the failure count and surviving results.
    """

    def __init__(self, message: str, trajectory=None, n_failed: int = 0, results=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.n_failed = n_failed
        self.results = results if results is not None else []


class ScheduleMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ReductionModel:
    generators: tuple[Observable, ...]
    couplings: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "couplings", tuple(float(c) for c in self.couplings))


@dataclass(frozen=True)
class SimulationParams:
    dt: float = 1e-3
    collapse_tol: float = 1e-10
    max_steps: int = 10_000_000
    snapshot_count: int = 50

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (self.collapse_tol > 0 and math.isfinite(self.collapse_tol)):
            raise ValueError(f"collapse_tol must be positive, got {self.collapse_tol!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if int(self.snapshot_count) != self.snapshot_count or self.snapshot_count < 0:
            raise ValueError(f"snapshot_count must be a non-negative integer, got {self.snapshot_count!r}")

    def snapshot_steps(self) -> np.ndarray:
        """Equally spaced step indices from 0 to ``max_steps`` inclusive."""
        count = int(self.snapshot_count)
        if count == 0:
            return np.zeros(0, dtype=np.int64)
        if count == 1:
            return np.zeros(1, dtype=np.int64)
        return np.array([j * int(self.max_steps) // (count - 1) for j in range(count)], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Trajectory:
    final_state: StateVector
    collapsed: bool
    steps_taken: int
    snapshots: np.ndarray = field(repr=False)
    seed: int

    def same_as(self, other: Trajectory) -> bool:
        """Bit-for-bit equality."""
        return (
            self.final_state == other.final_state
            and self.collapsed == other.collapsed
            and self.steps_taken == other.steps_taken
            and self.seed == other.seed
            and self.snapshots.shape == other.snapshots.shape
            and self.snapshots.tobytes() == other.snapshots.tobytes()
        )


def validate_model(model: ReductionModel) -> None:
    """Raise unless every generator commutes with H and with each other."""
    if not model.generators:
        raise EmptyModelError("reduction model has no generators")
    if len(model.couplings) != len(model.generators):
        raise ModelError(
            f"{len(model.generators)} generators but {len(model.couplings)} couplings"
        )
    for s in model.couplings:
        if not (s > 0 and math.isfinite(s)):
            raise ModelError(f"couplings must be positive, got {s!r}")
    ham = hamiltonian()
    labels = [g.name or f"A{k}" for k, g in enumerate(model.generators)]
    for k, gen in enumerate(model.generators):
        norm = commutator_norm(gen, ham)
        if norm >= COMMUTE_TOL:
            raise NonCommutingError(labels[k], "H", norm)
    for j in range(len(model.generators)):
        for k in range(j + 1, len(model.generators)):
            norm = commutator_norm(model.generators[j], model.generators[k])
            if norm >= COMMUTE_TOL:
                raise NonCommutingError(labels[j], labels[k], norm)


def model_energy(sigma: float = 1.0) -> ReductionModel:
    """Single generator: the Hamiltonian itself."""
    return ReductionModel((hamiltonian(),), (sigma,), name="energy")


def model_local_spins(sigma: float = 1.0) -> ReductionModel:
    """Independent z-spin generators for each particle."""
    return ReductionModel((sigma_1z(), sigma_2z()), (sigma, sigma), name="local-spins")


def drift(state: StateVector, model: ReductionModel) -> np.ndarray:
    """Drift vector [-iH - 1/8 sum s_k^2 (A_k - <A_k>)^2] psi."""
    psi = state.amplitudes
    out = -1j * (hamiltonian().matrix @ psi)
    for gen, s in zip(model.generators, model.couplings):
        shifted = gen.matrix - expectation(state, gen) * np.eye(DIM)
        out = out - (s * s / 8.0) * (shifted @ (shifted @ psi))
    return out


def diffusion(state: StateVector, model: ReductionModel, k: int) -> np.ndarray:
    """Noise vector (s_k / 2)(A_k - <A_k>) psi of generator ``k``."""
    if not 0 <= k < len(model.generators):
        raise IndexError(f"generator index {k} out of range for {len(model.generators)} generators")
    gen = model.generators[k]
    psi = state.amplitudes
    return 0.5 * model.couplings[k] * (gen.matrix @ psi - expectation(state, gen) * psi)


# Compiled kernels.  The dense and diagonal paths are separate top-level
# loops: a runtime branch between them inside one loop costs 2-3x per step.


@njit(cache=True, inline="always")
def _analyse(psi, gens, centred, means):
    """Fill centred[k] = (A_k - <A_k>) psi and means[k]; return the summed variance."""
    total = 0.0
    for k in range(gens.shape[0]):
        for i in range(DIM):
            acc = 0j
            for j in range(DIM):
                acc += gens[k, i, j] * psi[j]
            centred[k, i] = acc
        mean = 0.0
        for i in range(DIM):
            mean += (psi[i].conjugate() * centred[k, i]).real
        var = 0.0
        for i in range(DIM):
            c = centred[k, i] - mean * psi[i]
            centred[k, i] = c
            var += c.real * c.real + c.imag * c.imag
        means[k] = mean
        total += var
    return total


@njit(cache=True, inline="always")
def _advance(psi, ham, gens, couplings, centred, means, dt, dW, out):
    """Unnormalised Euler-Maruyama update written to ``out``; returns its norm."""
    n_gen = gens.shape[0]
    norm_sq = 0.0
    for i in range(DIM):
        h = 0j
        for j in range(DIM):
            h += ham[i, j] * psi[j]
        rate = -1j * h
        for k in range(n_gen):
            ac = 0j
            for j in range(DIM):
                ac += gens[k, i, j] * centred[k, j]
            rate -= (couplings[k] * couplings[k] / 8.0) * (ac - means[k] * centred[k, i])
        val = psi[i] + dt * rate
        for k in range(n_gen):
            val += (0.5 * couplings[k]) * centred[k, i] * dW[k]
        out[i] = val
        norm_sq += val.real * val.real + val.imag * val.imag
    return math.sqrt(norm_sq)


@njit(cache=True, inline="always")
def _analyse_diag(psi, gdiag, means):
    total = 0.0
    for k in range(gdiag.shape[0]):
        mean = 0.0
        for i in range(DIM):
            p = psi[i]
            mean += gdiag[k, i] * (p.real * p.real + p.imag * p.imag)
        var = 0.0
        for i in range(DIM):
            p = psi[i]
            d = gdiag[k, i] - mean
            var += d * d * (p.real * p.real + p.imag * p.imag)
        means[k] = mean
        total += var
    return total


@njit(cache=True, inline="always")
def _advance_diag(psi, hdiag, gdiag, couplings, means, dt, dW, out):
    # Each component is only rescaled by a real factor and rotated by -dt*h.
    n_gen = gdiag.shape[0]
    norm_sq = 0.0
    for i in range(DIM):
        factor = 1.0
        for k in range(n_gen):
            d = gdiag[k, i] - means[k]
            s = couplings[k]
            factor += (0.5 * s * d) * dW[k] - (s * s / 8.0) * d * d * dt
        phase = -dt * hdiag[i]
        p = psi[i]
        re = factor * p.real - phase * p.imag
        im = factor * p.imag + phase * p.real
        out[i] = complex(re, im)
        norm_sq += re * re + im * im
    return math.sqrt(norm_sq)


@njit(cache=True, inline="always")
def _rescale(out, norm, psi):
    inv = 1.0 / norm
    for i in range(DIM):
        psi[i] = complex(out[i].real * inv, out[i].imag * inv)


@njit(cache=True)
def _energy_stats(psi, ham):
    mean = 0.0
    var = 0.0
    h_psi = np.empty(DIM, dtype=np.complex128)
    for i in range(DIM):
        acc = 0j
        for j in range(DIM):
            acc += ham[i, j] * psi[j]
        h_psi[i] = acc
        mean += (psi[i].conjugate() * acc).real
    for i in range(DIM):
        c = h_psi[i] - mean * psi[i]
        var += c.real * c.real + c.imag * c.imag
    return mean, var


@njit(cache=True, inline="always")
def _record(snaps, schedule, slot, n, psi, ham, total):
    """Store (<H>, Var H, total variance) in every snapshot slot scheduled at or before step n."""
    if slot < schedule.shape[0] and schedule[slot] <= n:
        mean_h, var_h = _energy_stats(psi, ham)
        while slot < schedule.shape[0] and schedule[slot] <= n:
            snaps[slot, 0] = mean_h
            snaps[slot, 1] = var_h
            snaps[slot, 2] = total
            slot += 1
    return slot


@njit(cache=True, inline="always")
def _refill(key, n, n_gen, sqrt_dt, block):
    noise.fill_normals(key, np.uint64(n) * np.uint64(n_gen), block)
    for j in range(block.shape[0]):
        block[j] *= sqrt_dt


# Both integrators return (final state, collapsed, steps, bad_norm); bad_norm
# is nonzero when a step moved the norm by more than MAX_NORM_DRIFT.


@njit(cache=True)
def _integrate_dense(psi0, ham, gens, couplings, dt, tol, max_steps, schedule, key, snaps):
    n_gen = gens.shape[0]
    psi = psi0.copy()
    out = np.empty(DIM, dtype=np.complex128)
    centred = np.empty((n_gen, DIM), dtype=np.complex128)
    means = np.empty(n_gen)
    block = np.empty(NOISE_BLOCK * n_gen)
    block_start = -NOISE_BLOCK
    sqrt_dt = math.sqrt(dt)
    slot = 0
    n = 0
    while True:
        total = _analyse(psi, gens, centred, means)
        slot = _record(snaps, schedule, slot, n, psi, ham, total)
        if total < tol or n >= max_steps:
            break
        if n - block_start >= NOISE_BLOCK:
            block_start = n
            _refill(key, n, n_gen, sqrt_dt, block)
        offset = (n - block_start) * n_gen
        norm = _advance(psi, ham, gens, couplings, centred, means, dt, block[offset : offset + n_gen], out)
        if abs(norm - 1.0) > MAX_NORM_DRIFT:
            return psi, False, n, norm
        _rescale(out, norm, psi)
        n += 1
    _record(snaps, schedule, slot, max_steps, psi, ham, total)
    return psi, total < tol, n, 0.0


@njit(cache=True)
def _integrate_diag(psi0, ham, hdiag, gdiag, couplings, dt, tol, max_steps, schedule, key, snaps):
    n_gen = gdiag.shape[0]
    psi = psi0.copy()
    out = np.empty(DIM, dtype=np.complex128)
    means = np.empty(n_gen)
    block = np.empty(NOISE_BLOCK * n_gen)
    block_start = -NOISE_BLOCK
    sqrt_dt = math.sqrt(dt)
    slot = 0
    n = 0
    while True:
        total = _analyse_diag(psi, gdiag, means)
        slot = _record(snaps, schedule, slot, n, psi, ham, total)
        if total < tol or n >= max_steps:
            break
        if n - block_start >= NOISE_BLOCK:
            block_start = n
            _refill(key, n, n_gen, sqrt_dt, block)
        offset = (n - block_start) * n_gen
        norm = _advance_diag(psi, hdiag, gdiag, couplings, means, dt, block[offset : offset + n_gen], out)
        if abs(norm - 1.0) > MAX_NORM_DRIFT:
            return psi, False, n, norm
        _rescale(out, norm, psi)
        n += 1
    _record(snaps, schedule, slot, max_steps, psi, ham, total)
    return psi, total < tol, n, 0.0


@njit(cache=True)
def _step_dense(psi, ham, gens, couplings, dt, dW):
    n_gen = gens.shape[0]
    centred = np.empty((n_gen, DIM), dtype=np.complex128)
    means = np.empty(n_gen)
    out = np.empty(DIM, dtype=np.complex128)
    _analyse(psi, gens, centred, means)
    norm = _advance(psi, ham, gens, couplings, centred, means, dt, dW, out)
    return out, norm


@njit(cache=True)
def _step_diag(psi, hdiag, gdiag, couplings, dt, dW):
    means = np.empty(gdiag.shape[0])
    out = np.empty(DIM, dtype=np.complex128)
    _analyse_diag(psi, gdiag, means)
    norm = _advance_diag(psi, hdiag, gdiag, couplings, means, dt, dW, out)
    return out, norm


@dataclass(frozen=True)
class _Compiled:
    """Model matrices laid out for the kernels."""

    diagonal: bool
    ham: np.ndarray
    hdiag: np.ndarray
    gens: np.ndarray
    gdiag: np.ndarray
    couplings: np.ndarray

    @classmethod
    def from_model(cls, model: ReductionModel) -> _Compiled:
        ham = np.ascontiguousarray(hamiltonian().matrix, dtype=np.complex128)
        gens = np.ascontiguousarray(np.stack([g.matrix for g in model.generators]), dtype=np.complex128)
        diags = np.stack([np.diag(g.matrix) for g in model.generators])
        diagonal = all(g.is_diagonal() for g in model.generators) and not np.any(diags.imag)
        return cls(
            diagonal=diagonal,
            ham=ham,
            hdiag=np.ascontiguousarray(np.diag(ham).real),
            gens=gens,
            gdiag=np.ascontiguousarray(diags.real),
            couplings=np.asarray(model.couplings, dtype=np.float64),
        )

    def step(self, psi, dt, dW):
        if self.diagonal:
            return _step_diag(psi, self.hdiag, self.gdiag, self.couplings, dt, dW)
        return _step_dense(psi, self.ham, self.gens, self.couplings, dt, dW)

    def integrate(self, psi0, params: SimulationParams, schedule, key, snaps):
        args = (float(params.dt), float(params.collapse_tol), int(params.max_steps), schedule, key, snaps)
        if self.diagonal:
            return _integrate_diag(psi0, self.ham, self.hdiag, self.gdiag, self.couplings, *args)
        return _integrate_dense(psi0, self.ham, self.gens, self.couplings, *args)


def _raise_step_error(norm: float):
    raise StepError(f"pre-renormalisation norm {norm!r} deviates from 1 by more than {MAX_NORM_DRIFT}")


def _raw_step(state: StateVector, model: ReductionModel, dt: float, noise_increments):
    """Unnormalised Euler-Maruyama update of ``state`` and its norm."""
    compiled = _Compiled.from_model(model)
    dW = np.ascontiguousarray(noise_increments, dtype=np.float64).reshape(-1)
    if dW.shape[0] != len(model.generators):
        raise ValueError(f"expected {len(model.generators)} noise increments, got {dW.shape[0]}")
    psi = np.array(state.amplitudes, dtype=np.complex128)
    return compiled.step(psi, float(dt), dW)


def step(state: StateVector, model: ReductionModel, dt: float, noise_increments: Sequence[float]) -> StateVector:
    """One Euler-Maruyama step with explicit Wiener increments, then renormalise."""
    raw, norm = _raw_step(state, model, dt, noise_increments)
    if abs(norm - 1.0) > MAX_NORM_DRIFT:
        _raise_step_error(norm)
    psi = np.empty(DIM, dtype=np.complex128)
    _rescale_py(raw, norm, psi)
    return StateVector(psi)


@njit(cache=True)
def _rescale_py(out, norm, psi):
    _rescale(out, norm, psi)


def _run_chunk(args):
    initial, model, params, keys = args
    compiled = _Compiled.from_model(model)
    schedule = params.snapshot_steps()
    batch = keys.shape[0]
    finals = np.zeros((batch, DIM), dtype=np.complex128)
    collapsed = np.zeros(batch, dtype=bool)
    steps = np.zeros(batch, dtype=np.int64)
    snaps = np.zeros((batch, schedule.shape[0], 3))
    bad = np.zeros(batch)
    for b in range(batch):
        psi, ok, n, bad_norm = compiled.integrate(initial, params, schedule, keys[b], snaps[b])
        finals[b] = psi
        collapsed[b] = ok
        steps[b] = n
        bad[b] = bad_norm
    return finals, collapsed, steps, snaps, bad


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {value}")
    return value


def run_trajectories(
    initial: StateVector,
    model: ReductionModel,
    params: SimulationParams,
    seeds: Sequence[int],
    workers: int | None = None,
    chunk_size: int | None = None,
) -> list[Trajectory]:
    """Run one trajectory per seed; unfinished runs come back with ``collapsed=False``.

    Results are identical for any ``workers``/``chunk_size``.
    """
    validate_model(model)
    workers = default_workers() if workers is None else int(workers)
    seed_arr = np.array([int(s) & noise.MASK64 for s in seeds], dtype=np.uint64)
    if chunk_size is None:
        chunk_size = max(1, -(-len(seed_arr) // workers))
    initial_amps = np.ascontiguousarray(initial.amplitudes, dtype=np.complex128)
    chunks = [
        (initial_amps, model, params, seed_arr[i : i + chunk_size])
        for i in range(0, len(seed_arr), chunk_size)
    ]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_chunk, chunks))
    else:
        outputs = [_run_chunk(c) for c in chunks]

    times = params.snapshot_steps() * params.dt
    trajectories = []
    for (_, _, _, chunk_seeds), (finals, collapsed, steps, snaps, bad) in zip(chunks, outputs):
        if np.any(bad > 0):
            _raise_step_error(float(bad[bad > 0][0]))
        for b, seed in enumerate(chunk_seeds):
            snap = np.column_stack([times, snaps[b]])
            snap.setflags(write=False)
            trajectories.append(
                Trajectory(
                    final_state=StateVector(finals[b]),
                    collapsed=bool(collapsed[b]),
                    steps_taken=int(steps[b]),
                    snapshots=snap,
                    seed=int(seed),
                )
            )
    return trajectories


def run_trajectory(initial: StateVector, model: ReductionModel, params: SimulationParams, seed: int) -> Trajectory:
    """Integrate until the total generator variance drops below ``collapse_tol``.

    Raises :class:`NoCollapseError` (carrying the trajectory) when
    ``max_steps`` is reached first.
    """
    (traj,) = run_trajectories(initial, model, params, [seed], workers=1)
    if not traj.collapsed:
        raise NoCollapseError(
            f"no collapse within {params.max_steps} steps (seed {seed})", trajectory=traj, n_failed=1
        )
    return traj


def classify_energy(state: StateVector, tol: float) -> int:
    """Nearest energy eigenvalue in {+1, 0, -1} of a collapsed state."""
    ham = hamiltonian()
    var = variance(state, ham)
    if not var < tol:
        raise NotCollapsedError(f"energy variance {var:.3g} is not below {tol:.3g}")
    mean = expectation(state, ham)
    return min((1, 0, -1), key=lambda e: abs(mean - e))


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray


_SERIES_COLUMNS = {"energy": 1, "variance": 2}


def martingale_statistics(trajectories: Sequence[Trajectory], which: str) -> TimeSeries:
    """Ensemble mean and standard error per snapshot.

    ``which`` is ``"energy"`` for the mean of <H> or ``"variance"`` for the
    mean of Var(H).
    """
    if which not in _SERIES_COLUMNS:
        raise ValueError(f"which must be one of {sorted(_SERIES_COLUMNS)}, got {which!r}")
    if not trajectories:
        raise ValueError("no trajectories")
    times = trajectories[0].snapshots[:, 0]
    for traj in trajectories[1:]:
        if traj.snapshots.shape != trajectories[0].snapshots.shape or not np.array_equal(
            traj.snapshots[:, 0], times
        ):
            raise ScheduleMismatchError("trajectories do not share a snapshot schedule")
    values = np.stack([t.snapshots[:, _SERIES_COLUMNS[which]] for t in trajectories])
    n = len(trajectories)
    mean = values.mean(axis=0)
    if n > 1:
        se = values.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        se = np.zeros_like(mean)
    return TimeSeries(times=np.array(times), mean=mean, se=se)

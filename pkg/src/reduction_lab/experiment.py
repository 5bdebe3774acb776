"""The energy-measurement ensemble and the statistics that discriminate
stochastic reduction from the projection postulate.

An ensemble of copies of :data:`~reduction_lab.qstate.PSI_INITIAL` is
reduced to energy eigenstates.  Among the zero-energy outcomes we look at

* ``p``: the probability of finding particle 1 up, i.e. the mean of
  cos^2(theta/2);
* the mean of <Sigma1z> over all outcomes, which must equal its initial
  value of 0 for a weakly conserved observable;
* the mean of <S^2>, which is 0 only if every zero-energy outcome is the
  singlet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import noise
from .qstate import (
    IDENTITY_TOL,
    PSI_INITIAL,
    SINGLET,
    SphereCoordinates,
    StateVector,
    bloch_coordinates,
    expectation,
    hamiltonian,
    project_degenerate,
    s_squared,
    sigma_1z,
)
from .reduction import (
    NoCollapseError,
    ReductionModel,
    SimulationParams,
    classify_energy,
    run_trajectories,
)

ENERGY_LEVELS = (1, 0, -1)
S2_CROSS_CHECK_TOL = 1e-8
EIGENVALUE_TOL = 1e-9


class EmptyEnsembleError(ValueError):
    pass


class NoDegenerateOutcomesError(ValueError):
    pass


class DegenerateZeroProjectionError(ValueError):
    """The initial state has no weight in the requested eigenspace."""


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class OutcomeRecord:
    index: int
    eigenvalue: int
    final_state: StateVector
    sphere: SphereCoordinates | None
    seed: int
    steps: int

    def __post_init__(self):
        if (self.sphere is None) != (self.eigenvalue != 0):
            raise ValueError("sphere coordinates must be present exactly for eigenvalue 0")


@dataclass(frozen=True)
class LudersOutcome:
    eigenvalue: int
    probability: float
    state: StateVector


@dataclass(frozen=True)
class SphereHistogram:
    """Counts on an equal-area grid, uniform in cos(theta) and phi."""

    z_edges: np.ndarray
    phi_edges: np.ndarray
    counts: np.ndarray
    total_count: int

    def rows(self):
        """Yield (cos_lo, cos_hi, phi_lo, phi_hi, count) per bin."""
        for i in range(len(self.z_edges) - 1):
            for j in range(len(self.phi_edges) - 1):
                yield (
                    float(self.z_edges[i]),
                    float(self.z_edges[i + 1]),
                    float(self.phi_edges[j]),
                    float(self.phi_edges[j + 1]),
                    int(self.counts[i, j]),
                )


@dataclass(frozen=True)
class EnsembleReport:
    frequencies: dict[int, Estimate]
    p_hat: Estimate
    conservation: Estimate
    s2: Estimate
    n_total: int
    n_degenerate: int
    n_failed: int = 0


def _mean_se(values: Sequence[float]) -> Estimate:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyEnsembleError("no values to average")
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return Estimate(float(arr.mean()), se)


def make_record(index: int, final_state: StateVector, seed: int, steps: int, tol: float) -> OutcomeRecord:
    eigenvalue = classify_energy(final_state, tol)
    sphere = bloch_coordinates(project_degenerate(final_state)) if eigenvalue == 0 else None
    return OutcomeRecord(index, eigenvalue, final_state, sphere, int(seed), int(steps))


def run_ensemble(
    model: ReductionModel,
    n: int,
    params: SimulationParams,
    master_seed: int,
    workers: int | None = None,
) -> list[OutcomeRecord]:
    """Reduce ``n`` copies of the initial state; trajectory ``i`` uses stream (master_seed, i).

    Raises :class:`NoCollapseError` when any trajectory fails to collapse;
    ``err.results`` then holds the records of the ones that did and
    ``err.n_failed`` the number excluded.
    """
    if n < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n}")
    seeds = noise.trajectory_seeds(master_seed, np.arange(n))
    trajectories = run_trajectories(PSI_INITIAL, model, params, seeds, workers=workers)
    records = []
    failed = 0
    for i, traj in enumerate(trajectories):
        if not traj.collapsed:
            failed += 1
            continue
        records.append(make_record(i, traj.final_state, traj.seed, traj.steps_taken, params.collapse_tol))
    if failed:
        raise NoCollapseError(
            f"{failed} of {n} trajectories did not collapse within {params.max_steps} steps",
            n_failed=failed,
            results=records,
        )
    return records


def _degenerate(records: Sequence[OutcomeRecord]) -> list[OutcomeRecord]:
    zero = [r for r in records if r.eigenvalue == 0]
    if not zero:
        raise NoDegenerateOutcomesError("no eigenvalue-0 outcomes in the ensemble")
    return zero


def estimate_p(records: Sequence[OutcomeRecord]) -> Estimate:
    """Mean of cos^2(theta/2) over zero-energy outcomes."""
    zero = _degenerate(records)
    return _mean_se([math.cos(0.5 * r.sphere.theta) ** 2 for r in zero])


def conservation_check(records: Sequence[OutcomeRecord]) -> Estimate:
    """Mean terminal <Sigma1z> over all outcomes."""
    if not records:
        raise EmptyEnsembleError("no records")
    obs = sigma_1z()
    return _mean_se([expectation(r.final_state, obs) for r in records])


def s_squared_statistic(records: Sequence[OutcomeRecord]) -> Estimate:
    """Mean <S^2> over zero-energy outcomes.

    Each record's direct expectation is checked against 1 + sin(theta) cos(phi).
    """
    zero = _degenerate(records)
    obs = s_squared()
    direct = []
    for r in zero:
        value = expectation(r.final_state, obs)
        angular = 1.0 + math.sin(r.sphere.theta) * math.cos(r.sphere.phi)
        if abs(value - angular) > S2_CROSS_CHECK_TOL:
            raise ValueError(
                f"record {r.index}: <S^2> = {value!r} but 1 + sin(theta)cos(phi) = {angular!r}"
            )
        direct.append(value)
    return _mean_se(direct)


def outcome_frequencies(records: Sequence[OutcomeRecord]) -> dict[int, Estimate]:
    """Fraction of each energy outcome with its binomial standard error."""
    if not records:
        raise EmptyEnsembleError("no records")
    n = len(records)
    out = {}
    for e in ENERGY_LEVELS:
        f = sum(1 for r in records if r.eigenvalue == e) / n
        out[e] = Estimate(f, math.sqrt(f * (1 - f) / n))
    return out


def _eigenspaces(obs):
    values, vectors = np.linalg.eigh(obs.matrix)
    groups: list[tuple[float, list[int]]] = []
    for idx, v in enumerate(values):
        if groups and abs(v - groups[-1][0]) < EIGENVALUE_TOL:
            groups[-1][1].append(idx)
        else:
            groups.append((float(v), [idx]))
    for value, idx in groups:
        basis = vectors[:, idx]
        yield value, basis @ basis.conj().T


def project_outcome(initial: StateVector, eigenvalue: float) -> LudersOutcome:
    """Born probability and normalised post-measurement state for one energy eigenvalue."""
    for value, projector in _eigenspaces(hamiltonian()):
        if abs(value - eigenvalue) < EIGENVALUE_TOL:
            projected = projector @ initial.amplitudes
            norm = math.sqrt(float(np.vdot(projected, projected).real))
            if norm < IDENTITY_TOL:
                raise DegenerateZeroProjectionError(f"no weight in the eigenspace of {eigenvalue}")
            return LudersOutcome(int(round(value)), norm * norm, StateVector(projected / norm))
    raise ValueError(f"{eigenvalue} is not an energy eigenvalue")


def luders_reference(initial: StateVector = PSI_INITIAL) -> list[LudersOutcome]:
    """Exact projection-postulate outcome table, highest energy first.

    Outcomes the initial state has no weight on are omitted.
    """
    table = []
    for e in ENERGY_LEVELS:
        try:
            table.append(project_outcome(initial, e))
        except DegenerateZeroProjectionError:
            continue
    return table


def sphere_histogram(records: Sequence[OutcomeRecord], n_z_bins: int, n_phi_bins: int) -> SphereHistogram:
    """Histogram zero-energy outcomes on an equal-area (cos theta, phi) grid.

    Bins are half-open ``[lo, hi)`` except the last cos(theta) bin, which
    also takes cos(theta) = 1.
    """
    if n_z_bins < 1 or n_phi_bins < 1:
        raise ValueError("bin counts must be >= 1")
    zero = _degenerate(records)
    z_edges = np.linspace(-1.0, 1.0, n_z_bins + 1)
    phi_edges = np.linspace(0.0, 2 * math.pi, n_phi_bins + 1)
    counts = np.zeros((n_z_bins, n_phi_bins), dtype=np.int64)
    for r in zero:
        z = math.cos(r.sphere.theta)
        i = min(int((z + 1.0) / 2.0 * n_z_bins), n_z_bins - 1)
        j = min(int(r.sphere.phi / (2 * math.pi) * n_phi_bins), n_phi_bins - 1)
        counts[max(i, 0), j] += 1
    return SphereHistogram(z_edges, phi_edges, counts, len(zero))


def summarize(records: Sequence[OutcomeRecord], n_failed: int = 0) -> EnsembleReport:
    """Collect every estimator; statistics without data are NaN."""
    zero = [r for r in records if r.eigenvalue == 0]
    nan = Estimate(math.nan, math.nan)
    return EnsembleReport(
        frequencies=outcome_frequencies(records) if records else {e: nan for e in ENERGY_LEVELS},
        p_hat=estimate_p(records) if zero else nan,
        conservation=conservation_check(records) if records else nan,
        s2=s_squared_statistic(records) if zero else nan,
        n_total=len(records),
        n_degenerate=len(zero),
        n_failed=n_failed,
    )


def fidelity_with_singlet(record: OutcomeRecord) -> float:
    return SINGLET.fidelity(record.final_state)

import math

import numpy as np
import pytest

from reduction_lab import experiment as ex
from reduction_lab.qstate import (
    DOWN_DOWN,
    DOWN_UP,
    PSI_INITIAL,
    SINGLET,
    UP_DOWN,
    UP_UP,
    SphereCoordinates,
    make_state,
    project_degenerate,
    theta_phi_state,
)
from reduction_lab.reduction import NoCollapseError, SimulationParams, model_energy


def synthetic(states):
    return [ex.make_record(i, s, seed=i, steps=0, tol=1e-10) for i, s in enumerate(states)]


def on_sphere(theta, phi):
    return theta_phi_state(SphereCoordinates(theta, phi))


class TestSyntheticRecords:
    def test_p_all_north(self):
        assert ex.estimate_p(synthetic([UP_DOWN] * 3)) == (1.0, 0.0)

    def test_p_mixed_poles(self):
        est = ex.estimate_p(synthetic([UP_DOWN, DOWN_UP]))
        assert est.value == 0.5
        assert est.se == pytest.approx(0.5, abs=1e-15)

    def test_conservation_cancels(self):
        assert ex.conservation_check(synthetic([UP_UP, DOWN_DOWN])).value == 0.0

    def test_s2_all_singlet(self):
        assert ex.s_squared_statistic(synthetic([SINGLET] * 4)) == (0.0, 0.0)

    def test_s2_cross_check_failure(self):
        rec = synthetic([UP_DOWN])[0]
        bad = ex.OutcomeRecord(0, 0, rec.final_state, SphereCoordinates(math.pi / 2, 0.0), 0, 0)
        with pytest.raises(ValueError):
            ex.s_squared_statistic([bad])

    def test_no_degenerate_outcomes(self):
        recs = synthetic([UP_UP, DOWN_DOWN])
        for fn in (ex.estimate_p, ex.s_squared_statistic):
            with pytest.raises(ex.NoDegenerateOutcomesError):
                fn(recs)

    def test_empty(self):
        with pytest.raises(ex.EmptyEnsembleError):
            ex.conservation_check([])
        with pytest.raises(ex.EmptyEnsembleError):
            ex.outcome_frequencies([])

    def test_frequencies(self):
        freqs = ex.outcome_frequencies(synthetic([UP_UP, SINGLET, SINGLET, DOWN_DOWN]))
        assert {e: f.value for e, f in freqs.items()} == {1: 0.25, 0: 0.5, -1: 0.25}
        assert freqs[0].se == pytest.approx(0.25)
        assert sum(f.value for f in freqs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_record_sphere_presence(self):
        with pytest.raises(ValueError):
            ex.OutcomeRecord(0, 1, UP_UP, SphereCoordinates(0.0, 0.0), 0, 0)
        with pytest.raises(ValueError):
            ex.OutcomeRecord(0, 0, SINGLET, None, 0, 0)

    def test_summary_without_degenerate(self):
        rep = ex.summarize(synthetic([UP_UP]))
        assert math.isnan(rep.p_hat.value) and math.isnan(rep.s2.value)
        assert rep.n_total == 1 and rep.n_degenerate == 0


class TestLuders:
    def test_initial_state_table(self):
        table = ex.luders_reference(PSI_INITIAL)
        assert [o.eigenvalue for o in table] == [1, 0, -1]
        np.testing.assert_allclose([o.probability for o in table], [0.25, 0.5, 0.25], atol=1e-15)
        assert table[1].state.fidelity(SINGLET) == pytest.approx(1.0, abs=1e-15)
        assert table[0].state.fidelity(UP_UP) == pytest.approx(1.0, abs=1e-15)

    def test_eigenstate_single_outcome(self):
        table = ex.luders_reference(UP_UP)
        assert len(table) == 1
        assert table[0].eigenvalue == 1 and table[0].probability == pytest.approx(1.0)

    def test_zero_projection(self):
        with pytest.raises(ex.DegenerateZeroProjectionError):
            ex.project_outcome(UP_UP, 0)

    def test_unknown_eigenvalue(self):
        with pytest.raises(ValueError):
            ex.project_outcome(PSI_INITIAL, 2)


class TestHistogram:
    def test_single_record(self):
        hist = ex.sphere_histogram(synthetic([on_sphere(1.0, 2.0)]), 10, 8)
        assert hist.total_count == 1
        assert np.count_nonzero(hist.counts) == 1
        i, j = np.argwhere(hist.counts)[0]
        assert hist.z_edges[i] <= math.cos(1.0) < hist.z_edges[i + 1]
        assert hist.phi_edges[j] <= 2.0 < hist.phi_edges[j + 1]

    def test_equal_area_edges(self):
        hist = ex.sphere_histogram(synthetic([SINGLET]), 4, 6)
        np.testing.assert_allclose(np.diff(hist.z_edges), 0.5)
        np.testing.assert_allclose(np.diff(hist.phi_edges), math.pi / 3)

    def test_poles_land_in_end_bins(self):
        hist = ex.sphere_histogram(synthetic([UP_DOWN, DOWN_UP, DOWN_UP]), 5, 3)
        assert hist.counts[-1, 0] == 1 and hist.counts[0, 0] == 2
        assert hist.counts.sum() == hist.total_count == 3

    def test_rows(self):
        hist = ex.sphere_histogram(synthetic([SINGLET]), 2, 2)
        rows = list(hist.rows())
        assert len(rows) == 4 and sum(r[4] for r in rows) == 1

    @pytest.mark.parametrize("bins", [(0, 3), (3, 0)])
    def test_bad_bins(self, bins):
        with pytest.raises(ValueError):
            ex.sphere_histogram(synthetic([SINGLET]), *bins)


def test_collapse_failures_reported():
    with pytest.raises(NoCollapseError) as err:
        ex.run_ensemble(model_energy(), 20, SimulationParams(max_steps=2000), 1)
    assert err.value.n_failed > 0
    assert len(err.value.results) + err.value.n_failed == 20


def test_run_ensemble_rejects_empty():
    with pytest.raises(ValueError):
        ex.run_ensemble(model_energy(), 0, SimulationParams(), 1)


def test_contaminated_state_still_classified():
    # collapse leaves ~1e-5 amplitude outside the degenerate subspace
    state = make_state([3e-6, 1 / math.sqrt(2), -1 / math.sqrt(2), 2e-6j])
    rec = ex.make_record(0, state, 0, 0, tol=1e-10)
    assert rec.eigenvalue == 0
    assert rec.sphere.theta == pytest.approx(math.pi / 2)


@pytest.mark.slow
class TestEnsembleInvariants:
    def test_energy_outcomes_match_luders_states(self, energy_records):
        oracle = {o.eigenvalue: o.state for o in ex.luders_reference()}
        worst = min(oracle[r.eigenvalue].fidelity(r.final_state) for r in energy_records)
        assert worst > 1 - 1e-6

    def test_energy_sphere_at_singlet(self, energy_records):
        for r in energy_records:
            if r.eigenvalue == 0:
                assert abs(r.sphere.theta - math.pi / 2) < 1e-4
                assert abs(r.sphere.phi - math.pi) < 1e-4

    def test_energy_histogram_single_bin(self, energy_records):
        hist = ex.sphere_histogram(energy_records, 21, 21)
        assert np.count_nonzero(hist.counts) == 1
        i, j = np.argwhere(hist.counts)[0]
        assert hist.z_edges[i] <= 0.0 < hist.z_edges[i + 1]
        assert hist.phi_edges[j] <= math.pi < hist.phi_edges[j + 1]

    def test_local_histogram_polar_bins(self, local_records):
        hist = ex.sphere_histogram(local_records, 21, 21)
        assert set(map(tuple, np.argwhere(hist.counts))) == {(0, 0), (20, 0)}
        north, south = hist.counts[20, 0], hist.counts[0, 0]
        n = north + south
        assert abs(north / n - 0.5) <= 3 * math.sqrt(0.25 / n)

    @pytest.mark.parametrize("fixture", ["energy_records", "local_records"])
    def test_record_sphere_fidelity(self, fixture, request):
        for r in request.getfixturevalue(fixture):
            if r.sphere is not None:
                proj = project_degenerate(r.final_state)
                assert theta_phi_state(r.sphere).fidelity(proj) > 1 - 1e-8

    def test_local_s2_near_one(self, local_records):
        assert ex.s_squared_statistic(local_records).value == pytest.approx(1.0, abs=1e-4)

    def test_energy_s2_near_zero(self, energy_records):
        assert abs(ex.s_squared_statistic(energy_records).value) < 1e-6

    @pytest.mark.parametrize("fixture", ["energy_records", "local_records"])
    def test_summary_consistency(self, fixture, request):
        rep = ex.summarize(request.getfixturevalue(fixture))
        assert sum(f.value for f in rep.frequencies.values()) == pytest.approx(1.0, abs=1e-12)
        assert rep.n_degenerate <= rep.n_total == 10_000
        assert rep.n_failed == 0

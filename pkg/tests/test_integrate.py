import numpy as np
import pytest

from kdvb.dynamics import State, fast_rhs, full_rhs
from kdvb.errors import FixedPoint, InvalidInput, NoReturnFound, PositivityError
from kdvb.integrate import (FastField, FullField, estimate_fast_period, integrate_record,
                            integrate_steps, n_steps_for, peak_period, return_distance, rk4_step)
from kdvb.invariants import observables_along

from conftest import FIG1


def substeps(field, u, dt, m):
    for _ in range(m):
        u = rk4_step(field, u, dt / m).u
    return u


class TestRk4Step:
    @pytest.mark.parametrize("field", [FastField(), FullField(0.3)])
    def test_constant_state_fixed(self, field):
        assert rk4_step(field, [1.5] * 6, 0.1) == State([1.5] * 6)

    def test_local_error_order(self):
        f = FastField()
        dt = 0.05
        err_big = np.linalg.norm(rk4_step(f, FIG1, dt).u - substeps(f, FIG1, dt, 8))
        err_half = np.linalg.norm(rk4_step(f, FIG1, dt / 2).u - substeps(f, FIG1, dt / 2, 4))
        assert 20 < err_big / err_half < 45

    def test_mass_one_step(self):
        u = rk4_step(FullField(1e-2), FIG1, 0.01).u
        assert u.sum() == pytest.approx(FIG1.sum(), rel=1e-13)

    def test_positivity_violation(self):
        with pytest.raises(PositivityError) as info:
            rk4_step(FastField(), [0.01, 5, 0.01, 5, 0.01, 9], 3.0)
        assert 0 <= info.value.index < 6 and info.value.value <= 0.0

    def test_rejects_bad_dt(self):
        with pytest.raises(InvalidInput):
            rk4_step(FastField(), FIG1, 0.0)


class TestTrajectories:
    def test_compiled_and_python_paths_agree(self):
        a = integrate_steps(FullField(0.01), FIG1, 1e-2, 500, 50)
        b = integrate_steps(lambda u: full_rhs(u, 0.01), FIG1, 1e-2, 500, 50)
        np.testing.assert_allclose(a.states, b.states, rtol=1e-12)
        assert b.field_tag == "custom" and a.field_tag == "full(0.01)"

    def test_sampling_layout(self):
        tr = integrate_record(FastField(), FIG1, 1.0, 1e-2, 10)
        assert len(tr) == 11 and tr.rhs_evals == 400
        np.testing.assert_allclose(np.diff(tr.times), 0.1)
        assert abs(tr.times[-1] - 1.0) < 1e-2
        np.testing.assert_array_equal(tr.states[0], FIG1)

    def test_short_request_returns_initial_state(self):
        tr = integrate_record(FastField(), FIG1, 5e-4, 1e-3)
        assert len(tr) == 1 and tr.final == State(FIG1)

    def test_n_steps_roundoff(self):
        assert n_steps_for(0.3, 0.1) == 3

    def test_positivity_error_carries_time(self):
        with pytest.raises(PositivityError) as info:
            integrate_steps(FastField(), [0.01, 5, 0.01, 5, 0.01, 9], 3.0, 10)
        assert info.value.time == pytest.approx(3.0)

    def test_global_error_fourth_order(self):
        t_end = 5.0
        ref = integrate_record(FastField(), FIG1, t_end, 1e-4, 50000).final.u
        errs = [np.linalg.norm(integrate_record(FastField(), FIG1, t_end, dt).final.u - ref)
                for dt in (4e-3, 2e-3, 1e-3)]
        for coarse, fine in zip(errs, errs[1:]):
            assert coarse / fine == pytest.approx(16, rel=0.25)

    def test_observables_conserved(self):
        period = estimate_fast_period(FIG1).period
        tr = integrate_record(FastField(), FIG1, 10 * period, 1e-3, 100)
        v = observables_along(tr.states)
        assert np.max(np.abs(v - v[0]) / np.abs(v[0])) < 1e-6

    @pytest.mark.parametrize("field", [FastField(), FullField(1e-3), FullField(0.5)])
    def test_mass_per_step(self, field):
        tr = integrate_steps(field, FIG1, 1e-2, 300)
        np.testing.assert_allclose(tr.states.sum(axis=1), FIG1.sum(), rtol=1e-13)

    def test_local_invariant(self):
        tr = integrate_steps(FastField(), [3, 2, 1, 3, 2, 1], 1e-3, 20000, 10)
        assert np.max(np.abs(tr.states[:, :3] - tr.states[:, 3:])) < 1e-9


class TestPositivityAndDecay:
    def test_product_non_decreasing(self):
        tr = integrate_steps(FullField(1e-3), FIG1, 1e-2, 200000, 10)
        prod = np.prod(tr.states, axis=1)
        assert np.min(np.diff(prod)) >= -1e-12
        np.testing.assert_allclose(tr.states.sum(axis=1), FIG1.sum(), rtol=1e-12)

    def test_spread_envelope_shrinks(self):
        tr = integrate_steps(FullField(1e-3), FIG1, 1e-2, 300000, 10)
        spread = np.max(np.abs(tr.states - FIG1.mean()), axis=1)
        windows = spread[1:].reshape(30, -1).max(axis=1)
        assert np.all(np.diff(windows[1:]) < 0)

    def test_converges_to_mean(self):
        tr = integrate_record(FullField(1e-2), FIG1, 3000.0, 0.05, 1000)
        assert np.max(np.abs(tr.final.u - FIG1.mean())) < 1e-6


class TestPeriod:
    def test_fig1_period(self):
        est = estimate_fast_period(FIG1)
        assert est.period == pytest.approx(2.4868, abs=0.01)
        assert est.confident and est.return_distance <= 0.25

    def test_decay_state_period(self):
        est = estimate_fast_period([1, 1, 1, 1, 4, 1])
        assert 2.0 < est.period < 3.0

    def test_halving_dt_is_stable(self):
        a = estimate_fast_period(FIG1, dt=1e-3).period
        b = estimate_fast_period(FIG1, dt=5e-4).period
        assert abs(a - b) / a < 1e-3

    def test_peak_spacing_cross_check(self):
        est = estimate_fast_period(FIG1)
        tr = integrate_record(FastField(), FIG1, 40 * est.period, 1e-3)
        assert peak_period(tr) == pytest.approx(est.period, rel=0.02)

    @pytest.mark.parametrize("u", [[1.3] * 6, [1, 2, 1, 2, 1, 2]])
    def test_fixed_points(self, u):
        assert np.all(fast_rhs(u) == 0)
        with pytest.raises(FixedPoint):
            estimate_fast_period(u)

    def test_short_horizon(self):
        with pytest.raises(NoReturnFound):
            estimate_fast_period(FIG1, search_horizon=1.0)

    def test_return_distance_zero_at_start(self):
        assert return_distance(FIG1[None, :], FIG1)[0] == 0.0

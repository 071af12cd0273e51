import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricciotto import flow as fl
from ricciotto import geometry as geo
from ricciotto import perelman as pe
from oracles import heat_kernel_circle


@pytest.fixture(scope="module")
def circle_traj():
    m = geo.warped_circle(lambda x: 1 + 0.2 * np.cos(x), lambda x: 1 + 0.3 * np.sin(x), 48)
    return fl.run_uniform(m, 0.05, 20)


class TestTau:
    @given(st.floats(0.05, 3.0))
    def test_ode_matches_closed_form(self, tau0):
        traj = fl.run_uniform(geo.berger(0.3, 0.25, 0.2), 0.5, 10, dt_max=1e-2)
        assert pe.tau_evolve(traj, tau0).discrepancy < 1e-8

    def test_fixed_point(self):
        traj = fl.run_uniform(geo.round_berger(), 1.0, 10, dt_max=1e-2)
        tau0 = pe.tau_fixed_point(6.0)
        assert tau0 == pytest.approx(0.25)
        assert np.abs(pe.tau_evolve(traj, tau0).tau - tau0).max() < 1e-13

    def test_scaled_form(self, circle_traj):
        sol = pe.tau_evolve(circle_traj, 0.7)
        assert pe.tau_scaled_form(sol, sol.t[-1]) == pytest.approx(sol.tau_closed[-1], rel=1e-10)

    def test_tau_hat_definition(self, circle_traj):
        sol = pe.tau_evolve(circle_traj, 0.7)
        assert np.allclose(sol.tau_hat, 0.7 * np.exp(-(2.0 / 3.0) * sol.mean_R_integral))

    def test_rejects_bad_tau0(self, circle_traj):
        with pytest.raises(ValueError):
            pe.tau_evolve(circle_traj, -1.0)


class TestDensityMaps:
    @given(st.floats(0.1, 5.0), st.floats(-0.5, 0.5))
    def test_round_trip_and_coupling(self, tau, a):
        m = geo.warped_circle(1.0, 1.0, 32)
        w = np.exp(a * np.cos(m.mesh.coordinate))
        w = w / np.dot(geo.probability_weights(m), w)
        f = pe.f_from_density(w, tau, m)
        assert np.allclose(pe.density_from_f(f, tau, m), w)
        assert abs(pe.coupling_residual(f, tau, m)) < 1e-12


class TestConjugateHeat:
    def test_mass_conserved_without_renormalization(self, circle_traj):
        run = pe.run_conjugate_heat(circle_traj, lambda x: np.exp(np.cos(x)), renormalize=False)
        assert np.abs(run.masses() - 1).max() < 1e-12

    def test_density_and_measure_forms_agree(self, circle_traj):
        w0 = lambda x: np.exp(0.3 * np.cos(x))  # noqa: E731
        a = pe.run_conjugate_heat(circle_traj, w0)
        b = pe.run_conjugate_heat(circle_traj, w0, form="measure")
        assert np.abs(a.w[-1] - b.w[-1]).max() < 1e-6

    def test_frozen_flat_circle_is_heat_flow(self):
        m = geo.warped_circle(1.0, 1.0, 64)
        traj = fl.frozen_trajectory(m, 0.1, 11)
        u0 = np.exp(np.cos(m.mesh.coordinate))
        run = pe.run_conjugate_heat(traj, u0, renormalize=False)
        exact = heat_kernel_circle(u0 / np.dot(geo.probability_weights(m), u0), 0.1)
        assert np.abs(run.w[-1] - exact).max() < 1e-3

    def test_f_direct_agrees(self, circle_traj):
        w0 = lambda x: np.exp(0.2 * np.cos(x))  # noqa: E731
        run = pe.run_conjugate_heat(circle_traj, w0, tau0=0.5)
        f0 = pe.f_from_density(run.w[0], 0.5, run.state(0))
        t, fs, _, coup = pe.run_f_direct(circle_traj, f0, 0.5)
        assert np.abs(fs[-1] - run.f_snapshots()[-1]).max() < 1e-4
        assert np.abs(coup).max() < 1e-4

    def test_step_guard(self, circle_traj):
        bg = pe.BackwardGeometry(fl.run_uniform(circle_traj.states[0], 0.05, 2))
        with pytest.raises(pe.StepSizeError):
            pe.integrate_backward(bg, 1.0, pe.conjugate_heat_rhs(bg), substeps=1)

    def test_to_dict(self, circle_traj):
        d = pe.run_conjugate_heat(circle_traj, 1.0, tau0=0.5).to_dict()
        assert {"t", "w", "tau", "tau_hat", "f"} <= set(d)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricciotto import flow as fl
from ricciotto import fokker_planck as fp
from ricciotto import geometry as geo
from ricciotto import otto


def perturbed(kind, n):
    if kind == "circle":
        return geo.warped_circle(lambda x: 1 + 0.2 * np.cos(x), lambda x: 1 + 0.3 * np.sin(x), n)
    return geo.conformal_sphere([0.05, 0.03], n)


class TestPoisson:
    @pytest.mark.parametrize("kind", ["circle", "sphere"])
    @pytest.mark.parametrize("source", ["curvature", "flow"])
    def test_phi_residual_and_gauge(self, kind, source):
        m = perturbed(kind, 64)
        tp = otto.phi_potential(m, source=source)
        assert tp.residual < 1e-10
        assert abs(geo.mean(m, tp.potential)) < 1e-12

    @given(st.integers(0, 2**31), st.sampled_from(["circle", "sphere"]))
    def test_weighted_solver(self, seed, kind):
        r = np.random.default_rng(seed)
        m = perturbed(kind, 32)
        rho = np.exp(0.3 * r.standard_normal(m.n))
        src = r.standard_normal(m.n)
        src -= geo.mean(m, src)
        tp = otto.solve_weighted_poisson(m, rho, src)
        assert tp.residual < 1e-10

    def test_incompatible_source(self):
        m = perturbed("circle", 16)
        with pytest.raises(otto.CompatibilityError):
            otto.solve_weighted_poisson(m, 1.0, np.ones(m.n))

    def test_bad_weight(self):
        m = perturbed("circle", 16)
        with pytest.raises(otto.ConditioningError):
            otto.solve_weighted_poisson(m, -np.ones(m.n), np.zeros(m.n))


class TestDrift:
    @given(st.integers(0, 2**31), st.sampled_from(["circle", "sphere"]))
    def test_drift_is_adjoint_of_flux_laplacian(self, seed, kind):
        r = np.random.default_rng(seed)
        m = perturbed(kind, 24)
        phi, w = r.standard_normal(m.n), r.standard_normal(m.n)
        pi = geo.probability_weights(m)
        assert np.dot(pi, otto.drift_term(m, phi, w)) == pytest.approx(
            geo.dirichlet_form(m, phi, w), abs=1e-10)

    def test_otto_inner_symmetric(self):
        m = perturbed("sphere", 32)
        x = m.mesh.coordinate
        w = np.exp(0.2 * np.cos(x))
        u, v = np.cos(x), np.cos(2 * x)
        assert otto.otto_inner(m, w, u, v) == pytest.approx(otto.otto_inner(m, w, v, u))


class TestIdentities:
    @pytest.mark.parametrize("kind", ["circle", "sphere"])
    def test_energy_identity_second_order(self, kind):
        errs = [otto.phi_energy_identity(perturbed(kind, n)).relative_error for n in (64, 128)]
        assert errs[1] < 1e-3
        assert 3.6 < errs[0] / errs[1] < 4.4

    def test_gradient_bound_on_positive_ricci(self):
        ei = otto.phi_energy_identity(perturbed("sphere", 64))
        assert ei.K > 0 and ei.bound_slack >= 0

    def test_tangent_identity(self):
        m = perturbed("circle", 64)
        traj = fl.run_uniform(m, 0.02, 20)
        run = fp.run_backward_fp(traj, 1.0, diagnostics=False)
        assert np.abs(otto.tangent_identity_gap(run)).max() < 1e-4

    def test_fp_run_is_gradient_flow(self):
        m = perturbed("circle", 64)
        h = m.mesh.spacing
        traj = fl.run_uniform(m, 0.02, 20, 0.05 * h * h)
        run = fp.run_backward_fp(traj, lambda x: np.exp(0.3 * np.cos(x)), diagnostics=False)
        res = otto.grad_S_and_flow_residual(run)
        assert np.abs(res.entropy_gap).max() < 1e-4
        assert np.abs(res.tangent_gap).max() < 1e-4


class TestHessianBound:
    """The pointwise bound Hess Phi >= -Ric + (<R>/3) g cannot hold off solitons.

    The trace of Hess Phi + Ric - (<R>/3) g is Delta Phi + R - <R> = 0, so its
    smallest eigenvalue is negative wherever the tensor is nonzero.
    """

    def test_trace_vanishes(self):
        m = perturbed("sphere", 64)
        eig, _ = otto.hess_phi_bound_check(m)
        tp = otto.phi_potential(m)
        c = geo.curvature(m)
        trace = geo.laplacian(m, tp.potential) + c.R - c.mean_R
        assert np.abs(trace).max() < 1e-9
        # the sum of the eigenvalue rows approximates the same trace
        assert np.abs(eig.sum(axis=0)).max() < 0.05

    def test_bound_violated_on_cylinder(self):
        _, lo = otto.hess_phi_bound_check(geo.cylinder(32))
        assert lo == pytest.approx(-2.0 / 3.0, abs=1e-12)

    def test_bound_violated_on_perturbed_sphere(self):
        _, lo = otto.hess_phi_bound_check(perturbed("sphere", 64))
        assert lo < -0.01


class TestMoser:
    def test_maps_measures(self):
        m_a = perturbed("circle", 64)
        traj = fl.run_uniform(m_a, 0.02, 4)
        m_b = traj.states[-1]
        mm = otto.moser_map(m_a, m_b)
        assert mm.pullback_residual < 1e-12
        y = np.linspace(0.1, 6.0, 7)
        assert np.allclose(mm.inverse(mm(y)), y, atol=1e-12)

    def test_identity_for_same_state(self):
        m = perturbed("sphere", 32)
        mm = otto.moser_map(m, m)
        assert np.allclose(mm.image_edges, mm.edges_b)

    def test_unequal_volume(self):
        m = perturbed("circle", 32)
        with pytest.raises(ValueError):
            otto.moser_map(m, m.scaled(2.0))

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricciotto import entropy as ent
from ricciotto import flow as fl
from ricciotto import geometry as geo
from ricciotto import perelman as pe
from oracles import quad_integral

modes = st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=3)


def density(m, coeffs):
    x = m.mesh.coordinate
    w = np.exp(sum(a * np.cos((k + 1) * x) for k, a in enumerate(coeffs)))
    return w / np.dot(geo.probability_weights(m), w)


@pytest.fixture(scope="module")
def ch_run():
    m = geo.warped_circle(lambda x: 1 + 0.2 * np.cos(x), lambda x: 1 + 0.3 * np.sin(x), 64)
    h = m.mesh.spacing
    traj = fl.run_uniform(m, 0.02, 32, 0.05 * h * h)
    return pe.run_conjugate_heat(traj, lambda x: np.exp(0.3 * np.cos(x)), tau0=0.5)


class TestBasicFunctionals:
    @given(modes)
    def test_entropy_nonnegative_and_pinsker(self, coeffs):
        m = geo.conformal_sphere([0.05], 32)
        w = density(m, coeffs)
        assert ent.relative_entropy(w, m) >= -1e-14
        assert ent.pinsker_slack(w, m) >= -1e-12

    @given(modes)
    def test_variational_formula(self, coeffs):
        m = geo.warped_circle(1.0, 1.0, 32)
        w = density(m, coeffs)
        trials = [np.log(w), np.zeros(m.n), np.cos(m.mesh.coordinate)]
        chk = ent.variational_S_check(w, m, trials)
        assert abs(chk["gap"]) < 1e-12  # f = ln w attains the supremum
        assert np.all(chk["values"] <= chk["S"] + 1e-12)

    def test_fisher_against_quadrature(self):
        a = 0.4
        m = geo.warped_circle(1.0, 1.0, 256)
        w = density(m, [a])
        # flat circle of length 2 pi: I = int (a sin x)^2 w dx / int w dx with w = e^{a cos x}
        num = quad_integral(lambda x: (a * np.sin(x)) ** 2 * np.exp(a * np.cos(x)), 0, 2 * np.pi)
        den = quad_integral(lambda x: np.exp(a * np.cos(x)), 0, 2 * np.pi)
        assert ent.fisher(w, m) == pytest.approx(num / den, rel=1e-4)

    def test_uniform_density_zero(self):
        m = geo.conformal_sphere([0.05], 32)
        w = np.ones(m.n)
        assert ent.relative_entropy(w, m) == pytest.approx(0, abs=1e-15)
        assert ent.fisher(w, m) == pytest.approx(0, abs=1e-15)

    def test_bakry_emery_round_sphere(self):
        m = geo.round_sphere(64)
        w = density(m, [0.1])
        chk = ent.bakry_emery_check(w, m)
        assert chk["applicable"] and chk["holds"]


class TestShrinkerEntropy:
    @given(st.floats(0.1, 3.0), modes)
    def test_decomposition(self, tau, coeffs):
        m = geo.warped_circle(lambda x: 1 + 0.1 * np.cos(x), 1.0, 32)
        f = pe.f_from_density(density(m, coeffs), tau, m)
        sw = ent.shrinker_W(m, f, tau)
        assert sw.decomposition_gap < 1e-9 * max(1, abs(sw.W))
        assert sw.lsi_gap < 1e-9 * max(1, abs(sw.W))

    def test_coupling_warning(self):
        m = geo.warped_circle(1.0, 1.0, 16)
        with pytest.warns(ent.CouplingWarning):
            ent.shrinker_W(m, np.zeros(m.n), 1.0)

    def test_report_identities(self, ch_run):
        rep = ent.functional_report(ch_run)
        res = rep.residuals
        assert np.abs(res["consistency"]).max() < 1e-9
        assert np.abs(res["W_rate"]).max() < 5e-3
        assert np.abs(res["curvature_entropy"]).max() < 5e-3
        assert ent.weakly_nonincreasing(rep["W"], rep.t)[0]

    def test_report_round_trip(self, ch_run):
        rep = ent.functional_report(ch_run)
        back = ent.FunctionalReport.from_dict(rep.to_dict())
        assert np.array_equal(back["W"], rep["W"])

    def test_homogeneous_curvature_entropy_exact(self):
        traj = fl.run_uniform(geo.round_berger(), 0.5, 10, dt_max=0.01)
        run = pe.run_conjugate_heat(traj, 1.0, tau0=0.25)
        rep = ent.functional_report(run)
        assert np.abs(rep.residuals["curvature_entropy"]).max() < 1e-12
        assert np.abs(rep.residuals["W_rate"]).max() < 1e-12


class TestCurvatureEntropy:
    def test_monotone_and_harnack(self, ch_run):
        ce = ent.curvature_entropy(ch_run)
        assert ce.nonincreasing
        assert ce.harnack.min_slack >= -1e-8

    def test_weakly_nonincreasing_detects_growth(self):
        t = np.linspace(0, 1, 11)
        assert ent.weakly_nonincreasing(np.exp(-t), t)[0]
        assert not ent.weakly_nonincreasing(np.exp(t), t)[0]

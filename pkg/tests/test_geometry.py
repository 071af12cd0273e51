import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricciotto import geometry as geo
from oracles import quad_integral, structure_constant_ricci, warped_ricci

amplitude = st.floats(-0.2, 0.2)


def profile_pair(kind, a1, a2, b1):
    if kind == "circle":
        return (geo.FourierProfile(1.0, (a1,), (b1,)),
                geo.FourierProfile(1.0, (a2, 0.5 * a1), (b1,)))
    return geo.conformal_profiles([a1, a2])


class TestBerger:
    def test_round_sphere_values(self):
        c = geo.curvature(geo.round_berger())
        assert c.R[0] == pytest.approx(6.0, abs=1e-14)
        assert np.allclose(c.ric_eigen[:, 0], 2.0)
        assert c.ricci_lower_bound == pytest.approx(2.0)

    @given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
    def test_matches_structure_constants(self, a, b, c):
        ours = geo.curvature(geo.berger(a, b, c)).ric_eigen[:, 0]
        ref, _ = structure_constant_ricci((a, b, c))
        assert np.allclose(np.sort(ours), np.sort(ref), rtol=1e-10, atol=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(geo.GeometryError):
            geo.berger(1.0, 0.0, 1.0)


class TestWarpedCurvature:
    def test_round_sphere(self):
        c = geo.curvature(geo.round_sphere(128))
        assert np.abs(c.R - 6.0).max() < 1e-3
        assert abs(c.mean_R - 6.0) < 1e-3

    def test_cylinder_exact(self):
        c = geo.curvature(geo.cylinder(32, radius=2.0))
        assert np.allclose(c.R, 2.0 / 4.0, atol=1e-14)
        assert np.allclose(np.sort(c.ric_eigen, axis=0), [[0.0], [0.25], [0.25]], atol=1e-14)

    @pytest.mark.parametrize("kind", ["circle", "sphere"])
    def test_against_riemann_oracle(self, kind):
        phi, psi = profile_pair(kind, 0.1, -0.07, 0.05)
        maker = geo.warped_circle if kind == "circle" else geo.warped_sphere
        errs = []
        for n in (64, 128):
            m = maker(phi, psi, n)
            c = geo.curvature(m)
            k = n // 3
            R, eig = warped_ricci(phi, psi, float(m.mesh.coordinate[k]))
            errs.append(max(abs(c.R[k] - R), np.abs(np.sort(c.ric_eigen[:, k]) - eig).max()))
        assert errs[1] < 2e-3
        assert errs[0] / errs[1] > 3.5

    def test_pole_regularity_error(self):
        with pytest.raises(geo.PoleRegularityError):
            geo.curvature(geo.warped_sphere(1.0, lambda x: 2 * np.sin(x), 32))


class TestMeasure:
    @given(st.integers(8, 200), amplitude, amplitude)
    def test_probability_weights(self, n, a, b):
        m = geo.warped_circle(lambda x: 1 + a * np.cos(x), lambda x: 1 + b * np.sin(x), n)
        assert geo.probability_weights(m).sum() == pytest.approx(1.0, abs=1e-13)

    def test_volume_round_sphere(self):
        # Vol(S^3) = 2 pi^2, cell volumes are second order
        errs = [abs(geo.volume(geo.round_sphere(n)) - 2 * np.pi**2) for n in (64, 128)]
        assert errs[1] < 1e-4 * 2 * np.pi**2
        assert 3.8 < errs[0] / errs[1] < 4.2

    def test_integral_against_quadrature(self):
        phi = lambda x: 1 + 0.2 * np.cos(x)  # noqa: E731
        psi = lambda x: 1 + 0.3 * np.sin(x)  # noqa: E731
        f = lambda x: np.exp(np.sin(2 * x))  # noqa: E731
        m = geo.warped_circle(phi, psi, 256)
        ref = 4 * np.pi * quad_integral(lambda x: f(x) * phi(x) * psi(x) ** 2, 0, 2 * np.pi)
        assert geo.integrate(m, f(m.mesh.coordinate)) == pytest.approx(ref, rel=1e-12)


class TestOperators:
    @given(st.integers(8, 64), st.sampled_from(["circle", "sphere"]), st.integers(0, 2**31))
    def test_laplacian_symmetric_and_conservative(self, n, kind, seed):
        r = np.random.default_rng(seed)
        m = (geo.warped_circle(lambda x: 1 + 0.2 * np.cos(x), 1.0, n) if kind == "circle"
             else geo.conformal_sphere([0.1], n))
        u, v = r.standard_normal(n), r.standard_normal(n)
        pi = geo.probability_weights(m)
        lu, lv = geo.laplacian(m, u), geo.laplacian(m, v)
        assert np.dot(pi, v * lu) == pytest.approx(np.dot(pi, u * lv), abs=1e-10)
        assert np.dot(pi, lu) == pytest.approx(0.0, abs=1e-10)
        # -int u Lap u = Dirichlet form >= 0
        assert -np.dot(pi, u * lu) == pytest.approx(geo.dirichlet_form(m, u, u), rel=1e-10)

    def test_laplacian_second_order(self):
        errs = []
        for n in (64, 128):
            m = geo.warped_circle(1.0, 1.0, n)
            x = m.mesh.coordinate
            errs.append(np.abs(geo.laplacian(m, np.sin(3 * x)) + 9 * np.sin(3 * x)).max())
        assert 3.8 < errs[0] / errs[1] < 4.2

    def test_log_mean_limits(self):
        assert geo.log_mean(np.array([2.0]), np.array([2.0]))[0] == pytest.approx(2.0)
        assert geo.log_mean(np.array([1.0]), np.array([np.e]))[0] == pytest.approx(np.e - 1)

    def test_diameter_round_sphere(self):
        _, diam = geo.distance_and_diameter(geo.round_sphere(64))
        assert diam == pytest.approx(np.pi, rel=1e-3)


class TestSerialization:
    def test_state_round_trip(self):
        m = geo.conformal_sphere([0.05, 0.02], 32)
        back = geo.MetricState.from_dict(m.to_dict())
        assert np.array_equal(back.phi, m.phi) and np.array_equal(back.psi, m.psi)

    @given(amplitude, amplitude, st.booleans())
    def test_profile_round_trip(self, a, b, e):
        p = geo.FourierProfile(0.3, (a,), (b,), e)
        assert geo.FourierProfile.from_dict(p.to_dict()) == p

    def test_mesh_too_small(self):
        with pytest.raises(geo.GeometryError):
            geo.Mesh1D(4, "circle")

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ricciotto import flow as fl
from ricciotto import geometry as geo


def perturbed_circle(n):
    return geo.warped_circle(lambda x: 1 + 0.2 * np.cos(x),
                             lambda x: 1 + 0.3 * np.sin(x) + 0.1 * np.cos(2 * x), n)


class TestFixedPointsAndClosedForms:
    def test_round_berger_invariant(self):
        traj = fl.run_forward(geo.round_berger(), fl.FlowConfig(dt=0.01, t_final=1.0))
        assert max(np.abs(np.array(s.abc) - 0.25).max() for s in traj.states) < 1e-14

    def test_berger_converges_to_round(self):
        traj = fl.run_forward(geo.berger(0.4, 0.25, 0.15), fl.FlowConfig(dt=0.01, t_final=3.0))
        assert np.ptp(traj.states[-1].abc) < 0.05 * np.ptp([0.4, 0.25, 0.15])

    def test_berger_rate_matches_oracle(self):
        from oracles import structure_constant_ricci
        m = geo.berger(0.4, 0.3, 0.2)
        ric, _ = structure_constant_ricci(m.abc)
        R = ric.sum()
        expected = (-2 * ric + (2.0 / 3.0) * R) * np.array(m.abc)
        assert np.allclose(fl.flow_rate(m), expected, rtol=1e-12)

    def test_cylinder_closed_form(self):
        c = geo.cylinder(n=16)
        v0 = geo.volume(c)
        for _ in range(500):
            c = fl.step_normalized(c, 1e-3, target_volume=v0)
        s = 1 - 2 * c.beta / 3
        assert np.abs(c.psi - np.sqrt(s)).max() < 1e-12
        assert np.abs(c.phi - 1 / s).max() < 1e-12

    def test_cylinder_semi_implicit_first_order(self):
        errs = []
        for db in (1e-3, 5e-4):
            c = geo.cylinder(n=16)
            v0 = geo.volume(c)
            for _ in range(int(round(0.2 / db))):
                c = fl.step_normalized(c, db, scheme="semi-implicit", target_volume=v0)
            errs.append(np.abs(c.psi - np.sqrt(1 - 2 * 0.2 / 3)).max())
        assert 1.8 < errs[0] / errs[1] < 2.2


class TestInvariants:
    @given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.sampled_from(["circle", "sphere"]))
    def test_volume_preserved(self, a, b, kind):
        m = (geo.warped_circle(lambda x: 1 + a * np.cos(x), lambda x: 1 + b * np.sin(x), 32)
             if kind == "circle" else geo.conformal_sphere([a, 0.5 * b], 32))
        traj = fl.run_uniform(m, 0.01, 4)
        vols = [geo.volume(s) for s in traj.states]
        assert np.allclose(vols, vols[0], rtol=1e-12)

    def test_measure_rate_is_fluctuation_on_circle(self):
        m = perturbed_circle(64)
        c = geo.curvature(m)
        assert np.allclose(fl.measure_rate(m, c), c.R - c.mean_R, atol=1e-12)

    def test_stability_guard(self):
        m = perturbed_circle(32)
        with pytest.raises(ValueError):
            fl.step_normalized(m, 10 * fl.stability_bound(m))


class TestResiduals:
    def test_scalar_evolution_second_order(self):
        errs = []
        for n in (32, 64):
            m = perturbed_circle(n)
            h = m.mesh.spacing
            errs.append(fl.scalar_evolution_residual(fl.run_uniform(m, 0.02, n // 2, 0.05 * h * h)).max_norm)
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_mean_curvature_rate_second_order_in_space(self):
        errs = [np.abs(fl.mean_curvature_rate_identity(fl.run_uniform(perturbed_circle(n), 0.02, 20))).max()
                for n in (64, 128)]
        assert 3.6 < errs[0] / errs[1] < 4.4

    def test_observed_order(self):
        h = np.array([0.1, 0.05, 0.025])
        assert fl.observed_order(3 * h**2, h) == pytest.approx(2.0)

    def test_central_difference_needs_uniform(self):
        with pytest.raises(ValueError):
            fl.central_difference([1, 2, 3], [0, 1, 3])


class TestHomothety:
    def test_round_trip(self):
        traj = fl.run_uniform(geo.conformal_sphere([0.05], 32), 0.05, 10)
        un = fl.homothetic_convert(traj)
        back = fl.homothetic_convert(un, "to_normalized", reference_volume=traj.volume)
        assert np.abs(back.times - traj.times).max() < 1e-4
        assert np.abs(back.states[-1].psi - traj.states[-1].psi).max() < 1e-4


class TestSingularity:
    def test_neckpinch_raises_with_partial(self):
        m = geo.warped_sphere(1.0, lambda x: np.sin(x) * (1 - 0.85 * np.sin(x) ** 2), 32)
        with pytest.raises(fl.SingularityError) as info:
            fl.run_forward(m, fl.FlowConfig(dt=0.5 * fl.stability_bound(m), t_final=2.0,
                                             curvature_cap=50.0))
        assert info.value.partial is not None and len(info.value.partial) >= 1


class TestPersistence:
    def test_save_load(self, tmp_path):
        traj = fl.run_uniform(perturbed_circle(16), 0.01, 4)
        traj.save(tmp_path / "t.json")
        back = fl.Trajectory.load(tmp_path / "t.json")
        assert np.array_equal(back.times, traj.times)
        assert np.array_equal(back.states[-1].phi, traj.states[-1].phi)

    def test_interpolation_is_exact_at_nodes(self):
        traj = fl.run_uniform(perturbed_circle(16), 0.01, 4)
        assert traj.state_at(traj.times[2]) is traj.states[2]

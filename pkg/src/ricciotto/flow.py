"""Forward volume-normalized Ricci flow dg/dbeta = -2 Ric + (2/3) <R> g.

In reduced variables the flow is diagonal:

    d phi / d beta = (-Ric_radial + <R>/3) phi
    d psi / d beta = (-Ric_sphere + <R>/3) psi
    d a_i / d beta = (-2 r_i + 2<R>/3) a_i      (Berger, r_i Milnor-frame eigenvalues)

After every step the state is rescaled by an exact homothety so the volume is
that of the initial state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import geometry as geo


class SingularityError(RuntimeError):
    """Raised when the flow leaves the smooth regime; carries the partial trajectory."""

    def __init__(self, msg, beta, partial=None):
        super().__init__(f"{msg} at beta={beta:.6g}")
        self.beta = beta
        self.partial = partial


@dataclass
class FlowConfig:
    dt: float = 1e-4
    t_final: float = 0.1
    scheme: str = "rk4"  # or "semi-implicit"
    renormalize_volume: bool = True
    curvature_cap: float = 1e4
    check_stability: bool = True
    store_every: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if self.scheme not in ("rk4", "semi-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def stability_bound(m):
    """Largest explicit step: 0.2 h^2 min(phi^2).  Infinite for Berger."""
    if m.is_homogeneous:
        return np.inf
    return 0.2 * m.mesh.spacing**2 * float(np.min(m.phi)) ** 2


def flow_rate(m, curv=None):
    """d(coefficients)/d beta of the normalized flow."""
    curv = geo.curvature(m) if curv is None else curv
    third = curv.mean_R / 3.0
    if m.is_homogeneous:
        return (-curv.ric_eigen[:, 0] + third) * 2.0 * np.array(m.abc)
    return np.concatenate([(-curv.ric_eigen[0] + third) * m.phi,
                           (-curv.ric_eigen[1] + third) * m.psi])


def measure_rate(m, curv=None):
    """d/dt ln(dPi) at the nodes for backward time t = beta* - beta.

    Taken from the flow's own cell-volume derivative so that the discrete
    weights evolve exactly at this rate; it approximates R - <R>.
    """
    if m.is_homogeneous:
        return np.zeros(1)
    dv = geo.cell_volume_rate(m, flow_rate(m, curv))
    v = geo.cell_volume(m)
    return -(dv / v - dv.sum() / v.sum())


def renormalize(m, target_volume):
    vol = geo.volume(m)
    return m.scaled((target_volume / vol) ** (2.0 / 3.0))


def _rk4(m, db):
    y = m.coefficients()
    k1 = flow_rate(m)
    k2 = flow_rate(m.with_coefficients(y + 0.5 * db * k1))
    k3 = flow_rate(m.with_coefficients(y + 0.5 * db * k2))
    k4 = flow_rate(m.with_coefficients(y + db * k3))
    return m.with_coefficients(y + db / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), beta=m.beta + db)


def _second_derivative_matrix(m):
    """Sparse matrix of psi -> psi_ss with the odd pole reflection."""
    n, h, phi = m.n, m.mesh.spacing, m.phi
    pf = geo._face_avg(m, phi)
    left = 1.0 / (h * h * phi * pf[:-1])
    right = 1.0 / (h * h * phi * pf[1:])
    L = sparse.lil_matrix((n, n))
    for j in range(n):
        L[j, j] -= left[j] + right[j]
        if m.mesh.topology == "circle":
            L[j, (j - 1) % n] += left[j]
            L[j, (j + 1) % n] += right[j]
        else:
            if j > 0:
                L[j, j - 1] += left[j]
            else:
                L[j, j] -= left[j]  # ghost psi_{-1} = -psi_0
            if j < n - 1:
                L[j, j + 1] += right[j]
            else:
                L[j, j] -= right[j]
    return L.tocsc()


def _semi_implicit(m, db):
    """IMEX Euler: psi_ss treated implicitly, everything else explicit."""
    if m.is_homogeneous:
        return m.with_coefficients(m.coefficients() + db * flow_rate(m), beta=m.beta + db)
    curv = geo.curvature(m)
    rate = flow_rate(m, curv)
    n = m.n
    L = _second_derivative_matrix(m)
    psi_ss = L @ m.psi
    explicit_psi = rate[n:] - psi_ss
    A = sparse.identity(n, format="csc") - db * L
    psi_new = splinalg.spsolve(A, m.psi + db * explicit_psi)
    phi_new = m.phi + db * rate[:n]
    return m.with_coefficients(np.concatenate([phi_new, psi_new]), beta=m.beta + db)


def step_normalized(m, dbeta, scheme="rk4", renormalize_volume=True, target_volume=None,
                    check_stability=True, return_drift=False):
    """Advance one step; optionally return the relative volume drift before rescaling."""
    if check_stability and scheme == "rk4" and dbeta > stability_bound(m) * (1 + 1e-12):
        raise ValueError(f"dbeta={dbeta:.3g} exceeds stability bound {stability_bound(m):.3g}")
    target = geo.volume(m) if target_volume is None else target_volume
    try:
        new = _rk4(m, dbeta) if scheme == "rk4" else _semi_implicit(m, dbeta)
    except geo.GeometryError as exc:
        raise SingularityError(f"metric degenerated ({exc})", m.beta + dbeta) from exc
    drift = geo.volume(new) / target - 1.0
    if renormalize_volume:
        new = renormalize(new, target)
    return (new, drift) if return_drift else new


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: list
    curvature_cache: list
    rates: list
    volume: float
    config: FlowConfig | None = None
    mean_R_integral: np.ndarray | None = None  # running int_0^beta <R>

    def __len__(self):
        return len(self.times)

    @property
    def backend(self):
        return self.states[0].backend

    @property
    def beta_final(self):
        return float(self.times[-1])

    def mean_R(self):
        return np.array([c.mean_R for c in self.curvature_cache])

    def state_at(self, beta):
        """Cubic Hermite interpolation of the coefficients, then exact volume rescaling."""
        t = self.times
        if beta <= t[0]:
            return self.states[0]
        if beta >= t[-1]:
            return self.states[-1]
        k = int(np.searchsorted(t, beta, side="right") - 1)
        k = min(k, len(t) - 2)
        if beta == t[k]:
            return self.states[k]
        dt = t[k + 1] - t[k]
        s = (beta - t[k]) / dt
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        y = (h00 * self.states[k].coefficients() + h10 * dt * self.rates[k]
             + h01 * self.states[k + 1].coefficients() + h11 * dt * self.rates[k + 1])
        m = self.states[k].with_coefficients(y, beta=beta)
        return renormalize(m, self.volume)

    def to_dict(self):
        return {
            "config": asdict(self.config) if self.config else None,
            "times": self.times.tolist(),
            "states": [s.to_dict() for s in self.states],
            "volume": self.volume,
            "curvature_summaries": [
                {"mean_R": c.mean_R, "max_abs_R": float(np.abs(c.R).max()),
                 "ricci_lower_bound": c.ricci_lower_bound} for c in self.curvature_cache],
        }

    @classmethod
    def from_dict(cls, d):
        states = [geo.MetricState.from_dict(s) for s in d["states"]]
        cfg = FlowConfig(**d["config"]) if d.get("config") else None
        return build_trajectory(np.array(d["times"], float), states, cfg, volume=d["volume"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_trajectory(times, states, config=None, volume=None):
    curv = [geo.curvature(s) for s in states]
    rates = [flow_rate(s, c) for s, c in zip(states, curv)]
    meanR = np.array([c.mean_R for c in curv])
    running = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (meanR[1:] + meanR[:-1]))])
    vol = geo.volume(states[0]) if volume is None else volume
    return Trajectory(np.asarray(times, float), list(states), curv, rates, vol, config, running)


def run_forward(m0, cfg):
    """Integrate to cfg.t_final, storing every cfg.store_every steps.

    The last step is shortened to land exactly on t_final.
    """
    if cfg.check_stability and cfg.scheme == "rk4" and cfg.dt > stability_bound(m0):
        raise ValueError(f"dt={cfg.dt:.3g} exceeds stability bound {stability_bound(m0):.3g}")
    m = geo.MetricState.from_dict({**m0.to_dict(), "beta": 0.0})
    v0 = geo.volume(m)
    r0 = float(np.abs(geo.curvature(m).R).max())
    cap = cfg.curvature_cap * max(r0, 1e-12)
    times, states = [0.0], [m]
    nsteps = int(np.ceil(cfg.t_final / cfg.dt - 1e-9))
    for i in range(nsteps):
        db = min(cfg.dt, cfg.t_final - m.beta)
        if db <= 0:
            break
        try:
            m = step_normalized(m, db, cfg.scheme, cfg.renormalize_volume, v0,
                                check_stability=False)
            rmax = float(np.abs(geo.curvature(m).R).max())
        except (SingularityError, geo.GeometryError) as exc:
            partial = build_trajectory(np.array(times), states, cfg, v0)
            raise SingularityError(str(exc), m.beta + db, partial) from exc
        if not np.isfinite(rmax) or rmax > cap:
            partial = build_trajectory(np.array(times), states, cfg, v0)
            raise SingularityError("curvature above cap", m.beta, partial)
        if (i + 1) % cfg.store_every == 0 or i == nsteps - 1:
            times.append(m.beta)
            states.append(m)
    return build_trajectory(np.array(times), states, cfg, v0)


def run_uniform(m0, t_final, n_intervals, dt_max=None, scheme="rk4"):
    """Forward run stored at n_intervals + 1 equally spaced times.

    The step is the largest value <= dt_max (default: the stability bound)
    that divides each storage interval into a whole number of steps.
    """
    dt_max = stability_bound(m0) if dt_max is None else dt_max
    per = max(1, int(np.ceil(t_final / n_intervals / dt_max - 1e-9)))
    nsteps = per * n_intervals
    cfg = FlowConfig(dt=t_final / nsteps, t_final=t_final, scheme=scheme, store_every=per)
    return run_forward(m0, cfg)


def frozen_trajectory(m, t_final=1.0, n_samples=2):
    """A static 'trajectory' (flow switched off) for frozen-geometry experiments."""
    times = np.linspace(0.0, t_final, n_samples)
    c = geo.curvature(m)
    states = [geo.MetricState.from_dict({**m.to_dict(), "beta": float(b)}) for b in times]
    rates = [np.zeros_like(m.coefficients()) for _ in times]
    return Trajectory(times, states, [c] * n_samples, rates, geo.volume(m), None,
                      np.zeros(n_samples))


def is_frozen(traj):
    return all(not np.any(r) for r in traj.rates)


# ---------------------------------------------------------------- diagnostics

@dataclass
class ResidualSeries:
    times: np.ndarray
    fields: list
    norms: np.ndarray

    @property
    def max_norm(self):
        return float(np.max(self.norms)) if len(self.norms) else 0.0


def central_difference(values, times):
    """Central differences at interior samples of a uniformly spaced series."""
    values = np.asarray(values)
    dt = np.diff(times)
    if len(times) < 3:
        raise ValueError("need at least 3 samples for central differences")
    if np.ptp(dt) > 1e-9 * max(dt.max(), 1e-300):
        raise ValueError("central differences need uniform sampling")
    return (values[2:] - values[:-2]) / (2 * dt[0])


def observed_order(errors, spacings):
    """Least-squares slope of ln(error) against ln(spacing)."""
    e = np.asarray(errors, float)
    h = np.asarray(spacings, float)
    if len(e) < 2 or np.any(e <= 0):
        return np.nan
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def scalar_evolution_residual(traj, stride=1):
    """dR/dbeta - Delta R - 2|Ric0|^2 - (2/3) R (R - <R>) at interior samples.

    Norm is the max over nodes.  stride subsamples the stored times.
    """
    idx = np.arange(0, len(traj), stride)
    if len(idx) < 3:
        raise ValueError("too few samples for the scalar-curvature residual")
    times = traj.times[idx]
    R = np.array([traj.curvature_cache[i].R for i in idx])
    dR = central_difference(R, times)
    fields = []
    for j, i in enumerate(idx[1:-1]):
        m, c = traj.states[i], traj.curvature_cache[i]
        rhs = geo.laplacian(m, c.R) + 2 * c.traceless_norm_sq + (2.0 / 3.0) * c.R * (c.R - c.mean_R)
        fields.append(dR[j] - rhs)
    norms = np.array([np.abs(f).max() for f in fields])
    return ResidualSeries(times[1:-1], fields, norms)


def mean_curvature_rate_identity(traj):
    """d<R>/dbeta vs 2<|Ric0|^2> - Var(R)/3 at interior samples."""
    meanR = traj.mean_R()
    d = central_difference(meanR, traj.times)
    rhs = []
    for m, c in zip(traj.states[1:-1], traj.curvature_cache[1:-1]):
        var = geo.mean(m, c.R**2) - c.mean_R**2
        rhs.append(2 * geo.mean(m, c.traceless_norm_sq) - var / 3.0)
    return d - np.array(rhs)


# ---------------------------------------------------------------- homothety

@dataclass(eq=False)
class UnnormalizedTrajectory:
    eta: np.ndarray
    states: list
    beta: np.ndarray  # matching normalized times
    scale: np.ndarray  # c(eta): g_normalized = c * g_unnormalized


def homothetic_convert(traj, direction="to_unnormalized", reference_volume=None):
    """Convert between the normalized and the unnormalized Ricci flow.

    to_unnormalized: input Trajectory, output UnnormalizedTrajectory with
        c(beta) = exp((2/3) int_0^beta <R>),  g~ = g / c,  eta = int dbeta / c.
    to_normalized: input UnnormalizedTrajectory (eta, states), output
        Trajectory with c = (V0 / V(eta))^(2/3), g = c g~, beta = int c d eta.
    Quadratures are trapezoidal on the stored grid.
    """
    if direction == "to_unnormalized":
        meanR = traj.mean_R()
        A = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(traj.times) * (meanR[1:] + meanR[:-1]))])
        c = np.exp((2.0 / 3.0) * A)
        inv = 1.0 / c
        eta = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(traj.times) * (inv[1:] + inv[:-1]))])
        states = [s.scaled(1.0 / ci) for s, ci in zip(traj.states, c)]
        return UnnormalizedTrajectory(eta, states, traj.times.copy(), c)
    if direction == "to_normalized":
        vols = np.array([geo.volume(s) for s in traj.states])
        if np.any(vols <= 0) or not np.all(np.isfinite(vols)):
            raise ValueError("vanishing volume in unnormalized input")
        v0 = vols[0] if reference_volume is None else reference_volume
        c = (v0 / vols) ** (2.0 / 3.0)
        beta = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(traj.eta) * (c[1:] + c[:-1]))])
        states = [geo.MetricState.from_dict({**s.scaled(ci).to_dict(), "beta": b})
                  for s, ci, b in zip(traj.states, c, beta)]
        return build_trajectory(beta, states, None, v0)
    raise ValueError(f"unknown direction {direction!r}")


def convert_tau(tau_tilde, scale):
    """tau(beta(eta)) = c(eta) tau~(eta)."""
    return np.asarray(scale) * np.asarray(tau_tilde)

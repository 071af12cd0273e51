"""Backward quantities along a stored forward flow: the scale tau, the
conjugate heat measure and Perelman's function f.

Backward time is t = beta* - beta.  Geometry at times between stored samples
comes from the trajectory's cubic Hermite interpolation.

The density w = d varpi / d Pi evolves by

    dw/dt = Delta w - w q,       q = d/dt ln dPi  (continuum: R - <R>)

which is the measure equation d varpi/dt = Delta varpi written for the
Radon-Nikodym derivative.  By default q is the discrete rate at which the
flow changes the quadrature weights, so the total mass sum(pi_j w_j) is
conserved by the semi-discrete system; ``rate_source="curvature"`` uses
R - <R> directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from . import flow as fl
from . import geometry as geo
from . import otto


class ScaleCollapseError(RuntimeError):
    """tau reached zero during the backward integration."""


class StepSizeError(ValueError):
    """The density went negative: the step is too large for the mesh."""


@dataclass(frozen=True)
class ScaleState:
    tau: float
    tau_hat: float
    t: float


# ---------------------------------------------------------------- geometry provider

class BackwardGeometry:
    """States, curvature and weights of a trajectory indexed by backward time."""

    def __init__(self, traj, beta_star=None):
        self.traj = traj
        self.beta_star = traj.beta_final if beta_star is None else float(beta_star)
        if not traj.times[0] <= self.beta_star <= traj.beta_final + 1e-12:
            raise ValueError("beta_star outside the trajectory")
        keep = traj.times <= self.beta_star + 1e-12
        self.grid = np.sort(self.beta_star - traj.times[keep])
        self._cache = {}

    @property
    def volume(self):
        return self.traj.volume

    def _entry(self, t):
        key = round(float(t), 14)
        e = self._cache.get(key)
        if e is None:
            m = self.traj.state_at(self.beta_star - t)
            c = geo.curvature(m)
            e = {"state": m, "curv": c, "pi": geo.probability_weights(m)}
            self._cache[key] = e
        return e

    def state(self, t):
        return self._entry(t)["state"]

    def curvature(self, t):
        return self._entry(t)["curv"]

    def weights(self, t):
        return self._entry(t)["pi"]

    def fluctuation(self, t, source="flow"):
        """d/dt ln dPi (source='flow') or R - <R> (source='curvature')."""
        e = self._entry(t)
        if source == "curvature":
            c = e["curv"]
            return c.R - c.mean_R
        if source != "flow":
            raise ValueError(f"unknown rate source {source!r}")
        if "q" not in e:
            e["q"] = fl.measure_rate(e["state"], e["curv"])
        return e["q"]

    def mean_R(self, t):
        return self._entry(t)["curv"].mean_R

    def potential(self, t, source="flow"):
        """Phi solved from the metric at time t (cached per time)."""
        e = self._entry(t)
        key = "phi_" + source
        if key not in e:
            e[key] = otto.phi_potential(e["state"], e["curv"], source).potential
        return e[key]


# ---------------------------------------------------------------- scale tau

@dataclass
class TauSolution:
    t: np.ndarray
    tau_ode: np.ndarray
    tau_closed: np.ndarray
    tau_hat: np.ndarray
    mean_R_integral: np.ndarray  # A(t) = int_0^t <R>
    tau0: float
    mean_R: CubicSpline = field(repr=False, default=None)

    @property
    def discrepancy(self):
        return float(np.max(np.abs(self.tau_ode - self.tau_closed)))

    @property
    def tau(self):
        return self.tau_ode

    def states(self):
        return [ScaleState(float(a), float(b), float(c))
                for a, b, c in zip(self.tau_ode, self.tau_hat, self.t)]

    def monotonicity_ok(self, tol=1e-12):
        """dtau/dt >= 0 wherever 1 - (2/3)<R> tau > 0 (checked on the grid)."""
        drive = 1.0 - (2.0 / 3.0) * self.mean_R(self.t) * self.tau_ode
        if len(self.t) < 2:
            return True
        slope = np.gradient(self.tau_ode, self.t)
        return bool(np.all(slope[drive > tol] >= -tol))

    def to_dict(self):
        return {"t": self.t.tolist(), "tau": self.tau_ode.tolist(),
                "tau_closed": self.tau_closed.tolist(), "tau_hat": self.tau_hat.tolist(),
                "tau0": self.tau0}


def mean_curvature_spline(bg):
    t = bg.grid
    vals = np.array([bg.mean_R(s) for s in t])
    if len(t) < 2:
        raise ValueError("need at least two backward times")
    return CubicSpline(t, vals)


def _piecewise_integral(f, a, b, breaks, order=24):
    """int_a^b f by Gauss-Legendre on each piece between the break points."""
    cuts = np.concatenate([[a], breaks[(breaks > a) & (breaks < b)], [b]])
    return sum(integrate.fixed_quad(f, lo, hi, n=order)[0] for lo, hi in zip(cuts[:-1], cuts[1:]))


def _exp_integral(A, t, nodes):
    """E(t) = int_0^t exp((2/3) A) at each of the sorted times t."""
    out = np.zeros(len(t))
    prev, acc = 0.0, 0.0
    for k, c in enumerate(t):
        if c > prev:
            acc += _piecewise_integral(lambda s: np.exp((2.0 / 3.0) * A(s)), prev, c, nodes)
            prev = c
        out[k] = acc
    return out


def tau_evolve(traj, tau0, beta_star=None, t_eval=None):
    """tau(t) from dtau/dt = 1 - (2/3)<R> tau and from the closed form.

    Both use the same cubic spline of <R>(t) through the stored samples, so
    their difference measures only the integrators.
    """
    if tau0 <= 0:
        raise ValueError("tau0 must be positive")
    bg = traj if isinstance(traj, BackwardGeometry) else BackwardGeometry(traj, beta_star)
    spline = mean_curvature_spline(bg)
    A = spline.antiderivative()
    t = bg.grid if t_eval is None else np.asarray(t_eval, float)
    t_end = float(t[-1])

    def rhs(s, y):
        return [1.0 - (2.0 / 3.0) * spline(s) * y[0]]

    def collapse(s, y):
        return y[0]
    collapse.terminal = True

    sol = integrate.solve_ivp(rhs, (0.0, t_end), [tau0], method="DOP853", t_eval=t,
                              rtol=1e-13, atol=1e-15, events=collapse)
    if sol.status == 1 or np.any(sol.y[0] <= 0):
        raise ScaleCollapseError(f"tau reached 0 at t={sol.t_events[0]}")
    A_t = A(t) - A(0.0)
    E = _exp_integral(lambda s: A(s) - A(0.0), t, bg.grid)
    closed = np.exp(-(2.0 / 3.0) * A_t) * (tau0 + E)
    if np.any(closed <= 0):
        raise ScaleCollapseError("closed-form tau non-positive")
    hat = tau0 * np.exp(-(2.0 / 3.0) * A_t)
    return TauSolution(t, sol.y[0], closed, hat, A_t, float(tau0), spline)


def tau_scaled_form(tau_sol, t):
    """Closed form written in the adimensional time u = t / tau0.

    The integrals run over [0, u] with <R> read at the physical time tau0 s;
    this must reproduce the unscaled closed form.
    """
    tau0, spline = tau_sol.tau0, tau_sol.mean_R
    u_end = t / tau0
    breaks = spline.x / tau0

    def inner(z):
        z = np.atleast_1d(z)
        return np.array([_piecewise_integral(lambda s: spline(tau0 * s), 0.0, zi, breaks)
                         for zi in z])

    outer = _piecewise_integral(lambda z: np.exp((2.0 / 3.0) * tau0 * inner(z)), 0.0, u_end,
                                breaks, order=16)
    return tau0 * np.exp(-(2.0 / 3.0) * tau0 * inner(u_end)[0]) * (1.0 + outer)


def tau_fixed_point(mean_R):
    return 3.0 / (2.0 * mean_R)


# ---------------------------------------------------------------- f <-> w maps

def f_from_density(w, tau, m):
    w = np.asarray(w, float)
    if np.any(w <= 0):
        raise ValueError("density must be positive")
    return -np.log(w) + np.log(geo.volume(m) * (4.0 * np.pi * tau) ** -1.5)


def density_from_f(f, tau, m):
    return geo.volume(m) * (4.0 * np.pi * tau) ** -1.5 * np.exp(-np.asarray(f, float))


def coupling_residual(f, tau, m):
    """(4 pi tau)^(-3/2) int e^-f dmu - 1."""
    return (4.0 * np.pi * tau) ** -1.5 * geo.integrate(m, np.exp(-np.asarray(f, float))) - 1.0


def f_rate(m, f, tau, curv=None):
    """df/dt = Delta f - |grad f|^2 + R - 3/(2 tau)."""
    curv = geo.curvature(m) if curv is None else curv
    fs = geo.gradient(m, f)
    return geo.laplacian(m, f) - fs**2 + curv.R - 1.5 / tau


# ---------------------------------------------------------------- backward runs

@dataclass
class BackwardRun:
    kind: str
    t: np.ndarray
    w: list
    geometry: BackwardGeometry = field(repr=False)
    tau: TauSolution | None = None
    mass_drift: np.ndarray | None = None
    phi: list | None = None
    options: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def state(self, k):
        return self.geometry.state(self.t[k])

    def curvature(self, k):
        return self.geometry.curvature(self.t[k])

    def weights(self, k):
        return self.geometry.weights(self.t[k])

    def masses(self):
        return np.array([float(np.dot(self.weights(k), w)) for k, w in enumerate(self.w)])

    def f_snapshots(self):
        if self.tau is None:
            raise ValueError("run has no tau")
        return [f_from_density(w, tau, self.state(k))
                for k, (w, tau) in enumerate(zip(self.w, self.tau.tau))]

    def coupling_residuals(self):
        fs = self.f_snapshots()
        return np.array([coupling_residual(f, tau, self.state(k))
                         for k, (f, tau) in enumerate(zip(fs, self.tau.tau))])

    def to_dict(self):
        d = {"kind": self.kind, "t": self.t.tolist(), "w": [w.tolist() for w in self.w],
             "beta_star": self.geometry.beta_star, "options": self.options}
        if self.tau is not None:
            d["tau"] = self.tau.tau.tolist()
            d["tau_hat"] = self.tau.tau_hat.tolist()
            d["f"] = [f.tolist() for f in self.f_snapshots()]
            d["coupling_residuals"] = self.coupling_residuals().tolist()
        if self.mass_drift is not None:
            d["mass_drift"] = self.mass_drift.tolist()
        return d


def explicit_step_bound(m):
    """RK4 step guard for the backward diffusions: 0.3 h^2 min(phi)^2."""
    if m.is_homogeneous:
        return np.inf
    return 0.3 * m.mesh.spacing**2 * float(np.min(m.phi)) ** 2


def _normalize_density(m, w0):
    w0 = np.asarray(w0(m.mesh.coordinate) if callable(w0) else w0, float) * np.ones(m.n)
    if np.any(w0 <= 0):
        raise ValueError("initial density must be positive")
    return w0 / float(np.dot(geo.probability_weights(m), w0))


def _rk4(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_backward(bg, w0, rhs, substeps=None, form="density", renormalize=True,
                       neg_tol=1e-12):
    """Drive a density RHS over the backward grid; returns (w list, mass drift).

    form='measure' means rhs acts on the masses pi_j w_j instead of on w.
    """
    grid = bg.grid
    m0 = bg.state(0.0)
    w = _normalize_density(m0, w0)
    ws, drift = [w.copy()], [0.0]
    for k in range(len(grid) - 1):
        t0, t1 = grid[k], grid[k + 1]
        span = t1 - t0
        bound = explicit_step_bound(bg.state(t0))
        nsub = substeps or max(1, int(np.ceil(span / bound - 1e-9)))
        dt = span / nsub
        if dt > bound * (1 + 1e-9):
            raise StepSizeError(f"backward step {dt:.3g} exceeds bound {bound:.3g}")
        t = t0
        for _ in range(nsub):
            if form == "measure":
                mass = _rk4(rhs, t, bg.weights(t) * w, dt)
                w = mass / bg.weights(t + dt)
            else:
                w = _rk4(rhs, t, w, dt)
            t += dt
            if np.any(w <= -neg_tol) or not np.all(np.isfinite(w)):
                raise StepSizeError(f"density lost positivity at t={t:.4g}")
            total = float(np.dot(bg.weights(t), w))
            drift_now = total - 1.0
            if renormalize:
                w = w / total
        ws.append(w.copy())
        drift.append(drift_now)
    return ws, np.array(drift)


def conjugate_heat_rhs(bg, rate_source="flow"):
    def rhs(t, w):
        m = bg.state(t)
        return geo.laplacian(m, w) - w * bg.fluctuation(t, rate_source)
    return rhs


def conjugate_heat_measure_rhs(bg):
    """d varpi/dt = Delta varpi for the nodal masses M_j = pi_j w_j."""
    def rhs(t, mass):
        pi = bg.weights(t)
        return pi * geo.laplacian(bg.state(t), mass / pi)
    return rhs


def run_conjugate_heat(traj, w0=1.0, tau0=None, beta_star=None, substeps=None,
                       form="density", rate_source="flow", renormalize=True):
    """Backward conjugate heat run along a stored trajectory.

    form='measure' integrates d varpi/dt = Delta varpi for the masses; with
    rate_source='flow' it produces the same w as the density form up to the
    integrator's order.
    """
    bg = traj if isinstance(traj, BackwardGeometry) else BackwardGeometry(traj, beta_star)
    if form == "measure":
        rhs = conjugate_heat_measure_rhs(bg)
    elif form == "density":
        rhs = conjugate_heat_rhs(bg, rate_source)
    else:
        raise ValueError(f"unknown form {form!r}")
    ws, drift = integrate_backward(bg, w0, rhs, substeps, form, renormalize)
    tau = tau_evolve(bg, tau0) if tau0 is not None else None
    return BackwardRun("conjugate-heat", bg.grid.copy(), ws, bg, tau, drift,
                       options={"form": form, "rate_source": rate_source})


def conjugate_heat_step(w, bg, t, dt, rate_source="flow"):
    """One RK4 step of the conjugate heat equation followed by mass renormalization."""
    w = _rk4(conjugate_heat_rhs(bg, rate_source), t, np.asarray(w, float), dt)
    if np.any(w <= 0):
        raise StepSizeError("density lost positivity")
    return w / float(np.dot(bg.weights(t + dt), w))


def run_f_direct(traj, f0, tau0, beta_star=None, substeps=None):
    """Evolve f by its own nonlinear equation (no density detour).

    Returns (t, f list, tau solution, coupling residuals).
    """
    bg = traj if isinstance(traj, BackwardGeometry) else BackwardGeometry(traj, beta_star)
    tau_sol = tau_evolve(bg, tau0)
    tau_of = CubicSpline(tau_sol.t, tau_sol.tau) if len(tau_sol.t) > 2 else None

    def tau_at(s):
        if tau_of is None:
            return float(np.interp(s, tau_sol.t, tau_sol.tau))
        return float(tau_of(s))

    def rhs(s, f):
        m = bg.state(s)
        return f_rate(m, f, tau_at(s), bg.curvature(s))

    f = np.asarray(f0, float) * np.ones(bg.state(0.0).n)
    fs = [f.copy()]
    grid = bg.grid
    for k in range(len(grid) - 1):
        span = grid[k + 1] - grid[k]
        bound = explicit_step_bound(bg.state(grid[k]))
        nsub = substeps or max(1, int(np.ceil(span / bound - 1e-9)))
        dt = span / nsub
        t = grid[k]
        for _ in range(nsub):
            f = _rk4(rhs, t, f, dt)
            t += dt
        fs.append(f.copy())
    res = np.array([coupling_residual(f, tau, bg.state(s))
                    for f, tau, s in zip(fs, tau_sol.tau, grid)])
    return grid.copy(), fs, tau_sol, res

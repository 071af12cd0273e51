"""Entropy functionals of a density w = d varpi / d Pi and the balance
identities they satisfy along backward runs.

The Fisher information uses logarithmic-mean face weights,

    I = sum_faces a_f  (w_j - w_{j-1}) (ln w_j - ln w_{j-1}) / h  (normalized),

which is the exact discrete entropy production of the flux-form heat
operator: with it dS/dt = -I holds to roundoff for the semi-discrete heat
flow on a frozen mesh.  Time derivatives of stored series are central
differences; nothing here re-derives them analytically.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import perelman as pe
from .flow import central_difference


class CouplingWarning(UserWarning):
    pass


def _density(m, w):
    w = np.asarray(w, float) * np.ones(m.n)
    if np.any(w <= 0):
        raise ValueError("density must be positive")
    return w


def relative_entropy(w, m):
    w = _density(m, w)
    return float(np.dot(geo.probability_weights(m), w * np.log(w)))


def fisher(w, m):
    w = _density(m, w)
    lw = np.log(w)
    return geo.dirichlet_form(m, lw, lw, weight=w, kind="log")


def variation_norm(w, m, w_ref=None):
    """||w dPi - w_ref dPi||_var = int |w - w_ref| dPi (sup attained at sign(w - w_ref))."""
    w = _density(m, w)
    ref = 1.0 if w_ref is None else np.asarray(w_ref, float)
    return float(np.dot(geo.probability_weights(m), np.abs(w - ref)))


def mean_under(w, m, u):
    """int u d varpi."""
    return float(np.dot(geo.probability_weights(m), _density(m, w) * np.asarray(u)))


def lsi(w, m, rho, B=0.0):
    """Defective log-Sobolev functional (I + B) / (2 rho) - S."""
    return (fisher(w, m) + B) / (2.0 * rho) - relative_entropy(w, m)


def pinsker_slack(w, m):
    return relative_entropy(w, m) - 0.5 * variation_norm(w, m) ** 2


# ---------------------------------------------------------------- F and W

def _gradient_energy(m, f, weight):
    """int |grad f|^2 weight dmu with the log-mean face weight."""
    return geo.volume(m) * geo.dirichlet_form(m, f, f, weight=weight, kind="log")


def F_functional(m, f, curv=None):
    """int (R + |grad f|^2) e^-f dmu."""
    curv = geo.curvature(m) if curv is None else curv
    f = np.asarray(f, float) * np.ones(m.n)
    ef = np.exp(-f)
    return geo.integrate(m, curv.R * ef) + _gradient_energy(m, f, ef)


@dataclass
class ShrinkerEntropy:
    W: float
    W_decomposed: float
    W_lsi: float
    S: float
    I: float
    R_varpi: float
    G: float
    coupling_residual: float

    @property
    def decomposition_gap(self):
        return abs(self.W - self.W_decomposed)

    @property
    def lsi_gap(self):
        return abs(self.W - self.W_lsi)


def shrinker_W(m, f, tau, curv=None, coupling_tol=1e-8):
    """W directly from (f, tau), its (I, R, S) decomposition and its defective-LSI form."""
    curv = geo.curvature(m) if curv is None else curv
    f = np.asarray(f, float) * np.ones(m.n)
    norm = (4.0 * np.pi * tau) ** -1.5
    ef = np.exp(-f)
    coupling = pe.coupling_residual(f, tau, m)
    if abs(coupling) > coupling_tol:
        warnings.warn(f"coupling residual {coupling:.2e} above {coupling_tol:g}", CouplingWarning)
    direct = norm * (tau * (_gradient_energy(m, f, ef) + geo.integrate(m, curv.R * ef))
                     + geo.integrate(m, (f - 3.0) * ef))
    w = pe.density_from_f(f, tau, m)
    S, I = relative_entropy(w, m), fisher(w, m)
    Rw = mean_under(w, m, curv.R)
    log_term = np.log(geo.volume(m) * norm)
    decomposed = tau * (I + Rw) - S + log_term - 3.0
    via_lsi = lsi(w, m, 1.0 / (2.0 * tau), Rw) + log_term - 3.0
    G = S - log_term + 1.5
    return ShrinkerEntropy(direct, decomposed, via_lsi, S, I, Rw, G, coupling)


def G_functional(S, tau, volume):
    """S + ln((4 pi tau)^(3/2) / Vol) + 3/2."""
    return S + np.log((4.0 * np.pi * tau) ** 1.5 / volume) + 1.5


def W_rate_integrand(m, w, tau, curv=None):
    """2 tau |Ric + Hess f - g/(2 tau)|^2 as a nodal field, f = -ln w + const."""
    curv = geo.curvature(m) if curv is None else curv
    if m.is_homogeneous:
        e = curv.ric_eigen[:, 0] - 0.5 / tau
        return np.array([2.0 * tau * np.sum(e**2)])
    rr, ss = geo.hessian_components(m, -np.log(w))
    e0 = curv.ric_eigen[0] + rr - 0.5 / tau
    e1 = curv.ric_eigen[1] + ss - 0.5 / tau
    return 2.0 * tau * (e0**2 + 2.0 * e1**2)


# ---------------------------------------------------------------- reports

@dataclass
class FunctionalReport:
    t: np.ndarray
    columns: dict
    residuals: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key):
        """Column lookup, falling back to residuals; "W_rate" names both, use .residuals there."""
        if key in self.columns:
            return self.columns[key]
        return self.residuals[key]

    def table(self):
        """Column name -> array on the full time grid (residuals NaN-padded at the ends)."""
        out = {"t": self.t}
        out.update(self.columns)
        for k, v in self.residuals.items():
            v = np.asarray(v, float)
            if len(v) == len(self.t):
                out["residual_" + k] = v
            elif len(v) == len(self.t) - 2:
                out["residual_" + k] = np.concatenate([[np.nan], v, [np.nan]])
        return out

    def to_dict(self):
        return {"t": self.t.tolist(),
                "columns": {k: np.asarray(v).tolist() for k, v in self.columns.items()},
                "residuals": {k: np.asarray(v).tolist() for k, v in self.residuals.items()},
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["t"]), {k: np.array(v) for k, v in d["columns"].items()},
                   {k: np.array(v) for k, v in d["residuals"].items()}, d.get("meta", {}))


def differencing_error(values, times):
    """Estimated error of the central difference: |D_dt - D_2dt| / 3 at interior samples.

    Falls back to zeros when fewer than five samples are available.
    """
    values = np.asarray(values, float)
    if len(values) < 5:
        return np.zeros(max(len(values) - 2, 0))
    d1 = central_difference(values, times)
    dt = times[1] - times[0]
    d2 = (values[4:] - values[:-4]) / (4 * dt)
    err = np.abs(d1[1:-1] - d2) / 3.0
    return np.concatenate([[err[0]], err, [err[-1]]])


def weakly_nonincreasing(values, times, factor=10.0, floor=1e-12):
    """True when every increment is below factor x (differencing error x dt)."""
    values = np.asarray(values, float)
    inc = np.diff(values)
    dt = np.diff(times)
    err = differencing_error(values, times)
    e = float(err.max()) if len(err) else 0.0
    allowed = factor * e * dt + floor * max(1.0, float(np.abs(values).max()))
    return bool(np.all(inc <= allowed)), float(inc.max()) if len(inc) else 0.0


def functional_report(run):
    """All functionals at every time of a conjugate-heat run (needs run.tau)."""
    if run.tau is None:
        raise ValueError("run has no tau")
    cols = {k: [] for k in ("S", "I", "F", "W", "W_decomposed", "W_lsi", "R_varpi", "mean_R",
                            "tau", "tau_hat", "tauhatR", "G", "ric_norm_varpi", "W_rate",
                            "coupling", "var_norm", "mass")}
    for k in range(len(run)):
        m, c, w = run.state(k), run.curvature(k), run.w[k]
        tau, tau_hat = run.tau.tau[k], run.tau.tau_hat[k]
        f = pe.f_from_density(w, tau, m)
        sw = shrinker_W(m, f, tau, c, coupling_tol=np.inf)
        cols["S"].append(sw.S)
        cols["I"].append(sw.I)
        cols["F"].append(F_functional(m, f, c))
        cols["W"].append(sw.W)
        cols["W_decomposed"].append(sw.W_decomposed)
        cols["W_lsi"].append(sw.W_lsi)
        cols["R_varpi"].append(sw.R_varpi)
        cols["mean_R"].append(c.mean_R)
        cols["tau"].append(tau)
        cols["tau_hat"].append(tau_hat)
        cols["tauhatR"].append(tau_hat * sw.R_varpi)
        cols["G"].append(sw.G)
        cols["ric_norm_varpi"].append(mean_under(w, m, c.ric_norm_sq))
        cols["W_rate"].append(mean_under(w, m, W_rate_integrand(m, w, tau, c)))
        cols["coupling"].append(sw.coupling_residual)
        cols["var_norm"].append(variation_norm(w, m))
        cols["mass"].append(float(np.dot(run.weights(k), w)))
    cols = {k: np.array(v) for k, v in cols.items()}
    rep = FunctionalReport(np.asarray(run.t, float), cols, meta={"kind": run.kind})
    if len(run) >= 3:
        rep.residuals.update(balance_SIRR(rep))
        rep.residuals.update(balance_Wflow_and_G(rep))
        rep.residuals.update(curvature_entropy_residual(rep))
        rep.residuals["W_rate"] = W_rate_residual(rep)
    return rep


def balance_SIRR(rep):
    """dS/dt + I + <R>_varpi - <R>."""
    c = rep.columns
    dS = central_difference(c["S"], rep.t)
    mid = slice(1, -1)
    return {"SIRR": dS + c["I"][mid] + c["R_varpi"][mid] - c["mean_R"][mid]}


def balance_Wflow_and_G(rep):
    """Residuals of the W-flow balance and of the tau G equation, with their algebraic link.

    res_G = tau res_W + G res_tau + (D(tau G) - tau DG - G Dtau) holds exactly
    for central differences; 'consistency' is the left side minus the right.
    """
    c, t = rep.columns, rep.t
    mid = slice(1, -1)
    vol_log = c["G"] - c["S"] - 1.5  # ln((4 pi tau)^(3/2) / Vol)
    D = lambda v: central_difference(v, t)  # noqa: E731
    tau, G = c["tau"][mid], c["G"][mid]
    res_w = D(c["S"] + vol_log) + (4 * np.pi * c["tau"][mid]) ** -1.5 * c["F"][mid] - 1.5 / tau
    res_g = D(c["tau"] * c["G"]) + c["W"][mid] + (2.0 / 3.0) * c["mean_R"][mid] * tau * G
    res_tau = D(c["tau"]) - (1.0 - (2.0 / 3.0) * c["mean_R"][mid] * tau)
    defect = D(c["tau"] * c["G"]) - tau * D(c["G"]) - G * D(c["tau"])
    consistency = res_g - (tau * res_w + G * res_tau + defect)
    return {"Wflow": res_w, "tauG": res_g, "tau_ode": res_tau, "consistency": consistency}


def curvature_entropy_residual(rep):
    """d/dt[tau_hat <R>_varpi] + 2 tau_hat int |Ric|^2 d varpi.

    Product rule with the exact d tau_hat/dt = -(2/3)<R> tau_hat; only
    <R>_varpi is differenced, so homogeneous runs give zero.
    """
    c = rep.columns
    mid = slice(1, -1)
    th, x = c["tau_hat"][mid], c["R_varpi"][mid]
    d = th * central_difference(c["R_varpi"], rep.t) - (2.0 / 3.0) * c["mean_R"][mid] * th * x
    return {"curvature_entropy": d + 2.0 * th * c["ric_norm_varpi"][mid]}


def W_rate_residual(rep):
    """dW/dbeta - 2 tau int |Ric + Hess f - g/(2 tau)|^2 d varpi, with dW/dbeta = -dW/dt."""
    c = rep.columns
    return -central_difference(c["W"], rep.t) - c["W_rate"][1:-1]


@dataclass
class HarnackCheck:
    t: np.ndarray
    R_varpi: np.ndarray
    bound: np.ndarray

    @property
    def slack(self):
        return self.bound - self.R_varpi

    @property
    def min_slack(self):
        s = self.slack[np.isfinite(self.bound)]
        return float(s.min()) if len(s) else np.inf


def harnack_check(run, rep=None):
    """<R>_varpi(t) <= e^{2A/3} X0 / (1 + (2/3) X0 int_0^t e^{2A/3}),  X0 = <R>_varpi(0).

    A(t) = int_0^t <R>; the bound is +inf once the denominator is non-positive.
    """
    rep = functional_report(run) if rep is None else rep
    ts = run.tau
    A = ts.mean_R.antiderivative()
    t = np.asarray(run.t, float)
    E = pe._exp_integral(lambda s: A(s) - A(0.0), t, ts.mean_R.x)
    X0 = rep.columns["R_varpi"][0]
    growth = np.exp((2.0 / 3.0) * (A(t) - A(0.0)))
    den = 1.0 + (2.0 / 3.0) * X0 * E
    bound = np.where(den > 0, growth * X0 / np.where(den > 0, den, 1.0), np.inf)
    return HarnackCheck(t, rep.columns["R_varpi"], bound)


@dataclass
class CurvatureEntropy:
    t: np.ndarray
    values: np.ndarray
    residual: np.ndarray
    nonincreasing: bool
    max_increment: float
    harnack: HarnackCheck


def curvature_entropy(run, rep=None):
    rep = functional_report(run) if rep is None else rep
    ok, inc = weakly_nonincreasing(rep.columns["tauhatR"], rep.t)
    return CurvatureEntropy(rep.t, rep.columns["tauhatR"],
                            rep.residuals["curvature_entropy"], ok, inc, harnack_check(run, rep))


# ---------------------------------------------------------------- pointwise checks

def variational_S_check(w, m, trials):
    """sup over trial f of int f d varpi - ln int e^f dPi, and its gap to S."""
    w = _density(m, w)
    pi = geo.probability_weights(m)
    vals = []
    for f in trials:
        f = np.asarray(f, float) * np.ones(m.n)
        top = f.max()
        vals.append(float(np.dot(pi, f * w) - (top + np.log(np.dot(pi, np.exp(f - top))))))
    S = relative_entropy(w, m)
    best = max(vals) if vals else -np.inf
    return {"S": S, "values": np.array(vals), "sup": best, "gap": S - best}


def bakry_emery(w, m, curv=None):
    """Minimum over the mesh of the eigenvalues of Ric - Hess(ln w)."""
    curv = geo.curvature(m) if curv is None else curv
    if m.is_homogeneous:
        return float(curv.ric_eigen.min())
    rr, ss = geo.hessian_components(m, np.log(_density(m, w)))
    return float(min((curv.ric_eigen[0] - rr).min(), (curv.ric_eigen[1] - ss).min()))


def bakry_emery_check(w, m, rho=None, curv=None):
    """If min eig(Ric - Hess ln w) >= rho > 0 the LSI(rho; 0) value must be >= 0."""
    k = bakry_emery(w, m, curv)
    rho = k if rho is None else rho
    applicable = rho > 0 and k >= rho
    value = lsi(w, m, rho) if rho > 0 else None
    return {"min_eigenvalue": k, "rho": rho, "applicable": applicable, "lsi": value,
            "holds": (not applicable) or value >= -1e-12}

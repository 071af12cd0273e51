"""Fokker-Planck diffusion of a density along the backward flow.

    dw/dt = Delta w - grad Phi . grad w,      Delta Phi = -(R - <R>)

Phi is re-solved from the metric at every stage time.  With the default
flow-source Phi (Delta Phi = -d/dt ln dPi for the discrete weights) the drift
discretization is the adjoint of the flux Laplacian, so dPi itself (w = 1)
is an exact stationary solution and total mass is conserved by the
semi-discrete system.

Diagnostics follow the entropy, Fisher information and convergence claims
for this flow, the Hopf-Cole map to a viscous Hamilton-Jacobi equation, and
the comparison with the conjugate heat flow.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import entropy as ent
from . import flow as fl
from . import geometry as geo
from . import otto
from . import perelman as pe
from . import transport as tr
from .flow import central_difference


@dataclass
class FPRun(pe.BackwardRun):
    diagnostics: dict = field(default_factory=dict)
    hj: dict | None = None

    def to_dict(self):
        d = super().to_dict()
        d["phi"] = [p.tolist() for p in self.phi]
        d["diagnostics"] = {k: np.asarray(v).tolist() for k, v in self.diagnostics.items()}
        if self.hj is not None:
            d["hj"] = {"eps": self.hj["eps"], "u": [u.tolist() for u in self.hj["u"]]}
        return d


# ---------------------------------------------------------------- stepping

def fp_operator(m, phi, w):
    return geo.laplacian(m, w) - otto.drift_term(m, phi, w)


def fp_step(w, m, phi, dt, renormalize=True):
    """One RK4 step of the density equation on a frozen metric."""
    w = np.asarray(w, float)
    bound = pe.explicit_step_bound(m)
    if dt > bound * (1 + 1e-9):
        raise pe.StepSizeError(f"step {dt:.3g} exceeds the stability bound {bound:.3g}")
    phi = np.zeros(m.n) if phi is None else np.asarray(phi, float) * np.ones(m.n)
    out = pe._rk4(lambda _t, u: fp_operator(m, phi, u), 0.0, w, dt)
    if np.any(out <= 0) or not np.all(np.isfinite(out)):
        raise pe.StepSizeError("density lost positivity")
    if renormalize:
        out = out / float(np.dot(geo.probability_weights(m), out))
    return out


def fp_rhs(bg, phi_source="flow"):
    def rhs(t, w):
        return fp_operator(bg.state(t), bg.potential(t, phi_source), w)
    return rhs


def run_backward_fp(traj, w0=1.0, beta_star=None, substeps=None, phi_source="flow",
                    renormalize=True, diagnostics=True):
    """Fokker-Planck run over the backward grid of a stored trajectory."""
    bg = traj if isinstance(traj, pe.BackwardGeometry) else pe.BackwardGeometry(traj, beta_star)
    ws, drift = pe.integrate_backward(bg, w0, fp_rhs(bg, phi_source), substeps,
                                      renormalize=renormalize)
    phis = [bg.potential(t, phi_source) for t in bg.grid]
    run = FPRun("fokker-planck", bg.grid.copy(), ws, bg, None, drift, phis,
                options={"phi_source": phi_source})
    if diagnostics:
        populate_diagnostics(run)
    return run


def populate_diagnostics(run, transport=True):
    d = run.diagnostics
    d["S"] = np.array([ent.relative_entropy(w, run.state(k)) for k, w in enumerate(run.w)])
    d["I"] = np.array([ent.fisher(w, run.state(k)) for k, w in enumerate(run.w)])
    d["K"] = np.array([run.curvature(k).ricci_lower_bound for k in range(len(run))])
    d["mass"] = run.masses()
    if transport and not run.state(0).is_homogeneous:
        d["D2"] = np.array([tr.w2_exact_1d(run.state(k), w, np.ones(w.size))
                            for k, w in enumerate(run.w)])
    if len(run) >= 3:
        d["rate"] = fitted_decay_rate(run.t, d["S"])
    return d


# ---------------------------------------------------------------- entropy and Fisher information

@dataclass
class IdentitySeries:
    t: np.ndarray
    residual: np.ndarray
    scale: float = 1.0

    @property
    def max_norm(self):
        return float(np.abs(self.residual).max()) if len(self.residual) else 0.0


def _diag(run, key):
    if key not in run.diagnostics:
        populate_diagnostics(run, transport=False)
    return run.diagnostics[key]


def gradient_identity(run):
    """dS/dt + I at interior samples."""
    if len(run) < 3:
        raise ValueError("need at least 3 samples")
    S, I = _diag(run, "S"), _diag(run, "I")
    res = central_difference(S, run.t) + I[1:-1]
    return IdentitySeries(run.t[1:-1], res, float(np.abs(I).max()) or 1.0)


@dataclass
class FisherTerms:
    t: np.ndarray
    dI: np.ndarray  # central difference of I
    log_equation: np.ndarray  # int w (|grad l|^2 E + 2 grad l . grad E)
    metric: np.ndarray  # int w (-2 Ric + (2/3) <R> g)(grad l, grad l)
    ricci_hessian: np.ndarray  # -2 int w (Ric + Hess Phi)(grad l, grad l)
    hessian: np.ndarray  # -2 int w |Hess l|^2
    I: np.ndarray
    K: np.ndarray
    tolerance: np.ndarray

    @property
    def rhs(self):
        return self.log_equation + self.metric + self.ricci_hessian + self.hessian

    @property
    def residual(self):
        return self.dI - self.rhs

    @property
    def inequality_slack(self):
        """-2 K I - dI/dt, allowed to dip to -tolerance."""
        return -2.0 * self.K * self.I - self.dI

    @property
    def inequality_holds(self):
        return bool(np.all(self.inequality_slack >= -self.tolerance))


def log_equation_defect(m, w, dl, phi):
    """E = dl/dt - (Delta l + |grad l|^2 - grad Phi . grad l) for l = ln w."""
    l = np.log(w)
    ls = geo.gradient(m, l)
    return dl - (geo.laplacian(m, l) + ls**2 - geo.gradient(m, phi) * ls)


def fisher_terms(m, w, dl, phi, curv):
    """Nodal evaluation of the right-hand side of the Fisher-information identity."""
    if m.is_homogeneous:
        return 0.0, 0.0, 0.0, 0.0
    pi = geo.probability_weights(m)
    l = np.log(w)
    ls = geo.gradient(m, l)
    rr, ss = geo.hessian_components(m, l)
    E = log_equation_defect(m, w, dl, phi)
    Es = geo.gradient(m, E)
    ric = curv.ric_eigen[0]
    phi_rr = geo.second_derivative(m, phi)
    g2 = ls**2
    t_log = float(np.dot(pi, w * (g2 * E + 2.0 * ls * Es)))
    t_metric = float(np.dot(pi, w * (-2.0 * ric + (2.0 / 3.0) * curv.mean_R) * g2))
    t_rh = -2.0 * float(np.dot(pi, w * (ric + phi_rr) * g2))
    t_h = -2.0 * float(np.dot(pi, w * (rr**2 + 2.0 * ss**2)))
    return t_log, t_metric, t_rh, t_h


def fisher_decay(run, factor=10.0):
    """Term-by-term Fisher-information identity and the curvature inequality."""
    if len(run) < 3:
        raise ValueError("need at least 3 samples")
    t = np.asarray(run.t)
    I, K = _diag(run, "I"), _diag(run, "K")
    dI = central_difference(I, t)
    logs = np.log(np.array(run.w))
    dlog = central_difference(logs, t)
    terms = []
    for j, k in enumerate(range(1, len(t) - 1)):
        phi = run.phi[k] if run.phi is not None else run.geometry.potential(t[k])
        terms.append(fisher_terms(run.state(k), run.w[k], dlog[j], phi, run.curvature(k)))
    terms = np.array(terms).reshape(-1, 4)
    tol = factor * ent.differencing_error(I, t) + 1e-12 * max(1.0, float(np.abs(I).max()))
    return FisherTerms(t[1:-1], dI, terms[:, 0], terms[:, 1], terms[:, 2], terms[:, 3],
                       I[1:-1], K[1:-1], tol)


def fisher_exponential_slack(run):
    """min over sample pairs s > t of I(t) exp(-2 int_t^s K) - I(s), relative to I(0)."""
    t = np.asarray(run.t)
    I, K = _diag(run, "I"), _diag(run, "K")
    cumK = np.concatenate([[0.0], np.cumsum(0.5 * (K[1:] + K[:-1]) * np.diff(t))])
    bound = I[:, None] * np.exp(-2.0 * (cumK[None, :] - cumK[:, None]))
    slack = bound - I[None, :]
    upper = np.triu(np.ones_like(slack, dtype=bool), 1)
    scale = max(float(I[0]), 1e-300)
    return float(slack[upper].min() / scale) if upper.any() else 0.0


def maximum_principle(run):
    """(min w nondecreasing, max w nonincreasing) along the stored samples."""
    lo = np.array([w.min() for w in run.w])
    hi = np.array([w.max() for w in run.w])
    tol = 1e-13
    return bool(np.all(np.diff(lo) >= -tol)), bool(np.all(np.diff(hi) <= tol))


# ---------------------------------------------------------------- convergence

def fitted_decay_rate(t, S, floor=1e-8):
    """-slope of the least-squares line through ln S where S > floor."""
    t, S = np.asarray(t, float), np.asarray(S, float)
    keep = S > floor
    if keep.sum() < 2:
        return np.nan
    return float(-np.polyfit(t[keep], np.log(S[keep]), 1)[0])


@dataclass
class ConvergenceReport:
    t: np.ndarray
    S: np.ndarray
    lambda_inf: float
    rate: float
    lsi_slack: np.ndarray  # 3 I / (2 lambda) - S
    decay_slack: np.ndarray  # S(0) e^{-(2/3) lambda t} (1 + tol) - S
    talagrand_slack: np.ndarray  # S - (lambda / 6) D2^2
    convexity_slack: np.ndarray  # d2S/dt2 - ((2/3) lambda)^2 S at interior samples
    displacement_slack: np.ndarray  # d2S/dt2 - (1/4)((2/3) lambda)^3 D2^2
    tolerance: np.ndarray
    D2: np.ndarray

    @property
    def target_rate(self):
        return (2.0 / 3.0) * self.lambda_inf

    def summary(self):
        return {"rate": self.rate, "target_rate": self.target_rate,
                "min_decay_slack": float(self.decay_slack.min()),
                "min_lsi_slack": float(self.lsi_slack.min()),
                "min_talagrand_slack": float(self.talagrand_slack.min()),
                "min_convexity_slack": float((self.convexity_slack + self.tolerance).min())
                if len(self.convexity_slack) else 0.0}


def _second_difference(v, t):
    dt = t[1] - t[0]
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dt**2
    err = np.zeros_like(d2)
    if len(v) >= 5:
        wide = (v[4:] - 2 * v[2:-2] + v[:-4]) / (4 * dt**2)
        e = np.abs(d2[1:-1] - wide) / 3.0
        err = np.concatenate([[e[0]], e, [e[-1]]])
    return d2, err


def convergence_report(run, rel_tol=1e-6, factor=10.0):
    t = np.asarray(run.t, float)
    S, I, K = _diag(run, "S"), _diag(run, "I"), _diag(run, "K")
    if "D2" not in run.diagnostics:
        run.diagnostics["D2"] = np.array([tr.w2_exact_1d(run.state(k), w, np.ones(w.size))
                                          for k, w in enumerate(run.w)])
    D2 = run.diagnostics["D2"]
    lam = 3.0 * float(K.min())
    rate = fitted_decay_rate(t, S)
    c = (2.0 / 3.0) * lam
    decay = S[0] * np.exp(-c * (t - t[0])) * (1 + rel_tol) + 1e-14 - S
    lsi = 1.5 * I / lam - S if lam > 0 else np.full_like(S, np.inf)
    tal = S - lam / 6.0 * D2**2
    if len(t) >= 3:
        d2, err = _second_difference(S, t)
        conv = d2 - c**2 * S[1:-1]
        disp = d2 - 0.25 * c**3 * D2[1:-1] ** 2
        tol = factor * err + 1e-12
    else:
        conv = disp = tol = np.zeros(0)
    return ConvergenceReport(t, S, lam, rate, lsi, decay, tal, conv, disp, tol, D2)


def wasserstein_nonincreasing(run, n_samples=8, rel_tol=1e-9):
    idx = np.unique(np.linspace(0, len(run) - 1, n_samples).round().astype(int))
    d = np.array([tr.w2_exact_1d(run.state(k), run.w[k], np.ones(run.w[k].size)) for k in idx])
    ok = bool(np.all(np.diff(d) <= rel_tol * max(d.max(), 1e-300)))
    return ok, run.t[idx], d


# ---------------------------------------------------------------- Hopf-Cole

def default_viscosity(run):
    """(lambda_inf / 3) (4 pi mu0)^(2/3) with mu0 the second moment of dOmega_0 about its median."""
    K = _diag(run, "K")
    lam = 3.0 * float(K.min())
    if lam <= 0:
        raise ValueError("the default viscosity needs positive Ricci curvature")
    m = run.state(0)
    mu = tr.reduced_measure(m, run.w[0], "atoms")
    med = float(mu.quantile(0.5))
    d = np.abs(mu.lo - med)
    if mu.periodic:
        d = np.minimum(d, mu.length - d)
    mu0 = float(np.dot(mu.mass, d**2))
    return lam / 3.0 * (4.0 * np.pi * mu0) ** (2.0 / 3.0)


def hopf_cole(run, eps=None, floor=1e-280):
    """u = -2 eps ln w at every sample; the rescaled time is s = t / eps."""
    eps = default_viscosity(run) if eps is None else float(eps)
    us = []
    for w in run.w:
        if np.any(w <= floor):
            raise FloatingPointError("density too close to zero for the Hopf-Cole transform")
        us.append(-2.0 * eps * np.log(w))
    run.hj = {"eps": eps, "u": us, "s": np.asarray(run.t) / eps}
    return run.hj


def hj_residual(run, eps=None):
    """Max-norm residual of du/ds + |grad u|^2/2 - eps(Delta u - grad Phi . grad u)."""
    hj = run.hj if (run.hj is not None and (eps is None or eps == run.hj["eps"])) else hopf_cole(run, eps)
    eps, u, s = hj["eps"], np.array(hj["u"]), hj["s"]
    du = central_difference(u, s)
    out = []
    for j, k in enumerate(range(1, len(s) - 1)):
        m = run.state(k)
        phi = run.phi[k] if run.phi is not None else run.geometry.potential(run.t[k])
        us = geo.gradient(m, u[k])
        r = du[j] + 0.5 * us**2 - eps * (geo.laplacian(m, u[k]) - geo.gradient(m, phi) * us)
        out.append(float(np.abs(r).max()))
    return IdentitySeries(s[1:-1], np.array(out), eps)


def hopf_lax(U, t, m):
    """inf_y U(y) + d(x, y)^2 / (2 t) over the mesh nodes, on a frozen metric."""
    d, _ = geo.distance_and_diameter(m)
    U = np.asarray(U, float)
    return np.min(U[None, :] + d**2 / (2.0 * t), axis=1)


def viscous_hj_solution(m, U, s, eps, substeps=None):
    """u_eps at rescaled time s from the heat flow of exp(-U / (2 eps)) on a frozen metric with Phi = 0."""
    U = np.asarray(U, float)
    w = np.exp(-(U - U.min()) / (2.0 * eps))
    T = s * eps
    bound = pe.explicit_step_bound(m)
    n = substeps or max(1, int(np.ceil(T / bound - 1e-9)))
    for _ in range(n):
        w = fp_step(w, m, None, T / n, renormalize=False)
    return -2.0 * eps * np.log(w) + U.min()


def vanishing_viscosity_sweep(m, U, s=0.1, eps_values=(0.1, 0.05, 0.025)):
    """sup |u_eps(s) - HopfLax(U, s)| for each eps; returns (eps, errors, monotone)."""
    ref = hopf_lax(U, s, m)
    errs = np.array([float(np.abs(viscous_hj_solution(m, U, s, e) - ref).max()) for e in eps_values])
    order = np.argsort(eps_values)[::-1]
    mono = bool(np.all(np.diff(errs[order]) < 0))
    return np.asarray(eps_values), errs, mono


# ---------------------------------------------------------------- comparison with the conjugate heat flow

@dataclass
class ComparisonResiduals:
    t: np.ndarray
    pairing: np.ndarray  # X = int grad Phi . grad w dPi at every sample
    entropy_balance: np.ndarray  # (a) dS/dt + I + X, interior
    fluctuation: np.ndarray  # (b) X - int (R - <R>) d varpi, every sample
    pairing_rate: np.ndarray  # (c) dX/dt - formula, interior
    initial_slope: float  # (X(t1) - X(t0)) / (t1 - t0)
    variance0: float  # <R^2> - <R>^2 at t = 0

    @property
    def slope_error(self):
        return abs(self.initial_slope + self.variance0) / max(self.variance0, 1e-300)


def pairing_rate_formula(m, w, curv):
    """-2 int (|Ric0|^2 - <|Ric0|^2>) d varpi - (2/3) int R (R - <R>) d varpi - Var(R) / 3."""
    pi = geo.probability_weights(m)
    t2 = curv.traceless_norm_sq
    R = curv.R
    var = float(np.dot(pi, R**2)) - curv.mean_R**2
    a = float(np.dot(pi, w * (t2 - float(np.dot(pi, t2)))))
    b = float(np.dot(pi, w * R * (R - curv.mean_R)))
    return -2.0 * a - (2.0 / 3.0) * b - var / 3.0


def perelman_comparison(run, phi_source="flow"):
    """Residuals of the entropy balance and pairing identities along a conjugate heat run."""
    if run.kind != "conjugate-heat":
        raise ValueError("the comparison is defined for conjugate heat runs")
    t = np.asarray(run.t, float)
    if len(t) < 3:
        raise ValueError("need at least 3 samples")
    X, S, I, flu, rates = [], [], [], [], []
    for k, w in enumerate(run.w):
        m, c = run.state(k), run.curvature(k)
        if m.is_homogeneous:
            X.append(0.0)
            flu.append(0.0)
            rates.append(0.0)
            S.append(ent.relative_entropy(w, m))
            I.append(0.0)
            continue
        phi = run.geometry.potential(t[k], phi_source)
        x = geo.dirichlet_form(m, phi, w)
        X.append(x)
        flu.append(x - float(np.dot(run.weights(k), w * (c.R - c.mean_R))))
        rates.append(pairing_rate_formula(m, w, c))
        S.append(ent.relative_entropy(w, m))
        I.append(ent.fisher(w, m))
    X, S, I, rates = map(np.array, (X, S, I, rates))
    a = central_difference(S, t) + I[1:-1] + X[1:-1]
    cres = central_difference(X, t) - rates[1:-1]
    c0 = run.curvature(0)
    var0 = geo.mean(run.state(0), c0.R**2) - c0.mean_R**2
    slope = (X[1] - X[0]) / (t[1] - t[0])
    return ComparisonResiduals(t, X, a, np.array(flu), cres, float(slope), float(var0))

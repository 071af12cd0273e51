"""Otto calculus on the reduced geometries.

Tangent vectors to a curve of probability measures are represented by
potentials solving the weighted Poisson problem -div(rho grad psi) = h.  In
one reduced dimension the flux is a single antiderivative, so the solve is
exact: face fluxes are accumulated from one end (a pole, where the flux
vanishes, or a periodic seam fixed by requiring the potential to close).

Conventions, with t the backward time:
  d/dt dPi = -Delta(Phi) dPi,         so d/dt int zeta dPi = <zeta, Phi>
  d/dt dvarpi = -div(w grad Psi) dPi, so d/dt int zeta dvarpi = <zeta, Psi>_w
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as fl
from . import geometry as geo


class CompatibilityError(ValueError):
    """Source of a Neumann/periodic Poisson problem does not integrate to zero."""


class ConditioningError(ValueError):
    """Weight of a Poisson problem is not strictly positive."""


@dataclass
class TangentPotential:
    potential: np.ndarray
    kind: str  # "theta", "psi", "phi" or "generic"
    residual: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.potential, dtype=dtype)


def gauge_fix(m, u):
    """Subtract the dPi mean."""
    return u - geo.mean(m, u)


def solve_weighted_poisson(m, weight, source, kind="generic", compat_tol=1e-10):
    """Solve -div(weight grad psi) = source with the mean-zero gauge.

    weight is a positive nodal field (or scalar); its face values are
    arithmetic means, matching geometry.weighted_laplacian.
    """
    if m.is_homogeneous:
        return TangentPotential(np.zeros(1), kind, 0.0)
    n, h = m.n, m.mesh.spacing
    src = np.asarray(source, float) * np.ones(n)
    rho = np.asarray(weight, float) * np.ones(n)
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise ConditioningError("weight must be strictly positive")
    vol = geo.cell_volume(m)
    total = float(np.dot(vol, src))
    scale = float(np.dot(vol, np.abs(src))) or 1.0
    if abs(total) > compat_tol * scale and abs(total) > compat_tol * vol.sum():
        raise CompatibilityError(f"source integrates to {total:.3e}")
    # remove the admissible roundoff so the flux closes
    src = src - total / vol.sum()
    # F_{j+1} - F_j = -src_j V_j with F = a rho_f dpsi/dx on faces
    flux = np.concatenate([[0.0], -np.cumsum(src * vol)])
    cond = geo.face_conductance(m, rho)
    if m.mesh.topology == "interval":
        dpsi = np.zeros(n + 1)
        dpsi[1:-1] = flux[1:-1] / cond[1:-1]
        steps = dpsi[1:-1] * h
        psi = np.concatenate([[0.0], np.cumsum(steps)])
    else:
        # faces 0 and n coincide; F_0 = c free, chosen so the increments close
        inv = 1.0 / cond[:-1]
        c = -np.dot(flux[:-1], inv) / inv.sum()
        dpsi = (flux[:-1] + c) * inv
        psi = np.concatenate([[0.0], np.cumsum(dpsi[1:] * h)])
    psi = gauge_fix(m, psi)
    resid = -geo.weighted_laplacian(m, rho, psi) - src
    res = float(np.sqrt(geo.mean(m, resid**2)))
    return TangentPotential(psi, kind, res)


def phi_potential(m, curv=None, source="curvature"):
    """Curvature-fluctuation potential: Delta Phi = -(R - <R>).

    source='flow' uses the discrete measure rate of the flow instead of
    R - <R>; then Phi generates exactly the motion of the quadrature weights.
    """
    if m.is_homogeneous:
        return TangentPotential(np.zeros(1), "phi", 0.0)
    curv = geo.curvature(m) if curv is None else curv
    if source == "curvature":
        rhs = curv.R - curv.mean_R
    elif source == "flow":
        rhs = fl.measure_rate(m, curv)
    else:
        raise ValueError(f"unknown source {source!r}")
    return solve_weighted_poisson(m, 1.0, rhs, kind="phi")


def otto_inner(m, w, u, v):
    """<u, v>_w = int grad u . grad v w dPi."""
    return geo.dirichlet_form(m, u, v, weight=w)


def drift_term(m, potential, w):
    """Nodal grad(potential) . grad(w), discretized as the adjoint of the flux Laplacian.

    Face products are split evenly between the two adjacent cells, so that
    sum_j V_j drift_j equals the face Dirichlet sum exactly.
    """
    if m.is_homogeneous:
        return np.zeros(1)
    a = geo.face_conductance(m)
    prod = a * geo.face_difference(m, potential) * geo.face_difference(m, w)
    return 0.5 * m.mesh.spacing * (prod[:-1] + prod[1:]) / geo.cell_volume(m)


def drift_divergence(m, w, potential):
    """div(w grad potential) with arithmetic face weights."""
    return geo.weighted_laplacian(m, w, potential)


# ---------------------------------------------------------------- curves of measures

@dataclass
class CurveResiduals:
    t: np.ndarray
    fp_residual: np.ndarray  # max |(d/dt + grad Theta.grad) w - div(w grad ln w)|
    drift_defect_gap: np.ndarray  # max |fp residual field - div(w grad Theta)|
    entropy_gap: np.ndarray  # dS/dt + <Grad S, Grad S>_w
    tangent_gap: np.ndarray  # int zeta (dw/dt + Theta.w) - <zeta, Psi - Theta>_w
    psi: list
    theta: list


def _ln_fisher(m, w):
    return geo.dirichlet_form(m, np.log(w), np.log(w), weight=w, kind="log")


def grad_S_and_flow_residual(run, zeta=None, theta_source="flow"):
    """Tangent potentials and gradient-flow residuals along a stored backward run.

    Theta of the Ricci fiducial curve is Phi.  Time derivatives are central
    differences on the run's grid, so the residuals are O(dt^2) plus the
    spatial defect of the curve's own equation.
    """
    t = np.asarray(run.t)
    if len(t) < 3:
        raise ValueError("need at least 3 samples")
    dt = t[1] - t[0]
    if np.ptp(np.diff(t)) > 1e-9 * dt:
        raise ValueError("run must be uniformly sampled")
    fp_res, defect_gap, ent_gap, tan_gap, psis, thetas = [], [], [], [], [], []
    S = np.array([float(np.dot(run.weights(k), w * np.log(w))) for k, w in enumerate(run.w)])
    for k in range(1, len(t) - 1):
        m = run.state(k)
        w = run.w[k]
        pi = run.weights(k)
        theta = phi_potential(m, run.curvature(k), theta_source).potential
        dw = (run.w[k + 1] - run.w[k - 1]) / (2 * dt)
        dmass = (run.weights(k + 1) * run.w[k + 1] - run.weights(k - 1) * run.w[k - 1]) / (2 * dt)
        psi = solve_weighted_poisson(m, w, dmass / pi, kind="psi").potential
        conv = dw + drift_term(m, theta, w)
        field = conv - geo.laplacian(m, w)
        fp_res.append(float(np.abs(field).max()))
        defect_gap.append(float(np.abs(field - drift_divergence(m, w, theta)).max()))
        dS = (S[k + 1] - S[k - 1]) / (2 * dt)
        ent_gap.append(dS + _ln_fisher(m, w))
        z = np.cos(m.mesh.coordinate) if zeta is None else np.asarray(zeta(m.mesh.coordinate))
        lhs = float(np.dot(pi, z * conv))
        rhs = otto_inner(m, w, z, psi - theta)
        tan_gap.append(lhs - rhs)
        psis.append(psi)
        thetas.append(theta)
    return CurveResiduals(t[1:-1], np.array(fp_res), np.array(defect_gap), np.array(ent_gap),
                          np.array(tan_gap), psis, thetas)


def tangent_identity_gap(run, zeta=None, source="flow"):
    """d/dt int zeta dPi_t - <zeta, Phi_t> at interior samples."""
    t = np.asarray(run.t)
    dt = t[1] - t[0]
    out = []
    for k in range(1, len(t) - 1):
        m = run.state(k)
        z = np.cos(m.mesh.coordinate) if zeta is None else np.asarray(zeta(m.mesh.coordinate))
        d = (np.dot(run.weights(k + 1), z) - np.dot(run.weights(k - 1), z)) / (2 * dt)
        phi = phi_potential(m, run.curvature(k), source).potential
        out.append(float(d) - otto_inner(m, np.ones(m.n), z, phi))
    return np.array(out)


# ---------------------------------------------------------------- Phi identities

@dataclass
class EnergyIdentity:
    hessian_term: float
    ricci_term: float
    lhs: float
    rhs: float  # <R^2> - <R>^2
    gradient_energy: float  # int |grad Phi|^2 dPi
    fluctuation_pairing: float  # int (R - <R>) Phi dPi
    bound_rhs: float | None  # (2/3) Var / K when K > 0
    K: float

    @property
    def relative_error(self):
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), 1e-300)

    @property
    def bound_slack(self):
        if self.bound_rhs is None:
            return None
        return self.bound_rhs - self.gradient_energy


def phi_energy_identity(m, phi=None, curv=None):
    """int |Hess Phi|^2 + Ric(grad Phi, grad Phi) dPi against Var(R), and the K > 0 bound."""
    curv = geo.curvature(m) if curv is None else curv
    if phi is None:
        phi = phi_potential(m, curv).potential
    phi = np.asarray(phi)
    var = geo.mean(m, curv.R**2) - curv.mean_R**2
    if m.is_homogeneous:
        return EnergyIdentity(0.0, 0.0, 0.0, var, 0.0, 0.0, None, curv.ricci_lower_bound)
    hess2, ricform = geo.hessian_quadratic_form(m, phi, curv)
    hterm, rterm = geo.mean(m, hess2), geo.mean(m, ricform)
    grad_energy = geo.dirichlet_form(m, phi, phi)
    pairing = geo.mean(m, (curv.R - curv.mean_R) * phi)
    K = curv.ricci_lower_bound
    bound = (2.0 / 3.0) * var / K if K > 0 else None
    return EnergyIdentity(hterm, rterm, hterm + rterm, var, grad_energy, pairing, bound, K)


def hess_phi_bound_check(m, phi=None, curv=None):
    """Eigenvalues of Hess Phi + Ric - (<R>/3) g and their pointwise minimum.

    The trace of this tensor is Delta Phi + R - <R> = 0, so its minimum
    eigenvalue is <= 0 everywhere and vanishes only where the tensor does.
    """
    curv = geo.curvature(m) if curv is None else curv
    if m.is_homogeneous:
        eig = curv.ric_eigen[:, 0] - curv.mean_R / 3.0
        return eig.reshape(3, 1), float(eig.min())
    if phi is None:
        phi = phi_potential(m, curv).potential
    rr, ss = geo.hessian_components(m, np.asarray(phi))
    third = curv.mean_R / 3.0
    eig = np.vstack([rr + curv.ric_eigen[0] - third, ss + curv.ric_eigen[1] - third,
                     ss + curv.ric_eigen[2] - third])
    return eig, float(eig.min())


# ---------------------------------------------------------------- Moser maps

@dataclass
class MoserMap:
    """x = map(y): coordinate of m_a matched to coordinate y of m_b by cumulative dPi."""
    edges_b: np.ndarray
    edges_a: np.ndarray
    cdf_a: np.ndarray
    cdf_b: np.ndarray
    image_edges: np.ndarray  # map evaluated on the edges of b
    jacobian: np.ndarray  # nodal dx/dy, from the density ratio
    cell_jacobian: np.ndarray  # (x_{j+1} - x_j) / (y_{j+1} - y_j)
    pullback_residual: float

    def __call__(self, y):
        return np.interp(np.interp(y, self.edges_b, self.cdf_b), self.cdf_a, self.edges_a)

    def inverse(self, x):
        return np.interp(np.interp(x, self.edges_a, self.cdf_a), self.cdf_b, self.edges_b)

    @property
    def log_jacobian(self):
        return np.log(self.jacobian)


def _edges(m):
    h = m.mesh.spacing
    x = m.mesh.coordinate
    return np.concatenate([x - 0.5 * h, [x[-1] + 0.5 * h]])


def _cdf(m):
    return np.concatenate([[0.0], np.cumsum(geo.probability_weights(m))])


def coordinate_density(m):
    """dPi / dx at the nodes (piecewise-constant cell value)."""
    return geo.probability_weights(m) / m.mesh.spacing


def moser_map(m_a, m_b, rtol=1e-10):
    """Cumulative-measure matching of dPi_b onto dPi_a along the reduced coordinate."""
    if m_a.is_homogeneous or m_b.is_homogeneous:
        raise ValueError("Moser maps are defined on the warped backends")
    if m_a.backend != m_b.backend or m_a.n != m_b.n:
        raise ValueError("states must share backend and mesh")
    va, vb = geo.volume(m_a), geo.volume(m_b)
    if abs(va - vb) > rtol * max(va, vb):
        raise ValueError(f"unequal volumes {va:.12g} vs {vb:.12g}")
    e = _edges(m_a)
    ca, cb = _cdf(m_a), _cdf(m_b)
    img = np.interp(cb, ca, e)
    img[0], img[-1] = e[0], e[-1]
    cell_j = np.diff(img) / np.diff(e)
    x_nodes = np.interp(m_b.mesh.coordinate, e, img)
    rho_a_at = np.interp(x_nodes, m_a.mesh.coordinate, coordinate_density(m_a))
    jac = coordinate_density(m_b) / rho_a_at
    # mass of each b-cell against the a-measure of its image
    mass_img = np.diff(np.interp(img, e, ca))
    resid = float(np.abs(mass_img - np.diff(cb)).max())
    return MoserMap(e, e, ca, cb, img, jac, cell_j, resid)


def compose(map_ab, map_ba, y):
    return map_ab(map_ba(y))

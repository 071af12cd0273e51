"""Symmetry-reduced 3-metrics and the geometric quantities built on them.

Three backends are supported:

* ``berger``: left-invariant metric a s1^2 + b s2^2 + c s3^2 on SU(2), where
  the left-invariant coframe satisfies ds1 = s2 ^ s3 (cyclic).  Every field
  on this backend is spatially constant and is stored as an array of length 1.
* ``warped_circle``: g = phi(x)^2 dx^2 + psi(x)^2 g_S2 on S^1 x S^2 with a
  uniform periodic mesh on [0, 2 pi).
* ``warped_sphere``: the same form on [0, pi] with psi vanishing at both ends
  (topologically S^3).  The mesh is staggered so no node sits on a pole;
  ghost values use even reflection for phi and odd reflection for psi.

Derivatives are second-order centered differences.  The Laplacian is written
in flux form so that it telescopes under the quadrature weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKENDS = ("berger", "warped_circle", "warped_sphere")
SPHERE_AREA = 4.0 * np.pi
# volume of SU(2) with the coframe above and a = b = c = 1
BERGER_UNIT_VOLUME = 16.0 * np.pi**2


class GeometryError(ValueError):
    """Invalid metric data (non-positive coefficients, mesh mismatch)."""


class PoleRegularityError(GeometryError):
    """WarpedSphere state violates |psi_s| -> 1 at a pole beyond tolerance."""


@dataclass(frozen=True)
class Mesh1D:
    n_points: int
    topology: str  # "circle" or "interval"

    def __post_init__(self):
        if self.n_points < 8:
            raise GeometryError("mesh needs at least 8 points")
        if self.topology not in ("circle", "interval"):
            raise GeometryError(f"unknown topology {self.topology!r}")

    @property
    def period(self):
        return 2.0 * np.pi if self.topology == "circle" else np.pi

    @property
    def spacing(self):
        return self.period / self.n_points

    @property
    def coordinate(self):
        h = self.spacing
        if self.topology == "circle":
            return h * np.arange(self.n_points)
        return h * (np.arange(self.n_points) + 0.5)

    def to_dict(self):
        return {"n_points": self.n_points, "topology": self.topology}


@dataclass(frozen=True, eq=False)
class MetricState:
    backend: str
    mesh: Mesh1D | None = None
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None
    abc: tuple | None = None
    beta: float = 0.0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise GeometryError(f"unknown backend {self.backend!r}")
        if self.backend == "berger":
            abc = tuple(float(v) for v in self.abc)
            if len(abc) != 3 or min(abc) <= 0 or not np.all(np.isfinite(abc)):
                raise GeometryError(f"Berger coefficients must be positive, got {abc}")
            object.__setattr__(self, "abc", abc)
            return
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        n = self.mesh.n_points
        if phi.shape != (n,) or psi.shape != (n,):
            raise GeometryError("coefficient arrays do not match the mesh")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise GeometryError("non-finite metric coefficient")
        if phi.min() <= 0 or psi.min() <= 0:
            raise GeometryError("metric coefficients must be strictly positive")
        expected = "circle" if self.backend == "warped_circle" else "interval"
        if self.mesh.topology != expected:
            raise GeometryError(f"{self.backend} needs a {expected} mesh")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def is_homogeneous(self):
        return self.backend == "berger"

    @property
    def n(self):
        return 1 if self.backend == "berger" else self.mesh.n_points

    def coefficients(self):
        """Flat coefficient vector (used for interpolation and ODE steps)."""
        if self.backend == "berger":
            return np.array(self.abc)
        return np.concatenate([self.phi, self.psi])

    def with_coefficients(self, vec, beta=None):
        beta = self.beta if beta is None else beta
        if self.backend == "berger":
            return MetricState("berger", abc=tuple(vec), beta=beta)
        n = self.mesh.n_points
        return MetricState(self.backend, self.mesh, vec[:n].copy(), vec[n:].copy(), beta=beta)

    def scaled(self, c):
        """Homothety g -> c g."""
        if self.backend == "berger":
            return MetricState("berger", abc=tuple(c * a for a in self.abc), beta=self.beta)
        r = np.sqrt(c)
        return MetricState(self.backend, self.mesh, r * self.phi, r * self.psi, beta=self.beta)

    def to_dict(self):
        d = {"backend": self.backend, "beta": float(self.beta)}
        if self.backend == "berger":
            d["mesh"] = None
            d["coefficients"] = {"abc": list(self.abc)}
        else:
            d["mesh"] = self.mesh.to_dict()
            d["coefficients"] = {"phi": self.phi.tolist(), "psi": self.psi.tolist()}
        return d

    @classmethod
    def from_dict(cls, d):
        if d["backend"] == "berger":
            return cls("berger", abc=tuple(d["coefficients"]["abc"]), beta=d.get("beta", 0.0))
        mesh = Mesh1D(**d["mesh"])
        c = d["coefficients"]
        return cls(d["backend"], mesh, np.array(c["phi"], float), np.array(c["psi"], float),
                   beta=d.get("beta", 0.0))


@dataclass(frozen=True, eq=False)
class CurvatureData:
    R: np.ndarray
    ric_eigen: np.ndarray  # shape (3, n): radial, sphere, sphere
    ric_norm_sq: np.ndarray
    traceless_norm_sq: np.ndarray
    mean_R: float
    ricci_lower_bound: float
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------- constructors

def berger(a, b, c, beta=0.0):
    return MetricState("berger", abc=(a, b, c), beta=beta)


def round_berger():
    """Unit round S^3 (Ric = 2g, R = 6)."""
    return berger(0.25, 0.25, 0.25)


def warped_circle(phi, psi, n=128):
    """Build a WarpedCircle state from callables or constants in x."""
    mesh = Mesh1D(n, "circle")
    x = mesh.coordinate
    return MetricState("warped_circle", mesh, _sample(phi, x), _sample(psi, x))


def cylinder(n=128, radius=1.0, phi=1.0):
    return warped_circle(phi, radius, n)


def warped_sphere(phi, psi, n=128):
    mesh = Mesh1D(n, "interval")
    x = mesh.coordinate
    return MetricState("warped_sphere", mesh, _sample(phi, x), _sample(psi, x))


def round_sphere(n=128):
    return warped_sphere(1.0, np.sin, n)


def conformal_sphere(amplitudes, n=128):
    """Round S^3 conformally perturbed by exp(sum_k a_k cos(k x)).

    Cosine modes are even about both poles, so the pole conditions hold.
    """
    amps = np.asarray(amplitudes, float)
    k = np.arange(1, len(amps) + 1)

    def factor(x):
        return np.exp(np.cos(np.outer(x, k)) @ amps)

    return warped_sphere(factor, lambda x: np.sin(x) * factor(x), n)


@dataclass(frozen=True)
class FourierProfile:
    """Profile (sin x)^[sine_factor] * F(mean + sum a_k cos kx + b_k sin kx), F = exp or identity.

    Evaluates with numpy by default; pass lib=mpmath for extended precision.
    """
    mean: float = 1.0
    cos: tuple = ()
    sin: tuple = ()
    exponential: bool = False
    sine_factor: bool = False

    def __call__(self, x, lib=np):
        val = self.mean + 0 * x
        for k, a in enumerate(self.cos, start=1):
            val = val + a * lib.cos(k * x)
        for k, b in enumerate(self.sin, start=1):
            val = val + b * lib.sin(k * x)
        if self.exponential:
            val = lib.exp(val)
        if self.sine_factor:
            val = lib.sin(x) * val
        return val

    def to_dict(self):
        return {"mean": self.mean, "cos": list(self.cos), "sin": list(self.sin),
                "exponential": self.exponential, "sine_factor": self.sine_factor}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("mean", 1.0)), tuple(d.get("cos", ())), tuple(d.get("sin", ())),
                   bool(d.get("exponential", False)), bool(d.get("sine_factor", False)))


def conformal_profiles(amplitudes):
    """(phi, psi) profiles of the conformally perturbed round sphere."""
    amps = tuple(float(a) for a in amplitudes)
    return (FourierProfile(0.0, amps, (), True, False),
            FourierProfile(0.0, amps, (), True, True))


def _sample(f, x):
    if callable(f):
        return np.asarray(f(x), dtype=float) * np.ones_like(x)
    return float(f) * np.ones_like(x)


# ---------------------------------------------------------------- stencils

def _ghost(m, u, parity=1.0):
    """Pad u with one ghost value on each side."""
    if m.mesh.topology == "circle":
        return np.concatenate([u[-1:], u, u[:1]])
    return np.concatenate([parity * u[:1], u, parity * u[-1:]])


def _face_avg(m, u, parity=1.0):
    """Average of a nodal field on the n+1 faces (face k sits between nodes k-1 and k)."""
    g = _ghost(m, u, parity)
    return 0.5 * (g[:-1] + g[1:])


def face_conductance(m, weight=None):
    """psi^2 / phi (times an optional nodal weight) on faces; zero on pole faces."""
    pf = _face_avg(m, m.phi)
    sf = _face_avg(m, m.psi)
    a = sf**2 / pf
    if weight is not None:
        a = a * _face_avg(m, np.asarray(weight, float))
    if m.mesh.topology == "interval":
        a[0] = 0.0
        a[-1] = 0.0
    return a


def face_difference(m, u, parity=1.0):
    g = _ghost(m, u, parity)
    return (g[1:] - g[:-1]) / m.mesh.spacing


def cell_volume(m):
    """Integral of phi psi^2 over each cell (the 4 pi sphere factor excluded).

    Midpoint rule on the circle.  On the sphere a Simpson rule with face
    values is used instead: psi^2 varies by O(1) across the cells touching a
    pole and the midpoint value would make the first-cell Laplacian O(1) wrong.
    """
    h = m.mesh.spacing
    if m.mesh.topology == "circle":
        return m.phi * m.psi**2 * h
    w = _face_avg(m, m.phi) * _face_avg(m, m.psi) ** 2
    w[0] = 0.0
    w[-1] = 0.0
    return h / 6.0 * (w[:-1] + 4.0 * m.phi * m.psi**2 + w[1:])


def cell_volume_rate(m, rate):
    """Directional derivative of cell_volume along a coefficient velocity (phi', psi')."""
    n, h = m.n, m.mesh.spacing
    dphi, dpsi = rate[:n], rate[n:]
    centre = dphi * m.psi**2 + 2.0 * m.phi * m.psi * dpsi
    if m.mesh.topology == "circle":
        return centre * h
    pf, sf = _face_avg(m, m.phi), _face_avg(m, m.psi)
    dpf, dsf = _face_avg(m, dphi), _face_avg(m, dpsi)
    dw = dpf * sf**2 + 2.0 * pf * sf * dsf
    dw[0] = 0.0
    dw[-1] = 0.0
    return h / 6.0 * (dw[:-1] + 4.0 * centre + dw[1:])


def log_mean(a, b):
    """Logarithmic mean (a - b) / (ln a - ln b), equal to a when a == b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    la, lb = np.log(a), np.log(b)
    d = la - lb
    small = np.abs(d) < 1e-6
    safe = np.where(small, 1.0, d)
    # series a_geo (1 + d^2/24) near the diagonal keeps full precision
    return np.where(small, np.sqrt(a * b) * (1.0 + d * d / 24.0), (a - b) / safe)


def face_weight(m, w, kind="arithmetic"):
    """Face values of a positive nodal weight: arithmetic or logarithmic mean."""
    w = np.asarray(w, float)
    if kind == "arithmetic":
        return _face_avg(m, w)
    if kind == "log":
        g = _ghost(m, w)
        return log_mean(g[:-1], g[1:])
    raise ValueError(f"unknown face weight {kind!r}")


def dirichlet_form(m, u, v, weight=None, kind="arithmetic"):
    """Discrete int grad u . grad v * weight dPi (face sum, exact summation by parts)."""
    if m.is_homogeneous:
        return 0.0
    a = face_conductance(m)
    if weight is not None:
        a = a * face_weight(m, weight, kind)
    du, dv = face_difference(m, u), face_difference(m, v)
    prod = a * du * dv
    if m.mesh.topology == "circle":
        prod = prod[:-1]  # first and last faces are the same periodic face
    return float(SPHERE_AREA * np.sum(prod) * m.mesh.spacing / volume(m))


def divergence_of_flux(m, flux):
    """Discrete divergence of a face flux, normalized by the nodal volume."""
    return (flux[1:] - flux[:-1]) / cell_volume(m)


def _check_field(m, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (m.n,):
        raise GeometryError(f"field of shape {u.shape} does not match mesh of {m.n} points")
    return u


def laplacian(m, u):
    u = _check_field(m, u)
    if m.is_homogeneous:
        return np.zeros_like(u)
    return divergence_of_flux(m, face_conductance(m) * face_difference(m, u))


def weighted_laplacian(m, rho, u):
    """div(rho grad u) in flux form."""
    u = _check_field(m, u)
    if m.is_homogeneous:
        return np.zeros_like(u)
    return divergence_of_flux(m, face_conductance(m, rho) * face_difference(m, u))


def gradient(m, u, parity=1.0):
    """Arclength derivative u_s at the nodes."""
    u = _check_field(m, u)
    if m.is_homogeneous:
        return np.zeros_like(u)
    g = _ghost(m, u, parity)
    return (g[2:] - g[:-2]) / (2.0 * m.mesh.spacing * m.phi)


def second_derivative(m, u, parity=1.0):
    """u_ss = phi^-1 d/dx (phi^-1 du/dx) at the nodes."""
    u = _check_field(m, u)
    if m.is_homogeneous:
        return np.zeros_like(u)
    q = face_difference(m, u, parity) / _face_avg(m, m.phi)
    return (q[1:] - q[:-1]) / (m.mesh.spacing * m.phi)


def measure_weights(m):
    """Quadrature weights of d mu at the nodes."""
    if m.is_homogeneous:
        a, b, c = m.abc
        return np.array([BERGER_UNIT_VOLUME * np.sqrt(a * b * c)])
    return SPHERE_AREA * cell_volume(m)


def volume(m):
    return float(np.sum(measure_weights(m)))


def probability_weights(m):
    """Quadrature weights of d Pi = d mu / Vol."""
    mu = measure_weights(m)
    return mu / mu.sum()


def integrate(m, u):
    return float(np.dot(measure_weights(m), _check_field(m, u)))


def mean(m, u):
    return float(np.dot(probability_weights(m), _check_field(m, u)))


# ---------------------------------------------------------------- curvature

def berger_ricci(abc):
    """Ricci eigenvalues in the orthonormal Milnor frame."""
    a, b, c = abc
    s = np.sqrt(a * b * c)
    lam = np.array([a, b, c]) / s
    mu = 0.5 * lam.sum() - lam
    return 2.0 * np.array([mu[1] * mu[2], mu[2] * mu[0], mu[0] * mu[1]])


def _sphere_defect(m, psi_s, psi_ss):
    """(1 - psi_s^2) on the nodes.

    On the circle this is evaluated directly.  On the sphere the direct value
    loses all relative accuracy next to a pole (it is O(h^2) noise divided by
    psi^2 ~ h^2), so the defect is integrated from each pole, where it vanishes,
    using d/ds (1 - psi_s^2) = -2 psi_s psi_ss.  The two one-sided integrals
    are blended with cos^2(x/2), which weights each by its own pole.
    """
    if m.mesh.topology == "circle":
        return 1.0 - psi_s**2
    h = m.mesh.spacing
    g = -2.0 * psi_s * psi_ss * m.phi  # d/dx of the defect
    left = np.empty_like(g)
    left[0] = 0.25 * h * g[0]
    left[1:] = left[0] + np.cumsum(0.5 * h * (g[1:] + g[:-1]))
    right = np.empty_like(g)
    right[-1] = -0.25 * h * g[-1]
    right[:-1] = right[-1] - np.cumsum(0.5 * h * (g[1:] + g[:-1])[::-1])[::-1]
    chi = np.cos(0.5 * m.mesh.coordinate) ** 2
    return chi * left + (1.0 - chi) * right


def curvature(m, pole_tol=0.1):
    if m.is_homogeneous:
        r = berger_ricci(m.abc)
        eig = r.reshape(3, 1)
    else:
        psi = m.psi
        psi_s = gradient(m, psi, parity=-1.0)
        psi_ss = second_derivative(m, psi, parity=-1.0)
        if m.backend == "warped_sphere":
            err = max(abs(psi_s[0] - 1.0), abs(psi_s[-1] + 1.0))
            if err > pole_tol:
                raise PoleRegularityError(
                    f"|psi_s| deviates from 1 by {err:.3g} at a pole (tolerance {pole_tol})")
        defect = _sphere_defect(m, psi_s, psi_ss)
        radial = -2.0 * psi_ss / psi
        sphere = -psi_ss / psi + defect / psi**2
        eig = np.vstack([radial, sphere, sphere])
    R = eig.sum(axis=0)
    ric2 = (eig**2).sum(axis=0)
    traceless = ((eig - R / 3.0) ** 2).sum(axis=0)
    if not np.all(np.isfinite(R)):
        raise GeometryError("non-finite curvature")
    return CurvatureData(R=R, ric_eigen=eig, ric_norm_sq=ric2, traceless_norm_sq=traceless,
                         mean_R=mean(m, R), ricci_lower_bound=float(eig.min()))


# ---------------------------------------------------------------- Hessians

def hessian_components(m, u):
    """(radial-radial, sphere) eigenvalues of Hess u for a fiber-constant u."""
    u = _check_field(m, u)
    if m.is_homogeneous:
        z = np.zeros_like(u)
        return z, z
    u_s = gradient(m, u)
    psi_s = gradient(m, m.psi, parity=-1.0)
    return second_derivative(m, u), psi_s * u_s / m.psi


def hessian_quadratic_form(m, u, curv=None):
    """Return (|Hess u|^2, Ric(grad u, grad u)) as nodal fields."""
    rr, ss = hessian_components(m, u)
    if m.is_homogeneous:
        return rr**2 + 2 * ss**2, np.zeros(m.n)
    curv = curvature(m) if curv is None else curv
    u_s = gradient(m, u)
    return rr**2 + 2.0 * ss**2, curv.ric_eigen[0] * u_s**2


# ---------------------------------------------------------------- distances

def arclength(m):
    """Arclength of the nodes and of the cell edges, and the total length."""
    h = m.mesh.spacing
    if m.mesh.topology == "circle":
        edges = np.concatenate([[0.0], np.cumsum(h * m.phi)])
        nodes = 0.5 * (edges[:-1] + edges[1:])
        return nodes, edges, edges[-1]
    edges = np.concatenate([[0.0], np.cumsum(h * m.phi)])
    nodes = 0.5 * (edges[:-1] + edges[1:])
    return nodes, edges, edges[-1]


def distance_and_diameter(m):
    """Distance matrix between nodes along the reduced coordinate, and diam.

    diam is exact on the sphere (every point lies within the pole-to-pole
    length of both poles), an upper bound elsewhere: reduced diameter plus half
    a great circle of the largest fiber on the circle, and the round bound
    2 pi sqrt(max a) for Berger.
    """
    if m.is_homogeneous:
        return np.zeros((1, 1)), 2.0 * np.pi * np.sqrt(max(m.abc))
    s, _, length = arclength(m)
    d = np.abs(s[:, None] - s[None, :])
    if m.mesh.topology == "circle":
        d = np.minimum(d, length - d)
        return d, 0.5 * length + np.pi * m.psi.max()
    return d, length


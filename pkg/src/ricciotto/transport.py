"""Wasserstein distances on the reduced geometries.

Measures are fiber-constant, so they are handled as measures on the reduced
coordinate with its arclength metric: an interval (sphere backend) or a
circle.  A measure is a list of cells [lo, hi] carrying a mass spread
uniformly in arclength; an atom is a cell with lo == hi.  The quantile
function is then piecewise linear and the 1D cost integral is evaluated
exactly piece by piece.

On the circle the optimal coupling is a quantile coupling of the lifted
measures after a shift alpha of the second quantile function (Delon, Salomon
and Sobolevski).  The cost is convex in alpha with kinks where a quantile
breakpoint of one measure crosses one of the other; the minimum is
bracketed on the sorted breakpoints and refined with a bounded scalar search.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from . import geometry as geo
from . import otto


class TopologyError(ValueError):
    """The backend has no reduced coordinate to transport along."""


class SinkhornError(RuntimeError):
    """Sinkhorn iterations did not reach the marginal tolerance."""


# ---------------------------------------------------------------- 1D measures

@dataclass
class Measure1D:
    lo: np.ndarray
    hi: np.ndarray
    mass: np.ndarray
    length: float  # period on the circle, total length on the interval
    periodic: bool

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)
        self.mass = np.asarray(self.mass, float)
        if np.any(self.mass < 0):
            raise ValueError("masses must be nonnegative")
        total = self.mass.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {total:.12g}, not 1")
        self.mass = self.mass / total
        self.cdf = np.concatenate([[0.0], np.cumsum(self.mass)])
        self.cdf[-1] = 1.0

    @classmethod
    def atoms(cls, x, p, length=np.inf, periodic=False):
        order = np.argsort(x, kind="stable")
        x = np.asarray(x, float)[order]
        return cls(x, x, np.asarray(p, float)[order], length, periodic)

    def quantile(self, u):
        """Quantile at levels u; on the circle u is any real and Q(u + 1) = Q(u) + length."""
        u = np.asarray(u, float)
        shift = np.floor(u) if self.periodic else np.zeros_like(u)
        v = np.clip(u - shift, 0.0, 1.0)
        i = np.clip(np.searchsorted(self.cdf, v, side="right") - 1, 0, len(self.mass) - 1)
        frac = np.where(self.mass[i] > 0, (v - self.cdf[i]) / np.where(self.mass[i] > 0, self.mass[i], 1.0), 0.0)
        q = self.lo[i] + np.clip(frac, 0.0, 1.0) * (self.hi[i] - self.lo[i])
        return q + shift * (self.length if self.periodic else 0.0)


def _piece_values(mu, u_lo, u_hi, shift=0.0):
    """Quantile of mu on each piece (u_lo, u_hi) + shift, evaluated as one linear branch."""
    mid = 0.5 * (u_lo + u_hi) + shift
    k = np.floor(mid) if mu.periodic else np.zeros_like(mid)
    v = mid - k
    i = np.clip(np.searchsorted(mu.cdf, v, side="right") - 1, 0, len(mu.mass) - 1)
    p = mu.mass[i]
    slope = np.where(p > 0, (mu.hi[i] - mu.lo[i]) / np.where(p > 0, p, 1.0), 0.0)
    base = mu.lo[i] - slope * mu.cdf[i] + (k * mu.length if mu.periodic else 0.0)
    a = base + slope * (u_lo + shift - k)
    b = base + slope * (u_hi + shift - k)
    return a, b


def _abs_power_integral(d0, d1, du, order):
    """Exact int over a piece of |d|^order with d linear from d0 to d1."""
    if order == 2:
        return du * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0
    if order == 1:
        same = d0 * d1 >= 0
        den = np.abs(d0) + np.abs(d1)
        cross = np.where(den > 0, (d0 * d0 + d1 * d1) / (2.0 * np.where(den > 0, den, 1.0)), 0.0)
        return du * np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)), cross)
    raise ValueError("order must be 1 or 2")


def _shifted_cost(mu, nu, alpha, order):
    """int_0^1 |Q_mu(u) - Q_nu(u + alpha)|^order du."""
    knots = [mu.cdf]
    nk = nu.cdf - alpha
    if nu.periodic:
        nk = np.mod(nk, 1.0)
    knots.append(nk[(nk > 0) & (nk < 1)])
    u = np.unique(np.concatenate(knots + [[0.0, 1.0]]))
    u = u[(u >= 0) & (u <= 1)]
    lo, hi = u[:-1], u[1:]
    keep = hi - lo > 0
    lo, hi = lo[keep], hi[keep]
    a0, a1 = _piece_values(mu, lo, hi)
    b0, b1 = _piece_values(nu, lo, hi, alpha)
    return float(np.sum(_abs_power_integral(a0 - b0, a1 - b1, hi - lo, order)))


def wasserstein_1d(mu, nu, order=2, exhaustive=None):
    """D_s between two measures on the same interval or circle."""
    if mu.periodic != nu.periodic:
        raise TopologyError("measures live on different topologies")
    if not mu.periodic:
        return _shifted_cost(mu, nu, 0.0, order) ** (1.0 / order)
    if abs(mu.length - nu.length) > 1e-12 * mu.length:
        raise TopologyError("circles of different length")
    cost = lambda a: _shifted_cost(mu, nu, a, order)  # noqa: E731
    # kinks: a breakpoint of nu's quantile (shifted) meets one of mu's
    cand = (nu.cdf[None, :] - mu.cdf[:, None]).ravel()
    cand = np.unique(np.concatenate([cand - 1.0, cand, cand + 1.0]))
    cand = cand[(cand >= -1.0) & (cand <= 1.0)]
    # the +-1 copies reproduce kinks up to roundoff; merged so the bracket has width
    cand = cand[np.concatenate([[True], np.diff(cand) > 1e-13])]
    if exhaustive is None:
        exhaustive = cand.size <= 4096
    if exhaustive:
        vals = np.array([cost(a) for a in cand])
        k = int(np.argmin(vals))
    else:
        lo, hi = 0, cand.size - 1
        while hi - lo > 2:
            m1 = lo + (hi - lo) // 3
            m2 = hi - (hi - lo) // 3
            if cost(cand[m1]) <= cost(cand[m2]):
                hi = m2
            else:
                lo = m1
        ks = np.arange(lo, hi + 1)
        k = int(ks[np.argmin([cost(cand[j]) for j in ks])])
    best = cost(cand[k])
    a_lo, a_hi = cand[max(k - 1, 0)], cand[min(k + 1, cand.size - 1)]
    if a_hi > a_lo:
        res = optimize.minimize_scalar(cost, bounds=(a_lo, a_hi), method="bounded",
                                       options={"xatol": 1e-14})
        best = min(best, float(res.fun))
    return max(best, 0.0) ** (1.0 / order)


# ---------------------------------------------------------------- reduced geometry

def reduced_measure(m, w, representation="cells"):
    """The measure w dPi as a Measure1D in the arclength coordinate."""
    if m.is_homogeneous:
        raise TopologyError("the berger backend has no reduced coordinate")
    w = np.asarray(w, float) * np.ones(m.n)
    mass = geo.probability_weights(m) * w
    mass = mass / mass.sum()
    nodes, edges, length = geo.arclength(m)
    periodic = m.mesh.topology == "circle"
    if representation == "atoms":
        return Measure1D(nodes, nodes, mass, length, periodic)
    if representation == "cells":
        return Measure1D(edges[:-1], edges[1:], mass, length, periodic)
    raise ValueError(f"unknown representation {representation!r}")


def w2_exact_1d(m, w1, w2, representation="cells"):
    return wasserstein_1d(reduced_measure(m, w1, representation),
                          reduced_measure(m, w2, representation), 2)


def ws_exact_1d(m, w1, w2, order=2, representation="cells"):
    return wasserstein_1d(reduced_measure(m, w1, representation),
                          reduced_measure(m, w2, representation), order)


# ---------------------------------------------------------------- discrete problems

@dataclass
class TransportProblem:
    p: np.ndarray
    q: np.ndarray
    distance: np.ndarray  # d(x_i, y_j)
    order: int = 2

    def __post_init__(self):
        self.p = np.asarray(self.p, float)
        self.q = np.asarray(self.q, float)
        self.distance = np.asarray(self.distance, float)
        for v in (self.p, self.q):
            if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
                raise ValueError("marginals must be probability vectors")
        if self.distance.shape != (self.p.size, self.q.size):
            raise ValueError("distance matrix shape does not match the marginals")

    @property
    def cost(self):
        return self.distance**self.order

    @classmethod
    def from_points(cls, x, p, y, q, order=2, period=None):
        d = np.abs(np.asarray(x, float)[:, None] - np.asarray(y, float)[None, :])
        if period is not None:
            d = np.minimum(d, period - d)
        return cls(p, q, d, order)

    @classmethod
    def from_state(cls, m, w1, w2, order=2):
        """Atoms at the nodes with the reduced arclength distance."""
        d, _ = geo.distance_and_diameter(m)
        pi = geo.probability_weights(m)
        p = pi * np.asarray(w1, float)
        q = pi * np.asarray(w2, float)
        return cls(p / p.sum(), q / q.sum(), d, order)


def lp_oracle(prob, return_plan=False):
    """Exact transportation LP (HiGHS); returns D_s."""
    n, k = prob.p.size, prob.q.size
    if max(n, k) > 128:
        raise ValueError("LP oracle limited to 128 support points")
    rows = np.zeros((n + k, n * k))
    for i in range(n):
        rows[i, i * k:(i + 1) * k] = 1.0
    for j in range(k):
        rows[n + j, j::k] = 1.0
    b = np.concatenate([prob.p, prob.q])
    # one equality is redundant; dropping it keeps HiGHS free of degenerate rows
    res = optimize.linprog(prob.cost.ravel(), A_eq=rows[:-1], b_eq=b[:-1],
                           bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    val = max(float(res.fun), 0.0) ** (1.0 / prob.order)
    return (val, res.x.reshape(n, k)) if return_plan else val


@dataclass
class SinkhornResult:
    distance: float
    cost: float
    eps: float
    iterations: int
    marginal_error: float
    bias_bound: float  # eps * ln(n k): bound on cost(plan) - optimal cost
    plan: np.ndarray = field(repr=False)


def sinkhorn(prob, eps_reg=None, max_iter=10_000, tol=1e-10):
    """Log-domain Sinkhorn with eps-scaling.  Default eps_reg = 1e-3 diam^2 of the support.

    The regularization is lowered geometrically from the cost scale to
    eps_reg, warm-starting the potentials; max_iter caps the total count.
    """
    C = prob.cost
    scale = float(C.max()) or 1.0
    if eps_reg is None:
        eps_reg = 1e-3 * float(prob.distance.max()) ** 2 or 1e-3
    mp, mq = prob.p > 0, prob.q > 0
    logp = np.log(np.where(mp, prob.p, 1.0))
    logq = np.log(np.where(mq, prob.q, 1.0))
    f = np.zeros(prob.p.size)
    g = np.zeros(prob.q.size)
    n_stage = max(int(np.ceil(np.log2(max(scale / eps_reg, 1.0)))), 0)
    schedule = [eps_reg * 2.0**k for k in range(n_stage, 0, -1)] + [eps_reg]
    it, err = 0, np.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        goal = tol if last else max(tol, 1e-3)
        while it < max_iter:
            it += 1
            f = eps * (logp - logsumexp((g[None, :] - C) / eps, b=mq[None, :], axis=1))
            g = eps * (logq - logsumexp((f[:, None] - C) / eps, b=mp[:, None], axis=0))
            if it % 10 == 0 or it == max_iter:
                P = np.exp((f[:, None] + g[None, :] - C) / eps) * mp[:, None] * mq[None, :]
                err = float(np.abs(P.sum(axis=1) - prob.p).sum())
                if err < goal:
                    break
        if it >= max_iter and err >= goal:
            raise SinkhornError(f"marginal error {err:.3e} after {max_iter} iterations")
    P = np.exp((f[:, None] + g[None, :] - C) / eps_reg) * mp[:, None] * mq[None, :]
    cost = float(np.sum(P * C))
    bias = eps_reg * np.log(max(mp.sum() * mq.sum(), 1))
    return SinkhornResult(max(cost, 0.0) ** (1.0 / prob.order), cost, eps_reg, it, err, bias, P)


# ---------------------------------------------------------------- Kantorovich-Rubinstein

def kantorovich_rubinstein(m, w1, w2, cost="discrete"):
    """(D_1 from the LP, variation norm int |w1 - w2| dPi).

    The two agree for the cost 2 * 1[x != y], which is the metric whose
    Lipschitz-1 functions are exactly those with oscillation <= 2, i.e. the
    uniform-norm ball used by the variation norm.  With the geodesic cost
    D_1 is in general strictly smaller.
    """
    pi = geo.probability_weights(m)
    var = float(np.dot(pi, np.abs(np.asarray(w1) - np.asarray(w2))))
    prob = TransportProblem.from_state(m, w1, w2, order=1)
    if cost == "discrete":
        prob = TransportProblem(prob.p, prob.q, 2.0 * (1.0 - np.eye(m.n)), 1)
    elif cost != "geodesic":
        raise ValueError(f"unknown cost {cost!r}")
    return lp_oracle(prob), var


# ---------------------------------------------------------------- lengths of curves

def _tangent_speeds(states, ws, times):
    masses = np.array([geo.probability_weights(m) * w for m, w in zip(states, ws)])
    dmass = np.gradient(masses, times, axis=0, edge_order=2)
    speeds = []
    for m, w, dm in zip(states, ws, dmass):
        pi = geo.probability_weights(m)
        src = dm / pi
        src = src - np.dot(pi, src)  # total mass is constant; drop the roundoff
        psi = otto.solve_weighted_poisson(m, w, src, kind="psi").potential
        speeds.append(np.sqrt(max(otto.otto_inner(m, w, psi, psi), 0.0)))
    return np.array(speeds)


def otto_length(states, ws, times):
    """int (int |grad Psi|^2 d varpi)^(1/2) d lambda (trapezoid on the samples).

    states may be one MetricState (frozen geometry) or one per sample.
    """
    times = np.asarray(times, float)
    if not isinstance(states, (list, tuple)):
        states = [states] * len(ws)
    speeds = _tangent_speeds(states, ws, times)
    return float(integrate.trapezoid(speeds, times))


def pull_back(m_a, m_b, w_b):
    """Density on m_a of the Moser pull-back of w_b dPi_b (identity on a frozen mesh)."""
    if m_a is m_b or np.array_equal(m_a.coefficients(), m_b.coefficients()):
        return np.asarray(w_b, float).copy()
    mp = otto.moser_map(m_a, m_b)
    # cell j of a receives the b-mass of its preimage
    pre = mp.inverse(mp.edges_a)
    cum_b = np.concatenate([[0.0], np.cumsum(geo.probability_weights(m_b) * w_b)])
    mass = np.diff(np.interp(pre, mp.edges_b, cum_b))
    return mass / geo.probability_weights(m_a)


@dataclass
class CurveLengthReport:
    partition: np.ndarray  # sample indices used
    step_distances: np.ndarray
    total: float
    otto_length: float

    @property
    def gap(self):
        return abs(self.total - self.otto_length) / max(self.otto_length, 1e-300)


def wasserstein_curve_length(states, ws, times, partition=None):
    """Sum of D_2 between consecutive partition samples, the later one pulled back."""
    times = np.asarray(times, float)
    if not isinstance(states, (list, tuple)):
        states = [states] * len(ws)
    idx = np.arange(len(ws)) if partition is None else np.asarray(partition, int)
    steps = []
    for a, b in zip(idx[:-1], idx[1:]):
        wb = pull_back(states[a], states[b], ws[b])
        steps.append(w2_exact_1d(states[a], ws[a], wb))
    steps = np.array(steps)
    return CurveLengthReport(idx, steps, float(steps.sum()), otto_length(states, ws, times))


# ---------------------------------------------------------------- inequalities

@dataclass
class InequalitySlacks:
    pinsker: float  # S - var^2 / 2
    talagrand_like: dict  # s -> 2^{1/(2s)} diam S^{1/(2s)} - D_s
    distances: dict
    S: float
    var: float
    diam: float


def inequality_suite(w, m, S=None):
    from .entropy import relative_entropy, variation_norm

    S = relative_entropy(w, m) if S is None else S
    var = variation_norm(w, m)
    _, diam = geo.distance_and_diameter(m)
    dists, slack = {}, {}
    for s in (1, 2):
        d = ws_exact_1d(m, w, np.ones(m.n), order=s)
        dists[s] = d
        slack[s] = 2.0 ** (1.0 / (2 * s)) * diam * max(S, 0.0) ** (1.0 / (2 * s)) - d
    return InequalitySlacks(S - 0.5 * var**2, slack, dists, S, var, diam)


@dataclass
class DistortionFit:
    M: float  # max |Ric| over the samples
    C_distance: float  # fitted C in exp(+-C M dlambda) for node distances
    C_wasserstein: float  # fitted C'' for the pulled-back D_2
    ratios: np.ndarray
    lambdas: np.ndarray


def distortion_fit(states, times, w_a, w_b):
    """Fit the constants of the distance and Wasserstein distortion bounds.

    w_a, w_b are densities on states[0]; at later samples they are carried
    by the Moser maps (their cumulative-dPi profile is kept).
    """
    times = np.asarray(times, float)
    M = max(float(np.abs(geo.curvature(m).ric_eigen).max()) for m in states)
    d0, _ = geo.distance_and_diameter(states[0])
    off = d0 > 0
    d2 = []
    Cd = 0.0
    for m, t in zip(states, times):
        wa = pull_back(m, states[0], w_a)
        wb = pull_back(m, states[0], w_b)
        d2.append(w2_exact_1d(m, wa, wb))
        if t > times[0]:
            d, _ = geo.distance_and_diameter(m)
            r = np.abs(np.log(d[off] / d0[off])).max()
            Cd = max(Cd, r / (M * (t - times[0])))
    d2 = np.array(d2)
    ratios = d2[1:] / d2[0]
    dl = times[1:] - times[0]
    Cw = float(np.max(np.abs(np.log(ratios)) / (M * dl))) if len(dl) else 0.0
    return DistortionFit(M, float(Cd), Cw, ratios, times[1:])

"""Reference computations that do not use the package's curvature code.

The Riemann oracle differentiates the full 3D coordinate metric in extended
precision (mpmath) so that nested difference stencils stay accurate next to
a pole; the Lie-algebra oracle works from structure constants.
"""
import mpmath
import numpy as np


def _d(f, p, axis, step):
    """Fourth-order central derivative of f along one coordinate."""
    def shifted(k):
        q = list(p)
        q[axis] = q[axis] + k * step
        return f(q)
    return (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * step)


def coordinate_metric(phi, psi):
    """Metric diag(phi^2, psi^2, psi^2 sin^2 theta) on (x, theta, vartheta).

    phi and psi must accept mpmath numbers.
    """
    def g(p):
        x, th, _ = p
        return mpmath.diag([phi(x) ** 2, psi(x) ** 2, psi(x) ** 2 * mpmath.sin(th) ** 2])
    return g


def christoffel(g, p, step):
    ginv = g(p) ** -1
    dg = [_d(g, p, k, step) for k in range(3)]  # dg[k][a, b] = d_k g_ab
    gam = [[[None] * 3 for _ in range(3)] for _ in range(3)]
    for a in range(3):
        for b in range(3):
            for c in range(3):
                gam[a][b][c] = sum(ginv[a, d] * (dg[b][d, c] + dg[c][d, b] - dg[d][b, c])
                                   for d in range(3)) / 2
    return gam


def _gam_matrix(gam):
    return mpmath.matrix([[gam[a][b][c] for c in range(3)] for a in range(3) for b in range(3)])


def ricci_oracle(g, p, step=None, dps=40):
    """Ricci tensor, scalar curvature and eigenvalues of g^-1 Ric at p."""
    with mpmath.workdps(dps):
        p = [mpmath.mpf(v) for v in p]
        step = mpmath.mpf(10) ** (-dps // 4) if step is None else mpmath.mpf(step)
        gam = christoffel(g, p, step)
        dgam = [_d(lambda q: _gam_matrix(christoffel(g, q, step)), p, k, step) for k in range(3)]

        def dG(k, a, b, c):  # d_k Gamma^a_bc
            return dgam[k][3 * a + b, c]

        ric = np.zeros((3, 3))
        for b in range(3):
            for d in range(3):
                val = 0
                for a in range(3):
                    # R^a_{b a d} = d_a G^a_db - d_d G^a_ab + G^a_ae G^e_db - G^a_de G^e_ab
                    val += dG(a, a, d, b) - dG(d, a, a, b)
                    val += sum(gam[a][a][e] * gam[e][d][b] - gam[a][d][e] * gam[e][a][b]
                               for e in range(3))
                ric[b, d] = float(val)
        ginv = np.array((g(p) ** -1).tolist(), dtype=float)
    R = float(np.trace(ginv @ ric))
    eig = np.sort(np.linalg.eigvals(ginv @ ric).real)
    return ric, R, eig


def structure_constant_ricci(abc):
    """Ricci eigenvalues of a left-invariant metric on SU(2) from the Koszul formula.

    Left-invariant fields X_i dual to a coframe with d s1 = s2 ^ s3 satisfy
    [X2, X3] = -X1 (cyclic); the orthonormal frame is e_i = X_i / sqrt(a_i).
    """
    a = np.asarray(abc, float)
    c = np.zeros((3, 3, 3))  # [e_i, e_j] = c[i, j, k] e_k
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        val = -np.sqrt(a[k]) / np.sqrt(a[i] * a[j])
        c[i, j, k] = val
        c[j, i, k] = -val
    # Koszul in an orthonormal frame: <nabla_i e_j, e_k>
    gam = np.zeros((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                gam[i, j, k] = 0.5 * (c[i, j, k] - c[j, k, i] + c[k, i, j])

    def nabla(i, v):  # v given in frame components
        return np.array([sum(v[j] * gam[i, j, k] for j in range(3)) for k in range(3)])

    def nabla_vec(u, v):
        return sum(u[i] * nabla(i, v) for i in range(3))

    e = np.eye(3)
    ric = np.zeros((3, 3))
    for j in range(3):
        for k in range(3):
            total = 0.0
            for i in range(3):
                # R(e_i, e_j) e_k = nabla_i nabla_j e_k - nabla_j nabla_i e_k - nabla_[i,j] e_k
                term = nabla(i, nabla(j, e[k])) - nabla(j, nabla(i, e[k])) \
                    - nabla_vec(c[i, j], e[k])
                total += term[i]
            ric[j, k] = total
    return np.diag(ric), ric


def heat_kernel_circle(u0, t, length=2 * np.pi):
    """Exact periodic heat flow of nodal samples by Fourier multipliers."""
    n = len(u0)
    k = np.fft.fftfreq(n, d=length / n) * 2 * np.pi
    return np.fft.ifft(np.fft.fft(u0) * np.exp(-k**2 * t)).real


def warped_ricci(phi, psi, x, dps=40):
    """(R, sorted Ricci eigenvalues) of the warped metric at coordinate x.

    phi, psi are FourierProfile-like callables taking a lib keyword.
    """
    g = coordinate_metric(lambda s: phi(s, lib=mpmath), lambda s: psi(s, lib=mpmath))
    _, R, eig = ricci_oracle(g, [x, 1.0, 0.3], dps=dps)
    return R, eig

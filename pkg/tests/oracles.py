"""Independent reference computations used by the tests.

The curvature oracles live in ricciotto.reference (they are also used by the
verification command); none of them touches the package's reduced formulas.
"""
from scipy import integrate

from ricciotto.reference import (coordinate_metric, heat_kernel_circle,  # noqa: F401
                                 ricci_oracle, structure_constant_ricci, warped_ricci)


def quad_integral(f, a, b):
    val, _ = integrate.quad(f, a, b, limit=400, epsabs=1e-13, epsrel=1e-13)
    return val

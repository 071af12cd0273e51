# %% [markdown]
# Viscous Hamilton-Jacobi via Hopf-Cole
#
# u = -2 eps ln w turns the heat-type equation into a viscous HJ equation.
# As eps -> 0 the solution approaches the Hopf-Lax formula.

# %%
import numpy as np

from ricciotto import fokker_planck as fp
from ricciotto import geometry as geo

m = geo.warped_circle(1.0, 1.0, n=512)
x = m.mesh.coordinate
U = 1.0 - np.cos(x) + 0.3 * np.sin(2 * x)
eps, errs, monotone = fp.vanishing_viscosity_sweep(m, U, 0.1)
for e, err in zip(eps, errs):
    print(f"eps={e:.3f}  sup|u_eps - HopfLax| = {err:.4f}")
print("decreasing:", monotone)

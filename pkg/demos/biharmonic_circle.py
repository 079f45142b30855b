"""The bi-harmonic latitude circle on the unit sphere.

A loop at latitude 45° (stereographic radius tan(π/8)) is not harmonic,
but it is bi-harmonic, and it is orthogonal to its own tension. For such a
map into a sphere of curvature C the bi-energy Hessian along τ collapses to
-4C∫|τ|⁴. The breakdown below shows which terms carry that value.
"""

import numpy as np

from folialab.calculus import integrate
from folialab.manifold import build_model, build_target
from folialab.section import circle_map
from folialab.tension import bitension, relative_harmonicity_residual, tension
from folialab.variational import bienergy_hessian

m = build_model("warped-torus", {"eps": 0.3}, 64, order=6)
phi = circle_map(m, build_target("sphere-stereo", {"C": 1.0}), np.tan(np.pi / 8))
tau = tension(phi)

print(f"|tension|_inf            {np.max(np.abs(tau.components)):.4f}")
print(f"|bitension|_inf          {np.max(np.abs(bitension(phi).components)):.2e}")
print(f"relative harmonicity     {relative_harmonicity_residual(phi):.2e}")

h = bienergy_hessian(phi, tau)
for name, value in h.terms.items():
    print(f"  {name:<14} {value: .10f}")
tau2 = np.einsum("...kl,...k,...l->...", phi.metric_t, tau.components, tau.components)
print(f"total                    {h.total:.10f}")
print(f"-4 C ∫|τ|⁴               {-4.0 * integrate(tau2 ** 2, m):.10f}")

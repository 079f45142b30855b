"""Stability spectra of two harmonic maps.

The identity of the flat torus is stable: its Jacobi operator is the rough
Laplacian, with a two-dimensional kernel of translations and eigenvalues
|k|² above it. An equator map wound three times around the sphere is
harmonic but unstable, since pushing the loop off the equator shortens it.
"""

import numpy as np

from folialab.manifold import build_model, build_target
from folialab.section import from_values, identity_map
from folialab.variational import assemble_jacobi, stability_report

m = build_model("product-flat-torus", {}, 16, order=6)

asm = assemble_jacobi(identity_map(m, build_target("flat-torus")))
rep = stability_report(asm, k=12)
print("flat identity")
print("  kernel dimension:", rep.kernel_dim)
print("  lowest eigenvalues:", np.round(rep.eigenvalues, 5))
print("  stable:", rep.stable)

x1 = m.chart.coords[..., 0]
sphere = build_target("sphere-stereo", {"C": 1.0})
phi = from_values(m, sphere, np.stack([np.cos(3 * x1), np.sin(3 * x1)], -1))
rep = stability_report(assemble_jacobi(phi), k=6)
print("equator map, winding 3")
print("  lowest eigenvalues:", np.round(rep.eigenvalues, 5))
print("  stable:", rep.stable)

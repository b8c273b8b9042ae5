"""
The continuous contact-type example
===================================

b = sin(y) exp(sqrt(x2)) x1 and c = cos(y) exp((x1 + 2)^(2/3)) x2, on the
half-space x2 >= 0.  b is only Hoelder-1/2 in x2 at the face, yet d(eta) is
continuous and eta ^ d(eta) does not vanish.
"""

import math

import numpy as np

from subriemann import gallery
from subriemann.bundle import fix_domain, nonintegrability
from subriemann.flows import build_W

entry = gallery.get("paper:sqrt")
frame = entry.frame()

print("density at 0:", nonintegrability(entry.pair, [0.0, 0.0, 0.0]), " exp(2^(2/3)) =", math.exp(2 ** (2 / 3)))
print("density scan:", gallery.density_scan(entry, grid=9))

# Stokes certification with face-graded cells
cert = entry.certified(count=20, meshes=(16, 32, 64))
print("Stokes residuals", ["%.2e" % r for r in cert.residuals], "order", round(cert.order, 3))

# constants on a shrunken box around the face point 0
fd = fix_domain(entry.pair, frame)
c = fd.constants
print("box", fd.box, "\nK1", c.K1, "K2", c.K2, "eps0", fd.eps0)

# the accessible surface is the plane y = 0 in this chart
W = build_W(frame, 0.2, k=11)
print("max |W| on the grid:", float(np.abs(W.values).max()))

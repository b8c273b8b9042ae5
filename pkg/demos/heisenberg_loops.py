"""
Loops, shooting and the accessible surface in the Heisenberg bundle
====================================================================

eta = dy - x1 dx2.  A square loop of side e along X1, X2, -X1, -X2 climbs by
exactly e^2, and shooting inverts that map.
"""

import numpy as np

from subriemann import gallery
from subriemann.access import connect, loop_endpoint, shoot_loop
from subriemann.flows import build_W

entry = gallery.heisenberg()
frame = entry.frame()

# the loop displacement is the square of the side
for e in (0.05, 0.1, 0.2):
    end = loop_endpoint(frame, [0.0, 0.0, 0.0], e)
    print(f"side {e:5.2f}  displacement {end[2]:.12f}  e^2 {e * e:.12f}")

# shooting: which side lifts the origin to y = 0.01?
eps, path = shoot_loop(frame, [0.0, 0.0, 0.0], [0.0, 0.0, 0.01], eps_max=0.25)
print("shot side", eps, "end", path.end)

# the surface reached by x1 then x2 flows is the graph of x1 x2
W = build_W(frame, 0.2, k=21)
X = W.grid_points()
print("max |W - x1 x2| =", np.abs(W.values.reshape(-1) - X[:, 0] * X[:, 1]).max())
print("bound ratio |W| / (|x| C omega(2|x|)) =", W.bound_ratio())

# reach an off-surface point: coordinate legs, then a loop for the vertical gap
r = connect(frame, None, [0.01, -0.02, -0.0001], 0.2)
print(f"g-length {r.g_length:.6f} (tau {r.tau_length:.6f} + loop {r.loop_length:.6f}), miss {r.miss:.1e}")

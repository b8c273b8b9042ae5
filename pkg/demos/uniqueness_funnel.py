"""
Unique flows from the face vs a non-unique control
==================================================

Perturbed integrators started next to the x2 = 0 face agree to within their
own error estimate, while y' = sqrt|y| from y = 0 splits between the zero
branch and (t/2)^2.
"""

from subriemann import gallery
from subriemann.flows import control_frame, funnel_probe

frame = gallery.get("paper:sqrt").frame()
T = 0.5
rep = funnel_probe(frame, 1, [0.1, 0.0, 0.2], T)
print(f"paper:sqrt  spread {rep.spread:.2e}  estimate {rep.error_estimate:.2e}  ratio {rep.ratio:.2f}")

ctl = funnel_probe(control_frame(), 0, [0.0, 0.0, 0.0], T)
print(f"control     spread {ctl.spread:.4f}  (t/2)^2 at T: {T * T / 4:.4f}")
for t, y in zip(ctl.trials, ctl.endpoints):
    print("   method, grid, offset", t, "->", y)

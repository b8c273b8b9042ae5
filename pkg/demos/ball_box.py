"""
Diamond below, hourglass above
==============================

Samples of the diamond D(0, 1/K1, eps/4) are reached by constructed paths of
length about eps, and random admissible paths of length eps end inside the
hourglass H(0, K2, 2n eps).  The runs here are outside the certified range of
eps, which the report records.
"""

from subriemann import gallery
from subriemann.ballbox import box_algebra_check, verify_inclusions
from subriemann.bundle import fix_domain

for name in ("heisenberg", "paper:sqrt"):
    entry = gallery.get(name)
    frame = entry.frame()
    fd = fix_domain(entry.pair, frame)
    rep = verify_inclusions(entry.pair, frame, None, fd.constants, 0.05, samples=10, mc=2000,
                            enforce_hypothesis=False, U=fd.box)
    js = rep.to_json()
    print(name, "passed" if rep.passed else "FAILED", js["lower"], js["upper"])

# box algebra at the linear modulus
h = gallery.heisenberg()
C = fix_domain(h.pair, h.frame()).constants
print(box_algebra_check(C.K1, C.K2, 1.0, 0.1))

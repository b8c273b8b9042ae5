"""Diamond, hourglass and box envelopes, inclusion checks, the flattening chart.

``|x|`` is the l1 norm of the horizontal part throughout.  Box membership
returns a margin: the slack of the binding inequality (negative outside).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .access import (AdmissiblePath, LocalBounds, PreconditionError, build_path, connect_batch, gromov_fill,
                     tau_specs, verify_prop22)
from .fields import Box, Modulus, as_points, x_l1
from .flows import DEFAULT_STEP, MIN_STEPS, ExtrapolationError, SurfaceW, integrate

__all__ = ["BoxSpec", "box_margin", "box_membership", "diamond_samples", "verify_inclusions", "ReachReport",
           "c1_chart", "gromov_fill", "upper_gap_estimate", "box_algebra_check"]

KINDS = ("diamond", "hourglass", "box", "bwbox")


@dataclass(frozen=True)
class BoxSpec:
    kind: str
    K: float
    epsilon: float
    ctilde: float = 1.0
    omega: Modulus = field(default_factory=Modulus.linear)
    W: SurfaceW | None = None
    domain: Box | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "bwbox" and self.W is None:
            raise ValueError("a BW box needs a reference surface")


def _spread(spec: BoxSpec, s):
    return s * spec.ctilde * spec.omega(2 * s)


def box_margin(spec: BoxSpec, P) -> np.ndarray:
    """Vectorised margins; ``>= 0`` means member."""
    P = np.atleast_2d(as_points(P))
    s = x_l1(P)
    y = P[:, -1]
    e, K = spec.epsilon, spec.K
    if spec.kind == "diamond":
        m = e - (s + np.sqrt(K * (_spread(spec, s) + np.abs(y))))
    elif spec.kind == "hourglass":
        m = np.minimum(e - s, K * e * e + _spread(spec, s) - np.abs(y))
    elif spec.kind == "box":
        m = np.minimum(e - s, K * e * e - np.abs(y))
    else:
        m = np.minimum(e - s, K * e * e - np.abs(y - spec.W(P[:, :-1])))
    if spec.domain is not None:
        m = np.where(spec.domain.contains(P), m, -np.inf)
    return m


def box_membership(spec: BoxSpec, p) -> tuple:
    m = float(box_margin(spec, p)[0])
    return m >= 0, m


# --------------------------------------------------------------------------
# samples


def diamond_radius(K1: float, eps: float, ctilde: float, omega: Modulus) -> float:
    """Largest ``r`` with ``K1 (eps - r)^2 >= r C omega(2r)`` (horizontal extent of the diamond)."""
    g = lambda r: K1 * (eps - r) ** 2 - r * ctilde * float(omega(2 * r))
    lo, hi = 0.0, eps
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def diamond_samples(K1: float, eps: float, ctilde: float, omega: Modulus, domain: Box, k: int = 20,
                    seed: int = 0) -> np.ndarray:
    """``k x k`` stratified points of the diamond with constant ``1/K1`` and size ``eps``.

    Strata are ``|x|`` shells times vertical levels; directions on each l1
    shell are seeded, with signs restricted to the chart domain.
    """
    rng = np.random.default_rng(seed)
    rmax = diamond_radius(K1, eps, ctilde, omega)
    n = domain.n
    pts = []
    for a in range(k):
        r = rmax * (a + 0.5) / k
        ymax = K1 * (eps - r) ** 2 - r * ctilde * float(omega(2 * r))
        for b in range(k):
            d = rng.normal(size=n)
            for i in range(n):
                if domain.lo[i] >= 0:
                    d[i] = abs(d[i])
                elif domain.hi[i] <= 0:
                    d[i] = -abs(d[i])
            x = r * d / np.sum(np.abs(d))
            y = ymax * (-1 + 2 * (b + 0.5) / k)
            pts.append(np.append(x, y))
    return np.array(pts)


def random_controls(rng: np.random.Generator, count: int, n: int, total: float, max_segments: int = 20):
    """Random piecewise-constant controls: (index, sign, duration) arrays of shape (count, max_segments)."""
    m = rng.integers(1, max_segments + 1, count)
    idx = rng.integers(0, n, (count, max_segments))
    sign = rng.choice([-1.0, 1.0], (count, max_segments))
    w = rng.exponential(size=(count, max_segments))
    w[np.arange(max_segments)[None, :] >= m[:, None]] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    tot = total * rng.random(count) ** 0.25
    return idx, sign, w * tot[:, None]


def run_controls(frame, idx, sign, dur, U: Box, h: float = DEFAULT_STEP):
    """Endpoints and Euclidean lengths of control sequences from 0, clipped at ``U``."""
    count, S = idx.shape
    P = np.zeros((count, frame.n + 1))
    length = np.zeros(count)
    clipped = np.zeros(count, dtype=bool)
    for s in range(S):
        act = dur[:, s] > 0
        if not act.any():
            continue
        rows = np.flatnonzero(act)
        k = idx[rows, s]
        T = sign[rows, s] * dur[rows, s]
        x = P[rows, k]
        room = np.where(T > 0, U.hi_arr[k] - x, x - U.lo_arr[k])
        T_clip = np.sign(T) * np.minimum(np.abs(T), np.maximum(room, 0.0))
        clipped[rows] |= np.abs(T_clip) < np.abs(T)
        for kk in np.unique(k):
            sel = k == kk
            r = integrate(frame, kk, T_clip[sel], P[rows[sel]], h, U, richardson=False, strict=False,
                          steps=int(max(MIN_STEPS, math.ceil(np.abs(T_clip[sel]).max() / h))))
            P[rows[sel]] = r.points
            length[rows[sel]] += r.length
    return P, length, clipped


# --------------------------------------------------------------------------
# inclusion report


@dataclass
class ReachReport:
    epsilon: float
    lower_points: np.ndarray
    lower_lengths: np.ndarray
    lower_miss: np.ndarray
    lower_budget: float
    upper_points: np.ndarray
    upper_lengths: np.ndarray
    upper_margins: np.ndarray
    constants: dict
    within_certified_range: bool
    slack: float
    seed: int

    @property
    def lower_ok(self) -> np.ndarray:
        return (self.lower_lengths <= self.lower_budget) & (self.lower_miss <= 1e-8)

    @property
    def upper_ok(self) -> np.ndarray:
        return (self.upper_margins >= 0) & (self.upper_lengths <= self.epsilon)

    @property
    def passed(self) -> bool:
        return bool(self.lower_ok.all() and self.upper_ok.all())

    def witness(self):
        if not self.lower_ok.all():
            return {"lower": self.lower_points[np.argmin(self.lower_ok)].tolist()}
        if not self.upper_ok.all():
            return {"upper": self.upper_points[np.argmin(self.upper_ok)].tolist()}
        return None

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon, "passed": self.passed, "seed": self.seed, "slack": self.slack,
            "within_certified_range": self.within_certified_range,
            "lower": {"samples": int(len(self.lower_points)), "failures": int((~self.lower_ok).sum()),
                      "budget": self.lower_budget, "max_g_length": float(self.lower_lengths.max()),
                      "max_miss": float(self.lower_miss.max())},
            "upper": {"samples": int(len(self.upper_points)), "failures": int((~self.upper_ok).sum()),
                      "min_margin": float(self.upper_margins.min()),
                      "max_g_length": float(self.upper_lengths.max())},
            "witness": self.witness(), "constants": self.constants,
        }


def verify_inclusions(pair, frame, W, constants, epsilon: float, samples: int = 20, mc: int = 10_000,
                      seed: int = 0, enforce_hypothesis: bool = True, h: float = DEFAULT_STEP, U: Box | None = None,
                      slack: float = 0.05) -> ReachReport:
    """Lower inclusion by constructed paths, upper inclusion by random admissible paths."""
    if constants is None or constants.eps0 is None:
        raise PreconditionError("domain constants with eps0 are required")
    n, d_g = constants.n, constants.d_g
    inside = epsilon < constants.eps0 / (2 * n * d_g)
    if enforce_hypothesis and not inside:
        raise PreconditionError(f"epsilon {epsilon:g} is not below eps0/(2 n d_g) = {constants.eps0 / (2 * n * d_g):.3g}")
    U = U or constants.box
    omega, ctilde = constants.omega, constants.ctilde
    # lower: diamond of constant 1/K1 and size eps/(4 d_g)
    D = diamond_samples(constants.K1, epsilon / (4 * d_g), ctilde, omega, U, samples, seed)
    res = connect_batch(frame, D, epsilon, pair, W, d_g, constants.witness[0], constants.witness[1], h, U, slack)
    lengths = np.array([r.g_length for r in res])
    miss = np.array([r.miss for r in res])
    # upper: random controls of g-length at most eps
    rng = np.random.default_rng(seed + 1)
    idx, sign, dur = random_controls(rng, mc, n, epsilon / (d_g * constants.X_sup))
    P, elen, _ = run_controls(frame, idx, sign, dur, U, h)
    glen = dur.sum(axis=1) if frame.metric == "frame" else elen
    H = BoxSpec("hourglass", constants.K2, 2 * n * d_g * epsilon, ctilde, omega)
    margins = box_margin(H, P)
    return ReachReport(epsilon, D, lengths, miss, (1 + slack) * epsilon, P, glen, margins,
                       constants.to_json(), bool(inside), slack, seed)


# --------------------------------------------------------------------------
# chart, gap estimate, box algebra


@dataclass(frozen=True)
class C1Chart:
    W: SurfaceW

    def forward(self, P) -> np.ndarray:
        P = np.array(as_points(P), dtype=float, ndmin=2)
        P[:, -1] -= self.W(P[:, :-1])
        return P

    def inverse(self, P) -> np.ndarray:
        P = np.array(as_points(P), dtype=float, ndmin=2)
        P[:, -1] += self.W(P[:, :-1])
        return P


def c1_chart(W: SurfaceW) -> C1Chart:
    """``phi(x, y) = (x, y - W(x))``; W becomes the horizontal plane."""
    return C1Chart(W)


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    bound: float
    int_P: float
    c_bound: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound


def upper_gap_estimate(pair, frame, gamma1: AdmissiblePath, W: SurfaceW | None = None,
                       bounds: LocalBounds | None = None, U: Box | None = None, h: float = DEFAULT_STEP) -> GapEstimate:
    """Vertical distance from ``gamma1``'s end to the surface, against the filling bound."""
    n = frame.n
    x = gamma1.end[:n]
    gamma2 = build_path(frame, tau_specs(x), gamma1.start, U, h)
    if W is not None and abs(float(W(x[None])[0]) - gamma2.end[-1]) > 1e-6:
        raise PreconditionError("surface W disagrees with the coordinate path")
    gap = float(abs(gamma1.end[-1] - gamma2.end[-1]))
    if gap == 0.0 and np.array_equal(gamma1.end, gamma2.end):
        return GapEstimate(0.0, 0.0, 0.0, 0.0)
    rep = verify_prop22(pair, frame, gamma1, gamma2, bounds, U)
    bound = (abs(rep.int_P) + rep.c_bound) / (bounds or LocalBounds.estimate(pair, frame, U)).eta_dy_inf
    return GapEstimate(gap, bound + rep.slack, rep.int_P, rep.c_bound)


@dataclass(frozen=True)
class AlgebraReport:
    box_in_diamond: int
    hourglass_in_box: int
    samples: int
    min_margin_diamond: float
    min_margin_box: float

    @property
    def passed(self) -> bool:
        return self.box_in_diamond == self.samples and self.hourglass_in_box == self.samples


def _l1_ball(rng, m, n, r):
    """Uniform points of the l1 ball of radius r in R^n."""
    e = rng.exponential(size=(m, n + 1))
    x = e[:, :n] / e.sum(axis=1, keepdims=True)
    return r * x * rng.choice([-1.0, 1.0], (m, n))


def box_algebra_check(K1: float, K2: float, ctilde: float, epsilon: float, samples: int = 1000, n: int = 2,
                      seed: int = 0) -> AlgebraReport:
    """Box-in-diamond and hourglass-in-box at the linear modulus, by sampling."""
    rng = np.random.default_rng(seed)
    lin = Modulus.linear()
    x = _l1_ball(rng, samples, n, epsilon)
    y = K1 * epsilon ** 2 * rng.uniform(-1, 1, samples)
    Bpts = np.column_stack([x, y])
    assert np.all(box_margin(BoxSpec("box", K1, epsilon), Bpts) >= 0)
    D = BoxSpec("diamond", 1 / K1, (1 + math.sqrt(2 * ctilde / K1 + 1)) * epsilon, ctilde, lin)
    mD = box_margin(D, Bpts)
    x = _l1_ball(rng, samples, n, epsilon)
    s = np.sum(np.abs(x), axis=1)
    y = (K2 * epsilon ** 2 + s * ctilde * 2 * s) * rng.uniform(-1, 1, samples)
    Hpts = np.column_stack([x, y])
    assert np.all(box_margin(BoxSpec("hourglass", K2, epsilon, ctilde, lin), Hpts) >= 0)
    mB = box_margin(BoxSpec("box", K2 + 2 * ctilde, epsilon), Hpts)
    return AlgebraReport(int((mD >= 0).sum()), int((mB >= 0).sum()), samples, float(mD.min()), float(mB.min()))

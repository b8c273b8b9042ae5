"""The corank-1 bundle ``ker(eta)``: adapted frame, non-integrability, constants.

The frame is ``X_i = d/dx^i + a_i d/dy`` with ``a_i = -eta_i / eta_y``.  All
suprema and infima over a box are grid estimates widened by a modulus-based
inflation, see :func:`subriemann.fields.sampled_extrema`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (Box, CEDPair, Modulus, ScalarField, as_points, empirical_modulus_constant, form_norm_2,
                     sampled_extrema)

LENGTH_CONST = 42.0


class BundleError(ValueError):
    """Base class for bundle precondition failures."""


class TransversalityError(BundleError):
    pass


class NotAdaptedError(BundleError):
    pass


class DegenerateBundleError(BundleError):
    """No box around the base point satisfies the non-integrability conditions."""


@dataclass(frozen=True)
class AdaptedFrame:
    pair: CEDPair
    ctilde: float
    omega: Modulus
    domain: Box
    metric: str = "euclidean"

    @property
    def n(self) -> int:
        return self.pair.n

    @property
    def dim(self) -> int:
        return self.pair.dim

    @property
    def a(self) -> tuple:
        return tuple(ScalarField(lambda P, i=i: self.coeff(i, P, check=False), name=f"a{i + 1}")
                     for i in range(self.n))

    def coeff(self, i: int, P, check: bool = True) -> np.ndarray:
        """``a_i(P)``: vertical slope of the i-th frame field."""
        P = as_points(P)
        if check:
            self.domain.check(P)
        eta = self.pair.eta
        return -eta.a[i](P) / eta.a0(P)

    def coeffs(self, P, check: bool = True) -> np.ndarray:
        C = self.pair.eta.coefficients(P, check)
        return -C[..., :-1] / C[..., -1:]

    def vectors(self, P, check: bool = True) -> np.ndarray:
        """Frame vectors, shape ``(..., n, n + 1)``."""
        A = self.coeffs(P, check)
        n = self.n
        V = np.zeros(A.shape[:-1] + (n, n + 1))
        V[..., np.arange(n), np.arange(n)] = 1.0
        V[..., :, n] = A
        return V

    def deta_frame(self, P, check: bool = True) -> np.ndarray:
        """Matrix ``dη(X_i, X_j)``, shape ``(..., n, n)``."""
        V = self.vectors(P, check)
        M = self.pair.deta.matrix(P, check)
        return np.einsum("...ia,...ab,...jb->...ij", V, M, V)


def estimate_ctilde(pair: CEDPair, omega: Modulus, domain: Box | None = None, pairs: int = 4000,
                    seed: int = 0) -> float:
    """``max(1, 1.5 * max_i sup |a_i(p) - a_i(q)| / omega(|p - q|))`` on seeded pairs."""
    dom = domain or pair.domain
    eta = pair.eta
    fn = lambda P: -eta.coefficients(P)[..., :-1] / eta.coefficients(P)[..., -1:]
    return max(1.0, empirical_modulus_constant(fn, dom, omega, pairs=pairs, seed=seed))


def adapted_frame(pair: CEDPair, domain: Box | None = None, ctilde: float | None = None,
                  omega: Modulus | None = None, metric: str = "euclidean", grid: int = 9,
                  tol: float = 1e-12, seed: int = 0) -> AdaptedFrame:
    """Build ``X_i = d_i + a_i d_y`` and check transversality and adaptedness at 0."""
    dom = domain or pair.domain
    omega = omega or pair.modulus or Modulus.linear()
    a0 = pair.eta.a0(dom.grid(grid))
    if np.min(np.abs(a0)) <= 0 or np.sign(a0.min()) != np.sign(a0.max()):
        raise TransversalityError("eta(d/dy) vanishes on the domain")
    origin = np.zeros(dom.dim)
    if np.all(dom.contains(origin)):
        c = pair.eta.coefficients(origin)
        if np.max(np.abs(c[:-1])) > tol * max(1.0, abs(c[-1])):
            raise NotAdaptedError(f"eta(d/dx^i) at 0 is {c[:-1].tolist()}, not zero")
    if ctilde is None:
        ctilde = estimate_ctilde(pair, omega, dom, seed=seed)
    return AdaptedFrame(pair, float(ctilde), omega, dom, metric)


def nonintegrability(pair: CEDPair, p) -> float | np.ndarray:
    """Density of ``eta ^ deta`` against ``dx^1 ^ ... ^ dx^n ^ dy`` (n = 2)."""
    P = as_points(p)
    if pair.n != 2:
        raise NotImplementedError("density is defined here for n = 2")
    C = pair.eta.coefficients(P)
    M = pair.deta.matrix(P)
    a1, a2, a0 = C[..., 0], C[..., 1], C[..., 2]
    out = a0 * M[..., 0, 1] + a1 * M[..., 1, 2] - a2 * M[..., 0, 2]
    return float(out) if np.ndim(out) == 0 else out


def lie_bracket(pair: CEDPair, frame: AdaptedFrame, i: int, j: int, p) -> float:
    """Vertical coefficient of ``[X_i, X_j]``: ``dη(X_j, X_i) / eta(d/dy)``."""
    if i == j:
        raise ValueError("bracket needs i != j")
    P = as_points(p)
    B = frame.deta_frame(P)
    return float(B[..., j, i] / pair.eta.a0(P))


# --------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class DomainConstants:
    box: Box
    n: int
    eta_dy_inf: float
    eta_dy_sup: float
    m_deta_inf: float
    deta_delta_sup: float
    deta_sup: float
    X_inf: float
    X_sup: float
    wedge2_inf: float
    wedge2_sup: float
    wedge_top_inf: float
    wedge_top_sup: float
    witness: tuple
    witness_inf: float
    witness_sign: int
    d_g: float
    ctilde: float
    omega: Modulus
    gromov_c: float = 0.5
    gromov_delta: float = math.inf
    eps0: float | None = None
    grid: int = 17
    inflated: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def K1(self) -> float:
        return self.m_deta_inf / (LENGTH_CONST * self.eta_dy_sup)

    @property
    def K2(self) -> float:
        return LENGTH_CONST * (1 + 2 * self.n) ** 2 * self.gromov_c * self.deta_delta_sup / self.eta_dy_inf

    def domain_conditions(self) -> dict:
        return {
            "noninvolutive": self.witness_inf > 0 and self.m_deta_inf > 0,
            "normX": 0.5 <= self.X_inf and self.X_sup <= 2.0,
            "normX2": 0.5 <= self.wedge2_inf and self.wedge2_sup <= 2.0,
            "normX3": 1 / 1.75 <= self.wedge_top_inf and self.wedge_top_sup <= 2.0,
        }

    def ball_radius(self, eps0: float) -> float:
        return (13 + (self.gromov_c + 1) * (2 + 6 * self.n) * self.d_g) * eps0

    def estimate1_lhs(self, eps0: float) -> float:
        w = self.ctilde * float(self.omega(13 * (self.gromov_c + 1) * eps0))
        return self.deta_sup * w * (4 + w) * (2 * self.n) ** (self.n + 7) * self.d_g ** 2

    def eps_conditions(self, eps0: float, room: float) -> dict:
        """Conditions on ``eps0``; ``room`` is the free radius around the base point."""
        return {
            "remaininside1": self.ball_radius(eps0) <= room,
            "estimate1": self.estimate1_lhs(eps0) < 0.25 * self.witness_inf,
            "estimate3": 3 * eps0 <= self.gromov_delta,
        }

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "n", "eta_dy_inf", "eta_dy_sup", "m_deta_inf", "deta_delta_sup", "deta_sup", "X_inf", "X_sup",
            "wedge2_inf", "wedge2_sup", "wedge_top_inf", "wedge_top_sup", "witness_inf", "witness_sign",
            "d_g", "ctilde", "gromov_c", "eps0", "grid", "inflated")}
        out["gromov_delta"] = "inf" if math.isinf(self.gromov_delta) else self.gromov_delta
        out["witness"] = [int(self.witness[0]) + 1, int(self.witness[1]) + 1]
        out["omega"] = self.omega.describe()
        out["K1"] = self.K1
        out["K2"] = self.K2
        out["box"] = self.box.to_json()
        out.update(self.meta)
        return out


def metric_dg(frame: AdaptedFrame, P: np.ndarray) -> float:
    """Comparability constant between the Euclidean norm and the metric on the frame."""
    if frame.metric == "euclidean":
        return 1.0
    if frame.metric != "frame":
        raise ValueError(f"unknown metric {frame.metric!r}")
    V = frame.vectors(P, check=False)
    G = np.einsum("...ia,...ja->...ij", V, V)
    lam = np.linalg.eigvalsh(G)
    return float(math.sqrt(max(lam[..., -1].max(), (1 / lam[..., 0]).max())))


def estimate_constants(pair: CEDPair, frame: AdaptedFrame, domain: Box | None = None, grid: int = 17,
                       inflate: bool = True, seed: int = 0) -> DomainConstants:
    """Sampled extrema of every quantity entering the domain conditions on ``domain``."""
    U = domain or frame.domain
    n = pair.n
    mod = frame.omega
    ext = lambda fn: sampled_extrema(fn, U, grid, mod, inflate, seed)

    eta_dy = ext(lambda P: np.abs(pair.eta.a0(P)))
    xnorm = ext(lambda P: np.sqrt(1 + frame.coeffs(P) ** 2).reshape(len(P), -1))

    def wedge2(P):
        V = frame.vectors(P)
        G = np.einsum("...ia,...ja->...ij", V, V)
        out = [np.sqrt(np.maximum(G[:, l, l] * G[:, k, k] - G[:, l, k] ** 2, 0))
               for l in range(n) for k in range(l + 1, n)]
        return np.stack(out, axis=-1)

    w2 = ext(wedge2)
    # |X_1 ^ ... ^ X_n ^ d_y| is the determinant of a unit lower-triangular matrix
    w_top = 1.0

    def restricted(P):
        """|dη(v1, v2)| / |v1 ^ v2| on Delta (n = 2; vanishes identically for n >= 3)."""
        if n != 2:
            return np.zeros(len(P))
        B = frame.deta_frame(P)
        return np.abs(B[:, 0, 1]) / wedge2(P)[:, 0]

    m = ext(restricted)
    deta_sup = ext(lambda P: form_norm_2(pair.deta.matrix(P)))

    best = None
    for i in range(n):
        for j in range(i + 1, n):
            e = ext(lambda P, i=i, j=j: frame.deta_frame(P)[:, i, j])
            sign = 1 if e.raw_inf > 0 else (-1 if e.raw_sup < 0 else 0)
            lower = e.inf if sign > 0 else (-e.sup if sign < 0 else 0.0)
            if best is None or lower > best[1]:
                best = ((i, j), max(lower, 0.0), sign, max(abs(e.raw_inf), abs(e.raw_sup)))
    if best is None or best[1] <= 0:
        seen = 0.0 if best is None else best[3]
        raise DegenerateBundleError(f"no non-integrability witness on {U.lo}..{U.hi}; "
                                    f"max |dη(X_i, X_j)| seen = {seen:.6g}")
    d_g = metric_dg(frame, U.grid(grid))
    return DomainConstants(
        box=U, n=n, eta_dy_inf=eta_dy.inf, eta_dy_sup=eta_dy.sup, m_deta_inf=m.inf,
        deta_delta_sup=m.sup, deta_sup=deta_sup.sup, X_inf=xnorm.inf, X_sup=xnorm.sup,
        wedge2_inf=w2.inf, wedge2_sup=w2.sup, wedge_top_inf=w_top, wedge_top_sup=w_top,
        witness=best[0], witness_inf=best[1], witness_sign=best[2], d_g=d_g, ctilde=frame.ctilde,
        omega=mod, grid=grid, inflated=inflate)


def free_radius(U: Box, chart: Box, p0) -> float:
    """Distance from ``p0`` to the sides of ``U`` that are interior to ``chart``.

    Sides of ``U`` lying on the chart boundary do not constrain balls: the
    chart ends there, so a ball is only required to stay in ``U`` within the
    chart.
    """
    p = as_points(p0)
    room = math.inf
    for k in range(U.dim):
        if U.lo[k] > chart.lo[k] + 1e-15:
            room = min(room, p[k] - U.lo[k])
        if U.hi[k] < chart.hi[k] - 1e-15:
            room = min(room, U.hi[k] - p[k])
    return room


@dataclass(frozen=True)
class FixedDomain:
    box: Box
    eps0: float
    constants: DomainConstants
    shrinks: int = 0

    def to_json(self) -> dict:
        return {"box": self.box.to_json(), "eps0": self.eps0, "shrinks": self.shrinks,
                "constants": self.constants.to_json()}


def fix_domain(pair: CEDPair, frame: AdaptedFrame, p0=None, grid: int = 17, inflate: bool = True,
               floor: float = 1e-6, max_halvings: int = 200, seed: int = 0) -> FixedDomain:
    """Shrink a box around ``p0`` until the frame conditions hold, then pick ``eps0``.

    The box search halves the radius down to ``floor`` times the initial one;
    ``eps0`` is then halved up to ``max_halvings`` times and refined by bisection
    to the largest value meeting the ball-containment and estimate conditions.
    """
    chart = frame.domain
    p0 = np.zeros(chart.dim) if p0 is None else as_points(p0)
    chart.check(p0)
    r0 = float(np.max(np.maximum(np.abs(chart.hi_arr - p0), np.abs(p0 - chart.lo_arr))))
    r, shrinks, last = r0, 0, None
    while r >= floor * r0:
        U = chart.around(p0, r)
        try:
            consts = estimate_constants(pair, frame, U, grid, inflate, seed)
            if all(consts.domain_conditions().values()):
                break
            last = consts.domain_conditions()
        except DegenerateBundleError as exc:
            last = str(exc)
        r *= 0.5
        shrinks += 1
    else:
        raise DegenerateBundleError(f"no box down to radius {floor * r0:.3g} satisfies the conditions ({last})")

    room = free_radius(U, chart, p0)
    ok = lambda e: all(consts.eps_conditions(e, room).values())
    hi = room / consts.ball_radius(1.0) if math.isfinite(room) else 1.0
    lo = hi
    for _ in range(max_halvings):
        if ok(lo):
            break
        lo *= 0.5
    else:
        raise DegenerateBundleError(f"eps0 underflow: conditions still fail at {lo:.3g} "
                                    f"(estimate1 lhs {consts.estimate1_lhs(lo):.3g} vs {0.25 * consts.witness_inf:.3g})")
    if lo < hi:
        top = min(2 * lo, hi)
        for _ in range(60):
            mid = 0.5 * (lo + top)
            if ok(mid):
                lo = mid
            else:
                top = mid
    lo = float(lo)
    consts = replace(consts, eps0=lo)
    return FixedDomain(U, lo, consts, shrinks)

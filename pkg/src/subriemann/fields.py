"""Continuous scalar fields, 1- and 2-forms, chain quadrature and Stokes checks.

Points are float arrays whose last axis holds ``(x_1, ..., x_n, y)``; the
vertical coordinate is always the last column.  Forms on an ``n``-dimensional
bundle therefore act on arrays with ``d = n + 1`` columns.
"""
from __future__ import annotations

import csv
import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

Array = np.ndarray


class DomainError(ValueError):
    """A form or field was evaluated outside its declared domain."""


class BoundaryMismatchError(ValueError):
    """A cycle is not the boundary of the filling it was paired with."""


# --------------------------------------------------------------------------
# points, boxes, moduli


def as_points(p) -> Array:
    if type(p) is np.ndarray and p.dtype == float:
        return p
    if isinstance(p, Point):
        return p.array()
    return np.asarray(p, dtype=float)


def x_l1(P) -> Array:
    """Horizontal size ``|x| = sum |x_i|`` used by every box formula."""
    P = as_points(P)
    return np.sum(np.abs(P[..., :-1]), axis=-1)


@dataclass(frozen=True)
class Point:
    x: tuple
    y: float

    @classmethod
    def of(cls, arr) -> "Point":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(arr[:-1].tolist()), float(arr[-1]))

    @property
    def n(self) -> int:
        return len(self.x)

    def array(self) -> Array:
        return np.array(list(self.x) + [self.y], dtype=float)

    def x_l1(self) -> float:
        return float(sum(abs(v) for v in self.x))

    def x_norm(self) -> float:
        return float(math.sqrt(sum(v * v for v in self.x)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.array()))


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box in chart coordinates."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, r: float, dim: int = 3) -> "Box":
        return cls((-r,) * dim, (r,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def n(self) -> int:
        return self.dim - 1

    @functools.cached_property
    def lo_arr(self) -> Array:
        return np.array(self.lo)

    @functools.cached_property
    def hi_arr(self) -> Array:
        return np.array(self.hi)

    @functools.cached_property
    def widths(self) -> Array:
        return self.hi_arr - self.lo_arr

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, P, tol: float = 1e-12) -> Array:
        P = as_points(P)
        return ((P >= self.lo_arr - tol) & (P <= self.hi_arr + tol)).all(axis=-1)

    def check(self, P, tol: float = 1e-12) -> None:
        P = as_points(P)
        ok = self.contains(P, tol)
        if not np.all(ok):
            bad = P.reshape(-1, self.dim)[~np.asarray(ok).reshape(-1)][0]
            raise DomainError(f"point {bad.tolist()} outside domain {self.lo}..{self.hi}")

    def intersect(self, other: "Box") -> "Box":
        lo = np.maximum(self.lo_arr, other.lo_arr)
        hi = np.minimum(self.hi_arr, other.hi_arr)
        if np.any(lo > hi):
            raise ValueError("empty intersection")
        return Box(tuple(lo), tuple(hi))

    def around(self, center, r: float) -> "Box":
        c = as_points(center)
        return self.intersect(Box(tuple(c - r), tuple(c + r)))

    def shrink(self, margin: float) -> "Box":
        lo, hi = self.lo_arr + margin, self.hi_arr - margin
        if np.any(lo > hi):
            raise ValueError(f"margin {margin} exceeds half-width of box")
        return Box(tuple(lo), tuple(hi))

    def axes(self, k) -> list:
        ks = [k] * self.dim if np.isscalar(k) else list(k)
        return [np.linspace(a, b, int(m)) if m > 1 else np.array([(a + b) / 2])
                for a, b, m in zip(self.lo, self.hi, ks)]

    def grid(self, k) -> Array:
        mesh = np.meshgrid(*self.axes(k), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def spacing(self, k) -> Array:
        ks = np.full(self.dim, k) if np.isscalar(k) else np.asarray(k)
        return self.widths / np.maximum(ks - 1, 1)

    def sample(self, rng: np.random.Generator, m: int) -> Array:
        return self.lo_arr + rng.random((m, self.dim)) * self.widths

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Modulus:
    """Modulus of continuity ``s -> omega(s)`` (nondecreasing, zero at zero)."""

    kind: str = "linear"
    theta: float = 1.0
    fn: Callable | None = None
    label: str = ""

    @classmethod
    def linear(cls) -> "Modulus":
        return cls("linear")

    @classmethod
    def hoelder(cls, theta: float) -> "Modulus":
        if not 0 < theta <= 1:
            raise ValueError("Hoelder exponent must lie in (0, 1]")
        return cls("hoelder", theta=float(theta))

    @classmethod
    def log(cls) -> "Modulus":
        return cls("log", label="1/|log(min(s, 1/2))|")

    @classmethod
    def custom(cls, fn: Callable, label: str = "custom") -> "Modulus":
        return cls("custom", fn=fn, label=label)

    def __call__(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        if self.kind == "linear":
            return s
        if self.kind == "hoelder":
            return s ** self.theta
        if self.kind == "log":
            safe = np.where(s > 0, np.minimum(s, 0.5), 0.5)
            return np.where(s > 0, 1.0 / np.abs(np.log(safe)), 0.0)
        return np.asarray(self.fn(s), dtype=float)

    def describe(self) -> str:
        if self.kind == "hoelder":
            return f"hoelder({self.theta:g})"
        return self.label or self.kind


# --------------------------------------------------------------------------
# scalar fields and forms


def _bcast(values, P: Array) -> Array:
    if isinstance(values, np.ndarray) and values.shape == P.shape[:-1] and values.dtype == float:
        return values
    return np.broadcast_to(np.asarray(values, dtype=float), P.shape[:-1])


@dataclass(frozen=True)
class ScalarField:
    """Registered evaluator ``P -> scalar`` with an optional table of partials.

    ``partials`` maps a coordinate index to an evaluator of the analytic
    partial derivative in that variable; missing entries mean the partial is
    not available (the coefficient may be merely continuous in it).
    """

    fn: Callable[[Array], Array] | None = None
    partials: Mapping[int, Callable] = field(default_factory=dict)
    constant: float | None = None
    name: str = ""

    @classmethod
    def const(cls, value: float) -> "ScalarField":
        return cls(constant=float(value), name=f"{float(value):g}")

    @classmethod
    def coordinate(cls, k: int, scale: float = 1.0) -> "ScalarField":
        return cls(lambda P: scale * P[..., k], {k: lambda P: np.full(P.shape[:-1], scale)},
                   name=f"{scale:g}*z{k}")

    @property
    def is_zero(self) -> bool:
        return self.constant == 0.0

    def __call__(self, P) -> Array:
        P = as_points(P)
        if self.constant is not None:
            return np.full(P.shape[:-1], self.constant)
        return _bcast(self.fn(P), P)

    def has_partial(self, k: int) -> bool:
        return self.constant is not None or k in self.partials

    def partial(self, k: int, P) -> Array:
        P = as_points(P)
        if self.constant is not None:
            return np.zeros(P.shape[:-1])
        if k not in self.partials:
            raise KeyError(f"no analytic partial in variable {k} for field {self.name!r}")
        return _bcast(self.partials[k](P), P)

    def shifted(self, shift) -> "ScalarField":
        """The field ``P -> f(P - shift)``."""
        s = np.asarray(shift, dtype=float)
        if self.constant is not None:
            return self
        parts = {k: (lambda g: (lambda P: g(P - s)))(g) for k, g in self.partials.items()}
        return ScalarField(lambda P: self.fn(P - s), parts, name=f"{self.name}(.-shift)")

    def scaled(self, c: float) -> "ScalarField":
        if self.constant is not None:
            return ScalarField.const(c * self.constant)
        parts = {k: (lambda g: (lambda P: c * g(P)))(g) for k, g in self.partials.items()}
        return ScalarField(lambda P: c * self.fn(P), parts, name=f"{c:g}*{self.name}")


def check_partials(f: ScalarField, P, h: float = 1e-5) -> dict:
    """Max gap between declared partials and central differences, per variable."""
    P = as_points(P)
    out = {}
    for k in range(P.shape[-1]):
        if not f.has_partial(k):
            continue
        e = np.zeros(P.shape[-1])
        e[k] = h
        fd = (f(P + e) - f(P - e)) / (2 * h)
        out[k] = float(np.max(np.abs(fd - f.partial(k, P))))
    return out


@dataclass(frozen=True)
class OneForm:
    """``eta = a0 dy + sum_i a_i dx^i``."""

    a0: ScalarField
    a: tuple
    domain: Box | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(self.a))

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def dim(self) -> int:
        return self.n + 1

    def fields(self) -> tuple:
        return self.a + (self.a0,)

    def coefficients(self, P, check: bool = True) -> Array:
        """Coefficient array ordered like points: ``(a_1, ..., a_n, a0)``."""
        P = as_points(P)
        if check and self.domain is not None:
            self.domain.check(P)
        return np.stack([f(P) for f in self.fields()], axis=-1)

    def __call__(self, P, V, check: bool = True) -> Array:
        return np.sum(self.coefficients(P, check) * np.asarray(V, dtype=float), axis=-1)

    def scaled(self, c: float) -> "OneForm":
        return OneForm(self.a0.scaled(c), tuple(f.scaled(c) for f in self.a), self.domain)


def eval_form(form, p, v) -> float:
    """``a0(p) v_y + sum_i a_i(p) v_i``; raises DomainError outside the domain."""
    if isinstance(form, CEDPair):
        form = form.eta
    return float(form(as_points(p), np.asarray(v, dtype=float)))


@dataclass(frozen=True)
class TwoForm:
    """2-form with coefficient fields on ``dz^i ^ dz^j`` (``i < j``, ``z = (x, y)``)."""

    dim: int
    coeffs: Mapping
    domain: Box | None = None

    def __post_init__(self):
        for (i, j) in self.coeffs:
            if not 0 <= i < j < self.dim:
                raise ValueError(f"bad 2-form index pair {(i, j)}")

    @classmethod
    def zero(cls, dim: int, domain: Box | None = None) -> "TwoForm":
        return cls(dim, {}, domain)

    def _items(self):
        return [(ij, f) for ij, f in self.coeffs.items() if not f.is_zero]

    def coefficient(self, i: int, j: int, P) -> Array:
        P = as_points(P)
        if i == j:
            return np.zeros(P.shape[:-1])
        if i > j:
            return -self.coefficient(j, i, P)
        f = self.coeffs.get((i, j))
        return np.zeros(P.shape[:-1]) if f is None else f(P)

    def matrix(self, P, check: bool = True) -> Array:
        P = as_points(P)
        if check and self.domain is not None:
            self.domain.check(P)
        M = np.zeros(P.shape[:-1] + (self.dim, self.dim))
        for (i, j), f in self._items():
            v = f(P)
            M[..., i, j] = v
            M[..., j, i] = -v
        return M

    def __call__(self, P, V, W, check: bool = True) -> Array:
        P = as_points(P)
        if check and self.domain is not None:
            self.domain.check(P)
        V = np.asarray(V, dtype=float)
        W = np.asarray(W, dtype=float)
        out = np.zeros(np.broadcast_shapes(P.shape[:-1], V.shape[:-1], W.shape[:-1]))
        for (i, j), f in self._items():
            out = out + f(P) * (V[..., i] * W[..., j] - V[..., j] * W[..., i])
        return out

    def scaled(self, c: float) -> "TwoForm":
        return TwoForm(self.dim, {k: f.scaled(c) for k, f in self.coeffs.items()}, self.domain)


def form_norm_2(M: Array) -> Array:
    """Operator norm ``sup |beta(v, w)|`` over unit v, w of antisymmetric matrices."""
    if M.shape[-1] == 3:
        return np.sqrt(M[..., 0, 1] ** 2 + M[..., 0, 2] ** 2 + M[..., 1, 2] ** 2)
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class Certification:
    mesh_h: float
    residual: float
    order: float
    meshes: tuple = ()
    residuals: tuple = ()

    def passed(self, min_order: float = 1.9) -> bool:
        return self.order >= min_order

    def to_json(self) -> dict:
        return {"mesh_h": self.mesh_h, "residual": self.residual, "order": self.order,
                "meshes": list(self.meshes), "residuals": list(self.residuals)}


@dataclass(frozen=True)
class CEDPair:
    """A 1-form together with a continuous exterior differential."""

    eta: OneForm
    deta: TwoForm
    domain: Box
    certification: Certification | None = None
    modulus: Modulus | None = None
    name: str = ""

    def __post_init__(self):
        if self.eta.dim != self.deta.dim or self.domain.dim != self.eta.dim:
            raise ValueError("dimension mismatch between eta, deta and domain")
        object.__setattr__(self, "eta", replace(self.eta, domain=self.domain))
        object.__setattr__(self, "deta", replace(self.deta, domain=self.domain))

    @property
    def n(self) -> int:
        return self.eta.n

    @property
    def dim(self) -> int:
        return self.eta.dim

    def scaled(self, c: float) -> "CEDPair":
        return replace(self, eta=self.eta.scaled(c), deta=self.deta.scaled(c), certification=None)

    def with_certification(self, cert: Certification) -> "CEDPair":
        return replace(self, certification=cert)


# --------------------------------------------------------------------------
# 1-cells and 2-cells


@dataclass(frozen=True)
class Curve:
    """Parameterised 1-cell ``s in [0, 1] -> point`` with composite midpoint nodes."""

    fn: Callable[[Array], Array]
    deriv: Callable[[Array], Array] | None = None
    mesh: int = 64
    sign: int = 1

    def nodes(self, mesh: int | None = None):
        m = int(mesh or self.mesh)
        s = (np.arange(m) + 0.5) / m
        pts = np.asarray(self.fn(s), dtype=float)
        if self.deriv is not None:
            vel = np.asarray(self.deriv(s), dtype=float)
        else:
            edges = np.asarray(self.fn(np.arange(m + 1) / m), dtype=float)
            vel = np.diff(edges, axis=0) * m
        return pts, vel, 1.0 / m

    def point(self, s: float) -> Array:
        return np.asarray(self.fn(np.array([float(s)])), dtype=float)[0]

    @property
    def start(self) -> Array:
        return self.point(0.0 if self.sign > 0 else 1.0)

    @property
    def end(self) -> Array:
        return self.point(1.0 if self.sign > 0 else 0.0)

    def reversed(self) -> "Curve":
        return replace(self, sign=-self.sign)

    def with_mesh(self, mesh: int) -> "Curve":
        return replace(self, mesh=int(mesh))

    def sample(self, k: int) -> Array:
        s = np.linspace(0.0, 1.0, k)
        pts = np.asarray(self.fn(s), dtype=float)
        return pts if self.sign > 0 else pts[::-1]

    def length(self, mesh: int | None = None) -> float:
        _, vel, w = self.nodes(mesh)
        return float(np.sum(np.linalg.norm(vel, axis=-1)) * w)


def segment(a, b, mesh: int = 1) -> Curve:
    a = as_points(a)
    b = as_points(b)
    return Curve(lambda s: a + np.asarray(s)[:, None] * (b - a),
                 lambda s: np.broadcast_to(b - a, (len(s), a.size)), mesh=mesh)


def polyline(points, refine: int = 1) -> Curve:
    """Piecewise-linear curve through ``points`` with ``refine`` nodes per chord."""
    Q = as_points(points)
    K = len(Q) - 1
    if K < 1:
        raise ValueError("a polyline needs at least two points")
    D = np.diff(Q, axis=0)

    def locate(s):
        s = np.asarray(s, dtype=float)
        k = np.minimum(np.floor(s * K).astype(int), K - 1)
        return k, s * K - k

    def fn(s):
        k, lam = locate(s)
        return Q[k] + lam[:, None] * D[k]

    def deriv(s):
        k, _ = locate(s)
        return K * D[k]

    return Curve(fn, deriv, mesh=K * int(refine))


def integrate_curve(form, curve, mesh: int | None = None, check: bool = True) -> float:
    """Composite midpoint quadrature of ``eta(gamma')`` along a sampled 1-cell."""
    if isinstance(form, CEDPair):
        form = form.eta
    if not isinstance(curve, Curve):
        pts = as_points(curve)
        if len(pts) < 2:
            return 0.0
        curve = polyline(pts)
    pts, vel, w = curve.nodes(mesh)
    return float(curve.sign * w * np.sum(form(pts, vel, check=check)))


def integrate_chain1(form, curves: Sequence[Curve], mesh: int | None = None, check: bool = True) -> float:
    return float(sum(integrate_curve(form, c, mesh, check) for c in curves))


def _fd_jac(fn, u, w, h=1e-6):
    du = (fn(u + h, w) - fn(u - h, w)) / (2 * h)
    dw = (fn(u, w + h) - fn(u, w - h)) / (2 * h)
    return du, dw


@dataclass(frozen=True)
class Cell2:
    """Oriented 2-cell: a map from the unit square with a tensor midpoint mesh."""

    fn: Callable[[Array, Array], Array]
    jac: Callable[[Array, Array], tuple] | None = None
    sign: int = 1
    mesh: tuple = (16, 16)

    def __post_init__(self):
        m = self.mesh
        object.__setattr__(self, "mesh", (int(m), int(m)) if np.isscalar(m) else tuple(int(v) for v in m))

    def _jac(self, u, w):
        return self.jac(u, w) if self.jac is not None else _fd_jac(self.fn, u, w)

    def nodes(self, mesh=None, refine: int = 1):
        mu, mw = ((mesh, mesh) if np.isscalar(mesh) else mesh) if mesh is not None else self.mesh
        mu, mw = int(mu) * refine, int(mw) * refine
        U, W = np.meshgrid((np.arange(mu) + 0.5) / mu, (np.arange(mw) + 0.5) / mw, indexing="ij")
        U, W = U.reshape(-1), W.reshape(-1)
        du, dw = self._jac(U, W)
        return np.asarray(self.fn(U, W), dtype=float), np.asarray(du), np.asarray(dw), 1.0 / (mu * mw)

    def edges(self) -> tuple:
        """Oriented boundary: bottom, right, top, left (counter-clockwise in (u, w))."""
        F, J = self.fn, self._jac
        one = np.ones
        mu, mw = self.mesh
        bottom = Curve(lambda s: F(s, 0 * s), lambda s: J(s, 0 * s)[0], mu, self.sign)
        right = Curve(lambda s: F(one(len(s)), s), lambda s: J(one(len(s)), s)[1], mw, self.sign)
        top = Curve(lambda s: F(1 - s, one(len(s))), lambda s: -J(1 - s, one(len(s)))[0], mu, self.sign)
        left = Curve(lambda s: F(0 * s, 1 - s), lambda s: -J(0 * s, 1 - s)[1], mw, self.sign)
        return bottom, right, top, left

    def reversed(self) -> "Cell2":
        return replace(self, sign=-self.sign)

    def with_mesh(self, mesh) -> "Cell2":
        return replace(self, mesh=mesh)


@dataclass(frozen=True)
class Chain2:
    """Formal integer sum of 2-cells (orientation carried by each cell's sign)."""

    cells: tuple
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))

    def __add__(self, other: "Chain2") -> "Chain2":
        return Chain2(self.cells + other.cells)

    def reversed(self) -> "Chain2":
        return Chain2(tuple(c.reversed() for c in self.cells), self.info)

    def with_mesh(self, mesh) -> "Chain2":
        return Chain2(tuple(c.with_mesh(mesh) for c in self.cells), self.info)

    def boundary(self) -> list:
        return [e for c in self.cells for e in c.edges()]

    def area(self, mesh=None) -> float:
        """Unsigned area (mass) of the chain."""
        total = 0.0
        for c in self.cells:
            _, du, dw, w = c.nodes(mesh)
            G = np.einsum("ki,ki->k", du, du) * np.einsum("ki,ki->k", dw, dw) - np.einsum("ki,ki->k", du, dw) ** 2
            total += w * float(np.sum(np.sqrt(np.maximum(G, 0.0))))
        return total


def integrate_chain2(form, chain: Chain2, mesh=None, refine: int = 1, check: bool = True) -> float:
    """Sum over cells of the oriented tensor-midpoint quadrature of a 2-form."""
    if isinstance(form, CEDPair):
        form = form.deta
    total = 0.0
    for cell in chain.cells:
        pts, du, dw, w = cell.nodes(mesh, refine)
        total += cell.sign * w * float(np.sum(form(pts, du, dw, check=check)))
    return total


# --------------------------------------------------------------------------
# Stokes checks


def _curve_moments(curves, mesh=None):
    """Displacement vector and antisymmetric moments int 1/2 (z_i dz_j - z_j dz_i)."""
    disp = 0.0
    M = 0.0
    length = 0.0
    for c in curves:
        pts, vel, w = c.nodes(mesh)
        disp = disp + c.sign * (c.point(1.0) - c.point(0.0))
        M = M + c.sign * w * 0.5 * (pts.T @ vel - vel.T @ pts)
        length += w * float(np.sum(np.linalg.norm(vel, axis=-1)))
    return np.asarray(disp), np.asarray(M), length


def _chain_moments(chain: Chain2, mesh=None):
    M = 0.0
    for c in chain.cells:
        _, du, dw, w = c.nodes(mesh)
        M = M + c.sign * w * (du.T @ dw - dw.T @ du)
    return np.asarray(M)


def check_boundary(cycle, filling: Chain2, mesh=None, tol: float = 1e-2) -> None:
    """Formal check that ``cycle`` is closed and bounds ``filling``.

    Compares the oriented area moments of both sides, which agree exactly for
    a true boundary (Stokes for the linear test forms).
    """
    disp, Mc, L = _curve_moments(cycle, mesh)
    scale = max(L, 1e-300)
    if np.max(np.abs(disp)) > 1e-9 * (1 + scale):
        raise BoundaryMismatchError(f"cycle is not closed (net displacement {np.abs(disp).max():.3e})")
    Mf = _chain_moments(filling, mesh)
    gap = float(np.max(np.abs(Mc - Mf)))
    if gap > tol * scale ** 2:
        raise BoundaryMismatchError(f"cycle does not bound the filling (moment gap {gap:.3e})")


def stokes_residual(pair: CEDPair, cycle, filling: Chain2, mesh=None, check: bool = True) -> float:
    """``|int_cycle eta - int_filling deta|`` after a formal boundary check."""
    cycle = [cycle] if isinstance(cycle, Curve) else list(cycle)
    if check:
        check_boundary(cycle, filling, mesh)
    lhs = integrate_chain1(pair.eta, cycle, mesh)
    rhs = integrate_chain2(pair.deta, filling, mesh)
    return abs(lhs - rhs)


ROUNDING_FLOOR = 1e-14


def fitted_order(hs, residuals, floor: float = ROUNDING_FLOOR) -> float:
    """Least-squares slope of log(residual) against log(h).

    Residuals at or below ``floor`` carry no convergence information.  The fit
    uses the leading run of residuals above the floor plus the first floored
    value clamped to ``floor`` (which can only understate the order).  If the
    coarsest residual is already floored the quadrature is exact to rounding
    and the order is reported as ``inf``.
    """
    hs = np.asarray(hs, dtype=float)
    r = np.asarray(residuals, dtype=float)
    above = r > floor
    if not above[0]:
        return math.inf
    k = len(r) if above.all() else int(np.argmin(above)) + 1
    lh = np.log(hs[:k])
    lr = np.log(np.maximum(r[:k], floor))
    if k < 2:
        return math.inf
    return float(np.polyfit(lh, lr, 1)[0])


def certify(pair: CEDPair, cells: Sequence[Cell2], meshes=(16, 32, 64, 128), threads: int = 1) -> Certification:
    """Stokes residual of a suite of single-cell fillings under mesh refinement."""

    def residual_row(cell):
        chain = Chain2((cell,))
        edges = cell.edges()
        check_boundary(edges, chain, meshes[0])
        return [stokes_residual(pair, edges, chain, m, check=False) for m in meshes]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(residual_row, cells))
    else:
        rows = [residual_row(c) for c in cells]
    worst = np.max(np.asarray(rows), axis=0)
    hs = [1.0 / m for m in meshes]
    return Certification(mesh_h=hs[-1], residual=float(worst[-1]), order=fitted_order(hs, worst),
                         meshes=tuple(int(m) for m in meshes), residuals=tuple(float(r) for r in worst))


@dataclass(frozen=True)
class DdReport:
    max_abs: float
    values: tuple

    def to_json(self) -> dict:
        return {"max_abs": self.max_abs, "values": list(self.values)}


def check_dd_zero(pair: CEDPair, closed_chains: Sequence[Chain2], mesh=None, tol: float = 1e-8) -> DdReport:
    """Integrals of ``deta`` over closed 2-chains (each must have empty boundary)."""
    vals = []
    for ch in closed_chains:
        disp, M, L = _curve_moments(ch.boundary(), mesh)
        if np.max(np.abs(M)) > tol * max(L, 1e-300) ** 2 or np.max(np.abs(disp)) > tol * (1 + L):
            raise BoundaryMismatchError("2-chain is not closed")
        vals.append(integrate_chain2(pair.deta, ch, mesh))
    return DdReport(float(max((abs(v) for v in vals), default=0.0)), tuple(vals))


# --------------------------------------------------------------------------
# random cells for certification suites


@dataclass(frozen=True)
class Face:
    """A closed boundary face ``z[axis] = value`` where coefficients lose smoothness.

    ``grading`` selects the parameterisation used by cells touching the face:
    ``"power"`` (``u^2``, smooths square roots) or ``"exp"`` (``exp(1 - 1/u)``,
    smooths ``1/log``).
    """

    axis: int
    value: float
    grading: str = "power"

    def g(self, u):
        u = np.asarray(u, dtype=float)
        if self.grading == "power":
            return u * u, 2 * u
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            safe = np.where(u > 0, u, 1.0)
            val = np.where(u > 0, np.exp(1.0 - 1.0 / safe), 0.0)
            der = np.where(u > 0, val / safe ** 2, 0.0)
        return val, der


def _frame(rng, d, k):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return [Q[:, i] for i in range(k)]


def random_cell(rng: np.random.Generator, domain: Box, face: Face | None = None,
                size=(0.06, 0.25), curvature: float = 0.35, mesh: int = 16) -> Cell2:
    """Random curved 2-cell inside ``domain``; touches ``face`` along ``u = 0`` if given."""
    d = domain.dim
    for _ in range(500):
        s1, s2 = rng.uniform(*size, 2)
        e1, e2, n1, n2 = (_frame(rng, d, 2) + _frame(rng, d, 2))
        k1, k2 = rng.uniform(-curvature, curvature, 2) * min(s1, s2)
        c = domain.sample(rng, 1)[0]
        if face is not None:
            L = rng.uniform(0.05, 0.4) * min(1.0, (domain.hi[face.axis] - face.value) / 0.6)
            kap = rng.uniform(-0.4, 0.4)
            for v in (e1, e2, n1, n2):
                v[face.axis] = 0.0

        def fn(u, w, c=c, s1=s1, s2=s2, e1=e1, e2=e2, n1=n1, n2=n2, k1=k1, k2=k2):
            U, W = 2 * np.asarray(u) - 1, 2 * np.asarray(w) - 1
            P = (c + np.outer(s1 * U, e1) + np.outer(s2 * W, e2)
                 + np.outer(k1 * U * W, n1) + np.outer(k2 * (U * U + W * W), n2))
            if face is not None:
                gv, _ = face.g(u)
                P[:, face.axis] = face.value + L * gv * (1 + kap * (np.asarray(w) - 0.5))
            return P

        def jac(u, w, s1=s1, s2=s2, e1=e1, e2=e2, n1=n1, n2=n2, k1=k1, k2=k2):
            U, W = 2 * np.asarray(u) - 1, 2 * np.asarray(w) - 1
            du = 2 * (np.outer(np.full_like(U, s1), e1) + np.outer(k1 * W, n1) + np.outer(2 * k2 * U, n2))
            dw = 2 * (np.outer(np.full_like(W, s2), e2) + np.outer(k1 * U, n1) + np.outer(2 * k2 * W, n2))
            if face is not None:
                gv, gd = face.g(u)
                rho = 1 + kap * (np.asarray(w) - 0.5)
                du[:, face.axis] = L * gd * rho
                dw[:, face.axis] = L * gv * kap
            return du, dw

        uu, ww = np.meshgrid(np.linspace(0, 1, 33), np.linspace(0, 1, 33), indexing="ij")
        if np.all(domain.contains(fn(uu.ravel(), ww.ravel()), tol=-1e-9 if face is None else 0.0)):
            return Cell2(fn, jac, 1, (mesh, mesh))
    raise RuntimeError("could not place a random cell inside the domain")


def random_closed_chain(rng: np.random.Generator, domain: Box, face: Face | None = None,
                        size=(0.06, 0.2), curvature: float = 0.3, mesh: int = 16) -> Chain2:
    """Boundary of a random curved 3-cell: six faces with induced orientation."""
    d = domain.dim
    if d != 3:
        raise ValueError("closed chains are generated in dimension 3")
    for _ in range(500):
        s = rng.uniform(*size, 3)
        E = _frame(rng, d, 3)
        N = _frame(rng, d, 3)
        k = rng.uniform(-curvature, curvature, 3) * s.min()
        c = domain.sample(rng, 1)[0]
        if face is not None:
            L = rng.uniform(0.05, 0.4) * min(1.0, (domain.hi[face.axis] - face.value) / 0.6)
            kap = rng.uniform(-0.3, 0.3, 2)
            for v in E + N:
                v[face.axis] = 0.0

        def G(u, v, w, s=s, E=E, N=N, k=k, c=c):
            u, v, w = (np.asarray(t, dtype=float) for t in (u, v, w))
            U, V, W = 2 * u - 1, 2 * v - 1, 2 * w - 1
            P = (c + np.outer(s[0] * U, E[0]) + np.outer(s[1] * V, E[1]) + np.outer(s[2] * W, E[2])
                 + np.outer(k[0] * U * V, N[0]) + np.outer(k[1] * V * W, N[1]) + np.outer(k[2] * (U * U + W * W), N[2]))
            dU = 2 * (np.outer(np.full_like(U, s[0]), E[0]) + np.outer(k[0] * V, N[0]) + np.outer(2 * k[2] * U, N[2]))
            dV = 2 * (np.outer(np.full_like(V, s[1]), E[1]) + np.outer(k[0] * U, N[0]) + np.outer(k[1] * W, N[1]))
            dW = 2 * (np.outer(np.full_like(W, s[2]), E[2]) + np.outer(k[1] * V, N[1]) + np.outer(2 * k[2] * W, N[2]))
            if face is not None:
                gv, gd = face.g(u)
                rho = 1 + kap[0] * (v - 0.5) + kap[1] * (w - 0.5)
                P[:, face.axis] = face.value + L * gv * rho
                dU[:, face.axis] = L * gd * rho
                dV[:, face.axis] = L * gv * kap[0]
                dW[:, face.axis] = L * gv * kap[1]
            return P, (dU, dV, dW)

        g = np.linspace(0, 1, 17)
        uu, vv, ww = (t.ravel() for t in np.meshgrid(g, g, g, indexing="ij"))
        if np.all(domain.contains(G(uu, vv, ww)[0], tol=-1e-9 if face is None else 0.0)):
            break
    else:
        raise RuntimeError("could not place a random 3-cell inside the domain")

    cells = []
    for axis in range(3):
        rest = [a for a in range(3) if a != axis]
        for end in (0.0, 1.0):
            sign = (-1) ** axis * (1 if end == 1.0 else -1)

            def args(a, b, axis=axis, rest=rest, end=end):
                t = [None, None, None]
                t[axis] = np.full(np.shape(a), end)
                t[rest[0]], t[rest[1]] = a, b
                return t

            def fn(a, b, args=args):
                return G(*args(a, b))[0]

            def jac(a, b, args=args, rest=rest):
                D = G(*args(a, b))[1]
                return D[rest[0]], D[rest[1]]

            cells.append(Cell2(fn, jac, sign, (mesh, mesh)))
    return Chain2(tuple(cells))


# --------------------------------------------------------------------------
# sampled norms


@dataclass(frozen=True)
class Extrema:
    inf: float
    sup: float
    delta: float
    raw_inf: float
    raw_sup: float


def empirical_modulus_constant(fn: Callable, domain: Box, modulus: Modulus, pairs: int = 4000,
                               seed: int = 0, factor: float = 1.5) -> float:
    """``factor * max |f(p) - f(q)| / omega(|p - q|)`` over multi-scale random pairs."""
    rng = np.random.default_rng(seed)
    P = domain.sample(rng, pairs)
    dirs = rng.normal(size=P.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dist = domain.diameter * 10 ** rng.uniform(-5, 0, pairs)
    Q = np.clip(P + dist[:, None] * dirs, domain.lo_arr, domain.hi_arr)
    r = np.linalg.norm(P - Q, axis=1)
    ok = r > 0
    num = np.abs(np.asarray(fn(P)) - np.asarray(fn(Q)))
    num = num.reshape(pairs, -1).max(axis=1)
    ratio = num[ok] / np.maximum(modulus(r[ok]), 1e-300)
    return float(factor * ratio.max()) if ratio.size else 0.0


def sampled_extrema(fn: Callable, domain: Box, grid=9, modulus: Modulus | None = None, inflate: bool = True,
                    seed: int = 0, points: Array | None = None) -> Extrema:
    """Grid extrema of ``fn`` widened by ``C omega(r)``, r the distance to the nearest node."""
    P = domain.grid(grid) if points is None else points
    vals = np.asarray(fn(P))
    lo, hi = float(vals.min()), float(vals.max())
    delta = 0.0
    if inflate:
        mod = modulus or Modulus.linear()
        r = 0.5 * float(np.linalg.norm(domain.spacing(grid)))
        delta = empirical_modulus_constant(fn, domain, mod, seed=seed) * float(mod(r))
    return Extrema(lo - delta, hi + delta, delta, lo, hi)


def d_norm(pair: CEDPair, grid=9, inflate: bool = True, seed: int = 0) -> float:
    """``max(|eta|_inf-norm, |deta|_inf-norm)`` on a grid, with modulus inflation."""
    mod = pair.modulus or Modulus.linear()
    e1 = sampled_extrema(lambda P: np.linalg.norm(pair.eta.coefficients(P), axis=-1),
                         pair.domain, grid, mod, inflate, seed)
    e2 = sampled_extrema(lambda P: form_norm_2(pair.deta.matrix(P)), pair.domain, grid, mod, inflate, seed)
    return max(e1.sup, e2.sup)


# --------------------------------------------------------------------------
# mollification and pasting


def _stencil(k: int = 17):
    t = -1 + (2 * np.arange(k) + 1) / k
    phi = (1 - t * t) ** 4
    dphi = -8 * t * (1 - t * t) ** 3
    return t, phi, dphi


def mollify(pair: CEDPair, scale: float, stencil: int = 17, chunk: int = 64) -> CEDPair:
    """Convolve eta with a ``(1 - t^2)^4`` tensor bump of half-width ``scale``.

    The differential of the smoothed form is obtained by moving the derivative
    onto the bump, so only values of the original coefficients are needed.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    try:
        dom = pair.domain.shrink(scale)
    except ValueError as exc:
        raise ValueError(f"mollifier scale {scale} exceeds the domain margin") from exc
    d = pair.dim
    t, phi, dphi = _stencil(stencil)
    grids = np.meshgrid(*([t] * d), indexing="ij")
    T = np.stack([g.reshape(-1) for g in grids], axis=-1)
    pw = np.meshgrid(*([phi] * d), indexing="ij")
    W = np.prod(np.stack([g.reshape(-1) for g in pw], axis=-1), axis=-1)
    W /= W.sum()
    # derivative weights, normalised to differentiate affine functions exactly
    zeta = -float(np.sum(t * dphi)) * float(np.sum(phi)) ** (d - 1)
    D = []
    for i in range(d):
        fac = [dphi if a == i else phi for a in range(d)]
        g = np.meshgrid(*fac, indexing="ij")
        D.append(np.prod(np.stack([x.reshape(-1) for x in g], axis=-1), axis=-1) / zeta)
    D = np.stack(D)

    def smoothed(P):
        P = as_points(P)
        flat = P.reshape(-1, d)
        vals = np.empty((len(flat), d))
        ders = np.empty((len(flat), d, d))
        for k in range(0, len(flat), chunk):
            Q = flat[k:k + chunk, None, :] - scale * T[None]
            C = pair.eta.coefficients(Q)
            vals[k:k + chunk] = np.einsum("s,msj->mj", W, C)
            ders[k:k + chunk] = np.einsum("is,msj->mij", D, C) / scale
        return vals.reshape(P.shape), ders.reshape(P.shape[:-1] + (d, d))

    coef = [ScalarField(lambda P, j=j: smoothed(P)[0][..., j], name=f"mollified a{j}") for j in range(d)]
    eta = OneForm(coef[-1], tuple(coef[:-1]))
    cf = {}
    for i in range(d):
        for j in range(i + 1, d):
            def f(P, i=i, j=j):
                der = smoothed(P)[1]
                return der[..., i, j] - der[..., j, i]
            cf[(i, j)] = ScalarField(f, name=f"mollified deta{i}{j}")
    return CEDPair(eta, TwoForm(d, cf), dom, modulus=pair.modulus, name=f"{pair.name}*bump({scale:g})")


def paste(forms: Sequence, domain: Box | None = None, tol: float = 1e-9, grid: int = 9,
          cells: Sequence[Cell2] | None = None, meshes=(16, 32, 64, 128)) -> CEDPair:
    """Partition-of-unity sum ``(sum psi_i eta_i, sum dpsi_i ^ eta_i + psi_i deta_i)``.

    ``forms`` holds ``(CEDPair, bump)`` tuples; each bump must carry analytic
    partials in every variable.  When ``cells`` is given the result is
    re-certified on that Stokes suite.
    """
    pairs = [p for p, _ in forms]
    bumps = [b for _, b in forms]
    dom = domain or pairs[0].domain
    d = dom.dim
    for b in bumps:
        if not all(b.has_partial(k) for k in range(d)):
            raise ValueError("bump functions need analytic partials in every variable")
    G = dom.grid(grid)
    total = sum(b(G) for b in bumps)
    if np.max(np.abs(total - 1)) > tol:
        raise ValueError(f"bumps do not sum to one (max defect {np.max(np.abs(total - 1)):.3e})")

    memo = {}

    def coefs(P):
        # frame evaluations ask for every component at the same small batch; reuse the last one
        P = np.asarray(P, dtype=float)
        key = (P.shape, P.tobytes()) if P.size <= 256 else None
        if key is not None and memo.get("key") == key:
            return memo["val"]
        val = sum(b(P)[..., None] * p.eta.coefficients(P, check=False) for p, b in zip(pairs, bumps))
        if key is not None:
            memo["key"], memo["val"] = key, val
        return val

    def eta_coef(j):
        return lambda P: coefs(P)[..., j]

    coef = [ScalarField(eta_coef(j), name=f"pasted a{j}") for j in range(d)]
    eta = OneForm(coef[-1], tuple(coef[:-1]))

    def deta_coef(i, j):
        def f(P):
            out = 0.0
            for p, b in zip(pairs, bumps):
                C = p.eta.coefficients(P)
                out = out + b.partial(i, P) * C[..., j] - b.partial(j, P) * C[..., i] + b(P) * p.deta.coefficient(i, j, P)
            return out
        return ScalarField(f, name=f"pasted deta{i}{j}")

    deta = TwoForm(d, {(i, j): deta_coef(i, j) for i in range(d) for j in range(i + 1, d)})
    out = CEDPair(eta, deta, dom, modulus=pairs[0].modulus, name="+".join(p.name for p in pairs))
    if cells is not None:
        out = out.with_certification(certify(out, cells, meshes))
    return out


# --------------------------------------------------------------------------
# serialisation


def chain_rows(chain: Chain2, k: int = 5) -> list:
    """Sample rows ``(cell id, s, t, x_1..x_n, y)`` on a ``k x k`` grid per cell."""
    rows = []
    g = np.linspace(0, 1, k)
    for cid, cell in enumerate(chain.cells):
        S, T = np.meshgrid(g, g, indexing="ij")
        P = cell.fn(S.ravel(), T.ravel())
        for s, t, p in zip(S.ravel(), T.ravel(), P):
            rows.append([cid, float(s), float(t)] + [float(v) for v in p])
    return rows


def curve_rows(curves: Sequence[Curve], k: int = 33) -> list:
    rows = []
    for cid, c in enumerate(curves):
        for s, p in zip(np.linspace(0, 1, k), c.sample(k)):
            rows.append([cid, float(s), 0.0] + [float(v) for v in p])
    return rows


def write_rows_csv(path, rows: list, n: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "s", "t"] + [f"x{i + 1}" for i in range(n)] + ["y"])
        for r in rows:
            w.writerow([r[0]] + [f"{v:.12g}" for v in r[1:]])

"""Flows of the adapted frame, the composed map T, the surface W and the funnel probe.

Along ``X_i = d_i + a_i d_y`` the horizontal part moves linearly, so every
integrator here advances ``y`` only, with ``x`` placed exactly at each stage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fields import Box, Modulus, as_points, x_l1

DEFAULT_STEP = 1e-3
MIN_STEPS = 50


class EscapeError(RuntimeError):
    """A trajectory left the working box; ``exit_point`` is the first node outside."""

    def __init__(self, msg: str, exit_point=None):
        super().__init__(msg)
        self.exit_point = exit_point


class IntegrabilityError(RuntimeError):
    """The sampled surface is not a graph over the horizontal coordinates."""


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True)
class VectorFrame:
    """Bare frame ``X_i = d_i + a_i d_y`` from a coefficient function (no form attached)."""

    fn: Callable
    domain: Box
    n: int = 2
    ctilde: float = 1.0
    omega: Modulus = field(default_factory=Modulus.linear)
    metric: str = "euclidean"

    @property
    def dim(self) -> int:
        return self.n + 1

    def coeffs(self, P, check: bool = True):
        P = as_points(P)
        if check:
            self.domain.check(P)
        return np.asarray(self.fn(P), dtype=float)

    def coeff(self, i: int, P, check: bool = True):
        return self.coeffs(P, check)[..., i]


def control_frame(half_width: float = 1.0) -> VectorFrame:
    """``a_1 = sqrt|y|``, ``a_2 = 0``: the textbook non-unique ODE ``y' = sqrt|y|``."""
    fn = lambda P: np.stack([np.sqrt(np.abs(P[..., 2])), np.zeros(P.shape[:-1])], axis=-1)
    return VectorFrame(fn, Box.cube(half_width), 2, 1.0, Modulus.hoelder(0.5))


@dataclass(frozen=True)
class FlowSpec:
    index: int
    sign: int = 1
    duration: float = 0.0
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")

    @property
    def signed(self) -> float:
        return self.sign * self.duration

    def to_json(self) -> dict:
        return {"index": self.index + 1, "sign": self.sign, "duration": self.duration, "step": self.step}


@dataclass
class FlowBatch:
    points: np.ndarray
    error: np.ndarray
    length: np.ndarray
    tangency: np.ndarray
    ok: np.ndarray
    nodes: list | None = None


def _steps(T, h):
    return np.maximum(MIN_STEPS, np.ceil(np.abs(T) / h)).astype(int)


def _march(frame, idx, T, X0, Y0, N, U, method, record, strict, diagnostics=True):
    """Fixed-step march in the fraction ``theta`` of each trajectory (vectorised)."""
    B, n = X0.shape
    rows = np.arange(B)
    E = np.zeros((B, n))
    E[rows, idx] = T
    y = Y0.copy()
    ok = np.ones(B, dtype=bool)
    length = np.zeros(B)
    tang = np.zeros(B)
    nodes = [[np.append(X0[b], Y0[b])] for b in range(B)] if record else None
    dth = 1.0 / N
    single = int(idx[0]) if np.all(idx == idx[0]) else None

    def slope(theta, yv, act):
        P = np.concatenate([X0[act] + theta[:, None] * E[act], yv[:, None]], axis=1)
        if single is not None:
            return T[act] * frame.coeff(single, P, check=False)
        a = frame.coeffs(P, check=False)[np.arange(len(P)), idx[act]]
        return T[act] * a

    def guard(theta, yv, act):
        """Escape check at a step node (the horizontal part is exact and monotone)."""
        if U is None:
            return
        P = np.concatenate([X0[act] + theta[:, None] * E[act], yv[:, None]], axis=1)
        inside = U.contains(P, 1e-12)
        if not inside.all():
            if strict:
                bad = P[~inside][0]
                raise EscapeError(f"trajectory left the box at {bad.tolist()}", bad)
            ok[rows[act][~inside]] = False

    f_prev = f_prev_mask = None
    uniform = bool(np.all(N == N[0]))
    for k in range(int(N.max())):
        act = slice(None) if uniform else k < N
        if not uniform and not act.any():
            break
        d = dth[act]
        th = k * d
        ya = y[act]
        if f_prev is None:
            guard(th, ya, act)
            k1 = slope(th, ya, act)
        else:
            k1 = f_prev if uniform else f_prev[act[f_prev_mask]]
        if method == "rk4":
            k2 = slope(th + d / 2, ya + d / 2 * k1, act)
            k3 = slope(th + d / 2, ya + d / 2 * k2, act)
            k4 = slope(th + d, ya + d * k3, act)
            ynew = ya + d / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        elif method == "heun":
            k2 = slope(th + d, ya + d * k1, act)
            ynew = ya + d / 2 * (k1 + k2)
        else:
            raise ValueError(f"unknown method {method!r}")
        guard(th + d, ynew, act)
        k_end = slope(th + d, ynew, act)
        if not diagnostics:
            y[act] = ynew
            f_prev, f_prev_mask = k_end, act
            continue
        # speed |T| sqrt(1 + a^2) by the trapezoid rule; chord tangency defect
        Ta = np.abs(T[act])
        sp0 = np.sqrt(Ta ** 2 + k1 ** 2)
        sp1 = np.sqrt(Ta ** 2 + k_end ** 2)
        length[act] += d * 0.5 * (sp0 + sp1)
        dy = ynew - ya
        kmid = slope(th + d / 2, 0.5 * (ya + ynew), act)
        chord = np.sqrt((Ta * d) ** 2 + dy ** 2)
        tang[act] = np.maximum(tang[act], np.abs(dy - d * kmid) / np.maximum(chord, 1e-300))
        y[act] = ynew
        f_prev, f_prev_mask = k_end, act
        if record:
            for j, b in enumerate(rows[act]):
                nodes[b].append(np.append(X0[b] + (k + 1) * dth[b] * E[b], ynew[j]))
    Xend = X0 + E
    return np.concatenate([Xend, y[:, None]], axis=1), length, tang, ok, nodes


def integrate(frame, idx, T, P0, h: float = DEFAULT_STEP, U: Box | None = None, method: str = "rk4",
              record: bool = False, richardson: bool = True, strict: bool = True,
              diagnostics: bool = True, steps: int | None = None) -> FlowBatch:
    """Flow ``P0[b]`` along ``X_{idx[b]}`` for signed time ``T[b]``.

    Each trajectory uses ``max(50, ceil(|T|/h))`` steps, so its result does not
    depend on the rest of the batch.  With ``richardson`` the same march is
    repeated at half the step and ``|y_h - y_{h/2}|`` is returned as the error
    estimate (the base-step endpoint is returned).  ``steps`` forces one step
    count for the whole batch.
    """
    P0 = np.atleast_2d(as_points(P0)).astype(float)
    B = len(P0)
    idx = np.broadcast_to(np.asarray(idx, dtype=int), (B,)).copy()
    T = np.broadcast_to(np.asarray(T, dtype=float), (B,)).copy()
    if B == 0:
        z = np.zeros(0)
        return FlowBatch(P0.copy(), z, z, z, np.zeros(0, dtype=bool), [] if record else None)
    X0, Y0 = P0[:, :-1], P0[:, -1]
    N = _steps(T, h) if steps is None else np.full(B, int(steps))
    pts, length, tang, ok, nodes = _march(frame, idx, T, X0, Y0, N, U, method, record, strict, diagnostics)
    err = np.zeros(B)
    if richardson:
        fine, _, _, _, _ = _march(frame, idx, T, X0, Y0, 2 * N, U, method, False, strict, False)
        err = np.abs(fine[:, -1] - pts[:, -1])
    return FlowBatch(pts, err, length, tang, ok, nodes)


@dataclass(frozen=True)
class FlowResult:
    point: np.ndarray
    error: float
    length: float
    tangency: float
    nodes: np.ndarray | None = None


def flow(frame, spec: FlowSpec, q, U: Box | None = None, method: str = "rk4", record: bool = False) -> FlowResult:
    """Endpoint of ``t -> exp(t s X_i)(q)`` for the duration and sign in ``spec``."""
    U = U if U is not None else frame.domain
    r = integrate(frame, spec.index, spec.signed, as_points(q)[None], spec.step, U, method, record)
    nodes = np.array(r.nodes[0]) if record else None
    return FlowResult(r.points[0], float(r.error[0]), float(r.length[0]), float(r.tangency[0]), nodes)


def flow_path(frame, specs, q, U: Box | None = None, method: str = "rk4", record: bool = False):
    """Concatenate flows; returns (endpoint, error, length, tangency, nodes or None)."""
    p = as_points(q).astype(float)
    err = length = tang = 0.0
    nodes = [p[None]] if record else None
    for s in specs:
        if s.duration == 0:
            continue
        r = flow(frame, s, p, U, method, record)
        p = r.point
        err += r.error
        length += r.length
        tang = max(tang, r.tangency)
        if record:
            nodes.append(r.nodes[1:])
    return p, err, length, tang, (np.concatenate(nodes) if record else None)


def compose_T_batch(frame, times, h: float = DEFAULT_STEP, U: Box | None = None, start=None,
                    richardson: bool = True, strict: bool = True):
    """``T(t) = exp(t_n X_n) o ... o exp(t_1 X_1)(start)`` for rows of ``times``."""
    times = np.atleast_2d(np.asarray(times, dtype=float))
    B, n = times.shape
    U = U if U is not None else frame.domain
    P = np.zeros((B, n + 1)) if start is None else np.tile(as_points(start), (B, 1))
    err = np.zeros(B)
    length = np.zeros(B)
    tang = np.zeros(B)
    ok = np.ones(B, dtype=bool)
    for i in range(n):
        r = integrate(frame, i, times[:, i], P, h, U, richardson=richardson, strict=strict)
        P, err, length = r.points, err + r.error, length + r.length
        tang = np.maximum(tang, r.tangency)
        ok &= r.ok
    return P, err, length, tang, ok


def compose_T(frame, times, h: float = DEFAULT_STEP, U: Box | None = None) -> np.ndarray:
    return compose_T_batch(frame, [times], h, U)[0][0]


# --------------------------------------------------------------------------
# accessible surface


@dataclass(frozen=True)
class SurfaceW:
    epsilon: float
    axes: tuple
    values: np.ndarray
    error: np.ndarray
    x_defect: float
    ctilde: float
    omega: Modulus

    @property
    def n(self) -> int:
        return len(self.axes)

    def grid_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ExtrapolationError("query outside the sampled surface")
        interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return interp(np.clip(x, lo, hi).reshape(-1, self.n)).reshape(x.shape[:-1])

    def bound_ratio(self) -> float:
        """``max |a(x)| / (|x| C omega(2|x|))`` over nonzero samples."""
        X = self.grid_points()
        s = x_l1(np.concatenate([X, np.zeros((len(X), 1))], axis=1))
        a = np.abs(self.values.reshape(-1))
        mask = s > 0
        bound = s[mask] * self.ctilde * self.omega(2 * s[mask])
        zero_ok = np.all(a[~mask] <= 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(bound > 0, a[mask] / bound, np.where(a[mask] > 0, np.inf, 0.0))
        return float(r.max()) if zero_ok else math.inf

    def bound_holds(self) -> bool:
        return self.bound_ratio() <= 1.0

    def rows(self) -> list:
        X = self.grid_points()
        return [list(t) + list(t) + [float(v)] for t, v in zip(X, self.values.reshape(-1))]

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "shape": list(self.values.shape), "max_error": float(self.error.max()),
                "x_defect": self.x_defect, "bound_ratio": self.bound_ratio(), "bound_holds": self.bound_holds()}


def build_W(frame, epsilon: float, k: int = 41, h: float = DEFAULT_STEP, U: Box | None = None,
            graph_tol: float = 1e-8) -> SurfaceW:
    """Sample ``T`` on a ``k^n`` grid of ``[-eps, eps]^n`` clipped to the chart domain."""
    U = U if U is not None else frame.domain
    n = frame.n
    axes = tuple(np.linspace(max(-epsilon, U.lo[i]), min(epsilon, U.hi[i]), k) for i in range(n))
    mesh = np.meshgrid(*axes, indexing="ij")
    t = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    P, err, _, _, _ = compose_T_batch(frame, t, h, U)
    x_def = float(np.max(np.abs(P[:, :-1] - t)))
    if x_def > graph_tol or err.max() > graph_tol:
        raise IntegrabilityError(f"graph check failed: x defect {x_def:.3e}, refinement gap {err.max():.3e}")
    shape = tuple(len(a) for a in axes)
    return SurfaceW(epsilon, axes, P[:, -1].reshape(shape), err.reshape(shape), x_def, frame.ctilde, frame.omega)


# --------------------------------------------------------------------------
# uniqueness probe


def _march_nodes(frame, i, T, p, thetas, method):
    x0 = p[:-1].copy()
    e = np.zeros_like(x0)
    e[i] = T
    y = float(p[-1])

    def f(th, yv):
        P = np.append(x0 + th * e, yv)[None]
        return T * float(frame.coeffs(P, check=False)[0, i])

    for th0, th1 in zip(thetas[:-1], thetas[1:]):
        d = th1 - th0
        k1 = f(th0, y)
        if method == "rk4":
            k2 = f(th0 + d / 2, y + d / 2 * k1)
            k3 = f(th0 + d / 2, y + d / 2 * k2)
            k4 = f(th1, y + d * k3)
            y = y + d / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            k2 = f(th1, y + d * k1)
            y = y + d / 2 * (k1 + k2)
    return y


@dataclass(frozen=True)
class FunnelReport:
    spread: float
    error_estimate: float
    endpoints: tuple
    trials: tuple

    @property
    def ratio(self) -> float:
        return self.spread / self.error_estimate if self.error_estimate > 0 else math.inf

    def to_json(self) -> dict:
        return {"spread": self.spread, "error_estimate": self.error_estimate, "ratio": self.ratio,
                "endpoints": list(self.endpoints), "trials": [list(t) for t in self.trials]}


def funnel_probe(frame, k: int, q, T: float, trials: int = 8, h: float = DEFAULT_STEP, tol: float = 1e-12,
                 seed: int = 0) -> FunnelReport:
    """Endpoint spread of the ``X_k`` curve from ``q`` under perturbed integrators.

    Trials alternate RK4 and Heun, on uniform or +-10% jittered step grids, with
    vertical offsets of at most ``tol`` (the first trial starts exactly at q).
    The error estimate is the largest Richardson gap among the trials plus
    the ``2 * tol`` spread of the starting offsets themselves.
    """
    rng = np.random.default_rng(seed)
    q = as_points(q).astype(float)
    N = int(max(MIN_STEPS, math.ceil(abs(T) / h)))
    ends, errs, desc = [], [], []
    for t in range(trials):
        method = "rk4" if t % 2 == 0 else "heun"
        jitter = (t // 2) % 2 == 1
        offset = 0.0 if t == 0 else tol * rng.uniform(-1, 1)
        if jitter:
            w = 1 + 0.1 * rng.uniform(-1, 1, N)
            thetas = np.concatenate([[0.0], np.cumsum(w) / w.sum()])
        else:
            thetas = np.linspace(0.0, 1.0, N + 1)
        fine = np.sort(np.concatenate([thetas, 0.5 * (thetas[:-1] + thetas[1:])]))
        p = q.copy()
        p[-1] += offset
        yb = _march_nodes(frame, k, T, p, thetas, method)
        yf = _march_nodes(frame, k, T, p, fine, method)
        ends.append(yb)
        errs.append(abs(yb - yf))
        desc.append((method, "jitter" if jitter else "uniform", offset))
    e = np.array(ends)
    return FunnelReport(float(e.max() - e.min()), float(max(errs)) + 2 * tol, tuple(float(v) for v in e), tuple(desc))

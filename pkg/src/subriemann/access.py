"""Vertical access by frame loops, the x-then-loop connector and the two-path bracket.

A loop ``(X_i, X_j, -X_i, -X_j)`` of side ``e`` returns to the same horizontal
position and moves ``y`` by about ``-e^2 dη(X_i, X_j) / eta(d/dy)``.  Shooting
solves for the side that produces a requested vertical gap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (Box, Cell2, Chain2, Curve, Modulus, as_points, check_boundary, integrate_chain1,
                     integrate_chain2, integrate_curve, polyline, sampled_extrema, segment)
from .flows import DEFAULT_STEP, MIN_STEPS, FlowSpec, compose_T_batch, flow, integrate


class RangeError(ValueError):
    """The requested vertical gap exceeds what loops up to ``eps_max`` reach."""


class SignLogicError(RuntimeError):
    """The loop displacement did not bracket the target (diagnostic)."""


class PreconditionError(ValueError):
    pass


# --------------------------------------------------------------------------
# paths


@dataclass
class AdmissiblePath:
    start: np.ndarray
    segments: list
    nodes: list
    end: np.ndarray
    euclidean_length: float
    g_length: float
    error: float
    tangency: float
    speed_sup: float

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def points(self) -> np.ndarray:
        if not self.nodes:
            return self.start[None]
        return np.concatenate([self.nodes[0]] + [nd[1:] for nd in self.nodes[1:]])

    def curves(self) -> list:
        return [polyline(nd) for nd in self.nodes]

    def to_json(self) -> dict:
        return {"start": self.start.tolist(), "end": self.end.tolist(),
                "segments": [s.to_json() for s in self.segments], "euclidean_length": self.euclidean_length,
                "g_length": self.g_length, "error": self.error, "tangency": self.tangency}


def build_path(frame, specs, start, U: Box | None = None, h: float = DEFAULT_STEP) -> AdmissiblePath:
    """Integrate a list of FlowSpecs, keeping every RK node."""
    p = as_points(start).astype(float)
    U = U if U is not None else frame.domain
    nodes, used = [], []
    elen = glen = err = tang = 0.0
    speed = 0.0
    for s in specs:
        if s.duration == 0:
            continue
        s = FlowSpec(s.index, s.sign, s.duration, h)
        r = flow(frame, s, p, U, record=True)
        nodes.append(r.nodes)
        used.append(s)
        d = np.diff(r.nodes, axis=0)
        sp = np.linalg.norm(d, axis=1) / (s.duration / (len(r.nodes) - 1))
        speed = max(speed, float(sp.max()))
        elen += r.length
        glen += s.duration if frame.metric == "frame" else r.length
        err += r.error
        tang = max(tang, r.tangency)
        p = r.point
    return AdmissiblePath(as_points(start).astype(float), used, nodes, p, elen, glen, err, tang, speed)


def _loop_specs(e: float, i: int, j: int, orientation: int) -> list:
    o = 1 if orientation >= 0 else -1
    return [FlowSpec(i, o, e), FlowSpec(j, 1, e), FlowSpec(i, -o, e), FlowSpec(j, -1, e)]


def loop_batch(frame, Q1, eps, i: int, j: int, orient, h: float = DEFAULT_STEP, U: Box | None = None,
               richardson: bool = False):
    """Endpoints of the four-leg loop for each row (vectorised); returns (points, error)."""
    Q1 = np.atleast_2d(as_points(Q1)).astype(float)
    B = len(Q1)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (B,))
    o = np.where(np.broadcast_to(orient, (B,)) >= 0, 1.0, -1.0)
    U = U if U is not None else frame.domain
    P = Q1
    err = np.zeros(B)
    steps = int(max(MIN_STEPS, math.ceil(float(np.max(np.abs(eps), initial=0.0)) / h)))
    for idx, T in ((i, o * eps), (j, eps), (i, -o * eps), (j, -eps)):
        r = integrate(frame, idx, T, P, h, U, richardson=richardson, diagnostics=False, steps=steps)
        P, err = r.points, err + r.error
    return P, err


def loop_endpoint(frame, q1, eps_tilde: float, i: int = 0, j: int = 1, orientation: int = 1,
                  h: float = DEFAULT_STEP, U: Box | None = None) -> np.ndarray:
    """Endpoint of the loop ``X_i, X_j, -X_i, -X_j`` (``X_i`` reversed when orientation < 0)."""
    return loop_batch(frame, q1, eps_tilde, i, j, orientation, h, U)[0][0]


def predicted_sign(pair, frame, q, i: int, j: int) -> float:
    """Sign of the vertical loop displacement for orientation +1."""
    B = frame.deta_frame(as_points(q)[None])[0]
    a0 = float(pair.eta.a0(as_points(q)[None])[0])
    return float(np.sign(-B[i, j] / a0))


@dataclass
class ShootResult:
    eps_tilde: np.ndarray
    orientation: np.ndarray
    gap_error: np.ndarray
    rounds: int


def shoot_batch(frame, Q1, dy, eps_max, i: int = 0, j: int = 1, pair=None, h: float = DEFAULT_STEP,
                U: Box | None = None, tol: float = 1e-10, max_iter: int = 60, sections: int = 31) -> ShootResult:
    """Solve ``loop(e) - q1 = dy`` for ``e`` in ``[0, eps_max]`` row by row.

    Each round evaluates ``sections`` interior candidates per row and keeps the
    sub-interval where the displacement first reaches the target, which is a
    bisection that halves the bracket ``log2(sections + 1)`` times per round.
    """
    Q1 = np.atleast_2d(as_points(Q1)).astype(float)
    B = len(Q1)
    dy = np.broadcast_to(np.asarray(dy, dtype=float), (B,)).copy()
    eps_max = np.broadcast_to(np.asarray(eps_max, dtype=float), (B,)).copy()
    if pair is not None:
        s = np.array([predicted_sign(pair, frame, q, i, j) for q in Q1])
    else:
        P, _ = loop_batch(frame, Q1, eps_max, i, j, 1, h, U)
        s = np.sign(P[:, -1] - Q1[:, -1])
    if np.any(s == 0):
        raise SignLogicError("loop displacement has no definite sign")
    orient = np.where(dy >= 0, 1.0, -1.0) * s
    target = np.abs(dy)
    live = target > 0
    top_pts, _ = loop_batch(frame, Q1[live], eps_max[live], i, j, orient[live], h, U)
    reach = np.abs(top_pts[:, -1] - Q1[live, -1])
    if np.any(reach < target[live]):
        k = np.flatnonzero(live)[np.argmin(reach - target[live])]
        raise RangeError(f"target gap {target[k]:.6g} exceeds loop reach {reach.min():.6g} at eps_max {eps_max[k]:.6g}")
    lo = np.zeros(B)
    hi = np.where(live, eps_max, 0.0)
    best = hi.copy()
    gap = np.zeros(B)
    gap[live] = np.abs(reach - target[live])
    per_round = math.log2(sections + 1)
    rounds = 0
    frac = np.arange(1, sections + 1) / (sections + 1)
    while rounds * per_round < max_iter:
        act = live & (gap > tol) & (hi - lo > 1e-16 * np.maximum(eps_max, 1e-300))
        if not act.any():
            break
        rounds += 1
        rows = np.flatnonzero(act)
        cand = lo[rows, None] + (hi[rows] - lo[rows])[:, None] * frac[None, :]
        Qr = np.repeat(Q1[rows], sections, axis=0)
        P, _ = loop_batch(frame, Qr, cand.reshape(-1), i, j, np.repeat(orient[rows], sections), h, U)
        D = np.abs(P[:, -1] - Qr[:, -1]).reshape(len(rows), sections)
        over = D >= target[rows, None]
        first = np.where(over.any(axis=1), over.argmax(axis=1), sections)
        for r, k, f in zip(rows, range(len(rows)), first):
            new_lo = lo[r] if f == 0 else cand[k, f - 1]
            new_hi = hi[r] if f == sections else cand[k, f]
            lo[r], hi[r] = new_lo, new_hi
            err = np.abs(D[k] - target[r])
            m = int(np.argmin(err))
            if err[m] < gap[r]:
                gap[r], best[r] = err[m], cand[k, m]
    if np.any(gap[live] > tol) and rounds * per_round < max_iter:
        raise SignLogicError("bisection stalled without meeting the gap tolerance")
    best = np.where(live, best, 0.0)
    return ShootResult(best, orient, gap, rounds)


def shoot_loop(frame, q1, target, eps_max: float, i: int = 0, j: int = 1, pair=None, h: float = DEFAULT_STEP,
               U: Box | None = None, tol: float = 1e-10):
    """Loop side ``e`` (and the loop path) carrying ``q1`` vertically onto ``target``."""
    q1 = as_points(q1).astype(float)
    target = as_points(target).astype(float)
    if np.max(np.abs(target[:-1] - q1[:-1])) > 1e-12:
        raise PreconditionError("target must lie on the vertical line through q1")
    r = shoot_batch(frame, q1, target[-1] - q1[-1], eps_max, i, j, pair, h, U, tol)
    e = float(r.eps_tilde[0])
    specs = _loop_specs(e, i, j, int(r.orientation[0])) if e > 0 else []
    path = build_path(frame, specs, q1, U, h)
    return e, path


# --------------------------------------------------------------------------
# connector


def tau_specs(x) -> list:
    """Coordinate-ordered legs ``X_1`` by ``x_1``, then ``X_2`` by ``x_2``, ..."""
    return [FlowSpec(k, 1 if v >= 0 else -1, abs(float(v))) for k, v in enumerate(np.asarray(x, dtype=float))]


@dataclass
class ConnectResult:
    target: np.ndarray
    q1: np.ndarray
    eps_tilde: float
    orientation: float
    g_length: float
    tau_length: float
    loop_length: float
    endpoint: np.ndarray
    miss: float
    budget: float

    @property
    def within_budget(self) -> bool:
        return self.g_length <= self.budget

    def to_json(self) -> dict:
        return {"target": self.target.tolist(), "q1": self.q1.tolist(), "eps_tilde": self.eps_tilde,
                "g_length": self.g_length, "tau_length": self.tau_length, "loop_length": self.loop_length,
                "miss": self.miss, "budget": self.budget}


def connect_batch(frame, targets, epsilon: float, pair=None, W=None, d_g: float = 1.0, i: int = 0, j: int = 1,
                  h: float = DEFAULT_STEP, U: Box | None = None, slack: float = 0.05) -> list:
    """Connect 0 to each target by ``tau`` then a shot loop; budget ``(1 + slack) * epsilon``."""
    Pt = np.atleast_2d(as_points(targets)).astype(float)
    n = Pt.shape[1] - 1
    Q1, _, tau_len, _, _ = compose_T_batch(frame, Pt[:, :n], h, U, richardson=False)
    if W is not None:
        w = np.asarray(W(Pt[:, :n]))
        if np.max(np.abs(w - Q1[:, -1])) > 1e-6:
            raise PreconditionError("surface W disagrees with the composed flows")
    eps_max = epsilon / (16 * d_g)
    sh = shoot_batch(frame, Q1, Pt[:, -1] - Q1[:, -1], eps_max, i, j, pair, h, U)
    # loop length: the four legs recomputed with length diagnostics
    loop_len = np.zeros(len(Pt))
    P = Q1
    o = sh.orientation
    e = sh.eps_tilde
    for idx, T in ((i, o * e), (j, e), (i, -o * e), (j, -e)):
        r = integrate(frame, idx, T, P, h, U, richardson=False)
        P = r.points
        loop_len += np.where(e > 0, r.length, 0.0)
    if frame.metric == "frame":
        tau_len = np.sum(np.abs(Pt[:, :n]), axis=1)
        loop_len = 4 * e
    out = []
    for k in range(len(Pt)):
        g = float(tau_len[k] + loop_len[k])
        out.append(ConnectResult(Pt[k], Q1[k], float(e[k]), float(o[k]), g, float(tau_len[k]), float(loop_len[k]),
                                 P[k], float(np.abs(P[k] - Pt[k]).max()), (1 + slack) * epsilon))
    return out


def connect(frame, W, p, eps_budget: float, pair=None, d_g: float = 1.0, h: float = DEFAULT_STEP,
            U: Box | None = None) -> ConnectResult:
    return connect_batch(frame, [p], eps_budget, pair, W, d_g, h=h, U=U, slack=0.0)[0]


# --------------------------------------------------------------------------
# parallelogram and the two-path bracket


def parallelogram_cell(q, Xi, Xj, eps: float, mesh: int = 8) -> Cell2:
    q, Xi, Xj = (as_points(v) for v in (q, Xi, Xj))
    fn = lambda u, w: q + eps * (np.asarray(u)[:, None] * Xi + np.asarray(w)[:, None] * Xj)
    jac = lambda u, w: (np.tile(eps * Xi, (len(u), 1)), np.tile(eps * Xj, (len(u), 1)))
    return Cell2(fn, jac, 1, (mesh, mesh))


def parallelogram_integral(pair, frame, q, i: int, j: int, eps: float, mesh: int = 8) -> float:
    """``int dη`` over the frozen-frame cell ``q + eps (u X_i(q) + w X_j(q))``."""
    V = frame.vectors(as_points(q)[None])[0]
    return integrate_chain2(pair.deta, Chain2((parallelogram_cell(q, V[i], V[j], eps, mesh),)))


def _cone_cell(a, b, apex, sign: int, mesh: int) -> Cell2:
    fn = lambda u, w: (a + np.asarray(u)[:, None] * (b - a)) * (1 - np.asarray(w)[:, None]) + np.asarray(w)[:, None] * apex
    jac = lambda u, w: ((1 - np.asarray(w))[:, None] * (b - a),
                        apex - (a + np.asarray(u)[:, None] * (b - a)))
    return Cell2(fn, jac, sign, (mesh, mesh))


def gromov_fill(cycle, mesh: int = 4, c: float = 0.5, delta: float = math.inf, tol: float = 1e-9) -> Chain2:
    """Cone a closed planar polyline cycle to its length-weighted barycenter.

    ``cycle`` is a closed vertex array or a list of ``(vertices, sign)`` pieces
    whose signed sum is closed.  The result records ``area``, ``length`` and
    whether ``area <= c * length^2``.
    """
    pieces = [(as_points(cycle), 1)] if not isinstance(cycle, list) else [(as_points(v), s) for v, s in cycle]
    edges = []
    for V, s in pieces:
        for a, b in zip(V[:-1], V[1:]):
            if np.any(a != b):
                edges.append((a, b, s))
    if not edges:
        return Chain2((), {"area": 0.0, "length": 0.0, "bound_ok": True})
    disp = sum(s * (b - a) for a, b, s in edges)
    L = float(sum(np.linalg.norm(b - a) for a, b, _ in edges))
    if np.max(np.abs(disp)) > tol * max(L, 1.0):
        raise ValueError("gromov_fill needs a closed cycle")
    if L > delta:
        raise ValueError(f"cycle length {L:.6g} exceeds the filling range {delta:.6g}")
    w = np.array([np.linalg.norm(b - a) for a, b, _ in edges])
    mids = np.array([(a + b) / 2 for a, b, _ in edges])
    apex = (w[:, None] * mids).sum(axis=0) / w.sum()
    cells = tuple(_cone_cell(a, b, apex, s, mesh) for a, b, s in edges)
    chain = Chain2(cells)
    area = chain.area()
    reach = max(float(np.linalg.norm(a - apex)) for a, _, _ in edges)
    return Chain2(cells, {"area": area, "length": L, "apex": apex, "bound_ok": area <= c * L * L,
                          "within_neighbourhood": reach <= L})


def _ruled_cells(path: AdmissiblePath, q, a_q, refine: int, mt: int) -> tuple:
    """Cells ``v(t, s) = alpha(s) + t (gamma(s) - alpha(s))``, t first, one per leg."""
    n = len(a_q)
    cells = []
    for nd in path.nodes:
        G = nd
        A = nd.copy()
        A[:, -1] = q[-1] + (nd[:, :n] - q[:n]) @ a_q
        K = len(nd) - 1
        dG = np.diff(G, axis=0)
        dA = np.diff(A, axis=0)

        def locate(w, K=K):
            k = np.minimum(np.floor(np.asarray(w) * K).astype(int), K - 1)
            return k, np.asarray(w) * K - k

        def fn(u, w, G=G, A=A, dG=dG, dA=dA, locate=locate):
            k, lam = locate(w)
            g = G[k] + lam[:, None] * dG[k]
            a = A[k] + lam[:, None] * dA[k]
            return a + np.asarray(u)[:, None] * (g - a)

        def jac(u, w, G=G, A=A, dG=dG, dA=dA, K=K, locate=locate):
            k, lam = locate(w)
            g = G[k] + lam[:, None] * dG[k]
            a = A[k] + lam[:, None] * dA[k]
            u = np.asarray(u)[:, None]
            return g - a, K * (dA[k] + u * (dG[k] - dA[k]))

        cells.append(Cell2(fn, jac, 1, (mt, K * refine)))
    return tuple(cells)


def alpha_vertices(path: AdmissiblePath, q, a_q) -> np.ndarray:
    n = len(a_q)
    V = [path.start] + [nd[-1] for nd in path.nodes]
    V = np.array(V, dtype=float)
    V[:, -1] = q[-1] + (V[:, :n] - q[:n]) @ a_q
    return V


@dataclass(frozen=True)
class LocalBounds:
    """Sup/inf over a box of the quantities entering the two-path bracket."""

    eta_dy_inf: float
    eta_dy_sup: float
    deta_sup: float
    X_sup: float
    wedge_top_inf: float
    ctilde: float
    omega: Modulus

    @classmethod
    def estimate(cls, pair, frame, box: Box | None = None, grid: int = 17, inflate: bool = True) -> "LocalBounds":
        from .fields import form_norm_2
        U = box or frame.domain
        mod = frame.omega
        e = lambda fn: sampled_extrema(fn, U, grid, mod, inflate)
        dy = e(lambda P: np.abs(pair.eta.a0(P)))
        ds = e(lambda P: form_norm_2(pair.deta.matrix(P)))
        xs = e(lambda P: np.sqrt(1 + frame.coeffs(P) ** 2).reshape(len(P), -1))
        return cls(dy.inf, dy.sup, ds.sup, xs.sup, 1.0, frame.ctilde, mod)


@dataclass
class Prop22Report:
    q1: np.ndarray
    q2: np.ndarray
    gap: float
    int_P: float
    c: float
    c_bound: float
    xi: float
    ell: float
    eps: float
    int_beta: float
    tangency_term: float
    lower: float
    upper: float
    slack: float
    identity_residual: float

    @property
    def bound_slack(self) -> float:
        # the identity holds exactly, so its residual measures the quadrature error directly
        return self.slack + self.identity_residual

    @property
    def bracket_ok(self) -> bool:
        return self.lower - self.bound_slack <= self.gap <= self.upper + self.bound_slack

    @property
    def c_bound_ok(self) -> bool:
        return abs(self.c) <= self.c_bound + self.bound_slack

    @property
    def sign_determinate(self) -> bool:
        return abs(self.int_P + self.c) > self.slack and abs(self.int_beta) > self.slack

    @property
    def sign_ok(self) -> bool:
        if not self.sign_determinate:
            return abs(self.int_beta) <= 2 * self.slack and abs(self.int_P + self.c) <= 2 * self.slack
        return np.sign(self.int_beta) == np.sign(self.int_P + self.c)

    @property
    def identity_ok(self) -> bool:
        return self.identity_residual <= self.slack

    @property
    def passed(self) -> bool:
        return self.bracket_ok and self.c_bound_ok and self.sign_ok and self.identity_ok

    def to_json(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if not isinstance(v, np.ndarray)}
        out.update(q1=self.q1.tolist(), q2=self.q2.tolist(), bracket_ok=self.bracket_ok,
                   c_bound_ok=self.c_bound_ok, sign_ok=self.sign_ok, sign_determinate=self.sign_determinate,
                   identity_ok=self.identity_ok, passed=self.passed)
        return out


def _prop22_integrals(pair, frame, g1, g2, q, a_q, refine):
    A1, A2 = alpha_vertices(g1, q, a_q), alpha_vertices(g2, q, a_q)
    P = gromov_fill([(A1, 1), (A2, -1)], mesh=4 * refine)
    C1 = _ruled_cells(g1, q, a_q, refine, 4 * refine)
    C2 = tuple(cl.reversed() for cl in _ruled_cells(g2, q, a_q, refine, 4 * refine))
    int_P = integrate_chain2(pair.deta, P)
    c = integrate_chain2(pair.deta, Chain2(C1 + C2))
    beta = segment(g1.end, g2.end, mesh=16 * refine)
    int_beta = integrate_curve(pair.eta, beta)
    tan = (integrate_chain1(pair.eta, [cv.with_mesh(cv.mesh * refine) for cv in g1.curves()])
           - integrate_chain1(pair.eta, [cv.with_mesh(cv.mesh * refine) for cv in g2.curves()]))
    return P, C1, C2, beta, int_P, c, int_beta, tan


def verify_prop22(pair, frame, gamma1: AdmissiblePath, gamma2: AdmissiblePath, bounds: LocalBounds | None = None,
                  U: Box | None = None, check_chains: bool = True) -> Prop22Report:
    """Evaluate both sides of the two-path bracket and the sign identity.

    The chains are oriented so that ``int_beta eta = int_P deta + c`` up to the
    polyline tangency term, with ``c = int_{C1} deta - int_{C2} deta``.
    """
    q = gamma1.start
    if np.max(np.abs(gamma2.start - q)) > 0:
        raise PreconditionError("paths must start at the same point")
    n = len(q) - 1
    if np.max(np.abs(gamma1.end[:n] - gamma2.end[:n])) > 1e-12:
        raise PreconditionError("endpoints must share horizontal coordinates")
    ell = max(gamma1.euclidean_length, gamma2.euclidean_length)
    chart = frame.domain
    U = U or chart
    from .bundle import free_radius
    if free_radius(U, chart, q) < 2 * ell:
        raise PreconditionError("ball B(q, 2 ell) is not inside U")
    bounds = bounds or LocalBounds.estimate(pair, frame, U)
    a_q = frame.coeffs(q[None])[0]
    # the refined values are reported; the halving change sets the slack
    _, _, _, _, int_P1, c1, int_beta1, tan1 = _prop22_integrals(pair, frame, gamma1, gamma2, q, a_q, 1)
    P, C1, C2, beta, int_P, c, int_beta, tan = _prop22_integrals(pair, frame, gamma1, gamma2, q, a_q, 2)
    if check_chains:
        cyc = gamma1.curves() + [beta] + [cv.reversed() for cv in gamma2.curves()]
        check_boundary(cyc, Chain2(tuple(C1) + tuple(C2) + P.cells))
    eps = max(gamma1.duration, gamma2.duration)
    xi = max(n * (n * bounds.X_sup) ** n / bounds.wedge_top_inf * g.speed_sup * bounds.ctilde
             * float(bounds.omega(ell)) for g in (gamma1, gamma2))
    c_bound = 4 * ell * eps * xi * bounds.deta_sup
    gap = float(abs(gamma1.end[-1] - gamma2.end[-1]))
    slack = (2 * (abs(int_P1 - int_P) + abs(c1 - c) + abs(int_beta1 - int_beta) + abs(tan1 - tan))
             + abs(tan) + 1e-13 * (1 + abs(int_P)))
    lower = (abs(int_P) - abs(c)) / bounds.eta_dy_sup
    upper = (abs(int_P) + abs(c)) / bounds.eta_dy_inf
    resid = abs(int_beta - (int_P + c - tan))
    return Prop22Report(gamma1.end, gamma2.end, gap, int_P, c, c_bound, xi, ell, eps, int_beta, tan,
                        lower, upper, slack, resid)


def _legs_in_box(rng, x, legs, U: Box):
    """Flip a leg's sign whenever it would leave ``U`` horizontally; drop it if neither way fits."""
    out = []
    x = x.copy()
    for k, d in legs:
        if not U.lo[k] <= x[k] + d <= U.hi[k]:
            d = -d
            if not U.lo[k] <= x[k] + d <= U.hi[k]:
                continue
        x[k] += d
        out.append((k, d))
    return out, x


def random_pair(frame, rng: np.random.Generator, U: Box | None = None, eps_max: float = 0.1,
                max_segments: int = 6, h: float = DEFAULT_STEP, face=None):
    """Two admissible paths from a common start with the same horizontal endpoint.

    The first path is a random piecewise-constant control with total duration
    at most ``eps_max``.  The second reaches the same ``x`` by coordinate legs
    in random order, sometimes with an out-and-back detour.  With ``face``
    (a Face), a quarter of the starts are put on it.
    """
    U = U if U is not None else frame.domain
    n = frame.n
    q = U.sample(rng, 1)[0]
    q[-1] = 0.5 * q[-1]
    if face is not None and rng.random() < 0.25:
        q[face.axis] = face.value
    total = eps_max * rng.uniform(0.2, 1.0)
    m = int(rng.integers(1, max_segments + 1))
    w = rng.exponential(size=m)
    legs = [(int(rng.integers(n)), float(v) * rng.choice([-1.0, 1.0])) for v in total * w / w.sum()]
    legs1, x_end = _legs_in_box(rng, q[:n], legs, U)
    detour = []
    if rng.random() < 0.5:
        detour = [(int(rng.integers(n)), float(rng.uniform(0.1, 0.3) * total))]
    order = rng.permutation(n)
    legs2 = detour + [(int(k), float(x_end[k] - q[k])) for k in order]
    if detour:
        legs2.append((detour[0][0], -detour[0][1]))
    x = q[:n].copy()
    for k, d in legs2:
        x[k] += d
        if not U.lo[k] <= x[k] <= U.hi[k]:
            legs2 = [(int(k), float(x_end[k] - q[k])) for k in order]
            break
    specs = lambda L: [FlowSpec(k, 1 if d >= 0 else -1, abs(d)) for k, d in L if d != 0]
    g1 = build_path(frame, specs(legs1), q, U, h)
    g2 = build_path(frame, specs(legs2), q, U, h)
    return g1, g2

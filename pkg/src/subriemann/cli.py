"""Command-line front end: ``subriemann <subcommand> [options]``.

Exit codes: 0 pass, 1 verification failure, 2 precondition or degenerate
bundle, 3 I/O error.  Reports are JSON, point data CSV, figures SVG.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import gallery
from .access import LocalBounds, PreconditionError, RangeError, random_pair, shoot_loop, verify_prop22
from .ballbox import diamond_radius, verify_inclusions
from .bundle import BundleError, fix_domain
from .fields import DomainError, curve_rows, write_rows_csv
from .flows import IntegrabilityError, build_W, compose_T_batch

EXIT_PASS, EXIT_FAIL, EXIT_PRECONDITION, EXIT_IO = 0, 1, 2, 3


def _clean(v):
    """JSON-ready copy with floats at 12 significant digits."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return float(f"{v:.12g}")
    return v


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2)


def _emit(args, report: dict, name: str) -> None:
    report = dict(report, config=_config(args))
    text = dumps(report)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}


def _threads(args) -> int:
    env = os.environ.get("SUBRIEMANN_THREADS")
    return int(env) if env else int(args.threads)


# --------------------------------------------------------------------------
# SVG


class Figure:
    """Minimal SVG canvas in data coordinates (polylines and filled polygons)."""

    def __init__(self, xlim, ylim, width=640, height=480, title=""):
        self.xlim, self.ylim = xlim, ylim
        self.w, self.h = width, height
        self.items = []
        self.title = title

    def _map(self, P):
        P = np.asarray(P, dtype=float)
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        u = 40 + (P[:, 0] - x0) / (x1 - x0) * (self.w - 80)
        v = self.h - 40 - (P[:, 1] - y0) / (y1 - y0) * (self.h - 80)
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(u, v))

    def polyline(self, P, stroke="black", width=1.0):
        self.items.append(f'<polyline points="{self._map(P)}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def polygon(self, P, fill="gray", opacity=0.3, stroke="none"):
        self.items.append(f'<polygon points="{self._map(P)}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"/>')

    def dots(self, P, fill="black", r=1.0):
        for a in self._map(P).split():
            u, v = a.split(",")
            self.items.append(f'<circle cx="{u}" cy="{v}" r="{r}" fill="{fill}"/>')

    def save(self, path):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}">'
                f'<rect width="100%" height="100%" fill="white"/>'
                f'<text x="40" y="24" font-family="sans-serif" font-size="14">{self.title}</text>')
        Path(path).write_text(head + "".join(self.items) + "</svg>\n")


def _colour(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    return f"rgb({int(255 * t)},{int(80 + 100 * (1 - abs(2 * t - 1)))},{int(255 * (1 - t))})"


# --------------------------------------------------------------------------
# subcommands


def cmd_gallery(args) -> int:
    _emit(args, {"entries": [gallery.get(n).describe() for n in gallery.names()]}, "gallery.json")
    return EXIT_PASS


def _fixed(args):
    entry = gallery.get(args.bundle)
    frame = entry.frame()
    p0 = np.array(args.point, dtype=float) if args.point else None
    return entry, frame, fix_domain(entry.pair, frame, p0, inflate=not args.no_inflate, seed=args.seed)


def cmd_constants(args) -> int:
    _, _, fd = _fixed(args)
    _emit(args, fd.to_json(), "constants.json")
    return EXIT_PASS


def cmd_ballbox(args) -> int:
    entry, frame, fd = _fixed(args)
    C = fd.constants
    rep = verify_inclusions(entry.pair, frame, None, C, args.epsilon, args.samples, args.mc, args.seed,
                            args.enforce_hypothesis, U=fd.box)
    _emit(args, rep.to_json(), "ballbox.json")
    if args.out:
        out = Path(args.out)
        n = C.n
        write_rows_csv(out / "lower.csv", [[0, 0.0, 0.0] + list(p) for p in rep.lower_points], n)
        write_rows_csv(out / "reached.csv", [[1, 0.0, 0.0] + list(p) for p in rep.upper_points], n)
        _ballbox_figure(frame, C, rep, fd.box, out)
    if not rep.passed:
        print(f"FAIL witness {dumps(rep.witness())}", file=sys.stderr)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _ballbox_figure(frame, C, rep, U, out: Path) -> None:
    """x1-y slice: D filled inside, H outline, W through the middle, reached points projected."""
    n, eps = C.n, rep.epsilon
    e_d = eps / (4 * C.d_g)
    e_h = 2 * n * C.d_g * eps
    r = diamond_radius(C.K1, e_d, C.ctilde, C.omega)
    s = np.linspace(-r, r, 201)
    top = C.K1 * (e_d - np.abs(s)) ** 2 - np.abs(s) * C.ctilde * C.omega(2 * np.abs(s))
    D = np.concatenate([np.column_stack([s, top]), np.column_stack([s[::-1], -top[::-1]])])
    pts = rep.upper_points[:, [0, -1]]
    xr = max(float(np.abs(pts[:, 0]).max()), r) * 1.1
    yr = max(float(np.abs(pts[:, 1]).max()), float(top.max())) * 1.1
    sh = np.linspace(-min(e_h, xr), min(e_h, xr), 201)
    hb = C.K2 * e_h ** 2 + np.abs(sh) * C.ctilde * C.omega(2 * np.abs(sh))
    t = np.zeros((len(sh), n))
    t[:, 0] = np.clip(sh, U.lo[0], U.hi[0])
    Wp, _, _, _, _ = compose_T_batch(frame, t, U=U, richardson=False)
    fig = Figure((-xr, xr), (-yr, yr), title=f"x1-y slice, epsilon={eps:g}")
    fig.polygon(np.column_stack([sh, np.minimum(hb, yr)]).tolist() + np.column_stack([sh[::-1], -np.minimum(hb, yr)[::-1]]).tolist(),
                fill="orange", opacity=0.15, stroke="orange")
    fig.dots(pts[:2000], fill="steelblue", r=0.8)
    fig.polygon(D, fill="green", opacity=0.5, stroke="darkgreen")
    fig.polyline(np.column_stack([Wp[:, 0], Wp[:, -1]]), stroke="black", width=1.5)
    fig.save(out / "crosssection.svg")
    rows = [[0, float(a), 0.0, float(a)] + [0.0] * (n - 1) + [float(b)] for a, b in zip(s, top)]
    rows += [[1, float(a), 0.0, float(a)] + [0.0] * (n - 1) + [float(b)] for a, b in zip(sh, hb)]
    write_rows_csv(out / "boundaries.csv", rows, n)


def cmd_shoot(args) -> int:
    entry = gallery.get(args.bundle)
    frame = entry.frame()
    q1 = np.array(args.point, dtype=float) if args.point else np.zeros(frame.n + 1)
    target = q1.copy()
    target[-1] += args.dy
    eps, path = shoot_loop(frame, q1, target, args.eps_max, args.i - 1, args.j - 1, entry.pair)
    miss = float(np.abs(path.end - target).max()) if eps > 0 else abs(args.dy)
    ok = miss <= args.tol
    _emit(args, {"eps_tilde": eps, "target": target, "miss": miss, "passed": ok, "path": path.to_json()},
          "shoot.json")
    if args.out:
        write_rows_csv(Path(args.out) / "path.csv", curve_rows(path.curves()), frame.n)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_prop22(args) -> int:
    entry = gallery.get(args.bundle)
    frame = entry.frame()
    rng = np.random.default_rng(args.seed)
    bounds = LocalBounds.estimate(entry.pair, frame, entry.domain)
    reports = []
    for _ in range(args.pairs):
        g1, g2 = random_pair(frame, rng, entry.domain, args.eps_max, face=entry.face)
        reports.append(verify_prop22(entry.pair, frame, g1, g2, bounds, entry.domain).to_json())
    keys = ("bracket_ok", "sign_ok", "c_bound_ok", "identity_ok", "passed")
    summary = {k: sum(r[k] for r in reports) for k in keys}
    ok = summary["passed"] == args.pairs
    _emit(args, {"bundle": entry.name, "pairs": args.pairs, "summary": summary, "passed": ok, "reports": reports},
          "prop22.json")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_surface(args) -> int:
    entry = gallery.get(args.bundle)
    frame = entry.frame()
    W = build_W(frame, args.epsilon, args.k)
    rep = W.to_json()
    _emit(args, rep, "surface.json")
    if args.out:
        out = Path(args.out)
        n = W.n
        with open(out / "surface.csv", "w") as fh:
            fh.write(",".join([f"t{i + 1}" for i in range(n)] + [f"x{i + 1}" for i in range(n)] + ["y"]) + "\n")
            for row in W.rows():
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
        if n == 2:
            _heightmap(W, out / "surface.svg")
    return EXIT_PASS if rep["bound_holds"] else EXIT_FAIL


def _heightmap(W, path) -> None:
    ax, ay = W.axes
    v = W.values
    span = float(np.abs(v).max()) or 1.0
    fig = Figure((ax[0], ax[-1]), (ay[0], ay[-1]), 520, 520, f"W heightmap, |y| <= {span:.3g}")
    for i in range(len(ax) - 1):
        for j in range(len(ay) - 1):
            t = 0.5 + 0.5 * float(v[i:i + 2, j:j + 2].mean()) / span
            fig.polygon([(ax[i], ay[j]), (ax[i + 1], ay[j]), (ax[i + 1], ay[j + 1]), (ax[i], ay[j + 1])],
                        fill=_colour(t), opacity=1.0)
    fig.save(path)


def cmd_stokes(args) -> int:
    entry = gallery.get(args.bundle)
    meshes = tuple(16 * 2 ** k for k in range(args.refine))
    cert = entry.certified(args.cells, meshes, args.seed, _threads(args))
    ok = cert.order >= 1.9 and (not entry.smooth or cert.residual <= 1e-6)
    rep = {"bundle": entry.name, "smooth": entry.smooth, "passed": ok,
           "table": [{"mesh": m, "residual": r} for m, r in zip(cert.meshes, cert.residuals)], **cert.to_json()}
    _emit(args, rep, "stokes.json")
    return EXIT_PASS if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for JSON, CSV and SVG outputs")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument("--threads", type=int, default=1)

    p = argparse.ArgumentParser(prog="subriemann", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(func=func)
        return s

    def bundle(s, default="heisenberg"):
        s.add_argument("--bundle", default=default, help="gallery entry name")

    s = add("constants", cmd_constants, "fix a domain and print its constants")
    bundle(s)
    s.add_argument("--point", type=float, nargs="+")
    s.add_argument("--no-inflate", action="store_true")

    s = add("ballbox", cmd_ballbox, "check the diamond / hourglass inclusions")
    bundle(s)
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--samples", type=int, default=20, help="strata per side of the diamond sample")
    s.add_argument("--mc", type=int, default=10_000, help="random admissible endpoints")
    s.add_argument("--point", type=float, nargs="+")
    s.add_argument("--no-inflate", action="store_true")
    s.add_argument("--enforce-hypothesis", action="store_true")

    s = add("shoot", cmd_shoot, "shoot a frame loop onto a vertical target")
    bundle(s)
    s.add_argument("--dy", type=float, required=True)
    s.add_argument("--point", type=float, nargs="+")
    s.add_argument("--eps-max", type=float, default=0.25)
    s.add_argument("--i", type=int, default=1)
    s.add_argument("--j", type=int, default=2)

    s = add("prop22", cmd_prop22, "two-path bracket on random admissible pairs")
    bundle(s)
    s.add_argument("--pairs", type=int, default=100)
    s.add_argument("--eps-max", type=float, default=0.1)

    s = add("surface", cmd_surface, "sample the accessible surface W")
    bundle(s, "paper:sqrt")
    s.add_argument("--epsilon", type=float, default=0.2)
    s.add_argument("--k", type=int, default=41)

    s = add("stokes", cmd_stokes, "Stokes residual table under mesh refinement")
    bundle(s)
    s.add_argument("--refine", type=int, default=4, help="number of meshes 16, 32, ...")
    s.add_argument("--cells", type=int, default=50)

    g = add("gallery", cmd_gallery, "gallery commands")
    g.add_argument("action", choices=["list"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, PreconditionError, RangeError, DomainError, IntegrabilityError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

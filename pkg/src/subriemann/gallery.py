"""Example bundles with analytic continuous differentials.

Chart convention for the non-smooth examples: the first horizontal
coordinate ``x1`` plays the role of the smooth variable ``z`` and ``x2`` the
role of the variable ``x`` whose square root (or inverse logarithm) appears in
the coefficients, so the non-differentiable face is ``x2 = 0``.  With this
ordering the density of ``eta ^ deta`` against ``dx1 ^ dx2 ^ dy`` at the origin
is ``+exp(2^(2/3))``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .fields import (Box, CEDPair, Certification, Face, Modulus, OneForm, ScalarField, TwoForm, certify, paste,
                     random_cell)

PAPER_DOMAIN = Box((-0.6, 0.0, -0.6), (0.6, 0.6, 0.6))


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    pair: CEDPair
    modulus: Modulus
    ctilde: float | None = None
    face: Face | None = None
    smooth: bool = True
    oracles: Mapping = field(default_factory=dict)
    notes: tuple = ()

    @property
    def domain(self) -> Box:
        return self.pair.domain

    def frame(self, **kw):
        from .bundle import adapted_frame
        kw.setdefault("ctilde", self.ctilde)
        kw.setdefault("omega", self.modulus)
        return adapted_frame(self.pair, **kw)

    def certification_cells(self, count: int = 50, seed: int = 0, mesh: int = 16) -> list:
        """Random curved cells; with a face, half of them touch it with graded parameters."""
        rng = np.random.default_rng(seed)
        dom = self.domain
        if self.face is None:
            return [random_cell(rng, dom, mesh=mesh) for _ in range(count)]
        lo = list(dom.lo)
        lo[self.face.axis] = self.face.value + 0.1
        inner = Box(tuple(lo), dom.hi)
        half = count // 2
        return ([random_cell(rng, dom, face=self.face, mesh=mesh) for _ in range(half)]
                + [random_cell(rng, inner, mesh=mesh) for _ in range(count - half)])

    def certified(self, count: int = 50, meshes=(16, 32, 64, 128), seed: int = 0, threads: int = 1) -> Certification:
        return _certify_cached(self.name, count, tuple(meshes), seed, threads)

    def describe(self) -> dict:
        return {"name": self.name, "domain": self.domain.to_json(), "modulus": self.modulus.describe(),
                "ctilde": self.ctilde if self.ctilde is not None else "estimated",
                "face": None if self.face is None else {"axis": self.face.axis + 1, "value": self.face.value},
                "oracles": sorted(self.oracles), "notes": list(self.notes)}


# --------------------------------------------------------------------------
# constructors


def heisenberg(half_width: float = 0.5) -> GalleryEntry:
    """``eta = dy - x1 dx2``, ``deta = -dx1 ^ dx2``."""
    eta = OneForm(ScalarField.const(1.0), (ScalarField.const(0.0), ScalarField.coordinate(0, -1.0)))
    deta = TwoForm(3, {(0, 1): ScalarField.const(-1.0)})
    pair = CEDPair(eta, deta, Box.cube(half_width), modulus=Modulus.linear(), name="heisenberg")
    oracles = {
        "W": lambda x: x[..., 0] * x[..., 1],
        "loop_displacement": lambda e: e * e,
        "density": -1.0,
        "K1_uninflated": (1 / math.sqrt(1 + half_width ** 2)) / 42.0,
    }
    return GalleryEntry("heisenberg", pair, Modulus.linear(), ctilde=1.0, oracles=oracles)


def exact_form(f: ScalarField, domain: Box | None = None, name: str = "exact", ctilde: float | None = None) -> GalleryEntry:
    """Integrable entry ``eta = df`` with ``deta = 0``; ``f`` must carry every partial."""
    dom = domain or Box.cube(1.0)
    d = dom.dim
    if not all(f.has_partial(k) for k in range(d)):
        raise ValueError("exact_form needs analytic partials of f in every variable")
    parts = [ScalarField(lambda P, k=k: f.partial(k, P), name=f"d{k}f") for k in range(d)]
    eta = OneForm(parts[-1], tuple(parts[:-1]))
    pair = CEDPair(eta, TwoForm.zero(d), dom, modulus=Modulus.linear(), name=name)
    return GalleryEntry(name, pair, Modulus.linear(), ctilde=ctilde, oracles={"density": 0.0})


def flat() -> GalleryEntry:
    """``f = y``: ``eta = dy``, the flat horizontal bundle."""
    zero = lambda P: np.zeros(P.shape[:-1])
    f = ScalarField(lambda P: P[..., 2], {0: zero, 1: zero, 2: lambda P: np.ones(P.shape[:-1])}, name="y")
    return exact_form(f, name="exact:flat", ctilde=1.0)


def quadratic() -> GalleryEntry:
    """``f = y + x1^2``: ``eta = dy + 2 x1 dx1``, integrable."""
    f = ScalarField(lambda P: P[..., 2] + P[..., 0] ** 2,
                    {0: lambda P: 2 * P[..., 0], 1: lambda P: 0 * P[..., 0], 2: lambda P: 1 + 0 * P[..., 0]},
                    name="y + x1^2")
    e = exact_form(f, name="exact:quadratic", ctilde=2.0)
    return GalleryEntry(e.name, e.pair, e.modulus, 2.0, oracles={"density": 0.0, "W": lambda x: -x[..., 0] ** 2})


def cross_form(a: ScalarField, b: ScalarField, c: ScalarField, domain: Box, modulus: Modulus,
               name: str = "cross") -> CEDPair:
    """``eta = a dy - b dx - c dz`` in the chart ``(x1, x2, y) = (z, x, y)``.

    Only the partials entering ``deta`` are used: ``a`` in x1 and x2, ``b`` in x1
    and y, ``c`` in x2 and y.  ``b`` may be merely continuous in x2 and ``c`` in x1.
    """
    need = [(a, 0), (a, 1), (b, 0), (b, 2), (c, 1), (c, 2)]
    for f, k in need:
        if not f.has_partial(k):
            raise ValueError(f"missing partial in variable {k} for {f.name!r}")
    eta = OneForm(a, (c.scaled(-1.0), b.scaled(-1.0)))
    deta = TwoForm(3, {
        (0, 1): ScalarField(lambda P: c.partial(1, P) - b.partial(0, P), name="c_x - b_z"),
        (0, 2): ScalarField(lambda P: a.partial(0, P) + c.partial(2, P), name="a_z + c_y"),
        (1, 2): ScalarField(lambda P: a.partial(1, P) + b.partial(2, P), name="a_x + b_y"),
    })
    return CEDPair(eta, deta, domain, modulus=modulus, name=name)


def _root_factor(s):
    return np.exp(np.sqrt(s))


def _inv_log_factor(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        safe = np.where(s > 0, s, 0.5)
        return np.where(s > 0, 1.0 / np.log(safe), 0.0)


def _paper_pair(variant: str, domain: Box = PAPER_DOMAIN) -> CEDPair:
    g = {"sqrt": _root_factor, "log": _inv_log_factor}[variant]
    one = ScalarField.const(1.0)
    # b = sin(y) g(x) z ;  c = cos(y) exp((z + 2)^(2/3)) x   with z = x1, x = x2
    b = ScalarField(lambda P: np.sin(P[..., 2]) * g(P[..., 1]) * P[..., 0],
                    {0: lambda P: np.sin(P[..., 2]) * g(P[..., 1]),
                     2: lambda P: np.cos(P[..., 2]) * g(P[..., 1]) * P[..., 0]}, name="b")
    e23 = lambda P: np.exp(np.cbrt((P[..., 0] + 2) ** 2))
    c = ScalarField(lambda P: np.cos(P[..., 2]) * e23(P) * P[..., 1],
                    {0: lambda P: np.cos(P[..., 2]) * e23(P) * (2 / 3) * np.cbrt(1 / (P[..., 0] + 2)) * P[..., 1],
                     1: lambda P: np.cos(P[..., 2]) * e23(P),
                     2: lambda P: -np.sin(P[..., 2]) * e23(P) * P[..., 1]}, name="c")
    mod = Modulus.hoelder(0.5) if variant == "sqrt" else Modulus.log()
    return cross_form(one, b, c, domain, mod, name=f"paper:{variant}")


def paper_example(variant: str = "sqrt") -> GalleryEntry:
    """The continuous contact-type example, with the square-root or inverse-log factor."""
    if variant not in ("sqrt", "log"):
        raise ValueError("variant must be 'sqrt' or 'log'")
    pair = _paper_pair(variant)
    face = Face(1, 0.0, "power" if variant == "sqrt" else "exp")
    notes = ("x2 >= 0 only; the coefficient b is not differentiable in x2 at x2 = 0",)
    if variant == "log":
        notes += ("modulus 1/|log(min(s, 1/2))| is a modelling choice",)
    oracles = {"density": math.exp(2 ** (2 / 3)), "W": lambda x: 0.0 * x[..., 0]}
    return GalleryEntry(pair.name, pair, pair.modulus, None, face, smooth=False, oracles=oracles, notes=notes)


def smoothstep(lo: float, hi: float) -> ScalarField:
    """Quintic ramp in x1 from 0 at ``lo`` to 1 at ``hi`` (C^2)."""
    w = hi - lo

    def t(P):
        return np.clip((P[..., 0] - lo) / w, 0.0, 1.0)

    def val(P):
        s = t(P)
        return s ** 3 * (10 - 15 * s + 6 * s * s)

    def der(P):
        s = t(P)
        return 30 * s * s * (1 - s) ** 2 / w

    zero = lambda P: np.zeros(P.shape[:-1])
    return ScalarField(val, {0: der, 1: zero, 2: zero}, name="smoothstep")


def _shifted_pair(pair: CEDPair, shift, domain: Box) -> CEDPair:
    eta = OneForm(pair.eta.a0.shifted(shift), tuple(f.shifted(shift) for f in pair.eta.a))
    deta = TwoForm(pair.dim, {k: f.shifted(shift) for k, f in pair.deta.coeffs.items()})
    return CEDPair(eta, deta, domain, modulus=pair.modulus, name=f"{pair.name}@{list(shift)}")


def pasted_example(offset: float = 0.25, blend: float = 0.15) -> GalleryEntry:
    """Two translates of the square-root example glued across ``|x1| < blend``."""
    base = _paper_pair("sqrt", Box((-0.6 - offset, 0.0, -0.6), (0.6 + offset, 0.6, 0.6)))
    right = _shifted_pair(base, (offset, 0.0, 0.0), PAPER_DOMAIN)
    left = _shifted_pair(base, (-offset, 0.0, 0.0), PAPER_DOMAIN)
    psi = smoothstep(-blend, blend)
    comp = ScalarField(lambda P: 1 - psi(P), {k: (lambda P, k=k: -psi.partial(k, P)) for k in range(3)},
                       name="1 - smoothstep")
    pair = paste([(right, psi), (left, comp)], PAPER_DOMAIN)
    pair = CEDPair(pair.eta, pair.deta, PAPER_DOMAIN, modulus=Modulus.hoelder(0.5), name="pasted")
    notes = ("translates by x1 = +-%g blended on |x1| < %g" % (offset, blend),
             "density sign is only verified where reported by the density scan")
    return GalleryEntry("pasted", pair, pair.modulus, None, Face(1, 0.0, "power"), smooth=False,
                        oracles={"W": lambda x: 0.0 * x[..., 0]}, notes=notes)


REGISTRY: dict[str, Callable[[], GalleryEntry]] = {
    "heisenberg": heisenberg,
    "paper:sqrt": lambda: paper_example("sqrt"),
    "paper:log": lambda: paper_example("log"),
    "exact:quadratic": quadratic,
    "pasted": pasted_example,
}


@functools.lru_cache(maxsize=None)
def get(name: str) -> GalleryEntry:
    if name == "exact:flat":
        return flat()
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown gallery entry {name!r}; known: {', '.join(REGISTRY)}") from None


def names() -> list:
    return list(REGISTRY)


@functools.lru_cache(maxsize=None)
def _certify_cached(name, count, meshes, seed, threads):
    e = get(name)
    return certify(e.pair, e.certification_cells(count, seed), meshes, threads)


def density_scan(entry: GalleryEntry, grid: int = 13) -> dict:
    """Grid points where the density of ``eta ^ deta`` is positive, negative or ~0."""
    from .bundle import nonintegrability
    P = entry.domain.grid(grid)
    d = np.asarray(nonintegrability(entry.pair, P))
    return {"points": len(P), "positive": int(np.sum(d > 1e-9)), "negative": int(np.sum(d < -1e-9)),
            "min": float(d.min()), "max": float(d.max())}

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subriemann import gallery
from subriemann.fields import (Box, BoundaryMismatchError, Cell2, Chain2, Curve, DomainError, Face, Modulus, OneForm,
                               Point, ScalarField, TwoForm, certify, check_boundary, check_dd_zero, check_partials,
                               d_norm, eval_form, fitted_order, integrate_chain1, integrate_chain2, integrate_curve,
                               mollify, paste, polyline, random_cell, random_closed_chain, segment, stokes_residual,
                               x_l1)


def circle(r, center=(0.0, 0.0, 0.0), mesh=256):
    c = np.asarray(center, dtype=float)
    fn = lambda s: c + r * np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s), 0 * s], axis=-1)
    d = lambda s: 2 * np.pi * r * np.stack([-np.sin(2 * np.pi * s), np.cos(2 * np.pi * s), 0 * s], axis=-1)
    return Curve(fn, d, mesh)


def disk(r, center=(0.0, 0.0, 0.0), mesh=32):
    c = np.asarray(center, dtype=float)

    def fn(u, w):
        u, w = np.asarray(u), np.asarray(w)
        return c + np.stack([r * u * np.cos(2 * np.pi * w), r * u * np.sin(2 * np.pi * w), 0 * u], axis=-1)

    def jac(u, w):
        u, w = np.asarray(u), np.asarray(w)
        du = np.stack([r * np.cos(2 * np.pi * w), r * np.sin(2 * np.pi * w), 0 * u], axis=-1)
        dw = np.stack([-2 * np.pi * r * u * np.sin(2 * np.pi * w), 2 * np.pi * r * u * np.cos(2 * np.pi * w), 0 * u],
                      axis=-1)
        return du, dw

    return Cell2(fn, jac, 1, mesh)


def test_box_basics():
    b = Box((-1, 0, -1), (1, 2, 1))
    assert b.dim == 3
    assert b.contains([0, 1, 0]) and not b.contains([0, -0.1, 0])
    assert np.allclose(b.widths, [2, 2, 2])
    with pytest.raises(DomainError):
        b.check([[0, 3, 0]])
    s = b.shrink(0.5)
    assert s.lo == (-0.5, 0.5, -0.5)
    assert b.grid(3).shape == (27, 3)
    with pytest.raises(ValueError):
        Box((0, 0), (1, -1))


def test_point_norms():
    p = Point((3.0, -4.0), 1.0)
    assert p.x_l1() == 7.0
    assert p.x_norm() == 5.0
    assert x_l1(p.array()) == 7.0
    assert Point.of([1, 2, 3]) == Point((1.0, 2.0), 3.0)


@pytest.mark.parametrize("mod, s, expected", [
    (Modulus.linear(), 0.3, 0.3),
    (Modulus.hoelder(0.5), 0.25, 0.5),
    (Modulus.log(), math.exp(-4), 0.25),
    (Modulus.log(), 0.9, 1 / math.log(2)),
])
def test_modulus_values(mod, s, expected):
    assert float(mod(s)) == pytest.approx(expected, rel=1e-14)
    assert float(mod(0.0)) == 0.0


def test_modulus_rejects_bad_exponent():
    with pytest.raises(ValueError):
        Modulus.hoelder(1.5)


def test_declared_partials_match_differences(entries):
    rng = np.random.default_rng(3)
    for name in ("paper:sqrt", "paper:log", "pasted"):
        e = entries[name]
        P = e.domain.shrink(0.05).sample(rng, 64)
        P[:, 1] = np.maximum(P[:, 1], 0.06)
        for f in e.pair.eta.fields():
            gaps = check_partials(f, P)
            assert max(gaps.values(), default=0.0) < 1e-6, (name, f.name, gaps)


def test_eval_form_heisenberg():
    pair = gallery.heisenberg().pair
    # eta = dy - x1 dx2
    assert eval_form(pair.eta, [0.3, 0.1, 0.0], [0.0, 1.0, 0.0]) == pytest.approx(-0.3)
    with pytest.raises(DomainError):
        eval_form(pair.eta, [2.0, 0.0, 0.0], [1.0, 0.0, 0.0])


def test_heisenberg_circle_and_disk():
    pair = gallery.heisenberg().pair
    r = 0.3
    # oriented circle in the x1x2 plane: the integral of -x1 dx2 is -pi r^2
    assert integrate_curve(pair.eta, circle(r)) == pytest.approx(-math.pi * r * r, rel=1e-12)
    assert integrate_chain2(pair.deta, Chain2((disk(r),))) == pytest.approx(-math.pi * r * r, rel=1e-12)


def test_segment_integral_matches_quadrature_oracle(entries):
    """Square-root entry along a slanted segment vs mpmath quad of the pulled-back integrand."""
    eta = entries["paper:sqrt"].pair.eta
    a = np.array([-0.2, 0.05, 0.1])
    b = np.array([0.3, 0.4, -0.2])
    v = b - a

    def integrand(t):
        z, x, y = (mp.mpf(a[k]) + t * mp.mpf(v[k]) for k in range(3))
        bb = mp.sin(y) * mp.exp(mp.sqrt(x)) * z
        cc = mp.cos(y) * mp.exp(mp.cbrt((z + 2) ** 2)) * x
        return v[2] - cc * v[0] - bb * v[1]

    mp.mp.dps = 30
    oracle = float(mp.quad(integrand, [0, 1]))
    val = integrate_curve(eta, segment(a, b, mesh=4096))
    assert val == pytest.approx(oracle, rel=1e-7)


def test_curve_reversal_and_polyline():
    pair = gallery.heisenberg().pair
    c = circle(0.2)
    assert integrate_curve(pair.eta, c.reversed()) == pytest.approx(-integrate_curve(pair.eta, c), rel=1e-14)
    sq = polyline(np.array([[0, 0, 0], [0.1, 0, 0], [0.1, 0.1, 0], [0, 0.1, 0], [0, 0, 0]], dtype=float))
    assert integrate_curve(pair.eta, sq) == pytest.approx(-0.01, rel=1e-12)
    assert integrate_curve(pair.eta, segment([0.1, 0, 0], [0.1, 0, 0])) == 0.0


def test_stokes_residual_and_boundary_check():
    pair = gallery.heisenberg().pair
    d = disk(0.25)
    assert stokes_residual(pair, circle(0.25), Chain2((d,))) < 1e-12
    with pytest.raises(BoundaryMismatchError):
        check_boundary([circle(0.25)], Chain2((disk(0.2),)))


def test_fitted_order_slope_and_floor():
    hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    assert fitted_order(hs, [h * h for h in hs]) == pytest.approx(2.0, abs=1e-12)
    assert fitted_order(hs, [3e-17] * 4) == math.inf
    # the first floored residual is clamped, which can only understate the order
    assert fitted_order(hs, [1e-10, 2.5e-11, 1e-15, 1e-15]) >= 2.0


def test_certify_heisenberg_exact(entries):
    cert = entries["heisenberg"].certified()
    assert cert.order == math.inf
    assert cert.residual < 1e-14


def test_random_cells_stay_inside_and_touch_face(entries):
    e = entries["paper:sqrt"]
    rng = np.random.default_rng(1)
    for _ in range(10):
        cell = random_cell(rng, e.domain, face=e.face)
        P = cell.nodes(8)[0]
        assert np.all(e.domain.contains(P))
        w = np.linspace(0, 1, 5)
        assert np.all(cell.fn(0 * w, w)[:, 1] == 0.0)


def test_closed_chain_has_empty_boundary(entries):
    rng = np.random.default_rng(2)
    ch = random_closed_chain(rng, entries["heisenberg"].domain)
    rep = check_dd_zero(entries["heisenberg"].pair, [ch])
    assert rep.max_abs < 1e-14
    with pytest.raises(BoundaryMismatchError):
        check_dd_zero(entries["heisenberg"].pair, [Chain2((disk(0.2),))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_stokes_holds_on_random_cells_property(seed):
    pair = gallery.heisenberg().pair
    rng = np.random.default_rng(seed)
    cell = random_cell(rng, pair.domain, mesh=32)
    assert stokes_residual(pair, cell.edges(), Chain2((cell,))) < 1e-13


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.05, 0.2))
def test_heisenberg_square_integral_is_minus_area(x0, y0, side):
    pair = gallery.heisenberg().pair
    V = np.array([[x0, y0, 0], [x0 + side, y0, 0], [x0 + side, y0 + side, 0], [x0, y0 + side, 0], [x0, y0, 0]])
    assert integrate_curve(pair.eta, polyline(V)) == pytest.approx(-side * side, rel=1e-10, abs=1e-15)


def test_d_norm_heisenberg():
    pair = gallery.heisenberg().pair
    # |eta| = sqrt(1 + x1^2) peaks at sqrt(1.25); |deta| = 1
    assert d_norm(pair, inflate=False) == pytest.approx(math.sqrt(1.25), rel=1e-12)
    assert d_norm(pair) >= math.sqrt(1.25)


def test_mollified_sqrt_converges(entries):
    pair = entries["paper:sqrt"].pair
    rng = np.random.default_rng(0)
    P = Box((-0.3, 0.2, -0.3), (0.3, 0.4, 0.3)).sample(rng, 20)
    errs = []
    for scale in (0.04, 0.02, 0.01):
        m = mollify(pair, scale)
        errs.append(np.max(np.abs(m.deta.matrix(P) - pair.deta.matrix(P))))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-3
    with pytest.raises(ValueError):
        mollify(pair, 0.0)


def test_paste_requires_partition_of_unity():
    h = gallery.heisenberg().pair
    half = ScalarField(lambda P: 0.5 + 0 * P[..., 0], {k: (lambda P: 0 * P[..., 0]) for k in range(3)})
    with pytest.raises(ValueError):
        paste([(h, half)])
    pasted = paste([(h, half), (h, half)])
    P = h.domain.grid(3)
    assert np.allclose(pasted.eta.coefficients(P), h.eta.coefficients(P))
    assert np.allclose(pasted.deta.matrix(P), h.deta.matrix(P))


def test_twoform_matrix_is_antisymmetric():
    f = TwoForm(3, {(0, 2): ScalarField.const(2.0)})
    M = f.matrix(np.zeros((2, 3)))
    assert np.allclose(M, -np.swapaxes(M, -1, -2))
    assert M[0, 0, 2] == 2.0 and M[0, 2, 0] == -2.0


def test_oneform_orders_coefficients_like_points():
    eta = OneForm(ScalarField.const(1.0), (ScalarField.const(2.0), ScalarField.const(3.0)))
    assert eta.coefficients([0, 0, 0]).tolist() == [2.0, 3.0, 1.0]


def test_face_gradings():
    u = np.array([0.25, 0.5, 1.0])
    g, d = Face(1, 0.0, "power").g(u)
    assert np.allclose(g, u * u) and np.allclose(d, 2 * u)
    g, _ = Face(1, 0.0, "exp").g(u)
    assert np.allclose(g, np.exp(1 - 1 / u))

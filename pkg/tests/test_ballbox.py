import math

import numpy as np
import pytest

from subriemann.access import PreconditionError, build_path
from subriemann.ballbox import (BoxSpec, box_algebra_check, box_margin, box_membership, c1_chart, diamond_radius,
                                diamond_samples, random_controls, run_controls, upper_gap_estimate, verify_inclusions)
from subriemann.bundle import fix_domain
from subriemann.fields import Box, Modulus
from subriemann.flows import FlowSpec, build_W


def test_box_margins_by_kind():
    p = np.array([[0.05, -0.05, 0.001]])
    box = BoxSpec("box", 1.0, 0.2)
    # |x| = 0.1 < 0.2 and |y| = 0.001 < 0.04
    assert box_margin(box, p)[0] == pytest.approx(0.039, rel=1e-12)
    hour = BoxSpec("hourglass", 1.0, 0.2, ctilde=2.0)
    # K eps^2 + s C omega(2s) - |y| = 0.04 + 0.1 * 2 * 0.2 - 0.001
    assert box_margin(hour, p)[0] == pytest.approx(min(0.1, 0.079), rel=1e-12)
    dia = BoxSpec("diamond", 4.0, 0.5)
    # spread s C omega(2s) = 0.1 * 0.2
    assert box_margin(dia, p)[0] == pytest.approx(0.5 - 0.1 - math.sqrt(4 * (0.02 + 0.001)), rel=1e-12)
    ok, m = box_membership(box, [0.3, 0.0, 0.0])
    assert not ok and m == pytest.approx(-0.1)


def test_box_spec_validation_and_domain():
    with pytest.raises(ValueError):
        BoxSpec("ball", 1.0, 0.1)
    with pytest.raises(ValueError):
        BoxSpec("bwbox", 1.0, 0.1)
    b = BoxSpec("box", 1.0, 0.2, domain=Box((-1, 0, -1), (1, 1, 1)))
    assert box_margin(b, [0.0, -0.01, 0.0])[0] == -np.inf


def test_bw_box_follows_the_surface(heis):
    _, fr = heis
    W = build_W(fr, 0.2, k=21)
    b = BoxSpec("bwbox", 1.0, 0.2, W=W)
    on = np.array([[0.05, 0.08, 0.05 * 0.08]])
    assert box_margin(b, on)[0] == pytest.approx(0.04, abs=1e-12)


def test_diamond_radius_solves_boundary_equation():
    K1, eps, C = 0.5, 0.1, 3.0
    om = Modulus.hoelder(0.5)
    r = diamond_radius(K1, eps, C, om)
    assert 0 < r < eps
    assert K1 * (eps - r) ** 2 == pytest.approx(r * C * float(om(2 * r)), rel=1e-9)


def test_diamond_samples_lie_in_the_diamond():
    K1, eps, C = 0.07, 0.01, 7.0
    om = Modulus.hoelder(0.5)
    dom = Box((-0.15, 0.0, -0.15), (0.15, 0.15, 0.15))
    D = diamond_samples(K1, eps, C, om, dom, k=12, seed=3)
    assert D.shape == (144, 3)
    assert np.all(D[:, 1] >= 0)
    spec = BoxSpec("diamond", 1 / K1, eps, C, om)
    assert np.all(box_margin(spec, D) >= -1e-15)
    assert np.array_equal(D, diamond_samples(K1, eps, C, om, dom, k=12, seed=3))


def test_random_controls_respect_total():
    rng = np.random.default_rng(0)
    idx, sign, dur = random_controls(rng, 500, 2, 0.3, max_segments=7)
    assert idx.shape == sign.shape == dur.shape == (500, 7)
    assert np.all(dur.sum(axis=1) <= 0.3 + 1e-12)
    assert np.all(dur >= 0)


def test_run_controls_heisenberg_matches_closed_form(heis):
    _, fr = heis
    idx = np.array([[0, 1, 0, 1]])
    sign = np.array([[1.0, 1.0, -1.0, -1.0]])
    dur = np.full((1, 4), 0.1)
    P, length, clipped = run_controls(fr, idx, sign, dur, fr.domain)
    assert np.allclose(P[0], [0, 0, 0.01], atol=1e-15)
    assert not clipped[0]
    P, _, clipped = run_controls(fr, np.array([[0]]), np.array([[1.0]]), np.array([[0.9]]), fr.domain)
    assert clipped[0] and P[0, 0] == pytest.approx(0.5)


def test_box_algebra_linear_modulus():
    rep = box_algebra_check(0.02, 500.0, 1.0, 0.05, samples=300, seed=1)
    assert rep.passed
    assert rep.box_in_diamond == rep.hourglass_in_box == 300


def test_c1_chart_roundtrip(heis):
    _, fr = heis
    W = build_W(fr, 0.2, k=21)
    ch = c1_chart(W)
    rng = np.random.default_rng(0)
    P = rng.uniform(-0.09, 0.09, (50, 3))
    F = ch.forward(P)
    assert np.allclose(ch.inverse(F), P, atol=1e-15)
    flat = ch.forward(np.column_stack([P[:, :2], W(P[:, :2])]))
    assert np.allclose(flat[:, 2], 0.0, atol=1e-15)


def test_upper_gap_estimate_heisenberg_loop(heis):
    e, fr = heis
    eps = 0.05
    g = build_path(fr, [FlowSpec(0, 1, eps), FlowSpec(1, 1, eps), FlowSpec(0, -1, eps), FlowSpec(1, -1, eps)],
                   [0, 0, 0])
    est = upper_gap_estimate(e.pair, fr, g)
    assert est.gap == pytest.approx(eps * eps, rel=1e-12)
    assert est.holds
    straight = build_path(fr, [FlowSpec(0, 1, eps)], [0, 0, 0])
    assert upper_gap_estimate(e.pair, fr, straight).gap == 0.0


def test_inclusions_require_hypothesis(heis):
    e, fr = heis
    fd = fix_domain(e.pair, fr)
    with pytest.raises(PreconditionError):
        verify_inclusions(e.pair, fr, None, fd.constants, 0.05, samples=4, mc=50)
    with pytest.raises(PreconditionError):
        verify_inclusions(e.pair, fr, None, None, 0.05)


def test_small_inclusion_run_heisenberg(heis):
    e, fr = heis
    fd = fix_domain(e.pair, fr)
    rep = verify_inclusions(e.pair, fr, None, fd.constants, 0.05, samples=6, mc=400, seed=2,
                            enforce_hypothesis=False, U=fd.box)
    assert not rep.within_certified_range
    assert rep.passed, rep.witness()
    js = rep.to_json()
    assert js["lower"]["samples"] == 36 and js["upper"]["samples"] == 400
    assert js["witness"] is None

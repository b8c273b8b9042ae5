import math

import mpmath as mp
import numpy as np
import pytest

from subriemann.fields import Box
from subriemann.flows import (EscapeError, ExtrapolationError, FlowSpec, build_W, compose_T, compose_T_batch,
                              control_frame, flow, flow_path, funnel_probe, integrate)


def test_flowspec_validation():
    with pytest.raises(ValueError):
        FlowSpec(0, 2, 0.1)
    with pytest.raises(ValueError):
        FlowSpec(0, 1, -0.1)
    assert FlowSpec(1, -1, 0.2).signed == -0.2


def test_heisenberg_flows_closed_form(heis):
    _, fr = heis
    q = np.array([0.2, -0.1, 0.05])
    r = flow(fr, FlowSpec(1, 1, 0.3), q)
    # X2 = d2 + x1 dy: y grows by x1 * t
    assert np.allclose(r.point, [0.2, 0.2, 0.05 + 0.2 * 0.3], atol=1e-15)
    r = flow(fr, FlowSpec(0, -1, 0.3), q)
    assert np.allclose(r.point, [-0.1, -0.1, 0.05], atol=1e-15)
    assert r.length == pytest.approx(0.3, rel=1e-12)


def test_compose_T_heisenberg(heis):
    _, fr = heis
    t = np.array([[0.1, 0.2], [-0.3, 0.25], [0.0, 0.4]])
    P, err, _, _, ok = compose_T_batch(fr, t)
    assert np.allclose(P[:, :2], t)
    assert np.allclose(P[:, 2], t[:, 0] * t[:, 1], atol=1e-15)
    assert ok.all() and err.max() < 1e-15
    assert np.allclose(compose_T(fr, [0.1, 0.2]), [0.1, 0.2, 0.02])


def test_sqrt_flow_matches_separable_oracle(sqrt_entry):
    """X2 flow of the square-root entry from the face against the closed-form solution."""
    _, fr = sqrt_entry
    z0, y0, T = 0.3, 0.2, 0.25
    # along X2 from x2 = 0: dy / sin(y) = z0 exp(sqrt(s)) ds, separable
    mp.mp.dps = 30
    I = 2 * (mp.sqrt(T) - 1) * mp.exp(mp.sqrt(T)) + 2
    oracle = float(2 * mp.atan(mp.tan(mp.mpf(y0) / 2) * mp.exp(z0 * I)))
    r = flow(fr, FlowSpec(1, 1, T), [z0, 0.0, y0])
    # RK4 drops to order 1.5 next to the square root; the Richardson gap still bounds the error
    assert abs(r.point[2] - oracle) <= 2 * r.error
    assert abs(r.point[2] - oracle) < 1e-7
    fine = integrate(fr, 1, T, [[z0, 0.0, y0]], h=1e-5, richardson=False)
    assert fine.points[0, 2] == pytest.approx(oracle, abs=1e-9)


def test_richardson_error_tracks_actual_error(sqrt_entry):
    _, fr = sqrt_entry
    q = np.array([[0.1, 0.2, 0.3]])
    coarse = integrate(fr, 0, 0.4, q, h=0.02)
    fine = integrate(fr, 0, 0.4, q, h=1e-4, richardson=False)
    actual = abs(coarse.points[0, 2] - fine.points[0, 2])
    assert actual <= 2 * coarse.error[0] + 1e-15


def test_escape_is_reported(heis):
    _, fr = heis
    with pytest.raises(EscapeError) as exc:
        flow(fr, FlowSpec(0, 1, 0.9), [0.0, 0.0, 0.0])
    assert exc.value.exit_point is not None
    r = integrate(fr, 0, 0.9, [[0.0, 0.0, 0.0]], U=fr.domain, strict=False)
    assert not r.ok[0]


def test_flow_path_records_nodes(heis):
    _, fr = heis
    specs = [FlowSpec(0, 1, 0.1), FlowSpec(1, 1, 0.1), FlowSpec(0, -1, 0.1), FlowSpec(1, -1, 0.1)]
    p, err, length, tang, nodes = flow_path(fr, specs, [0, 0, 0], record=True)
    assert np.allclose(p, [0, 0, 0.01], atol=1e-15)
    assert length == pytest.approx(0.4 + 0.1 * (math.sqrt(1.01) - 1), rel=1e-9)
    assert nodes.shape[1] == 3 and np.allclose(nodes[0], 0)


def test_W_heisenberg_bound_ratio(heis):
    _, fr = heis
    W = build_W(fr, 0.2, k=21)
    X = W.grid_points()
    assert np.allclose(W.values.reshape(-1), X[:, 0] * X[:, 1], atol=1e-15)
    # |x1 x2| <= |x|^2 / 4 against |x| * 2|x|
    assert W.bound_ratio() == pytest.approx(0.125, rel=1e-12)
    assert W(np.array([0.05, 0.1])) == pytest.approx(0.005, rel=1e-2)
    with pytest.raises(ExtrapolationError):
        W(np.array([0.5, 0.0]))


def test_W_sqrt_entry_is_flat(sqrt_entry):
    _, fr = sqrt_entry
    W = build_W(fr, 0.2, k=9)
    assert np.all(W.values == 0.0)
    assert W.axes[1][0] == 0.0


def test_funnel_separates_unique_and_non_unique(sqrt_entry):
    _, fr = sqrt_entry
    rep = funnel_probe(fr, 1, [0.1, 0.0, 0.2], 0.5)
    assert rep.spread <= 10 * rep.error_estimate
    T = 0.5
    ctl = funnel_probe(control_frame(), 0, [0.0, 0.0, 0.0], T)
    assert ctl.spread >= 0.2 * T * T / 4
    assert ctl.trials[0][2] == 0.0


def test_control_frame_branches():
    fr = control_frame()
    # from y = 0 exactly RK4 stays on the zero branch
    r = integrate(fr, 0, 0.5, [[0.0, 0.0, 0.0]], richardson=False)
    assert r.points[0, 2] == 0.0
    # from a tiny positive y it follows y = (t/2)^2
    r = integrate(fr, 0, 0.5, [[0.0, 0.0, 1e-14]], richardson=False)
    assert r.points[0, 2] == pytest.approx(0.0625, rel=2e-2)

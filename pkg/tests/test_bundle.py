import math

import mpmath as mp
import numpy as np
import pytest

from subriemann import gallery
from subriemann.bundle import (DegenerateBundleError, NotAdaptedError, TransversalityError, adapted_frame,
                               estimate_constants, fix_domain, free_radius, lie_bracket, nonintegrability)
from subriemann.fields import Box, CEDPair, OneForm, ScalarField, TwoForm


def test_heisenberg_frame_coefficients(heis):
    _, fr = heis
    P = np.array([[0.3, -0.2, 0.1], [-0.4, 0.1, 0.0]])
    assert np.allclose(fr.coeffs(P), [[0.0, 0.3], [0.0, -0.4]])
    V = fr.vectors(P[:1])[0]
    assert np.allclose(V, [[1, 0, 0], [0, 1, 0.3]])
    assert np.allclose(fr.deta_frame(P[:1])[0], [[0, -1], [1, 0]])


def test_heisenberg_density_and_bracket(heis):
    e, fr = heis
    assert nonintegrability(e.pair, [0.1, 0.2, 0.3]) == -1.0
    # [X1, X2] = d/dy
    assert lie_bracket(e.pair, fr, 0, 1, [0.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_sqrt_entry_density_matches_high_precision_oracle(sqrt_entry):
    e, _ = sqrt_entry
    mp.mp.dps = 40
    oracle = mp.exp(mp.cbrt(4))
    assert nonintegrability(e.pair, [0.0, 0.0, 0.0]) == pytest.approx(float(oracle), rel=1e-12)
    assert abs(float(oracle) - 4.8910) < 1e-4


def test_density_is_positive_near_the_face(sqrt_entry):
    e, _ = sqrt_entry
    P = Box((-0.1, 0.0, -0.1), (0.1, 0.1, 0.1)).grid(5)
    assert np.all(nonintegrability(e.pair, P) > 0)


def test_frame_rejects_non_transversal_and_non_adapted():
    dom = Box.cube(0.5)
    zero = ScalarField.const(0.0)
    bad = CEDPair(OneForm(ScalarField.coordinate(0), (zero, zero)), TwoForm.zero(3), dom)
    with pytest.raises(TransversalityError):
        adapted_frame(bad)
    tilted = CEDPair(OneForm(ScalarField.const(1.0), (ScalarField.const(0.5), zero)), TwoForm.zero(3), dom)
    with pytest.raises(NotAdaptedError):
        adapted_frame(tilted)


def test_estimated_moduli_constants(frames):
    # 1.5 x the empirical ratio; frozen at the seeded values
    assert frames["heisenberg"].ctilde == 1.0
    assert frames["paper:sqrt"].ctilde == pytest.approx(7.0104787718221235, rel=1e-9)
    assert frames["paper:log"].ctilde == pytest.approx(3.872730840580889, rel=1e-9)


def test_heisenberg_constants(heis):
    e, fr = heis
    c = estimate_constants(e.pair, fr, inflate=False)
    # |dη(v1, v2)| / |v1 ^ v2| on span(X1, X2) is 1 / sqrt(1 + x1^2)
    assert c.m_deta_inf == pytest.approx(1 / math.sqrt(1.25), rel=1e-12)
    assert c.K1 == pytest.approx(e.oracles["K1_uninflated"], rel=1e-12)
    assert c.d_g == 1.0
    assert c.K2 == pytest.approx(42 * 25 * 0.5 * c.deta_delta_sup / c.eta_dy_inf, rel=1e-12)


def test_fix_domain_heisenberg_frozen(heis):
    e, fr = heis
    fd = fix_domain(e.pair, fr)
    assert fd.box == e.domain
    assert fd.eps0 == pytest.approx(1.2226593071318434e-08, rel=1e-6)
    assert fd.constants.K1 == pytest.approx(0.02061629089687727, rel=1e-6)
    conds = fd.constants.eps_conditions(fd.eps0, free_radius(fd.box, fr.domain, np.zeros(3)))
    assert all(conds.values())
    js = fd.to_json()
    assert js["constants"]["witness"] == [1, 2]


def test_fix_domain_sqrt_shrinks_toward_face(sqrt_entry):
    e, fr = sqrt_entry
    fd = fix_domain(e.pair, fr)
    assert fd.box.lo[1] == 0.0
    assert fd.box.hi[0] == pytest.approx(0.15)
    assert fd.constants.m_deta_inf > 0
    assert fd.constants.K1 == pytest.approx(0.07261449511285407, rel=1e-6)
    assert 0 < fd.eps0 < 1e-15


def test_fix_domain_degenerate_cases(entries, frames):
    with pytest.raises(DegenerateBundleError):
        fix_domain(entries["exact:quadratic"].pair, frames["exact:quadratic"])
    with pytest.raises(DegenerateBundleError, match="eps0 underflow"):
        fix_domain(entries["paper:log"].pair, frames["paper:log"])


def test_free_radius_ignores_chart_sides():
    chart = Box((-1, 0, -1), (1, 1, 1))
    U = Box((-0.5, 0, -0.5), (0.5, 0.5, 0.5))
    assert free_radius(U, chart, [0, 0, 0]) == pytest.approx(0.5)
    assert free_radius(chart, chart, [0, 0, 0]) == math.inf

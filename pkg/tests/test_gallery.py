import math

import numpy as np
import pytest

from subriemann import gallery
from subriemann.bundle import nonintegrability
from subriemann.fields import ScalarField


def test_registry_names():
    names = gallery.names()
    for name in ("heisenberg", "paper:sqrt", "paper:log", "exact:quadratic", "pasted"):
        assert name in names
    assert gallery.get("exact:flat").name == "exact:flat"
    with pytest.raises(KeyError, match="unknown gallery entry"):
        gallery.get("nope")


def test_describe_is_plain_data(entries):
    d = entries["paper:sqrt"].describe()
    assert d["face"] == {"axis": 2, "value": 0.0}
    assert "density" in d["oracles"]
    assert d["ctilde"] == "estimated"
    assert entries["heisenberg"].describe()["ctilde"] == 1.0


def test_contact_example_variants():
    with pytest.raises(ValueError):
        gallery.paper_example("cubic")
    e = gallery.paper_example("log")
    assert not e.smooth and e.face.grading == "exp"


def test_density_oracles(entries):
    for name in ("heisenberg", "paper:sqrt", "exact:quadratic"):
        e = entries[name]
        assert nonintegrability(e.pair, [0.0, 0.0, 0.0]) == pytest.approx(e.oracles["density"], rel=1e-12, abs=1e-15)


def test_density_scan_signs(entries):
    scan = gallery.density_scan(entries["heisenberg"], grid=5)
    assert scan == {"points": 125, "positive": 0, "negative": 125, "min": -1.0, "max": -1.0}
    q = gallery.density_scan(entries["exact:quadratic"], grid=5)
    assert q["positive"] == q["negative"] == 0


def test_quadratic_surface_oracle(entries):
    e = entries["exact:quadratic"]
    x = np.array([[0.3, -0.2]])
    assert e.oracles["W"](x)[0] == pytest.approx(-0.09)


def test_smoothstep_partition():
    s = gallery.smoothstep(-0.1, 0.1)
    P = np.array([[-0.2, 0, 0], [0.0, 0, 0], [0.2, 0, 0]])
    assert np.allclose(s(P), [0.0, 0.5, 1.0])
    assert s.partial(0, P)[1] == pytest.approx(30 * 0.0625 / 0.2)


def test_exact_form_needs_partials():
    f = ScalarField(lambda P: P[..., 0], {0: lambda P: 1 + 0 * P[..., 0]})
    with pytest.raises(ValueError):
        gallery.exact_form(f)


def test_heisenberg_oracles(entries):
    o = entries["heisenberg"].oracles
    assert o["loop_displacement"](0.1) == pytest.approx(0.01)
    assert o["K1_uninflated"] == pytest.approx(1 / (42 * math.sqrt(1.25)))

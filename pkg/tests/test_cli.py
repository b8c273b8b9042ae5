import json

import pytest

from subriemann.cli import EXIT_IO, EXIT_PASS, EXIT_PRECONDITION, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_shoot_heisenberg_writes_outputs(tmp_path, capsys):
    code, js = run(capsys, "shoot", "--dy", "0.01", "--out", str(tmp_path))
    assert code == EXIT_PASS
    assert js["eps_tilde"] == pytest.approx(0.1, abs=1e-8)
    assert js["passed"]
    assert (tmp_path / "shoot.json").exists() and (tmp_path / "path.csv").exists()
    saved = json.loads((tmp_path / "shoot.json").read_text())
    assert saved["eps_tilde"] == js["eps_tilde"]


def test_precondition_exit_codes(capsys):
    assert run(capsys, "shoot", "--dy", "1.0")[0] == EXIT_PRECONDITION
    assert run(capsys, "constants", "--bundle", "exact:quadratic")[0] == EXIT_PRECONDITION
    assert run(capsys, "constants", "--bundle", "nope")[0] == EXIT_PRECONDITION
    assert run(capsys, "ballbox", "--enforce-hypothesis")[0] == EXIT_PRECONDITION


def test_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(capsys, "shoot", "--dy", "0.01", "--out", str(blocker / "sub"))[0] == EXIT_IO


def test_constants_heisenberg(capsys):
    code, js = run(capsys, "constants")
    assert code == EXIT_PASS
    assert js["eps0"] == pytest.approx(1.2226593071318434e-08, rel=1e-6)


def test_prop22_is_deterministic(capsys):
    a = run(capsys, "prop22", "--pairs", "3", "--seed", "4")
    b = run(capsys, "prop22", "--pairs", "3", "--seed", "4")
    assert a[0] == EXIT_PASS
    assert a == b


def test_surface_and_gallery(tmp_path, capsys):
    code, js = run(capsys, "surface", "--bundle", "heisenberg", "--k", "11", "--out", str(tmp_path))
    assert code == EXIT_PASS
    assert (tmp_path / "surface.csv").exists() and (tmp_path / "surface.svg").exists()
    code, js = run(capsys, "gallery", "list")
    assert code == EXIT_PASS
    assert "heisenberg" in [e["name"] for e in js["entries"]]


def test_stokes_heisenberg_small(capsys):
    code, js = run(capsys, "stokes", "--cells", "4", "--refine", "2")
    assert code == EXIT_PASS
    assert js["passed"] and len(js["table"]) == 2


def test_ballbox_outside_certified_range(tmp_path, capsys):
    code, js = run(capsys, "ballbox", "--epsilon", "0.05", "--samples", "4", "--mc", "200", "--out", str(tmp_path))
    assert code == EXIT_PASS and js["passed"]
    assert js["within_certified_range"] is False
    assert (tmp_path / "crosssection.svg").exists()

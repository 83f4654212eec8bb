import json
import math
from fractions import Fraction

import numpy as np
import pytest

from gaplab.chern import GapRow
from gaplab.config import ConfigError, load_config, parse_harmonics, parse_potential
from gaplab.flux import RationalFlux
from gaplab.hamiltonians import NO_POTENTIAL
from gaplab.io import (ContractError, check_label_rows, label_row, read_csv, read_matrix, write_csv, write_json,
                       write_matrix)
from gaplab.plotting import butterfly_svg, chern_color, wannier_diagram_svg


def ini(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_defaults():
    cfg = load_config()
    assert cfg.backend == "lattice" and cfg.kgrid == 32
    assert cfg["streda"]["fluxes"] == (RationalFlux(1, 5), RationalFlux(1, 4), RationalFlux(1, 3))
    assert cfg.potential("streda") is NO_POTENTIAL
    json.dumps(cfg.to_dict())


def test_overrides_and_backend(tmp_path):
    cfg = load_config(ini(tmp_path, "[run]\ncontinuum_kgrid = 10\n"), {"run": {"backend": "continuum"}})
    assert cfg.backend == "continuum" and cfg.kgrid == 10


@pytest.mark.parametrize("text", ["[run]\nbogus = 1\n", "[nosuch]\na = 1\n", "[run]\nbackend = magic\n",
                                  "[run]\nkgrid = 4\n", "[streda]\nfluxes = 1/3 1/4 1/5\n",
                                  "[streda]\nfluxes = 1/4 1/3\n", "[adiabatic]\nL = sixty\n",
                                  "[run]\npotential = cosine; 1\n", "no header\n"])
def test_rejects(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(ini(tmp_path, text))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.ini")


def test_parse_potential_and_harmonics():
    V = parse_potential("fourier-list; 1,1=1.0 0,1=-0.5; 2,2")
    assert V.modes == (((1, 1), 1.0), ((0, 1), -0.5)) and V.period == (2, 2)
    assert parse_potential("cosine; 0.5; 1,1").modes == (((1, 0), 0.5), ((0, 1), 0.5))
    assert parse_potential("none") is NO_POTENTIAL
    h = parse_harmonics("1,0=1.0@-pi/2 0,2=0.3")
    assert h == (((1, 0), 1.0, -math.pi / 2), ((0, 2), 0.3, 0.0))


def test_matrix_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    M = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    p = write_matrix(tmp_path / "m.bin", M)
    assert p.stat().st_size == 16 + 16 * 15
    assert np.array_equal(read_matrix(p), M)
    with pytest.raises(ValueError):
        write_matrix(tmp_path / "v.bin", np.ones(3))


def test_csv_roundtrip_and_bytes(tmp_path):
    rows = [(1, 3, 0.1 + 0.2, "x")]
    a = write_csv(tmp_path / "a.csv", ("p", "q", "v", "s"), rows).read_bytes()
    b = write_csv(tmp_path / "b.csv", ("p", "q", "v", "s"), rows).read_bytes()
    assert a == b
    back = read_csv(tmp_path / "a.csv")
    assert float(back[0]["v"]) == 0.1 + 0.2
    with pytest.raises(ValueError):
        write_csv(tmp_path / "c.csv", ("p",), [(1, 2)])


def test_json_nonfinite(tmp_path):
    p = write_json(tmp_path / "r.json", {"b": float("inf"), "a": Fraction(1, 3), "c": np.arange(2)})
    doc = json.loads(p.read_text())
    assert doc == {"a": "1/3", "b": "inf", "c": [0, 1]}
    assert p.read_text().index('"a"') < p.read_text().index('"b"')


def _row(ids, c1):
    f = RationalFlux(1, 3)
    return GapRow(f, 1, 1, Fraction(ids), Fraction(ids) - c1 * f.phi, c1, float(c1), c1, -2.0, -0.7)


def test_label_contract():
    assert label_row(_row(Fraction(1, 3), 1))[:4] == (1, 3, 1, 1)
    with pytest.raises(ContractError):
        label_row(_row(Fraction(1, 6), 1))
    rows = [{"p": "1", "q": "3", "ids_num": "1", "ids_den": "6", "c1": "1", "m_hi": "1"}]
    assert check_label_rows(rows) == ["1/3 m_hi=1"]


def test_chern_colors():
    assert chern_color(0) == (0.6, 0.6, 0.6)
    assert chern_color(2)[0] > chern_color(2)[2]
    assert chern_color(-2)[2] > chern_color(-2)[0]


def test_svgs_deterministic(tmp_path):
    bands = [(1 / 3, -2.7, -2.0), (1 / 2, -2.8, 2.8)]
    gaps = [(1 / 3, -2.0, -0.7, 1), (1 / 3, 0.7, 2.0, -1)]
    a = butterfly_svg(tmp_path / "a.svg", bands, gaps).read_bytes()
    b = butterfly_svg(tmp_path / "b.svg", bands, gaps).read_bytes()
    assert a == b and b"<dc:date>" not in a
    assert a.count(b"<path") >= 4
    empty = butterfly_svg(tmp_path / "e.svg", [], []).read_bytes()
    assert b"<svg" in empty
    w1 = wannier_diagram_svg(tmp_path / "w1.svg", [(Fraction(0), 1), (Fraction(1), -1)]).read_bytes()
    w2 = wannier_diagram_svg(tmp_path / "w2.svg", [(Fraction(1), -1), (Fraction(0), 1)]).read_bytes()
    assert w1 == w2

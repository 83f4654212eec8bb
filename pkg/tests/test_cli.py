import json
import subprocess
import sys

import matplotlib.axes
import pytest

from gaplab.cli import main
from gaplab.io import read_csv, sha256


def run(tmp_path, verb, text=None, *extra, out="out"):
    args = ["--out", str(tmp_path / out)]
    if text is not None:
        cfg = tmp_path / f"{out}.ini"
        cfg.write_text(text)
        args += ["--config", str(cfg)]
    return main(args + list(extra) + [verb])


@pytest.mark.parametrize("argv", [[], ["fly"], ["--threads", "0", "butterfly"], ["--backend", "gpu", "streda"]])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_unknown_key_is_usage_error(tmp_path, capsys):
    assert run(tmp_path, "butterfly", "[butterfly]\nqmx = 3\n") == 2
    assert "qmx" in capsys.readouterr().err


def test_butterfly_outputs_and_determinism(tmp_path):
    text = "[run]\nqmax = 5\n"
    assert run(tmp_path, "butterfly", text, out="a") == 0
    assert run(tmp_path, "butterfly", text, out="b") == 0
    names = ["butterfly.csv", "labels.csv", "butterfly.svg", "wannier_diagram.svg", "butterfly_report.json",
             "butterfly_summary.txt"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["status"] == "ok" and "created" in man
    assert man["files"]["labels.csv"] == sha256(tmp_path / "a" / "labels.csv")
    for r in read_csv(tmp_path / "a" / "labels.csv"):
        p, q, c1 = int(r["p"]), int(r["q"]), int(r["c1"])
        assert (q * int(r["ids_num"]) - c1 * p * int(r["ids_den"])) % int(r["ids_den"]) == 0


def test_butterfly_polygon_per_gap(tmp_path, monkeypatch):
    calls = []
    orig = matplotlib.axes.Axes.fill

    def spy(self, *a, **k):
        calls.append(k.get("color"))
        return orig(self, *a, **k)

    monkeypatch.setattr(matplotlib.axes.Axes, "fill", spy)
    assert run(tmp_path, "butterfly", "[run]\nqmax = 5\n") == 0
    gaps = read_csv(tmp_path / "out" / "labels.csv")
    assert sum(c != "black" for c in calls) == len(gaps) > 0


def test_butterfly_qmax_one(tmp_path):
    assert run(tmp_path, "butterfly", "[run]\nqmax = 1\n") == 0
    assert read_csv(tmp_path / "out" / "labels.csv") == []
    assert len(read_csv(tmp_path / "out" / "butterfly.csv")) == 2


def test_streda_default(tmp_path):
    assert run(tmp_path, "streda") == 0
    rows = read_csv(tmp_path / "out" / "streda_slopes.csv")
    assert [(r["slope_num"], r["slope_den"], r["c1"]) for r in rows] == [("1", "1", "1")]


def test_failed_check_exits_one(tmp_path):
    # the lowest band of 1/3 has no continuation at 1/2, so the track is incomplete
    assert run(tmp_path, "streda", "[streda]\nfluxes = 1/3 2/5 1/2\n[run]\ndelta_gap = 0.1\n") == 1
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "failed" and man["checks"]["track_complete"] is False


def test_normgap_trivial_branch(tmp_path):
    text = "[normgap]\nflux = 1/2\nm_list = 16\nR = 8\nscan = 2\npotential = fourier-list; 1,1=1.0; 2,2\n"
    assert run(tmp_path, "normgap", text) == 0
    rep = json.loads((tmp_path / "out" / "normgap_report.json").read_text())
    assert rep["corollary_branch"] == "not applicable" and rep["c1"] == 0


def test_adiabatic_small(tmp_path):
    text = "[adiabatic]\nL = 24\nL_inner = 12\nlambdas = 0.05 0.1\nfield_mean = 0\n" \
           "field_harmonics = 1,0=1.0@-pi/2\n"
    assert run(tmp_path, "adiabatic", text) == 0
    rep = json.loads((tmp_path / "out" / "adiabatic_report.json").read_text())
    assert {"slope", "predicted_slope", "intercept", "lams"} <= set(rep)


def test_wannier_verb(tmp_path):
    assert run(tmp_path, "wannier") == 0
    rows = read_csv(tmp_path / "out" / "wannier.csv")
    assert set(rows[0]) == {"gamma1", "gamma2", "cell_index", "re_w", "im_w"}
    assert run(tmp_path, "wannier", "[wannier]\nflux = 1/3\npotential = none\n", out="obstructed") == 0
    rep = json.loads((tmp_path / "obstructed" / "wannier_report.json").read_text())
    assert "obstruction" in rep["obstruction"]


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gaplab.cli", "--out", str(tmp_path / "o"), "-h"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "butterfly" in r.stdout

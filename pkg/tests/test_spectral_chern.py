from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaplab.chern import (GapLabel, GridTooCoarseError, TrackError, chern_kspace, chern_realspace,
                          diophantine_label, diophantine_oracle, gap_labels, island_frames, link_chern,
                          streda_check)
from gaplab.flux import RationalFlux
from gaplab.hamiltonians import PotentialSpec
from gaplab.kernels import project_island_kernel
from gaplab.spectral import (IslandTrack, SpectralIsland, band_structure, detect_islands, ids_of_island,
                             track_island)

THIRD = RationalFlux(1, 3)


def brute_t(r, p, q):
    """Smallest |t| with r = s q + t p, |t| <= q/2, by exhaustive search."""
    for t in sorted(range(-q, q + 1), key=lambda t: (abs(t), -t)):
        if abs(t) <= q / 2 and (r - t * p) % q == 0:
            return t
    raise AssertionError


def test_zero_flux_single_band():
    bs = band_structure(RationalFlux(0, 1), kgrid_size=16)
    lo, hi = bs.band_ranges()[0]
    assert bs.nbands == 1
    assert lo == pytest.approx(-4) and hi == pytest.approx(4)


def test_half_flux_bands_touch():
    gaps = []
    for n in (9, 17, 33):  # odd grids miss the Dirac points, so the gap closes only in the limit
        r = band_structure(RationalFlux(1, 2), kgrid_size=n).band_ranges()
        gaps.append(r[1, 0] - r[0, 1])
    assert gaps[0] > gaps[1] > gaps[2] > 0 and gaps[2] < 0.5
    r = band_structure(RationalFlux(1, 2), kgrid_size=8).band_ranges()
    assert r[1, 0] - r[0, 1] < 1e-12
    isl = detect_islands(band_structure(RationalFlux(1, 2)), 0.1)
    assert [(i.m_lo, i.m_hi) for i in isl] == [(1, 2)]


def test_third_flux_islands():
    bs = band_structure(THIRD, kgrid_size=64)
    r = bs.band_ranges()
    assert bs.nbands == 3 and (r[1:, 0] - r[:-1, 1] > 0.1).all()
    isl = detect_islands(band_structure(THIRD), 0.1)
    assert [(i.m_lo, i.m_hi) for i in isl] == [(1, 1), (2, 2), (3, 3)]
    assert [(i.m_lo, i.m_hi) for i in detect_islands(bs, 100.0)] == [(1, 3)]


def test_ids():
    mk = lambda M, q: SpectralIsland(1, M, (-np.inf, 0), (0, 1), RationalFlux(1, q), q)
    assert ids_of_island(mk(1, 3)) == Fraction(1, 3)
    assert ids_of_island(mk(3, 3)) == 1
    assert ids_of_island(mk(2, 5)) == Fraction(2, 5)


def test_track_lowest_band():
    fl = [RationalFlux(1, 5), RationalFlux(1, 4), THIRD]
    tr = track_island(fl)
    assert tr.aborted_at is None
    assert [i.M for _, i in tr.points] == [1, 1, 1]
    assert tr.ids == [Fraction(1, 5), Fraction(1, 4), Fraction(1, 3)]
    lab = diophantine_label(tr)
    assert (lab.c0, lab.c1) == (0, 1)
    rep = streda_check(tr, lab, 1.0)
    assert rep["flagged"] == [] and Fraction(rep["max_dev_c1"]) == 0
    assert [Fraction(r["slope"]) for r in rep["rows"]] == [1]


def test_track_certification():
    tr = track_island([RationalFlux(1, 5), RationalFlux(1, 4), THIRD])
    assert tr.certified and max(tr.margins) < 0.5
    # band 2 of 2/5, 3/7, 4/9: every single band has IDS 1/q, so the IDS fits a line of
    # slope -2 exactly, while the Chern numbers are 3, 5, -2; the jumps exceed the gaps
    fl = [RationalFlux(2, 5), RationalFlux(3, 7), RationalFlux(4, 9)]
    tr = track_island(fl, seed_index=1)
    assert diophantine_label(tr).c1 == -2
    assert [chern_kspace(i).integer for _, i in tr.points] == [3, 5, -2]
    assert not tr.certified and max(tr.margins) > 1


def test_track_single_flux_and_through_half():
    seed = detect_islands(band_structure(THIRD), 0.1)[0]
    tr = track_island([THIRD], seed_island=seed)
    assert len(tr.points) == 1 and tr.points[0][1] == seed
    # the two bands of 1/2 touch, so no island at 1/2 continues the lowest band of 1/3
    tr = track_island([THIRD, RationalFlux(2, 5), RationalFlux(1, 2)], delta_gap=0.1)
    assert tr.aborted_at == RationalFlux(1, 2)
    assert [f for f, _ in tr.points] == [THIRD, RationalFlux(2, 5)]


def test_streda_flags_corruption():
    tr = track_island([RationalFlux(1, 5), RationalFlux(1, 4), THIRD])
    lab = diophantine_label(tr)
    bad = streda_check(tr, lab, ids=[Fraction(1, 5), Fraction(1, 4), Fraction(2, 5)])
    assert bad["flagged"] == ["1/4"]
    const = IslandTrack(tuple((f, SpectralIsland(1, f.q, (-np.inf, -4), (4, np.inf), f, f.q))
                              for f in (RationalFlux(1, 5), RationalFlux(1, 4), THIRD)), 0.0)
    lab = diophantine_label(const)
    assert (lab.c0, lab.c1) == (1, 0)


def test_label_rejects_fractional_slope():
    pts = tuple((f, SpectralIsland(1, 1, (-np.inf, 0), (0, 1), f, 2 * f.q))
                for f in (RationalFlux(1, 5), RationalFlux(1, 4)))
    with pytest.raises(TrackError):
        diophantine_label(IslandTrack(pts, 0.0))


@pytest.mark.parametrize("q", range(2, 11))
def test_diophantine_oracle_brute_force(q):
    for p in range(1, q):
        if np.gcd(p, q) != 1:
            continue
        for r in range(1, q):
            assert diophantine_oracle(r, p, q) == brute_t(r, p, q)


def test_chern_examples():
    assert chern_kspace(detect_islands(band_structure(RationalFlux(0, 1)))[0]).integer == 0
    isl = detect_islands(band_structure(THIRD))
    c = chern_kspace(isl[0])
    assert c.integer == 1 and c.residual < 1e-6
    fine = chern_kspace(isl[0], kgrid_size=128)
    assert fine.value == pytest.approx(c.value, abs=1e-9)
    whole = SpectralIsland(1, 3, (-np.inf, -4), (4, np.inf), THIRD, 3)
    assert chern_kspace(whole).integer == 0
    assert sum(chern_kspace(i).integer for i in isl) == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_link_chern_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    bs = band_structure(RationalFlux(1, 5), kgrid_size=12, keep_vectors=True)
    F = bs.vectors[..., :2]  # two lowest bands of 1/5: an island with c1 = 2 (t for r = 2)
    c0 = link_chern(F)
    Z = rng.normal(size=F.shape[:2] + (2, 2)) + 1j * rng.normal(size=F.shape[:2] + (2, 2))
    Q, _ = np.linalg.qr(Z)
    assert link_chern(F @ Q) == pytest.approx(c0, abs=1e-9)
    assert round(c0) == diophantine_oracle(2, 1, 5)


def test_link_chern_detects_coarse_grid():
    F = np.ones((8, 8, 2, 1), complex)
    F[::2, :, 0, 0] = 0.0
    F[::2, :, 1, 0] = 1.0
    F[1::2, :, 1, 0] = 0.0
    with pytest.raises(GridTooCoarseError):
        link_chern(F)


def test_gap_labels_third():
    bs, isl, rows = gap_labels(THIRD)
    assert [(g.m_hi, g.ids, g.c1, g.c0) for g in rows] == [(1, Fraction(1, 3), 1, 0), (2, Fraction(2, 3), -1, 1)]
    assert all(g.diophantine_ok() and g.c1 == g.oracle_t for g in rows)


def test_island_frames_orthonormal():
    isl = detect_islands(band_structure(RationalFlux(2, 5)))[0]
    F = island_frames(isl, kgrid_size=8)
    G = np.conj(np.swapaxes(F, -1, -2)) @ F
    assert np.abs(G - np.eye(isl.M)).max() < 1e-12


def test_chern_realspace():
    isl = detect_islands(band_structure(THIRD))[0]
    est = chern_realspace(project_island_kernel(THIRD, isl, 12))
    assert abs(est.value - 1) <= 0.05
    zero = RationalFlux(0, 1)
    z = chern_realspace(project_island_kernel(zero, detect_islands(band_structure(zero))[0], 8))
    assert abs(z.value) < 1e-6


def test_chern_realspace_of_identity():
    class Ident:
        sites = np.array([(i, j) for i in range(-3, 4) for j in range(-3, 4)])
        values = np.eye(49, dtype=complex)
        decay = None
        bloch = None
        center = (0, 0)
        R = 3
    assert chern_realspace(Ident()).value == 0.0


def test_continuum_label():
    V = PotentialSpec()
    fl = [RationalFlux(1, 5), RationalFlux(1, 4), THIRD]
    tr = track_island(fl, V, "continuum", kgrid_size=8)
    lab = diophantine_label(tr)
    assert (lab.c0, lab.c1) == (0, 1)
    assert chern_kspace(tr.points[-1][1], V, "continuum", 8).integer == 1


def test_gap_label_dataclass():
    g = GapLabel(Fraction(1, 3), -1)
    assert g.ids(Fraction(1, 6)) == Fraction(1, 6)

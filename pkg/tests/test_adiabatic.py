import numpy as np
import pytest

from gaplab.adiabatic import GapClosedError, expansion_fit, gap_radius, mean_flux, window_ids
from gaplab.flux import FieldProfile, RationalFlux
from gaplab.hamiltonians import sample_hamiltonian
from gaplab.spectral import SpectralIsland, band_structure, detect_islands

THIRD = RationalFlux(1, 3)
L = 27
ORIGIN = -(L - 1) / 2


@pytest.fixture(scope="module")
def lowest():
    return detect_islands(band_structure(THIRD))[0]


@pytest.fixture(scope="module")
def sample():
    return sample_hamiltonian(L, THIRD, origin=ORIGIN)


def test_mean_flux():
    assert mean_flux(FieldProfile(2.0)) == 2.0
    assert mean_flux(FieldProfile(1.0, (((1, 0), 0.3),))) == 1.0
    assert mean_flux(FieldProfile(0.5, (((1, 0), 0.3), ((2, 1), -0.7, 1.0)))) == 0.5


def test_gap_radius_against_dense(sample, lowest):
    E = np.linalg.eigvalsh(sample.entries.toarray())
    e = float(np.mean(lowest.upper_gap))
    r, near = gap_radius(sample.entries, e)
    assert r == pytest.approx(np.abs(E - e).min(), rel=1e-5)
    assert r <= np.abs(E - e).min()


@pytest.mark.parametrize("L_inner", [9, 13])
def test_uniform_window_density_is_exact(sample, lowest, L_inner):
    # every lattice translation is a magnetic symmetry, so the diagonal is 1/3 at every site
    wd = window_ids(sample, lowest.window, L_inner)
    assert wd.value == pytest.approx(1 / 3, abs=1e-10)
    assert wd.approx_error <= 1e-10


def test_window_density_against_dense(sample, lowest):
    E, W = np.linalg.eigh(sample.entries.toarray())
    lo, hi = lowest.window
    Wi = W[:, (E > lo) & (E < hi)]
    diag = np.sum(np.abs(Wi) ** 2, axis=1)
    X = sample.coords()
    inside = np.all(np.abs(X) < 13 / 2, axis=1)
    wd = window_ids(sample, lowest.window, 13)
    assert wd.value == pytest.approx(diag[inside].mean(), abs=1e-10)


def test_full_window_is_one(sample):
    wd = window_ids(sample, (-np.inf, np.inf), 9)
    assert wd.value == 1.0


def test_window_edge_in_spectrum(sample):
    with pytest.raises(GapClosedError, match="gap closed"):
        window_ids(sample, (-np.inf, -2.4), 9, min_gap=0.5)


def test_window_too_large(sample, lowest):
    with pytest.raises(ValueError):
        window_ids(sample, lowest.window, 20)


def test_all_bands_slope_zero():
    # all three bands; the window edges lie beyond the Gershgorin bound 4 of every sample
    whole = SpectralIsland(1, 3, (-np.inf, -3.9), (3.9, np.inf), THIRD, 3, -3.9, 3.9)
    rep = expansion_fit(THIRD, whole, FieldProfile(1.0), [0.02, 0.05], L=24, L_inner=12)
    assert rep.c1 == 0 and rep.densities == [1.0, 1.0]
    assert abs(rep.slope) < 1e-12


def test_lambda_rounding_is_reported(lowest):
    rep = expansion_fit(THIRD, lowest, FieldProfile(0.0, (((1, 0), 1.0, -np.pi / 2),)), [0.05, 0.1], L=24,
                        L_inner=12)
    assert rep.requested_lams == [0.05, 0.1]
    assert all(lam * 24 == pytest.approx(round(lam * 24)) for lam in rep.lams)

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gaplab.flux import (FieldProfile, RationalFlux, composition_defect, farey_fluxes, peierls_phase,
                         triangle_flux)

coord = st.floats(-50, 50, allow_nan=False)
point = st.tuples(coord, coord)


def test_peierls_examples():
    assert peierls_phase((1, 0), (0, 1), 1.0) == pytest.approx(-0.5)
    assert peierls_phase((3.7, -2), (3.7, -2), 5.0) == 0.0
    assert peierls_phase((2, 0), (0, 3), 2 * np.pi) == pytest.approx(-6 * np.pi)


@given(point, point, st.floats(-10, 10, allow_nan=False))
def test_peierls_antisymmetric(x, xp, b):
    assert peierls_phase(x, xp, b) == pytest.approx(-peierls_phase(xp, x, b), abs=1e-9)


def test_composition_examples():
    assert composition_defect((1, 0), (0, 0), (0, 1)) == pytest.approx(0.5)
    assert peierls_phase((1, 0), (0, -1)) == pytest.approx(0.5)
    x, xp = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    assert composition_defect(x, 0.3 * x + 0.7 * xp, xp) == pytest.approx(0.0, abs=1e-12)
    assert composition_defect(x, x, xp) == pytest.approx(0.0, abs=1e-12)


def test_composition_identity_many_triples():
    rng = np.random.default_rng(7)
    x, y, xp = (rng.uniform(-100, 100, (10_000, 2)) for _ in range(3))
    lhs = composition_defect(x, y, xp)
    rhs = peierls_phase(x - y, y - xp)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@given(point, point, point)
def test_composition_is_signed_triangle_area(x, y, xp):
    # phi(x, y) + phi(y, x') + phi(x', x) is minus the signed area of <x, y, x'>
    x, y, xp = map(np.asarray, (x, y, xp))
    area = 0.5 * ((y - x)[0] * (xp - x)[1] - (y - x)[1] * (xp - x)[0])
    assert composition_defect(x, y, xp) == pytest.approx(-area, abs=1e-7)


def test_farey():
    assert [str(f) for f in farey_fluxes(1)] == ["0/1", "1/1"]
    assert [str(f) for f in farey_fluxes(3)] == ["0/1", "1/3", "1/2", "2/3", "1/1"]
    count = sum(1 for q in range(1, 6) for p in range(q + 1) if math.gcd(p, q) == 1)
    assert len(farey_fluxes(5)) == count == 11
    with pytest.raises(ValueError):
        farey_fluxes(0)


def test_rational_flux():
    f = RationalFlux.of(Fraction(2, 6))
    assert (f.p, f.q) == (1, 3) and f.phi == Fraction(1, 3)
    assert f.b == pytest.approx(2 * np.pi / 3)
    with pytest.raises(ValueError):
        RationalFlux(2, 4)
    with pytest.raises(ValueError):
        RationalFlux(1, 0)


def test_triangle_flux_trivial():
    one = FieldProfile(1.0)
    assert triangle_flux((0, 0), (1, 0), (0, 1), one, 1.0) == pytest.approx(0.5, rel=1e-12)
    assert triangle_flux((0, 0), (0, 1), (1, 0), one, 1.0) == pytest.approx(-0.5, rel=1e-12)
    assert triangle_flux((0, 0), (3, 1), (-2, 5), one, 0.0) == 0.0


def test_triangle_flux_against_quadrature():
    fld = FieldProfile(1.0, (((1, 0), 1.0),))
    lam = 0.1
    got = triangle_flux((0, 0), (10, 0), (0, 10), fld, lam)
    ref, _ = integrate.dblquad(lambda y2, y1: lam * fld(np.array([lam * y1, lam * y2])), 0, 10,
                               0, lambda y1: 10 - y1, epsabs=1e-12, epsrel=1e-12)
    assert got == pytest.approx(ref, rel=1e-8)


def test_cell_flux_matches_two_triangles():
    fld = FieldProfile(0.4, (((1, 2), 0.7, 0.3), ((0, 1), -0.2, 1.0)))
    lam = 0.37
    x0 = np.array([1.5, -2.25])
    a, b, c, d = x0, x0 + (1, 0), x0 + (1, 1), x0 + (0, 1)
    tri = triangle_flux(a, b, c, fld, lam, rtol=1e-12) + triangle_flux(a, c, d, fld, lam, rtol=1e-12)
    assert fld.cell_flux(x0, lam) == pytest.approx(tri, rel=1e-10)


def test_field_profile():
    fld = FieldProfile(1.0, (((1, 0), 0.3),))
    s = fld.sample(32)
    assert abs(s.mean()) < 1e-14
    assert fld.sup_bound == pytest.approx(1.3)
    assert fld.lipschitz_bound == pytest.approx(0.3 * 2 * np.pi)
    with pytest.raises(ValueError):
        FieldProfile(0.0, (((0, 0), 1.0),))


@settings(max_examples=50)
@given(st.integers(-5, 5), st.integers(1, 12))
def test_rational_flux_roundtrip(p, q):
    f = RationalFlux.of(p, q)
    assert f.phi == Fraction(p, q)
    assert math.gcd(abs(f.p), f.q) == 1

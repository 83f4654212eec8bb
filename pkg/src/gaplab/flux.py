"""Rational flux arithmetic, Peierls phases and field profiles.

Units: e = hbar = c = 1 and m = 1/2, so H = (P - bA)^2 + V and the flux
per unit cell divided by 2*pi is phi = b / (2*pi).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True, order=True)
class RationalFlux:
    """Reduced flux p/q per unit cell, in units of the flux quantum.

    Parameters
    ----------
    p : int
        Numerator, any sign.
    q : int
        Denominator, the magnetic period (q >= 1).
    """

    p: int
    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"q must be positive, got {self.q}")
        if gcd(abs(self.p), self.q) != 1:
            raise ValueError(f"{self.p}/{self.q} is not reduced")

    @classmethod
    def of(cls, p, q=1) -> "RationalFlux":
        """Build from any fraction-like input, reducing it."""
        f = Fraction(p, q)
        return cls(f.numerator, f.denominator)

    @property
    def phi(self) -> Fraction:
        return Fraction(self.p, self.q)

    @property
    def b(self) -> float:
        return 2 * np.pi * self.p / self.q

    def __str__(self):
        return f"{self.p}/{self.q}"


def farey_fluxes(qmax: int) -> list[RationalFlux]:
    """All reduced p/q in [0, 1] with q <= qmax, ascending."""
    if qmax < 1:
        raise ValueError("qmax must be >= 1")
    fr = {Fraction(p, q) for q in range(1, qmax + 1) for p in range(0, q + 1)}
    return [RationalFlux(f.numerator, f.denominator) for f in sorted(fr)]


def peierls_phase(x, xp, b=1.0):
    """Antisymmetric phase b * (x1' x2 - x2' x1) / 2.

    Works on single points or broadcastable arrays with a trailing axis of
    length 2.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    return b * 0.5 * (xp[..., 0] * x[..., 1] - xp[..., 1] * x[..., 0])


def composition_defect(x, y, xp):
    """phi(x, y) + phi(y, x') - phi(x, x'); equals phi(x - y, y - x')."""
    return peierls_phase(x, y) + peierls_phase(y, xp) - peierls_phase(x, xp)


def magnetic_translation_phase(x, eta, b):
    """Phase b*phi(x, eta) picked up by (tau_eta psi)(x) = e^{i b phi(x,eta)} psi(x - eta)."""
    return peierls_phase(x, eta, b)


@dataclass(frozen=True)
class FieldProfile:
    """Constant-plus-periodic magnetic field.

    B(x) = mean + sum_j a_j cos(2 pi n_j . x + phase_j), the cosines having
    zero average over the unit torus so that ``mean`` is the average field.

    Parameters
    ----------
    mean : float
        Average field <B>.
    harmonics : tuple of ((n1, n2), amplitude, phase)
        Integer wavevectors (not both zero), real amplitudes, phases in radians.
    """

    mean: float = 0.0
    harmonics: tuple = field(default_factory=tuple)

    def __post_init__(self):
        clean = []
        for h in self.harmonics:
            if len(h) == 2:
                (n, a), ph = h, 0.0
            else:
                n, a, ph = h
            n = (int(n[0]), int(n[1]))
            if n == (0, 0):
                raise ValueError("zero wavevector belongs in `mean`")
            clean.append((n, float(a), float(ph)))
        object.__setattr__(self, "harmonics", tuple(clean))

    @property
    def lipschitz_bound(self) -> float:
        """Upper bound on |grad B| from the Fourier coefficients."""
        return float(sum(abs(a) * 2 * np.pi * np.hypot(*n) for n, a, _ in self.harmonics))

    @property
    def sup_bound(self) -> float:
        return abs(self.mean) + sum(abs(a) for _, a, _ in self.harmonics)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape[:-1], self.mean)
        for n, a, ph in self.harmonics:
            out = out + a * np.cos(2 * np.pi * (n[0] * y[..., 0] + n[1] * y[..., 1]) + ph)
        return out

    def sample(self, n: int) -> np.ndarray:
        """Periodic part on an n x n grid of the unit torus."""
        g = np.arange(n) / n
        y = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        return self(y) - self.mean

    def cell_flux(self, x0, lam):
        """Exact flux of lam * B(lam y) through unit squares [x0, x0 + 1]^2.

        ``x0`` has a trailing axis of length 2 (lower-left corners).
        """
        x0 = np.asarray(x0, dtype=float)
        out = np.full(x0.shape[:-1], lam * self.mean)
        for n, a, ph in self.harmonics:
            # integral of cos(k.y + ph) over the unit square, k = 2 pi lam n
            k1, k2 = 2 * np.pi * lam * n[0], 2 * np.pi * lam * n[1]
            z = np.exp(1j * (k1 * x0[..., 0] + k2 * x0[..., 1] + ph))
            z = z * _phi_int(k1) * _phi_int(k2)
            out = out + lam * a * z.real
        return out


def _phi_int(k):
    """Integral of exp(i k t) over t in [0, 1]."""
    return 1.0 if k == 0 else (np.exp(1j * k) - 1) / (1j * k)


# Degree-5 seven-point rule on the reference triangle (barycentric weights).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _tri_rule(f, v):
    area = 0.5 * ((v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1]))
    return area * np.dot(_W, f(_BARY @ v))


def triangle_flux(x, y, xp, field: FieldProfile, lam: float, rtol=1e-8, max_depth=14):
    """Flux of lam * B(lam .) through the oriented triangle <x, y, x'>.

    Recursive four-way subdivision with a degree-5 rule until parent and
    children agree to ``rtol`` (relative to the total).
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return 0.0
    v0 = np.array([x, y, xp], dtype=float)

    def f(pts):
        return lam * field(lam * pts)

    scale = max(abs(field.mean), field.sup_bound, 1e-300) * lam * (abs(_tri_rule(lambda p: np.ones(len(p)), v0)) + 1e-300)
    worst = [0.0]

    def rec(v, whole, depth):
        m01, m12, m20 = (v[0] + v[1]) / 2, (v[1] + v[2]) / 2, (v[2] + v[0]) / 2
        kids = [np.array(t) for t in ((v[0], m01, m20), (m01, v[1], m12), (m20, m12, v[2]), (m01, m12, m20))]
        parts = [_tri_rule(f, k) for k in kids]
        s = sum(parts)
        err = abs(s - whole)
        if err <= rtol * scale * 0.25 ** (depth) or err < 1e-15 * scale:
            return s
        if depth >= max_depth:
            worst[0] = max(worst[0], err / scale)
            return s
        return sum(rec(k, p, depth + 1) for k, p in zip(kids, parts))

    val = rec(v0, _tri_rule(f, v0), 0)
    if worst[0] > rtol:
        raise QuadratureError(f"triangle_flux reached relative error {worst[0]:.2e} > {rtol:.1e}")
    return float(val)

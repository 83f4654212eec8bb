"""Fiber and sample Hamiltonians with exact Peierls link phases.

Hopping convention: the kernel element H[t, s] for a link s -> t carries
exp(i theta(s -> t)), theta being the line integral of the vector potential
along the link, so that the phases around a counterclockwise plaquette add
up to the flux through it.

Every operator is built from one periodic gauge on a rectangular cell of
n1 x n2 sites (``cell_link_phases``). Bloch fibers use
H(k)[t, s] += exp(i theta) exp(-i k . Gamma) for a link from s to t + Gamma.
Site index inside a cell is ``i * n2 + j`` for site (i, j).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .flux import FieldProfile, RationalFlux

Backend = Literal["lattice", "continuum"]


class AdmissibilityError(ValueError):
    """Total flux through a torus is not an integer number of quanta."""


class ResolutionError(ValueError):
    """Continuum grid too coarse for the potential."""


@dataclass(frozen=True)
class PotentialSpec:
    """Periodic scalar potential.

    V(x) = sum_j a_j cos(2 pi (n1 x1 / P1 + n2 x2 / P2)) with period
    (P1, P2) in lattice units. On the lattice a period of (1, 1) leaves V
    constant on sites, so superlattice periods are how site potentials
    enter there.

    Parameters
    ----------
    kind : {"none", "cosine", "fourier-list"}
        ``cosine`` takes one amplitude a and means a (cos 2pi x1/P1 + cos 2pi x2/P2).
    coefficients : tuple
        For ``fourier-list``: ((n1, n2), amplitude) pairs. For ``cosine``: (a,).
    period : (int, int)
    """

    kind: str = "none"
    coefficients: tuple = ()
    period: tuple = (1, 1)

    def __post_init__(self):
        if self.kind not in ("none", "cosine", "fourier-list"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        P = (int(self.period[0]), int(self.period[1]))
        if min(P) < 1:
            raise ValueError("potential period must be positive")
        object.__setattr__(self, "period", P)
        if self.kind == "cosine":
            (a,) = self.coefficients
            modes = (((1, 0), float(a)), ((0, 1), float(a)))
        elif self.kind == "fourier-list":
            modes = tuple(((int(n[0]), int(n[1])), float(a)) for n, a in self.coefficients)
        else:
            modes = ()
        object.__setattr__(self, "_modes", modes)

    @property
    def modes(self):
        return self._modes

    @property
    def bound(self) -> float:
        return float(sum(abs(a) for _, a in self.modes))

    def __call__(self, x1, x2):
        out = np.zeros(np.broadcast(x1, x2).shape)
        P1, P2 = self.period
        for (n1, n2), a in self.modes:
            out = out + a * np.cos(2 * np.pi * (n1 * np.asarray(x1) / P1 + n2 * np.asarray(x2) / P2))
        return out


NO_POTENTIAL = PotentialSpec()


def magnetic_cell(flux: RationalFlux, V: PotentialSpec = NO_POTENTIAL) -> tuple[int, int]:
    """Smallest rectangular cell (in lattice units) commensurate with flux and V."""
    P1, P2 = V.period
    return P1, math.lcm(flux.q, P2)


def brillouin_zone(cell) -> tuple[tuple[float, float], tuple[float, float]]:
    """Half-open box (-pi/a1, pi/a1] x (-pi/a2, pi/a2] for a cell of sides a1, a2."""
    return (-np.pi / cell[0], np.pi / cell[0]), (-np.pi / cell[1], np.pi / cell[1])


def reduce_k(k, cell) -> tuple[np.ndarray, bool]:
    """Map k into the half-open zone; flag whether it moved."""
    k = np.asarray(k, dtype=float)
    g = 2 * np.pi / np.asarray(cell, dtype=float)
    kr = k - g * np.ceil((k - g / 2) / g)
    return kr, bool(np.any(np.abs(kr - k) > 1e-14))


def cell_link_phases(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Periodic link phases realizing plaquette fluxes ``F`` on a cell.

    ``F[i, j]`` is the counterclockwise flux through the plaquette with
    lower-left corner (i, j); plaquettes crossing the cell edge wrap.

    Returns
    -------
    theta1, theta2 : ndarray
        Phases on links (i, j) -> (i+1, j) and (i, j) -> (i, j+1). All
        x1-links vanish except the wrap column; x2-links accumulate the
        flux to their left.
    """
    F = np.asarray(F, dtype=float)
    total = F.sum()
    if abs(total / (2 * np.pi) - round(total / (2 * np.pi))) > 1e-9:
        raise AdmissibilityError(f"cell flux {total / (2 * np.pi):.12g} quanta is not an integer")
    n1, n2 = F.shape
    R = F.sum(axis=0)
    theta1 = np.zeros_like(F)
    theta1[n1 - 1, :] = -np.concatenate(([0.0], np.cumsum(R)[:-1]))
    theta2 = np.concatenate((np.zeros((1, n2)), np.cumsum(F, axis=0)[:-1]), axis=0)
    return theta1, theta2


def _links(n1, n2, theta1, theta2):
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i, j = i.ravel(), j.ravel()
    src = np.concatenate((i * n2 + j, i * n2 + j))
    dst = np.concatenate((((i + 1) % n1) * n2 + j, i * n2 + (j + 1) % n2))
    g1 = np.concatenate(((i + 1) // n1, np.zeros_like(i)))
    g2 = np.concatenate((np.zeros_like(j), (j + 1) // n2))
    ph = np.concatenate((theta1.ravel(), theta2.ravel()))
    return src, dst, g1, g2, ph


def assemble(n1, n2, theta1, theta2, onsite, k=(0.0, 0.0), hop=1.0, cell_len=None, sparse=False, periodic=True):
    """Bloch matrix of a nearest-neighbour magnetic hopping model on an n1 x n2 cell.

    Parameters
    ----------
    hop : complex
        Hopping amplitude multiplying every link phase.
    cell_len : (float, float), optional
        Physical side lengths of the cell, default (n1, n2).
    periodic : bool
        False drops the links leaving the cell (open sample).
    """
    a1, a2 = cell_len if cell_len is not None else (n1, n2)
    src, dst, g1, g2, ph = _links(n1, n2, theta1, theta2)
    if not periodic:
        keep = (g1 == 0) & (g2 == 0)
        src, dst, g1, g2, ph = src[keep], dst[keep], g1[keep], g2[keep], ph[keep]
    w = hop * np.exp(1j * ph) * np.exp(-1j * (k[0] * g1 * a1 + k[1] * g2 * a2))
    dim = n1 * n2
    rows = np.concatenate((dst, src, np.arange(dim)))
    cols = np.concatenate((src, dst, np.arange(dim)))
    vals = np.concatenate((w, w.conj(), np.asarray(onsite, dtype=complex).ravel()))
    M = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    M.sum_duplicates()
    return M if sparse else M.toarray()


@dataclass(frozen=True, eq=False)
class FiberOperator:
    """H(k) on one magnetic cell."""

    k: tuple
    entries: object  # ndarray (lattice) or scipy sparse (continuum)
    flux: RationalFlux
    backend: str
    cell: tuple
    grid: int | None = None
    reduced: bool = False

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dense(self) -> np.ndarray:
        return self.entries.toarray() if sp.issparse(self.entries) else np.asarray(self.entries)


def lattice_fiber(flux: RationalFlux, k, V: PotentialSpec = NO_POTENTIAL) -> FiberOperator:
    """Harper-type fiber on the magnetic cell.

    For V with unit period the cell is 1 x q and the matrix is
    diag 2cos(k1 + b j) + V_j with unit hoppings along j, closed by
    exp(-+ i q k2) on the wrap link.
    """
    cell = magnetic_cell(flux, V)
    kr, moved = reduce_k(k, cell)
    if moved:
        warnings.warn(f"k={tuple(np.asarray(k))} reduced into the magnetic zone", stacklevel=2)
    H = _lattice_matrix(flux, V, cell, kr)
    return FiberOperator(tuple(kr), H, flux, "lattice", cell, None, moved)


def _lattice_theta(flux, cell):
    return cell_link_phases(np.full(cell, flux.b))


def _lattice_onsite(V, cell):
    i, j = np.meshgrid(np.arange(cell[0]), np.arange(cell[1]), indexing="ij")
    return V(i, j)


def _lattice_matrix(flux, V, cell, k):
    t1, t2 = _lattice_theta(flux, cell)
    return assemble(*cell, t1, t2, _lattice_onsite(V, cell), k)


def lattice_fibers(flux: RationalFlux, ks, V: PotentialSpec = NO_POTENTIAL) -> np.ndarray:
    """Stack of lattice fibers for an array of quasimomenta (..., 2), vectorized."""
    cell = magnetic_cell(flux, V)
    t1, t2 = _lattice_theta(flux, cell)
    onsite = _lattice_onsite(V, cell).ravel()
    src, dst, g1, g2, ph = _links(*cell, t1, t2)
    ks = np.asarray(ks, dtype=float)
    shp = ks.shape[:-1]
    ks = ks.reshape(-1, 2)
    dim = cell[0] * cell[1]
    H = np.zeros((len(ks), dim, dim), complex)
    H[:, np.arange(dim), np.arange(dim)] = onsite
    w = np.exp(1j * ph)[None, :] * np.exp(-1j * (np.outer(ks[:, 0], g1 * cell[0]) + np.outer(ks[:, 1], g2 * cell[1])))
    for e in range(len(src)):
        H[:, dst[e], src[e]] += w[:, e]
        H[:, src[e], dst[e]] += w[:, e].conj()
    return H.reshape(shp + (dim, dim))


def continuum_fiber(flux: RationalFlux, k, V: PotentialSpec = NO_POTENTIAL, N: int = 24) -> FiberOperator:
    """Five-point discretization of (P - bA)^2 + V on one magnetic cell.

    The cell is (P1, lcm(q, P2)) in physical units, i.e. 1 x q for V of unit
    period, sampled with spacing h = 1/N. Each grid plaquette carries flux
    b h^2. The result is a sparse Hermitian matrix of dimension q N^2.
    """
    if N < 8:
        raise ResolutionError("continuum grid needs N >= 8")
    P1, P2 = V.period
    for (n1, n2), a in V.modes:
        if a != 0 and (N * P1 < 4 * abs(n1) or N * P2 < 4 * abs(n2)):
            raise ResolutionError(f"N={N} does not resolve potential mode ({n1}, {n2})")
    cell = magnetic_cell(flux, V)
    kr, moved = reduce_k(k, cell)
    if moved:
        warnings.warn(f"k={tuple(np.asarray(k))} reduced into the magnetic zone", stacklevel=2)
    H = _continuum_matrix(flux, V, N, cell, kr)
    return FiberOperator(tuple(kr), H, flux, "continuum", cell, N, moved)


def continuum_sites(cell, N):
    n1, n2 = cell[0] * N, cell[1] * N
    h = 1.0 / N
    x1 = (np.arange(n1) + 0.5) * h - cell[0] / 2
    x2 = (np.arange(n2) + 0.5) * h - cell[1] / 2
    return np.meshgrid(x1, x2, indexing="ij")


def _continuum_matrix(flux, V, N, cell, k):
    n1, n2 = cell[0] * N, cell[1] * N
    h = 1.0 / N
    t1, t2 = cell_link_phases(np.full((n1, n2), flux.b * h * h))
    X1, X2 = continuum_sites(cell, N)
    onsite = 4.0 / h**2 + V(X1, X2)
    return assemble(n1, n2, t1, t2, onsite, k, hop=-1.0 / h**2, cell_len=cell, sparse=True)


@dataclass(frozen=True, eq=False)
class SampleOperator:
    """Finite lattice sample with position-dependent flux."""

    geometry: str
    L: int
    entries: sp.csr_matrix
    theta1: np.ndarray
    theta2: np.ndarray
    lam: float
    field: FieldProfile
    flux: RationalFlux
    plaquette_flux: np.ndarray = field(repr=False, default=None)
    origin: float = 0.0
    V: PotentialSpec = NO_POTENTIAL

    def coords(self) -> np.ndarray:
        """Site positions, shape (L*L, 2), in the row-major order of ``entries``."""
        i, j = np.meshgrid(np.arange(self.L), np.arange(self.L), indexing="ij")
        return np.stack((i.ravel(), j.ravel()), axis=-1) + self.origin

    @property
    def link_phases(self):
        return np.exp(1j * self.theta1), np.exp(1j * self.theta2)


def plaquette_fluxes(L, flux: RationalFlux, lam, fld: FieldProfile, origin=0.0):
    """Flux b + (cell integral of lam B(lam y)) for each unit plaquette of an L x L sample."""
    i, j = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    corners = np.stack((i + origin, j + origin), axis=-1).astype(float)
    return flux.b + (fld.cell_flux(corners, lam) if lam != 0 else np.zeros(i.shape))


def admissible_lambda(lam, L, fld: FieldProfile) -> float:
    """Nearest lam for which lam B(lam x) is periodic on an L-torus with integer total flux.

    Harmonics need lam n L integer for every wavevector component; a nonzero
    mean needs lam <B> L^2 in 2 pi Z. Both at once is only possible at lam = 0
    in general and is rejected.
    """
    if lam == 0:
        return 0.0
    comps = [abs(c) for n, _, _ in fld.harmonics for c in n if c]
    if comps and fld.mean != 0:
        raise AdmissibilityError("a field with both a mean and harmonics has no common admissible lam")
    if comps:
        unit = 1.0 / (L * math.gcd(*comps))
    elif fld.mean != 0:
        unit = 2 * np.pi / (abs(fld.mean) * L * L)
    else:
        return float(lam)
    return max(1, round(lam / unit)) * unit


def sample_hamiltonian(L: int, base_flux: RationalFlux, lam: float = 0.0, field: FieldProfile = FieldProfile(),
                       V: PotentialSpec = NO_POTENTIAL, geometry: str = "torus", origin: float = 0.0) -> SampleOperator:
    """Sparse lattice Hamiltonian on an L x L sample with total field b + lam B(lam x).

    Site (i, j) sits at (i + origin, j + origin); plaquette fluxes are exact
    integrals over the unit squares. On a torus the total flux must be an
    integer number of quanta and the field must be periodic; otherwise the
    error names the nearest admissible lam.
    """
    if geometry not in ("torus", "patch"):
        raise ValueError(f"unknown geometry {geometry!r}")
    if L < 4 * base_flux.q:
        raise ValueError(f"L={L} must be at least 4q={4 * base_flux.q}")
    F = plaquette_fluxes(L, base_flux, lam, field, origin)
    if geometry == "torus":
        periodic = all(abs(lam * n * L - round(lam * n * L)) < 1e-9 for h in field.harmonics for n in h[0]) if lam else True
        quanta = F.sum() / (2 * np.pi)
        if not periodic or abs(quanta - round(quanta)) > 1e-9:
            try:
                hint = f"; nearest admissible lam = {admissible_lambda(lam, L, field):.10g}"
            except AdmissibilityError as exc:
                hint = f"; {exc}"
            raise AdmissibilityError(f"torus flux {quanta:.10g} quanta is not admissible{hint}")
        t1, t2 = cell_link_phases(F)
    else:
        # open sample: same construction on the bulk links, wrap links dropped
        Fp = F.copy()
        Fp[-1, :] = 0.0
        Fp[:, -1] = 0.0
        Fp[-1, -1] = -Fp.sum()
        t1, t2 = cell_link_phases(Fp)
    i, j = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    H = assemble(L, L, t1, t2, V(i + origin, j + origin), sparse=True, periodic=geometry == "torus")
    return SampleOperator(geometry, L, H, t1, t2, lam, field, base_flux, F, origin, V)

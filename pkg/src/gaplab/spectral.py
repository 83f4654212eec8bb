"""Band structures, spectral islands, island tracking across flux and IDS."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg as sla

from .flux import RationalFlux
from .hamiltonians import (NO_POTENTIAL, PotentialSpec, continuum_fiber, lattice_fibers,
                           magnetic_cell)

DELTA_GAP = 1e-3
KGRID = 32


class EigensolverError(RuntimeError):
    pass


class AmbiguousMatchError(RuntimeError):
    pass


def kgrid(cell, n1, n2=None) -> np.ndarray:
    """Uniform grid covering the half-open zone exactly once, shape (n1, n2, 2)."""
    n2 = n1 if n2 is None else n2
    k1 = (-np.pi + 2 * np.pi * (np.arange(n1) + 1) / n1) / cell[0]
    k2 = (-np.pi + 2 * np.pi * (np.arange(n2) + 1) / n2) / cell[1]
    return np.stack(np.meshgrid(k1, k2, indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Eigenvalues over a k-grid; ``energies[a, c, m]`` ascending in m."""

    flux: RationalFlux
    ks: np.ndarray
    energies: np.ndarray
    backend: str = "lattice"
    V: PotentialSpec = NO_POTENTIAL
    grid: int | None = None
    vectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def cell(self):
        return magnetic_cell(self.flux, self.V)

    @property
    def nbands(self) -> int:
        return self.energies.shape[-1]

    def band_ranges(self) -> np.ndarray:
        e = self.energies.reshape(-1, self.nbands)
        return np.stack((e.min(axis=0), e.max(axis=0)), axis=1)

    def rows(self):
        """(k1, k2, band_index, energy) tuples with 1-based band index."""
        n1, n2, nb = self.energies.shape
        for a in range(n1):
            for c in range(n2):
                for m in range(nb):
                    yield (self.ks[a, c, 0], self.ks[a, c, 1], m + 1, self.energies[a, c, m])


def band_structure(flux: RationalFlux, V: PotentialSpec = NO_POTENTIAL, backend: str = "lattice",
                   kgrid_size: int = KGRID, N: int = 24, nbands: int | None = None,
                   keep_vectors: bool = False) -> BandStructure:
    """Diagonalize fibers on a kgrid_size x kgrid_size grid of the magnetic zone.

    The continuum backend returns only the lowest ``nbands`` (default 6)
    eigenpairs per k, via shift-invert Lanczos below the spectrum.
    """
    if kgrid_size < 8:
        raise ValueError("kgrid_size must be >= 8")
    cell = magnetic_cell(flux, V)
    ks = kgrid(cell, kgrid_size)
    if backend == "lattice":
        H = lattice_fibers(flux, ks, V)
        try:
            if keep_vectors:
                E, U = np.linalg.eigh(H)
            else:
                E, U = np.linalg.eigvalsh(H), None
        except np.linalg.LinAlgError as exc:
            bad = _first_bad_k(H, ks)
            raise EigensolverError(f"eigensolver failed at k={bad}") from exc
        if nbands is not None:
            E = E[..., :nbands]
            U = None if U is None else U[..., :nbands]
        return BandStructure(flux, ks, E, backend, V, None, U)
    if backend != "continuum":
        raise ValueError(f"unknown backend {backend!r}")
    nb = 6 if nbands is None else nbands
    E = np.empty(ks.shape[:2] + (nb,))
    U = None
    for a in range(ks.shape[0]):
        for c in range(ks.shape[1]):
            w, v = continuum_eigs(flux, ks[a, c], V, N, nb)
            E[a, c] = w
            if keep_vectors:
                if U is None:
                    U = np.empty(ks.shape[:2] + (len(v), nb), complex)
                U[a, c] = v
    return BandStructure(flux, ks, E, backend, V, N, U)


def continuum_eigs(flux, k, V, N, nb):
    """Lowest ``nb`` eigenpairs of one continuum fiber, ascending."""
    F = continuum_fiber(flux, k, V, N)
    shift = -V.bound - 1.0
    try:
        w, v = sla.eigsh(F.entries, k=nb, sigma=shift, which="LM", tol=1e-12, v0=np.ones(F.dim))
    except (sla.ArpackError, sla.ArpackNoConvergence) as exc:
        raise EigensolverError(f"eigensolver failed at k={tuple(k)}") from exc
    o = np.argsort(w)
    return w[o], v[:, o]


def _first_bad_k(H, ks):
    for idx in np.ndindex(H.shape[:-2]):
        try:
            np.linalg.eigvalsh(H[idx])
        except np.linalg.LinAlgError:
            return tuple(ks[idx])
    return None


@dataclass(frozen=True)
class SpectralIsland:
    """Bands m_lo..m_hi (1-based, inclusive) separated by gaps from the rest.

    ``lower_gap``/``upper_gap`` are open energy intervals; the outermost
    islands use +-inf for the missing side.
    """

    m_lo: int
    m_hi: int
    lower_gap: tuple
    upper_gap: tuple
    flux: RationalFlux
    cell_area: int = 0
    emin: float = 0.0
    emax: float = 0.0

    @property
    def M(self) -> int:
        return self.m_hi - self.m_lo + 1

    @property
    def bands(self) -> slice:
        return slice(self.m_lo - 1, self.m_hi)

    @property
    def support(self) -> tuple:
        return (self.emin, self.emax)

    @property
    def window(self) -> tuple:
        """Energy window centred in the two gaps."""
        lo = self.lower_gap[0] if np.isfinite(self.lower_gap[0]) else self.emin - 1.0
        hi = self.upper_gap[1] if np.isfinite(self.upper_gap[1]) else self.emax + 1.0
        return (0.5 * (lo + self.emin), 0.5 * (self.emax + hi))


def detect_islands(bs: BandStructure, delta_gap: float = DELTA_GAP) -> list[SpectralIsland]:
    """Maximal groups of bands separated by gaps wider than ``delta_gap``.

    A gap between bands m and m+1 is min_k E_{m+1} - max_k E_m. On the
    continuum backend the top computed band has no known upper neighbour,
    so the topmost group is dropped.
    """
    if delta_gap <= 0:
        raise ValueError("delta_gap must be positive")
    r = bs.band_ranges()
    nb = len(r)
    area = bs.cell[0] * bs.cell[1]
    cuts = [m for m in range(nb - 1) if r[m + 1, 0] - r[m, 1] > delta_gap]
    edges = [-1] + cuts + [nb - 1]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m_lo, m_hi = lo + 2, hi + 1
        lg = (r[lo, 1], r[lo + 1, 0]) if lo >= 0 else (-np.inf, r[0, 0])
        ug = (r[hi, 1], r[hi + 1, 0]) if hi < nb - 1 else (r[nb - 1, 1], np.inf)
        out.append(SpectralIsland(m_lo, m_hi, lg, ug, bs.flux, area,
                                  float(r[m_lo - 1:m_hi, 0].min()), float(r[m_lo - 1:m_hi, 1].max())))
    if bs.backend == "continuum":
        out = out[:-1]
    return out


def landau_island(bs: BandStructure, n: int = 0, delta_gap: float = DELTA_GAP) -> SpectralIsland:
    """Continuum island whose bands lie in the Landau window (2n+1) b +- b/2."""
    b = bs.flux.b
    lo, hi = (2 * n + 1) * b - b / 2, (2 * n + 1) * b + b / 2
    r = bs.band_ranges()
    inside = [m for m in range(len(r)) if r[m, 0] >= lo and r[m, 1] <= hi]
    if not inside or inside != list(range(inside[0], inside[-1] + 1)) or inside[-1] == len(r) - 1:
        raise ValueError(f"no isolated Landau island {n} within the computed bands")
    for isl in detect_islands(bs, delta_gap):
        if isl.m_lo == inside[0] + 1 and isl.m_hi == inside[-1] + 1:
            return isl
    raise ValueError(f"Landau window {n} is not gapped at delta_gap={delta_gap}")


def ids_of_island(island: SpectralIsland) -> Fraction:
    """States per unit area: M divided by the magnetic cell area (M/q for a 1 x q cell)."""
    area = island.cell_area or island.flux.q
    return Fraction(island.M, area)


def hausdorff(a, b) -> float:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def gap_width(island: SpectralIsland) -> float:
    """Narrowest finite gap next to the island (inf when both sides are open)."""
    w = [g[1] - g[0] for g in (island.lower_gap, island.upper_gap) if np.isfinite(g[0]) and np.isfinite(g[1])]
    return min(w, default=float("inf"))


CERTIFY_MARGIN = 0.5


@dataclass(frozen=True)
class IslandTrack:
    """Matched islands along a flux list.

    ``margins[n]`` is the support jump between points n and n+1 divided by
    the narrowest gap next to either island. A track is certified when every
    margin is below CERTIFY_MARGIN, so that no neighbouring band lies closer
    than the matched one.
    """

    points: tuple
    max_jump: float
    aborted_at: RationalFlux | None = None
    matching: str = "greedy minimal Hausdorff distance of energy supports"
    margins: tuple = ()

    @property
    def certified(self) -> bool:
        return self.aborted_at is None and all(m < CERTIFY_MARGIN for m in self.margins)

    @property
    def fluxes(self):
        return [f for f, _ in self.points]

    @property
    def ids(self):
        return [ids_of_island(i) for _, i in self.points]

    @property
    def last_good(self):
        return self.points[-1][0]


def track_island(fluxes, V: PotentialSpec = NO_POTENTIAL, backend: str = "lattice",
                 seed_island: SpectralIsland | None = None, kgrid_size: int = KGRID,
                 delta_gap: float = DELTA_GAP, max_jump: float = 1.0, ambiguity: float = 1e-9,
                 N: int = 24, seed_index: int = 0) -> IslandTrack:
    """Follow an island across sorted fluxes by minimal Hausdorff distance.

    The track stops (without raising) at the first flux where no island lies
    within ``max_jump`` of the previous one.
    """
    fluxes = list(fluxes)
    if fluxes != sorted(fluxes, key=lambda f: f.phi):
        raise ValueError("fluxes must be sorted")

    def islands(f):
        bs = band_structure(f, V, backend, kgrid_size, N=N)
        return detect_islands(bs, delta_gap)

    if seed_island is None:
        seed_island = islands(fluxes[0])[seed_index]
    pts = [(fluxes[0], seed_island)]
    jump = 0.0
    margins = []
    for f in fluxes[1:]:
        prev = pts[-1][1]
        cand = sorted(((hausdorff(prev.support, i.support), n, i) for n, i in enumerate(islands(f))),
                      key=lambda t: (t[0], t[1]))
        cand = [c for c in cand if c[0] <= max_jump]
        if not cand:
            return IslandTrack(tuple(pts), jump, f, margins=tuple(margins))
        if len(cand) > 1 and cand[1][0] - cand[0][0] <= ambiguity:
            raise AmbiguousMatchError(
                f"at flux {f}: bands {cand[0][2].m_lo}-{cand[0][2].m_hi} and "
                f"{cand[1][2].m_lo}-{cand[1][2].m_hi} both at distance {cand[0][0]:.3g}")
        jump = max(jump, cand[0][0])
        margins.append(float(cand[0][0] / min(gap_width(prev), gap_width(cand[0][2]))))
        pts.append((f, cand[0][2]))
    return IslandTrack(tuple(pts), jump, None, margins=tuple(margins))


def neighbour_fluxes(center: RationalFlux, qmax: int, count: int = 1) -> list[RationalFlux]:
    """``count`` Farey neighbours on each side of ``center`` with q <= qmax, sorted, including center."""
    from .flux import farey_fluxes
    fs = farey_fluxes(qmax)
    i = fs.index(center)
    return fs[max(0, i - count): i + count + 1]


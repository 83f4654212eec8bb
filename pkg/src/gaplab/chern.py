"""Chern numbers, real-space Chern character, gap labels and the Streda check.

Orientation: counterclockwise plaquettes in k-space and the operand order
(X1, X2) in real space, with hopping phases whose counterclockwise sum is the
plaquette flux. Under these conventions every Chern value equals dI/dphi, the
slope of the integrated density of states against flux, and with b > 0 the
lowest Landau level and the lowest Hofstadter band carry +1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .flux import RationalFlux
from .hamiltonians import NO_POTENTIAL, PotentialSpec, magnetic_cell
from .spectral import (DELTA_GAP, KGRID, IslandTrack, SpectralIsland, band_structure, detect_islands,
                       ids_of_island)


class GridTooCoarseError(RuntimeError):
    pass


class TrackError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChernEstimate:
    value: float
    method: str
    integer: int | None = None
    residual: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class GapLabel:
    """I(phi) = c0 + c1 phi with c0 rational and c1 integer."""

    c0: Fraction
    c1: int

    def ids(self, phi) -> Fraction:
        return self.c0 + self.c1 * Fraction(phi)


def link_chern(frames: np.ndarray, det_floor: float = 1e-8) -> float:
    """Plaquette sum of overlap-determinant phases on a closed k-grid.

    ``frames[a, c]`` is a (dim, M) orthonormal frame at grid point (a, c);
    the grid is periodic in both directions and the frames must be periodic
    too (true for fibers whose k-dependence sits in the boundary twists).
    """
    F = np.asarray(frames)
    F1 = np.roll(F, -1, axis=0)
    F2 = np.roll(F, -1, axis=1)
    h = lambda A, B: np.linalg.det(np.conj(np.swapaxes(A, -1, -2)) @ B)
    U1, U2 = h(F, F1), h(F, F2)
    small = min(np.abs(U1).min(), np.abs(U2).min())
    if small < det_floor:
        raise GridTooCoarseError(f"grid too coarse / gap closing (overlap determinant {small:.2e})")
    U1, U2 = U1 / np.abs(U1), U2 / np.abs(U2)
    W = U1 * np.roll(U2, -1, axis=0) * np.conj(np.roll(U1, -1, axis=1)) * np.conj(U2)
    return float(np.angle(W).sum() / (2 * np.pi))


def island_frames(island: SpectralIsland, V: PotentialSpec = NO_POTENTIAL, backend: str = "lattice",
                  kgrid_size: int = KGRID, N: int = 24) -> np.ndarray:
    nb = island.m_hi + 1 if backend == "continuum" else None
    bs = band_structure(island.flux, V, backend, kgrid_size, N=N, nbands=nb, keep_vectors=True)
    return bs.vectors[..., island.bands]


def chern_kspace(island: SpectralIsland, V: PotentialSpec = NO_POTENTIAL, backend: str = "lattice",
                 kgrid_size: int = KGRID, N: int = 24) -> ChernEstimate:
    """Link-variable Chern number of the island's fiber projection."""
    if kgrid_size < 8:
        raise ValueError("kgrid_size must be >= 8")
    c = link_chern(island_frames(island, V, backend, kgrid_size, N))
    n = int(round(c))
    return ChernEstimate(c, "k-space", n, abs(c - n), {"kgrid": kgrid_size, "backend": backend})


def chern_realspace(kernel) -> ChernEstimate:
    """2 pi times the cell average of the diagonal of i Pi [[X1, Pi], [X2, Pi]].

    Commutators are (x_j - x_j') Pi(x; x') on the patch. The cell is the
    period cell of the potential with its corner at the patch centre.
    """
    fit = kernel.decay
    if fit is not None and np.isfinite(fit.alpha) and fit.alpha <= 0:
        raise RuntimeError("kernel not localized; island likely not gapped")
    X = kernel.sites.astype(float)
    P = kernel.values
    A1 = (X[:, None, 0] - X[None, :, 0]) * P
    A2 = (X[:, None, 1] - X[None, :, 1]) * P
    V = getattr(kernel.bloch, "V", NO_POTENTIAL)
    c = np.asarray(kernel.center)
    p1, p2 = V.period
    cell = [i for i, x in enumerate(kernel.sites) if 0 <= x[0] - c[0] < p1 and 0 <= x[1] - c[1] < p2]
    vals = []
    for i in cell:
        col2 = A2[:, i]
        col1 = A1[:, i]
        inner = A1 @ col2 - A2 @ col1
        vals.append((1j * P[i] @ inner).real)
    val = 2 * np.pi * float(np.mean(vals))
    return ChernEstimate(val, "real-space", int(round(val)), abs(val - round(val)), {"R": kernel.R})


def diophantine_oracle(r: int, p: int, q: int) -> int:
    """t with r = s q + t p and |t| <= q/2 (TKNN-style cross check)."""
    if q == 1:
        return 0
    t = (r * pow(p, -1, q)) % q
    if t > q // 2:
        t -= q
    return t


def diophantine_label(track: IslandTrack) -> GapLabel:
    """Exact line I = c0 + c1 phi through the first two track points, verified on the rest."""
    pts = list(zip(track.fluxes, track.ids))
    if len(pts) < 2:
        raise ValueError("track needs at least two points")
    (f0, i0), (f1, i1) = pts[0], pts[1]
    slope = (i1 - i0) / (f1.phi - f0.phi)
    if slope.denominator != 1:
        raise TrackError(f"track crosses a gap closing: non-integer slope {slope} at flux {f1}")
    c1 = int(slope)
    c0 = i0 - c1 * f0.phi
    for f, i in pts[2:]:
        if c0 + c1 * f.phi != i:
            raise TrackError(f"track crosses a gap closing at flux {f}: IDS {i} != {c0 + c1 * f.phi}")
    return GapLabel(c0, c1)


def streda_check(track: IslandTrack, label: GapLabel, ch_kspace=None, ids=None) -> dict:
    """Central differences of IDS in phi at interior points, against c1 and the k-space Chern number."""
    fl = track.fluxes
    I = list(ids) if ids is not None else track.ids
    if len(fl) < 3:
        raise ValueError("track needs at least three points")
    rows = []
    for n in range(1, len(fl) - 1):
        slope = (I[n + 1] - I[n - 1]) / (fl[n + 1].phi - fl[n - 1].phi)
        row = {"flux": str(fl[n]), "slope": str(slope), "dev_c1": str(abs(slope - label.c1)),
               "flagged": slope != label.c1}
        if ch_kspace is not None:
            row["dev_kspace"] = abs(float(slope) - ch_kspace)
        rows.append(row)
    return {"c1": label.c1, "c0": str(label.c0), "rows": rows,
            "max_dev_c1": str(max(Fraction(r["dev_c1"]) for r in rows)),
            "max_dev_kspace": max((r.get("dev_kspace", 0.0) for r in rows), default=0.0),
            "flagged": [r["flux"] for r in rows if r["flagged"]]}


@dataclass(frozen=True)
class GapRow:
    """One gap of a flux: the island of all bands below it."""

    flux: RationalFlux
    m_lo: int
    m_hi: int
    ids: Fraction
    c0: Fraction
    c1: int
    ch_kspace: float
    oracle_t: int
    lower: float
    upper: float

    @property
    def M(self):
        return self.m_hi - self.m_lo + 1

    @property
    def ch_residual(self):
        return abs(self.ch_kspace - self.c1)

    def diophantine_ok(self) -> bool:
        return (self.flux.q * self.ids - self.c1 * self.flux.p).denominator == 1


def gap_labels(flux: RationalFlux, V: PotentialSpec = NO_POTENTIAL, kgrid_size: int = KGRID,
               delta_gap: float = DELTA_GAP, backend: str = "lattice", N: int = 24, nbands: int = 6):
    """Islands and gap rows of one flux.

    Each gap row carries the island of all bands below the gap, its IDS, the
    k-space Chern number as c1 and c0 = I - c1 phi. On the continuum backend
    only the lowest ``nbands`` bands are computed and every kept island has
    a gap above it.
    """
    bs = band_structure(flux, V, backend, kgrid_size, N=N, nbands=nbands if backend == "continuum" else None,
                        keep_vectors=True)
    islands = detect_islands(bs, delta_gap)
    cell = magnetic_cell(flux, V)
    bottom = float(bs.band_ranges()[0, 0])
    rows = []
    for isl in (islands if backend == "continuum" else islands[:-1]):
        below = SpectralIsland(1, isl.m_hi, (-np.inf, bottom), isl.upper_gap, flux, isl.cell_area, bottom, isl.emax)
        c = link_chern(bs.vectors[..., : isl.m_hi])
        c1 = int(round(c))
        I = ids_of_island(below)
        oracle = diophantine_oracle(isl.m_hi, flux.p, flux.q) if backend == "lattice" and cell == (1, flux.q) else 0
        rows.append(GapRow(flux, 1, isl.m_hi, I, I - c1 * flux.phi, c1, c, oracle,
                           isl.upper_gap[0], isl.upper_gap[1]))
    return bs, islands, rows

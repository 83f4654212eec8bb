"""Periodic fiber frames and Wannier functions for islands with zero Chern number.

Fibers use the periodic cell gauge, in which the fiber Hamiltonian is
periodic in k and magnetic translations by whole magnetic cells are plain
shifts. A Bloch function of the torus is psi_k(s + G) = e^{i k.G} u_k(s)/N,
so Wannier functions are the inverse discrete Fourier transform of a
periodic frame: w_j(s + G) = N^-2 sum_k e^{i k.G} xi_j(k)(s).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .chern import link_chern
from .flux import RationalFlux
from .hamiltonians import NO_POTENTIAL, PotentialSpec, lattice_fibers, magnetic_cell
from .kernels import DecayFit, cell_to_symmetric, fit_decay
from .spectral import SpectralIsland

WANNIER_GRID = 24
SUPPORT_CELLS = 8


class RankError(RuntimeError):
    pass


class ObstructionError(RuntimeError):
    pass


class FrameError(RuntimeError):
    pass


@dataclass(eq=False)
class ZakFibers:
    """Island projections p_k on a periodic N x N grid of the magnetic zone.

    ``ks[a, c] = 2 pi (a / (N a1), c / (N a2))``; the last index wraps to
    the first. ``periodicity`` is max |p(k + G) - p(k)| over the boundary
    rows, evaluated from independently built fibers at k + G.
    """

    flux: RationalFlux
    V: PotentialSpec
    bands: slice
    cell: tuple
    ks: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    periodicity: float

    @property
    def N(self) -> int:
        return self.ks.shape[0]

    @property
    def M(self) -> int:
        return self.vectors.shape[-1]

    @property
    def projections(self) -> np.ndarray:
        u = self.vectors
        return u @ np.conj(np.swapaxes(u, -1, -2))

    def chern(self) -> float:
        return link_chern(self.vectors)


def _bands_of(island):
    return island.bands if isinstance(island, SpectralIsland) else island


def bfz_fibers(flux: RationalFlux, island: SpectralIsland | slice, kgrid: int = WANNIER_GRID,
               V: PotentialSpec = NO_POTENTIAL) -> ZakFibers:
    """Diagonalize fibers on the periodic grid and keep the island's eigenvectors.

    Raises RankError when the number of eigenvalues inside the island's
    energy window changes across the grid.
    """
    bands = _bands_of(island)
    cell = magnetic_cell(flux, V)
    a = np.arange(kgrid)
    k1, k2 = 2 * np.pi * a / (kgrid * cell[0]), 2 * np.pi * a / (kgrid * cell[1])
    ks = np.stack(np.meshgrid(k1, k2, indexing="ij"), axis=-1)
    E, U = np.linalg.eigh(lattice_fibers(flux, ks, V))
    if isinstance(island, SpectralIsland):
        lo, hi = island.window
        counts = ((E > lo) & (E < hi)).sum(axis=-1)
        if counts.min() != counts.max() or counts.min() != island.M:
            bad = np.argwhere(counts != island.M)
            k = ks[tuple(bad[0])] if len(bad) else ks[0, 0]
            raise RankError(f"island rank changes across the grid (counts {counts.min()}..{counts.max()}, "
                            f"expected {island.M}) near k={tuple(np.round(k, 6))}")
    u = U[..., bands]
    # boundary certificate: fibers rebuilt at k + G on the edge rows
    edge = np.concatenate((ks[0], ks[:, 0]))
    shift = np.concatenate((edge + [2 * np.pi / cell[0], 0.0], edge + [0.0, 2 * np.pi / cell[1]]))
    Es, Us = np.linalg.eigh(lattice_fibers(flux, shift[None], V))
    us = Us[0][..., bands]
    pe = np.concatenate((u[0], u[:, 0]))
    pe = np.concatenate((pe, pe))
    P0 = pe @ np.conj(np.swapaxes(pe, -1, -2))
    P1 = us @ np.conj(np.swapaxes(us, -1, -2))
    return ZakFibers(flux, V, bands, cell, ks, E[..., bands], u, float(np.abs(P1 - P0).max()))


def _transport(prev, cur):
    """Rotate ``cur`` so that prev^H cur is Hermitian positive (parallel transport)."""
    W, _, Vh = np.linalg.svd(np.conj(prev.T) @ cur)
    return cur @ np.conj(Vh.T) @ np.conj(W.T)


def _transport_line(start, line):
    """Transport ``start`` through ``line[1:]``; returns frames and the closing holonomy."""
    out = [start]
    for f in line[1:]:
        out.append(_transport(out[-1], f))
    closing = _transport(out[-1], start)
    return np.array(out), np.conj(start.T) @ closing


def _close(frames, hol, logm=None):
    """Spread the holonomy log over the line so that the frame returns to itself."""
    n = len(frames)
    L = sla.logm(hol) if logm is None else logm
    return np.array([frames[i] @ sla.expm(-(i / n) * L) for i in range(n)])


@dataclass(eq=False)
class SmoothFrame:
    """Periodic orthonormal frame xi[a, c] (dim x M) on the Zak grid.

    ``min_overlap`` is the smallest |det xi(k)^H xi(k')| over adjacent grid
    points, wrap-around pairs included. ``boundary_windings`` are the Berry
    phases (over 2 pi) of the four zone edges traversed counterclockwise;
    for a periodic frame opposite edges cancel and their sum vanishes.
    """

    fibers: ZakFibers
    frames: np.ndarray
    min_overlap: float
    holonomy_winding: float
    boundary_windings: tuple
    orthonormality: float
    meta: dict = field(default_factory=dict)

    @property
    def total_winding(self) -> float:
        return float(sum(self.boundary_windings))


def _berry(frames):
    ph = [np.angle(np.linalg.det(np.conj(frames[i].T) @ frames[(i + 1) % len(frames)]))
          for i in range(len(frames))]
    return float(np.sum(ph) / (2 * np.pi))


def smooth_frame(fibers: ZakFibers, target: float = 1e-3) -> SmoothFrame:
    """Parallel-transport construction of a periodic frame.

    The k2 axis at k1 = 0 is transported and closed first; from each axis
    point the frame is transported along k1 and closed with the logarithm
    of the k1 holonomy. The determinant of that holonomy winds by the Chern
    number as k2 goes around, which is the obstruction.

    Parameters
    ----------
    target : float
        Smallest acceptable overlap determinant between neighbours.
    """
    V = fibers.vectors
    n1, n2 = V.shape[:2]
    M = fibers.M
    axis, hol2 = _transport_line(V[0, 0], V[0])
    axis = _close(axis, hol2)
    lines, hols = [], []
    for c in range(n2):
        fr, h = _transport_line(axis[c], V[:, c])
        lines.append(fr)
        hols.append(h)
    d = np.array([np.linalg.det(h) for h in hols])
    steps = np.angle(np.roll(d, -1) / d)
    winding = float(steps.sum() / (2 * np.pi))
    if abs(winding) > 0.5:
        raise ObstructionError(f"topological obstruction: nonzero Chern number "
                               f"(holonomy determinant winds {winding:+.3f} times)")
    # U(1) part: continuous lift of arg det / M, periodic because the winding is 0
    phase = (np.angle(d[0]) + np.concatenate(([0.0], np.cumsum(steps[:-1])))) / M
    S = [np.exp(-1j * phase[c]) * hols[c] for c in range(n2)]
    shift = 0.0
    if M > 1:
        ang = np.sort(np.concatenate([np.angle(np.linalg.eigvals(s)) for s in S]))
        gaps = np.diff(np.concatenate((ang, [ang[0] + 2 * np.pi])))
        g = int(np.argmax(gaps))
        if gaps[g] < 1e-2:
            raise FrameError("holonomy eigenphases cover the circle; no continuous logarithm on this grid")
        # put the middle of the widest eigenphase gap at the branch cut
        shift = ang[g] + gaps[g] / 2 - np.pi
    frames = np.empty_like(V)
    for c in range(n2):
        logS = 1j * shift * np.eye(M) + sla.logm(np.exp(-1j * shift) * S[c])
        Lc = 1j * phase[c] * np.eye(M) + logS
        frames[:, c] = _close(lines[c], hols[c], Lc)
    ov = []
    for sh, ax in ((-1, 0), (-1, 1)):
        F2 = np.roll(frames, sh, axis=ax)
        ov.append(np.abs(np.linalg.det(np.conj(np.swapaxes(frames, -1, -2)) @ F2)).min())
    mo = float(min(ov))
    if mo < target:
        raise FrameError(f"frame overlap determinant {mo:.3g} below target {target}")
    gram = np.conj(np.swapaxes(frames, -1, -2)) @ frames
    orth = float(np.abs(gram - np.eye(M)).max())
    bw = (_berry(frames[:, 0]), _berry(frames[-1, :]), -_berry(frames[:, -1]), -_berry(frames[0, :]))
    return SmoothFrame(fibers, frames, mo, winding, bw, orth,
                       {"branch_shift": float(shift), "grid": (n1, n2)})


@dataclass(eq=False)
class WannierSet:
    """Wannier functions in the cell gauge on the N x N-cell torus.

    ``values[j, g1, g2, s]`` is w_j at site s of cell (g1, g2) (cell indices
    taken mod N; the home cell is (0, 0)). Translates are plain shifts by
    whole cells.
    """

    frame: SmoothFrame
    values: np.ndarray
    decay: tuple

    @property
    def cell(self):
        return self.frame.fibers.cell

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def cells(self) -> np.ndarray:
        """Centred cell indices in [-N/2, N/2) matching axes 1 and 2 of ``values``."""
        g = np.arange(self.N)
        return np.where(g >= (self.N + 1) // 2, g - self.N, g)

    def site_positions(self) -> np.ndarray:
        """Positions (N, N, dim, 2) of the sites, using centred cell indices."""
        a1, a2 = self.cell
        g = self.cells()
        s = np.arange(a1 * a2)
        l1, l2 = np.divmod(s, a2)
        x1 = g[:, None, None] * a1 + l1[None, None, :]
        x2 = g[None, :, None] * a2 + l2[None, None, :]
        return np.stack(np.broadcast_arrays(x1, x2), axis=-1).astype(float)

    def orthonormality_residual(self) -> float:
        """max |<tau_g w_i, w_j> - delta_ij delta_g0| over all cell shifts g."""
        F = np.fft.fft2(self.values, axes=(1, 2))
        G = np.einsum("iabs,jabs->abij", np.conj(F), F)
        corr = np.fft.ifft2(G, axes=(0, 1))
        corr[0, 0] -= np.eye(self.M)
        return float(np.abs(corr).max())

    def kernel(self) -> np.ndarray:
        """Cell-gauge kernel sum_g sum_j (tau_g w_j)(x) conj((tau_g w_j)(y)), as G[g, s, t]."""
        F = np.fft.fft2(self.values, axes=(1, 2))
        P = np.einsum("iabs,iabt->abst", F, np.conj(F))
        return np.fft.ifft2(P, axes=(0, 1))

    def rows(self, radius: int = SUPPORT_CELLS):
        """(gamma1, gamma2, cell_index, Re w, Im w) for cells with |gamma|_inf <= radius.

        ``cell_index`` is j * dim + s for function j and site s in the cell.
        """
        g = self.cells()
        dim = self.values.shape[-1]
        for a in np.argsort(g):
            for c in np.argsort(g):
                if max(abs(g[a]), abs(g[c])) > radius:
                    continue
                for j in range(self.M):
                    for s in range(dim):
                        w = self.values[j, a, c, s]
                        yield (int(g[a]), int(g[c]), j * dim + s, float(w.real), float(w.imag))


def _wannier_decay(vals, pos, floor=1e-12) -> DecayFit:
    mag = np.abs(vals)
    wgt = mag ** 2
    centre = (wgt[..., None] * pos).reshape(-1, 2).sum(axis=0) / wgt.sum()
    dist = np.linalg.norm(pos - centre, axis=-1)
    dmax = float(min(pos[..., 0].max() - centre[0], centre[0] - pos[..., 0].min(),
                     pos[..., 1].max() - centre[1], centre[1] - pos[..., 1].min()))
    if mag[dist >= 1].max(initial=0.0) <= floor:
        return DecayFit(float("inf"), float(mag.max()), 1.0, 1)
    return fit_decay(dist, mag, dmax, dmin=1.0, floor=floor)


def wannier_functions(frame: SmoothFrame) -> WannierSet:
    """Inverse discrete Bloch transform of the frame, with a decay fit per function."""
    xi = frame.frames                                    # (N, N, dim, M)
    w = np.fft.ifft2(np.moveaxis(xi, -1, 0), axes=(1, 2))  # (M, N, N, dim)
    ws = WannierSet(frame, w, ())
    pos = ws.site_positions()
    ws.decay = tuple(_wannier_decay(w[j], pos) for j in range(w.shape[0]))
    return ws


def decay_profile(ws: WannierSet) -> dict:
    """Per-function fits and the uniform bounds (smallest rate, largest prefactor)."""
    fits = [f.as_dict() for f in ws.decay]
    return {"fits": fits,
            "alpha_min": float(min(f.alpha for f in ws.decay)),
            "C_max": float(max(f.C for f in ws.decay)),
            "r2_min": float(min(f.r2 for f in ws.decay))}


def reconstruction_residual(ws: WannierSet) -> float:
    """max |sum of translate products - island kernel| over the whole torus, cell gauge.

    The reference kernel is the inverse transform of the eigenvector fiber
    projections on the same grid.
    """
    G = np.fft.ifft2(ws.frame.fibers.projections, axes=(0, 1))
    return float(np.abs(ws.kernel() - G).max())


def diagonal_residual(ws: WannierSet) -> float:
    """max_x |sum_j sum_g |w_j(x - g)|^2 - Pi(x; x)|."""
    d = (np.abs(ws.values) ** 2).sum(axis=(0, 1, 2))
    fib = ws.frame.fibers
    P = fib.projections
    return float(np.abs(d - np.real(np.einsum("abss->s", P)) / ws.N ** 2).max())


def kernel_block(ws: WannierSet, X, Y) -> np.ndarray:
    """Symmetric-gauge kernel sum_g sum_j (tau_g w_j)(x) conj((tau_g w_j)(y)) on sites X x Y."""
    fib = ws.frame.fibers
    a1, a2 = fib.cell
    X, Y = np.asarray(X), np.asarray(Y)
    G = ws.kernel()
    n = ws.N

    def split(Z):
        g1, l1 = np.divmod(Z[:, 0], a1)
        g2, l2 = np.divmod(Z[:, 1], a2)
        return g1, g2, l1 * a2 + l2

    gx1, gx2, sx = split(X)
    gy1, gy2, sy = split(Y)
    K = G[np.mod(gx1[:, None] - gy1[None, :], n), np.mod(gx2[:, None] - gy2[None, :], n), sx[:, None], sy[None, :]]
    chi = lambda Z: cell_to_symmetric(fib.flux, fib.cell, Z)
    return np.exp(1j * chi(X))[:, None] * K * np.exp(-1j * chi(Y))[None, :]

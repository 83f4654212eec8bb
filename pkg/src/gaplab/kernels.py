"""Projection kernels on finite patches and the perturbative machinery around them.

Island projections are computed exactly on an n1 x n2 torus by magnetic
Bloch reduction: the torus spectrum is the union of the fiber spectra on the
torus k-grid, so the projection is the inverse Fourier transform of the
fiber projections. Kernels are then expressed in the symmetric gauge about
the origin, where the flux-b kernel at a point x carries exp(i b phi(x, x')).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flux import RationalFlux, peierls_phase
from .hamiltonians import NO_POTENTIAL, PotentialSpec, cell_link_phases, lattice_fibers, magnetic_cell
from .spectral import SpectralIsland


class WindowError(RuntimeError):
    """Island energy window is not gapped on the finite sample."""


class PurificationError(RuntimeError):
    pass


class KatoNagyError(RuntimeError):
    pass


class LocalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit |value| ~ C exp(-alpha d)."""

    alpha: float
    C: float
    r2: float
    npoints: int = 0

    def as_dict(self):
        return {"alpha": self.alpha, "C": self.C, "r2": self.r2, "npoints": self.npoints}


def fit_decay(dist, values, dmax, dmin=1.0, floor=1e-12) -> DecayFit:
    """Fit the tail envelope of |values| against distance.

    At each integer d with dmin <= d < dmax the envelope is the largest
    |value| at distances in [d, dmax), the quantity bounded by C exp(-alpha d)
    for an exponentially localized function. Envelope values above
    ``floor`` enter a least-squares line in log space.
    """
    dist = np.asarray(dist, dtype=float).ravel()
    mag = np.abs(np.asarray(values)).ravel()
    inside = dist < dmax
    dist, mag = dist[inside], mag[inside]
    xs, ys = [], []
    for d in np.arange(math.ceil(dmin), math.ceil(dmax)):
        m = mag[dist >= d]
        if m.size and m.max() > floor:
            xs.append(float(d))
            ys.append(np.log(m.max()))
    if len(xs) < 3:
        return DecayFit(float("nan"), float("nan"), float("nan"), len(xs))
    xs, ys = np.array(xs), np.array(ys)
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = icpt + slope * xs
    ss = ((ys - ys.mean()) ** 2).sum()
    r2 = 1.0 - ((ys - pred) ** 2).sum() / ss if ss > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(icpt)), float(r2), len(xs))


def box_sites(center, R) -> np.ndarray:
    """Integer sites with |x - center|_inf <= R, ordered by (x1, x2)."""
    c1, c2 = int(center[0]), int(center[1])
    a, b = np.meshgrid(np.arange(c1 - R, c1 + R + 1), np.arange(c2 - R, c2 + R + 1), indexing="ij")
    return np.stack((a.ravel(), b.ravel()), axis=1)


def _prefix(f, m):
    """sum_{j=0}^{m-1} f[j mod n] with the signed convention for m < 0."""
    n = len(f)
    C = np.concatenate(([0.0], np.cumsum(f)))
    q, r = np.divmod(m, n)
    return q * C[n] + C[r]


def cell_to_symmetric(flux: RationalFlux, cell, X) -> np.ndarray:
    """Gauge function chi with Pi_sym(x; y) = e^{i chi(x)} Pi_cell(x; y) e^{-i chi(y)}.

    The cell-gauge phases are summed along x1 at x2 = 0, then along x2.
    """
    X = np.asarray(X)
    x1, x2 = X[:, 0], X[:, 1]
    a1 = cell[0]
    t1, t2 = cell_link_phases(np.full(cell, flux.b))
    cell_part = _prefix(t1[:, 0], x1)
    cols = np.empty(len(X))
    for r in range(a1):
        m = np.mod(x1, a1) == r
        if m.any():
            cols[m] = _prefix(t2[r], x2[m])
    return 0.5 * flux.b * x1 * x2 - (cell_part + cols)


class BlochKernel:
    """Exact island projection on an n1 x n2 lattice torus.

    Parameters
    ----------
    flux, V
        Model; the magnetic cell is ``magnetic_cell(flux, V)``.
    bands : slice
        Zero-based band slice of the island.
    side : int
        Minimum torus side; rounded up to whole magnetic cells.
    """

    def __init__(self, flux: RationalFlux, bands: slice, V: PotentialSpec = NO_POTENTIAL, side: int = 40):
        self.flux, self.V, self.bands = flux, V, bands
        self.cell = magnetic_cell(flux, V)
        a1, a2 = self.cell
        self.ncell = (max(1, -(-side // a1)), max(1, -(-side // a2)))
        self.side = (self.ncell[0] * a1, self.ncell[1] * a2)
        n1, n2 = self.ncell
        k1 = 2 * np.pi * np.arange(n1) / (n1 * a1)
        k2 = 2 * np.pi * np.arange(n2) / (n2 * a2)
        ks = np.stack(np.meshgrid(k1, k2, indexing="ij"), axis=-1)
        E, U = np.linalg.eigh(lattice_fibers(flux, ks, V))
        self.energies = E
        lo, hi = bands.start or 0, bands.stop
        stray = []
        if lo > 0 and E[..., lo - 1].max() >= E[..., lo].min():
            stray += _stray(E, E[..., lo].min(), E[..., lo - 1].max())
        if hi < E.shape[-1] and E[..., hi - 1].max() >= E[..., hi].min():
            stray += _stray(E, E[..., hi].min(), E[..., hi - 1].max())
        if stray:
            raise WindowError(f"island window not gapped on the {self.side} torus; eigenvalues in the gap: {stray[:8]}")
        u = U[..., bands]
        P = u @ np.conj(np.swapaxes(u, -1, -2))
        self.G = np.fft.ifft2(P, axes=(0, 1))

    @property
    def rank(self) -> int:
        return (self.bands.stop - (self.bands.start or 0)) * self.ncell[0] * self.ncell[1]

    def chi(self, X) -> np.ndarray:
        """Gauge function taking the cell gauge to the symmetric gauge about 0."""
        return cell_to_symmetric(self.flux, self.cell, X)

    def cell_block(self, X, Y) -> np.ndarray:
        a1, a2 = self.cell
        X, Y = np.asarray(X), np.asarray(Y)
        gx1, lx1 = np.divmod(X[:, 0], a1)
        gx2, lx2 = np.divmod(X[:, 1], a2)
        gy1, ly1 = np.divmod(Y[:, 0], a1)
        gy2, ly2 = np.divmod(Y[:, 1], a2)
        sx, sy = lx1 * a2 + lx2, ly1 * a2 + ly2
        n1, n2 = self.ncell
        return self.G[np.mod(gx1[:, None] - gy1[None, :], n1), np.mod(gx2[:, None] - gy2[None, :], n2),
                      sx[:, None], sy[None, :]]

    def block(self, X, Y) -> np.ndarray:
        """Kernel Pi(x; y) in the symmetric gauge, rows X, columns Y."""
        K = self.cell_block(X, Y)
        return np.exp(1j * self.chi(X))[:, None] * K * np.exp(-1j * self.chi(Y))[None, :]

    def torus_sites(self, center=(0, 0)) -> np.ndarray:
        """One site per torus point, as a box of minimal images around ``center``."""
        s1, s2 = self.side
        a, b = np.meshgrid(np.arange(s1) - s1 // 2 + int(center[0]), np.arange(s2) - s2 // 2 + int(center[1]),
                           indexing="ij")
        return np.stack((a.ravel(), b.ravel()), axis=1)


def _stray(E, lo, hi):
    e = E.ravel()
    return sorted(float(v) for v in e[(e >= lo) & (e <= hi)])


@dataclass(eq=False)
class ProjectionKernel:
    """Kernel restricted to the box |x - center|_inf <= R."""

    sites: np.ndarray
    values: np.ndarray
    flux: RationalFlux
    R: int
    center: tuple
    bloch: BlochKernel | None = None
    decay: DecayFit | None = None
    island: SpectralIsland | None = None

    @property
    def inner(self) -> np.ndarray:
        return np.all(np.abs(self.sites - np.asarray(self.center)) <= self.R // 2, axis=1)

    @property
    def center_index(self) -> int:
        return int(np.flatnonzero(np.all(self.sites == np.asarray(self.center), axis=1))[0])

    def idempotency_residual(self) -> float:
        K = self.values
        ii = np.ix_(self.inner, self.inner)
        return float(np.linalg.norm((K @ K - K)[ii], 2))

    def distances(self) -> np.ndarray:
        d = self.sites[:, None, :] - self.sites[None, :, :]
        return np.hypot(d[..., 0], d[..., 1])


def kernel_decay(values, sites, center, R) -> DecayFit:
    c = int(np.flatnonzero(np.all(sites == np.asarray(center), axis=1))[0])
    d = np.hypot(*(sites - sites[c]).T)
    return fit_decay(d, values[c], dmax=R)


def project_island_kernel(flux: RationalFlux, island: SpectralIsland | slice, R: int,
                          V: PotentialSpec = NO_POTENTIAL, center=(0, 0), side=None) -> ProjectionKernel:
    """Island projection on a torus of side >= 4R, restricted to the patch of radius R."""
    if R < 6:
        raise ValueError("patch radius must be >= 6")
    bands = island.bands if isinstance(island, SpectralIsland) else island
    bk = BlochKernel(flux, bands, V, side or 4 * R)
    X = box_sites(center, R)
    K = bk.block(X, X)
    return ProjectionKernel(X, K, flux, R, tuple(center), bk, kernel_decay(K, X, center, R),
                            island if isinstance(island, SpectralIsland) else None)


@dataclass(eq=False)
class AlmostProjection:
    """Phase-dressed kernel exp(i eps phi(x, x')) Pi(x; x') on the same patch."""

    values: np.ndarray
    eps: float
    kernel: ProjectionKernel

    @property
    def sites(self):
        return self.kernel.sites

    @property
    def inner(self):
        return self.kernel.inner


def dress_kernel(kernel: ProjectionKernel, eps: float) -> AlmostProjection:
    X = kernel.sites.astype(float)
    ph = peierls_phase(X[:, None, :], X[None, :, :], eps)
    return AlmostProjection(np.exp(1j * ph) * kernel.values, float(eps), kernel)


@dataclass(eq=False)
class DefectReport:
    values: np.ndarray
    eps: float
    K_eps: float
    K: float
    diag_sup: float
    inner_sup: float
    composition: str

    def as_dict(self):
        return {"eps": self.eps, "K_eps": self.K_eps, "K_over_eps": self.K, "diag_sup": self.diag_sup,
                "inner_sup": self.inner_sup, "composition": self.composition}


def defect_operator(ap: AlmostProjection, composition: str = "sample") -> DefectReport:
    """Delta = Pi~^2 - Pi~ on the patch.

    ``composition="sample"`` sums the intermediate point over the whole torus
    the kernel was computed on (so Delta vanishes identically at eps = 0);
    ``"patch"`` keeps it inside the patch, the algebra used by purification.
    Sup-norm diagnostics are taken on the inner half-patch.
    """
    k = ap.kernel
    if composition == "sample":
        if k.bloch is None:
            raise ValueError("sample composition needs the kernel's torus data")
        Y = k.bloch.torus_sites(k.center)
        rows = k.bloch.block(k.sites, Y)
        ph = peierls_phase(k.sites[:, None, :].astype(float), Y[None, :, :].astype(float), ap.eps)
        rows = np.exp(1j * ph) * rows
        D = rows @ rows.conj().T - ap.values
    elif composition == "patch":
        D = ap.values @ ap.values - ap.values
    else:
        raise ValueError(f"unknown composition {composition!r}")
    inn = ap.inner
    Di = D[np.ix_(inn, inn)]
    d = k.distances()[np.ix_(inn, inn)]
    alpha = k.decay.alpha if k.decay is not None and np.isfinite(k.decay.alpha) else 0.0
    K_eps = float(np.max(np.abs(Di) * np.exp(alpha * d)))
    return DefectReport(D, ap.eps, K_eps, K_eps / abs(ap.eps) if ap.eps else float("nan"),
                        float(np.abs(np.diag(Di)).max()), float(np.abs(Di).max()), composition)


@dataclass(eq=False)
class PurifiedProjection:
    values: np.ndarray
    ap: AlmostProjection
    min_gap: float

    @property
    def inner(self):
        return self.ap.inner

    def idempotency_residual(self) -> float:
        P = self.values
        ii = np.ix_(self.inner, self.inner)
        return float(np.linalg.norm((P @ P - P)[ii], 2))

    def hermiticity_residual(self) -> float:
        return float(np.abs(self.values - self.values.conj().T).max())


def purify_projection(ap: AlmostProjection, tol: float = 1e-10) -> PurifiedProjection:
    """P = Pi~ + (Pi~ - 1/2)((1 + 4 Delta)^{-1/2} - 1) with patch algebra.

    1 + 4 Delta = (2 Pi~ - 1)^2 commutes with Pi~, so both are diagonalized
    by one eigendecomposition of Pi~.
    """
    mu, W = np.linalg.eigh(ap.values)
    s = (2 * mu - 1) ** 2
    if s.min() <= tol:
        raise PurificationError(f"eps too large for purification: 1 + 4 Delta has eigenvalue {s.min():.3g}")
    f = mu + (mu - 0.5) * (1 / np.sqrt(s) - 1)
    P = (W * f) @ W.conj().T
    return PurifiedProjection(P, ap, float(np.sqrt(s.min())))


def aux_residual(ap: AlmostProjection, pur: PurifiedProjection | None = None) -> float:
    """Inner-patch norm of P - (Pi~ - 2 Pi~ Delta + Delta), second order in eps."""
    pur = pur or purify_projection(ap)
    T = ap.values
    D = T @ T - T
    E = pur.values - (T - 2 * T @ D + D)
    ii = np.ix_(ap.inner, ap.inner)
    return float(np.linalg.norm(E[ii], 2))


@dataclass(eq=False)
class KatoNagy:
    U: np.ndarray
    unitarity: float
    intertwining: float
    distance: float
    decay: DecayFit | None = None

    def as_dict(self):
        return {"unitarity": self.unitarity, "intertwining": self.intertwining, "distance": self.distance,
                "decay": None if self.decay is None else self.decay.as_dict()}


def kato_nagy(P1, P2, sites=None, center=(0, 0), R=None, tol=1e-12) -> KatoNagy:
    """U = (1 - (P1 - P2)^2)^{-1/2} (P1 P2 + (1 - P1)(1 - P2)) with U P2 U* = P1."""
    P1 = getattr(P1, "values", P1)
    P2 = getattr(P2, "values", P2)
    D = P1 - P2
    d, W = np.linalg.eigh(D)
    dist = float(np.abs(d).max())
    if dist >= 1 - tol:
        raise KatoNagyError(f"projections too far; no Kato-Nagy unitary (norm distance {dist:.6f})")
    S = (W / np.sqrt(1 - d * d)) @ W.conj().T
    n = len(P1)
    I = np.eye(n)
    U = S @ (P1 @ P2 + (I - P1) @ (I - P2))
    uni = float(np.abs(U @ U.conj().T - I).max())
    itw = float(np.abs(U @ P2 @ U.conj().T - P1).max())
    fit = None
    if sites is not None:
        fit = kernel_decay(U - I, np.asarray(sites), center, R or int(np.abs(sites).max()))
    return KatoNagy(U, uni, itw, dist, fit)


def window_mask(sites, L, center=(0, 0)) -> np.ndarray:
    """Half-open centred window [c - L//2, c - L//2 + L)^2."""
    lo = np.asarray(center) - L // 2
    return np.all((sites >= lo) & (sites < lo + L), axis=1)


def trace_comparison(P1, P2, U, L_list, sites, center=(0, 0)) -> dict:
    """|Tr(chi_L P1) - Tr(chi_L P2)| / L^2 for each L, with halving ratios."""
    P1 = getattr(P1, "values", P1)
    P2 = getattr(P2, "values", P2)
    sites = np.asarray(sites)
    d = np.real(np.diag(P1) - np.diag(P2))
    vals = []
    for L in L_list:
        m = window_mask(sites, L, center)
        if m.sum() != L * L:
            raise ValueError(f"window L={L} does not fit in the sample")
        vals.append(float(abs(d[m].sum()) / L**2))
    ratios = [vals[i + 1] / vals[i] if vals[i] > 0 else float("nan") for i in range(len(vals) - 1)]
    res = None
    if U is not None:
        res = float(np.abs(U @ P2 @ U.conj().T - P1).max())
    return {"L": list(L_list), "values": vals, "ratios": ratios, "intertwining": res,
            "decreasing": all(vals[i + 1] <= vals[i] for i in range(len(vals) - 1))}


def torus_projection(flux, bands, V=NO_POTENTIAL, side=48):
    """Full torus projection matrix and its site list (centred box of minimal images)."""
    bk = BlochKernel(flux, bands, V, side)
    X = bk.torus_sites()
    return bk.cell_block(X, X), X, bk


def strong_proxy(bk1: BlochKernel, bk0: BlochKernel, radius=None) -> float:
    """||(Pi_1 - Pi_0) delta_0|| over a box around the origin."""
    r = radius or min(min(bk1.side), min(bk0.side)) // 2 - 1
    X = box_sites((0, 0), r)
    o = np.zeros((1, 2), int)
    return float(np.linalg.norm(bk1.block(X, o) - bk0.block(X, o)))


def patch_norm(bk1: BlochKernel, bk0: BlochKernel, center, r) -> float:
    X = box_sites(center, r)
    return float(np.linalg.norm(bk1.block(X, X) - bk0.block(X, X), 2))


def norm_gap_experiment(flux: RationalFlux, island: SpectralIsland, c0, c1, eps_fluxes, R=16, scan=8,
                        V: PotentialSpec = NO_POTENTIAL) -> dict:
    """Norm and strong-topology contrast between Pi_{b+eps} and Pi_b.

    For each nearby flux, the continuation island (IDS c0 + c1 phi') is
    projected and both kernels are compared on the inner patch (radius R/2)
    centred at points eta of a ``scan`` x ``scan`` grid spanning one period
    of the induced quasimomentum shift (eps/2)(-eta2, eta1); the largest
    singular value over the scan is reported. The strong proxy is the norm
    of the difference applied to the origin indicator.
    """
    from fractions import Fraction

    if island.m_lo != 1:
        raise NotImplementedError("continuation implemented for islands starting at the lowest band")
    side = 4 * R
    bk0 = BlochKernel(flux, island.bands, V, side)
    rows = []
    for f in eps_fluxes:
        eps = 2 * np.pi * float(f.phi - flux.phi)
        ids = Fraction(c0) + c1 * f.phi
        area = magnetic_cell(f, V)
        M = ids * area[0] * area[1]
        if M.denominator != 1:
            raise ValueError(f"no continuation island at {f}: M = {M}")
        bk1 = BlochKernel(f, slice(0, int(M)), V, side)
        best, arg = 0.0, (0, 0)
        step = 4 * np.pi / (abs(eps) * scan)
        for a in range(scan):
            for c in range(scan):
                eta = (int(round(a * step)), int(round(c * step)))
                s = patch_norm(bk1, bk0, eta, R // 2)
                if s > best:
                    best, arg = s, eta
        rows.append({"flux": str(f), "eps": eps, "patch_norm": best, "argmax_eta": list(arg),
                     "origin_norm": patch_norm(bk1, bk0, (0, 0), R // 2),
                     "strong_proxy": strong_proxy(bk1, bk0)})
    return {"flux": str(flux), "c1": c1, "R": R, "rows": rows}


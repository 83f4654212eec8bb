"""Window densities of spectral projections under slowly varying fields.

The sample is an L x L lattice torus with total field b + lam B(lam x). The
projection onto an energy window lying in spectral gaps is applied as a
Chebyshev polynomial of a smooth step, which agrees with the indicator of
the window to a certified accuracy on the spectrum. Only the columns of
window sites are propagated, so no full diagonalization is needed.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from numpy.polynomial import chebyshev as cheb
from scipy.special import erfc

from .chern import link_chern
from .flux import FieldProfile, RationalFlux
from .hamiltonians import (NO_POTENTIAL, PotentialSpec, SampleOperator, admissible_lambda,
                           sample_hamiltonian)
from .spectral import DELTA_GAP, SpectralIsland, band_structure, ids_of_island

CHEB_TOL = 1e-12
MAX_DEGREE = 20000


class GapClosedError(RuntimeError):
    pass


def mean_flux(fld: FieldProfile) -> float:
    """Average field; the harmonics average to zero over the unit torus."""
    return float(fld.mean)


@dataclass(frozen=True)
class WindowDensity:
    """Tr(chi Pi) / L_inner^2 on the centred window of a sample.

    ``approx_error`` bounds |p(H) - Pi| in operator norm on the sampled
    spectrum, hence bounds the error of every diagonal entry.
    """

    L: int
    L_inner: int
    value: float
    lam: float
    field: FieldProfile
    approx_error: float = 0.0
    degree: int = 0
    gap_radius: tuple = ()


def gap_radius(H, energy: float, tol: float = 1e-8) -> tuple[float, np.ndarray]:
    """Distance from ``energy`` to the spectrum of the sparse Hermitian H.

    Shift-invert Lanczos on (H - energy)^-1; returns the distance (shrunk by
    a relative safety margin of 1e-6) and the nearest eigenvalues found.
    """
    n = H.shape[0]
    A = sp.csc_matrix(H - energy * sp.identity(n, format="csc"))
    try:
        lu = sla.splu(A)
    except RuntimeError:
        return 0.0, np.array([energy])
    op = sla.LinearOperator(H.shape, matvec=lu.solve, dtype=complex)
    k = min(6, n - 2)
    try:
        w = sla.eigsh(op, k=k, which="LM", return_eigenvectors=False, ncv=min(n - 1, 60), tol=tol,
                      maxiter=400, v0=np.ones(n, complex))
    except sla.ArpackNoConvergence as exc:
        w = exc.eigenvalues
        if len(w) == 0:
            raise
    near = np.sort(energy + 1.0 / np.real(w))
    return float(np.min(np.abs(near - energy)) * (1 - 1e-6)), near


def _step_series(R, edges, tol):
    """Chebyshev coefficients on [-R, R] of the smoothed window indicator.

    ``edges`` is a list of (energy, radius, sign): sign +1 for the upper edge
    (indicator below it), -1 for the lower edge. Each step has width
    radius/6, so its deviation from the sharp step is below 1e-17 outside
    the spectrum-free interval.
    """

    def fn(E):
        # indicator = step(hi) - step(lo), with step(e) ~ [E < e]
        out = np.zeros_like(E) if any(sg > 0 for _, _, sg in edges) else np.ones_like(E)
        for e, r, sg in edges:
            out = out + sg * 0.5 * erfc((E - e) / (r / 6))
        return out

    def target(E):
        out = np.ones_like(E)
        for e, _, s in edges:
            out = out * ((E < e) if s > 0 else (E > e))
        return out

    # sample the spectrum-admissible set densely
    pieces, lo = [], -R
    for e, r, _ in sorted(edges):
        pieces.append(np.linspace(lo, e - r, 6000))
        lo = e + r
    pieces.append(np.linspace(lo, R, 6000))
    xs = np.concatenate(pieces)
    want = target(xs)
    best = (np.inf, None)
    deg, stall = 32, 0
    while deg <= MAX_DEGREE and stall < 8:
        c = cheb.chebinterpolate(lambda u: fn(u * R), deg)
        err = float(np.max(np.abs(cheb.chebval(xs / R, c) - want)))
        if err <= tol:
            return c, err
        # near the round-off floor the error stops improving
        stall = stall + 1 if err >= best[0] else 0
        best = min(best, (err, c), key=lambda t: t[0])
        deg += max(16, deg // 8)
    raise GapClosedError(f"smoothed window reaches only {best[0]:.2e} > {tol:.1e} "
                         f"(degree {deg}); gap too narrow for the requested accuracy")


def _window_sites(sample: SampleOperator, L_inner: int) -> np.ndarray:
    X = sample.coords()
    c = sample.origin + (sample.L - 1) / 2
    inside = np.all(np.abs(X - c) < L_inner / 2, axis=1)
    idx = np.flatnonzero(inside)
    if len(idx) != L_inner * L_inner:
        raise ValueError(f"window of side {L_inner} does not fit the site grid symmetrically")
    return idx


def window_ids(sample: SampleOperator, island_window, L_inner: int, tol: float = CHEB_TOL,
               min_gap: float = DELTA_GAP, block: int = 1024) -> WindowDensity:
    """Diagonal sum of the window projection over the centred L_inner window, over L_inner^2.

    Parameters
    ----------
    island_window : (float, float)
        Energy window (lo, hi) with both edges in spectral gaps; infinite
        edges are allowed.
    """
    if L_inner > sample.L // 2 + (sample.L % 2):
        raise ValueError(f"L_inner={L_inner} exceeds half the sample side {sample.L}")
    H = sp.csr_matrix(sample.entries)
    R = float(abs(H).sum(axis=1).max()) * (1 + 1e-9)
    lo, hi = island_window
    idx = _window_sites(sample, L_inner)
    if lo <= -R and hi >= R:
        return WindowDensity(sample.L, L_inner, 1.0, sample.lam, sample.field, 0.0, 0, ())
    edges, radii = [], []
    for e, s in ((hi, 1), (lo, -1)):
        if abs(e) >= R:
            continue
        r, near = gap_radius(H, e)
        if r < min_gap:
            raise GapClosedError(f"gap closed on the sample at lam={sample.lam:.6g}: spectrum "
                                 f"{np.round(near, 6).tolist()} within {min_gap} of window edge {e:.6g}")
        edges.append((e, r, s))
        radii.append(r)
    if not edges:
        return WindowDensity(sample.L, L_inner, 0.0, sample.lam, sample.field, 0.0, 0, ())
    c, err = _step_series(R, edges, tol)
    Ht = (H / R).tocsr()
    total = 0.0
    for start in range(0, len(idx), block):
        cols = idx[start:start + block]
        ar = np.arange(len(cols))
        T0 = np.zeros((H.shape[0], len(cols)), complex)
        T0[cols, ar] = 1.0
        acc = c[0] * np.ones(len(cols))
        T1 = Ht @ T0
        acc += c[1] * T1[cols, ar].real
        for ck in c[2:]:
            T0, T1 = T1, 2 * (Ht @ T1) - T0
            acc += ck * T1[cols, ar].real
        total += acc.sum()
    return WindowDensity(sample.L, L_inner, float(total / len(idx)), sample.lam, sample.field, err,
                         len(c) - 1, tuple(radii))


@dataclass
class ExpansionReport:
    """Linear fit of window densities against lam.

    ``residual_ratio`` compares the deviation from the predicted line at the
    two largest lam values with the square of their ratio (1 for exact
    quadratic scaling); it is None when both deviations sit at round-off.
    ``quadratic_bound`` is max |residual| / lam^2.
    """

    base: str
    island: tuple
    mean_field: float
    c1: int
    lams: list
    requested_lams: list
    densities: list
    intercept: float
    slope: float
    predicted_intercept: float
    predicted_slope: float
    slope_error: float
    relative_error: float | None
    residuals: list
    residual_ratio: float | None
    quadratic_bound: float
    L: int
    L_inner: int
    approx_error: float
    note: str = ("finite-L values; the lower and upper limits over L coincide at a single L "
                 "and are stood in for by an L sweep")
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def island_chern(island: SpectralIsland, V: PotentialSpec = NO_POTENTIAL, kgrid_size: int = 16) -> int:
    bs = band_structure(island.flux, V, "lattice", kgrid_size, keep_vectors=True)
    return int(round(link_chern(bs.vectors[..., island.bands])))


def expansion_fit(base: RationalFlux, island: SpectralIsland, fld: FieldProfile, lam_list, L: int = 60,
                  L_inner: int | None = None, V: PotentialSpec = NO_POTENTIAL, threads: int = 1,
                  tol: float = CHEB_TOL) -> ExpansionReport:
    """Fit window densities to a + s lam and compare with I_0 + lam <B> c1 / 2 pi.

    Each lam is rounded to the nearest torus-admissible value (reported).
    """
    L_inner = L // 2 if L_inner is None else L_inner
    lams = [admissible_lambda(l, L, fld) for l in lam_list]
    origin = -(L - 1) / 2
    window = island.window

    def one(lam):
        s = sample_hamiltonian(L, base, lam, fld, V, "torus", origin)
        try:
            return window_ids(s, window, L_inner, tol)
        except GapClosedError as exc:
            raise GapClosedError(f"gap closure at lam={lam:.6g}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(one, lams))
    else:
        res = [one(l) for l in lams]
    dens = np.array([r.value for r in res])
    lam_arr = np.array(lams)
    s, a = np.polyfit(lam_arr, dens, 1)
    c1 = island_chern(island, V)
    I0 = float(ids_of_island(island))
    B = mean_flux(fld)
    s_pred = B * c1 / (2 * np.pi)
    resid = dens - (I0 + s_pred * lam_arr)
    ratio = None
    if len(lams) >= 2:
        i, j = np.argsort(lam_arr)[-2:]
        if abs(resid[i]) > 1e-13:
            ratio = float((resid[j] / resid[i]) / (lam_arr[j] / lam_arr[i]) ** 2)
    return ExpansionReport(
        str(base), (island.m_lo, island.m_hi), B, c1, [float(l) for l in lams], [float(l) for l in lam_list],
        dens.tolist(), float(a), float(s), I0, s_pred, float(abs(s - s_pred)),
        float(abs(s - s_pred) / abs(s_pred)) if s_pred else None, resid.tolist(), ratio,
        float(np.max(np.abs(resid) / np.where(lam_arr > 0, lam_arr, np.inf) ** 2)), L, L_inner,
        max(r.approx_error for r in res), meta={"degrees": [r.degree for r in res]})

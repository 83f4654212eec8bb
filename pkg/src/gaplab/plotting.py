"""Deterministic SVG figures: colored butterfly and Wannier diagram.

Colors are keyed by the Chern number c1: gray for 0, a warm ramp for
positive and a cool ramp for negative values.
"""
from __future__ import annotations

from fractions import Fraction

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

FIGSIZE = (7.0, 5.0)
SALT = "gaplab"


def chern_color(c1: int, cmax: int = 5):
    """Gray for 0, warm (red-orange) for c1 > 0, cool (blue-cyan) for c1 < 0."""
    if c1 == 0:
        return (0.6, 0.6, 0.6)
    t = min(abs(c1), cmax) / cmax
    if c1 > 0:
        return (0.95, 0.75 - 0.6 * t, 0.2 - 0.15 * t)
    return (0.2 - 0.15 * t, 0.75 - 0.6 * t, 0.95)


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def butterfly_svg(path, bands, gaps, width: float | None = None):
    """Spectrum against flux with gaps colored by c1.

    Parameters
    ----------
    bands : iterable of (phi, e_min, e_max)
    gaps : iterable of (phi, e_lo, e_hi, c1); one polygon is drawn per gap.
    """
    bands, gaps = list(bands), list(gaps)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    phis = sorted({float(b[0]) for b in bands})
    w = width if width is not None else (0.6 * min((b - a for a, b in zip(phis, phis[1:])), default=0.02))
    for phi, lo, hi in bands:
        ax.fill([phi - w / 2, phi + w / 2, phi + w / 2, phi - w / 2], [lo, lo, hi, hi], color="black", lw=0)
    seen = {}
    for phi, lo, hi, c1 in gaps:
        seen.setdefault(int(c1), chern_color(int(c1)))
        ax.fill([phi - w / 2, phi + w / 2, phi + w / 2, phi - w / 2], [lo, lo, hi, hi],
                color=seen[int(c1)], lw=0, alpha=0.85)
    ax.set_xlim(-0.02, 1.02)
    ax.set_xlabel(r"flux per cell $\phi$")
    ax.set_ylabel("energy")
    if seen:
        handles = [Patch(color=seen[c], label=f"$c_1={c}$") for c in sorted(seen)]
        ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=8, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def wannier_diagram_svg(path, labels):
    """Lines I = c0 + c1 phi on the unit square, one per distinct label.

    ``labels`` holds (c0, c1) pairs, c0 a Fraction; the emitted line set is
    sorted so that the bytes do not depend on input order.
    """
    uniq = sorted({(Fraction(c0), int(c1)) for c0, c1 in labels}, key=lambda t: (t[1], t[0]))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for c0, c1 in uniq:
        ax.plot([0.0, 1.0], [float(c0), float(c0 + c1)], color=chern_color(c1), lw=1.0)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel(r"flux per cell $\phi$")
    ax.set_ylabel("integrated density of states $I$")
    fig.tight_layout()
    return _save(fig, path)

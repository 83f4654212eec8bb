"""Gap labels, Chern numbers and magnetic perturbation experiments for 2D Bloch-Landau models."""
__version__ = "0.1.0"

from .flux import FieldProfile, RationalFlux, farey_fluxes, peierls_phase  # noqa: E402,F401
from .hamiltonians import PotentialSpec, lattice_fiber, continuum_fiber, sample_hamiltonian  # noqa: E402,F401
from .spectral import band_structure, detect_islands, track_island, ids_of_island  # noqa: E402,F401
from .chern import chern_kspace, chern_realspace, diophantine_label, streda_check, gap_labels  # noqa: E402,F401

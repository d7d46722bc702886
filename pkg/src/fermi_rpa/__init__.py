"""Numerical bosonization of the mean-field Fermi gas.

Builds the Fermi-surface patch decomposition, counts particle-hole pairs,
assembles the per-momentum quadratic bosonic problem, and evaluates the
correlation-energy upper bound by three cross-checking methods, with an
exact small-Fock-space sandbox for the operator-algebra identities.
"""

from .energy import (EnergyReport, Potential, convergence_sweep,
                     correlation_energy, gmb_closed_form, sweep_csv)
from .focksandbox import sandbox_suite
from .lattice import FermiGeometry, KAPPA0, fermi_ball, gamma_nor, shell
from .paircount import build_pair_table, pair_table_csv
from .patches import build_partition, round_even_patch_count
from .quadratic import (blocks_from_uv, energy_integral, energy_trace,
                        kernel_K, symplectic_oracle)

__all__ = [
    "EnergyReport",
    "FermiGeometry",
    "KAPPA0",
    "Potential",
    "blocks_from_uv",
    "build_pair_table",
    "build_partition",
    "convergence_sweep",
    "correlation_energy",
    "energy_integral",
    "energy_trace",
    "fermi_ball",
    "gamma_nor",
    "gmb_closed_form",
    "kernel_K",
    "pair_table_csv",
    "round_even_patch_count",
    "sandbox_suite",
    "shell",
    "sweep_csv",
    "symplectic_oracle",
]

__version__ = "0.1.0"

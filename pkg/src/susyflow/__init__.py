"""Numerical ghost-sector spectral analysis of stochastic dynamics on tori.

The package assembles the exterior-algebra Fokker-Planck Hamiltonian
H = d j + j d on discretized tori, builds exact transfer operators for noisy
affine unimodular torus maps, computes bi-orthogonal ghost-sector spectra,
and classifies dynamics as chaotic through the spontaneous breakdown of the
d-symmetry (a negative ground-state growth rate).
"""

__version__ = "0.1.0"

from .mesh import TorusMesh, build_mesh, derivative_matrix, modified_wavenumber, wavenumbers
from .vfparse import FlowSpec, builtin_flow, evaluate, flow_from_strings, parse, pretty
from .exterior import (
    FormField,
    SectorOperator,
    build_codiff,
    build_d,
    build_interior,
    init_poincare_dual,
    integrate_top,
    wedge,
)
from .fpoperator import FPHamiltonian, assemble_H, assemble_j, evolve, expm_krylov
from .gtomap import (
    GtoOperator,
    MapSpec,
    build_gto,
    builtin_map,
    deterministic_pullback,
    gto_spectrum,
    gto_supertrace,
)
from .spectral import (
    SpectrumReport,
    dense_eig,
    krylov_extremal,
    pair_bf,
    spectra_of_hamiltonian,
)
from .topoanalysis import (
    ChaosReport,
    classify,
    expectation,
    ground_density,
    map_partition_function,
    partition_function,
    select_ground_pair,
    witten_index,
)
from .dynamics import (
    LyapunovResult,
    TrajectoryConfig,
    fixed_point_count,
    integrate_sde,
    lyapunov_spectrum,
    map_lyapunov,
    orbit_growth_rate,
)

"""Effective Hamiltonians for one-dimensional nonconvex Hamilton-Jacobi homogenization."""
from .cell_solver import CellSolution, CellSolverError, HbarEstimate, estimate_Hbar, solve_discounted
from .corrector import (
    flat_interval,
    inf_admissible,
    slope_intervals,
    sup_admissible,
    verify_metric_solution,
)
from .effective import (
    EffectiveCurve,
    compute_effective,
    effective_hamiltonian,
    effective_large_osc,
    effective_quasiconvex,
    effective_small_osc,
    glue_minimum,
    sweep_intervals,
)
from .evolution import (
    EvolutionSolution,
    convergence_report,
    multi_seed_report,
    solve_homogenized,
    solve_oscillatory,
)
from .hamiltonian import (
    BranchRangeError,
    HamiltonianError,
    NormalizationRecord,
    Piece,
    PiecewiseMonotoneHamiltonian,
    carve_left,
    carve_right,
    normalize,
    split_at_zero,
)
from .potential import BlockRandom, PeriodicAnalytic, PotentialModel, PotentialPath, RandomPhase

__all__ = [
    "BlockRandom",
    "BranchRangeError",
    "CellSolution",
    "CellSolverError",
    "EffectiveCurve",
    "EvolutionSolution",
    "HamiltonianError",
    "HbarEstimate",
    "NormalizationRecord",
    "PeriodicAnalytic",
    "Piece",
    "PiecewiseMonotoneHamiltonian",
    "PotentialModel",
    "PotentialPath",
    "RandomPhase",
    "carve_left",
    "carve_right",
    "compute_effective",
    "convergence_report",
    "effective_hamiltonian",
    "effective_large_osc",
    "effective_quasiconvex",
    "effective_small_osc",
    "estimate_Hbar",
    "flat_interval",
    "glue_minimum",
    "inf_admissible",
    "multi_seed_report",
    "normalize",
    "slope_intervals",
    "solve_discounted",
    "solve_homogenized",
    "solve_oscillatory",
    "split_at_zero",
    "sup_admissible",
    "sweep_intervals",
    "verify_metric_solution",
]

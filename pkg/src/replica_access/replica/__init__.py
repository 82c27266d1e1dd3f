"""Free-entropy evaluation, state-evolution fixed points and phase diagrams."""

from .correlated import CorrelatedModel, MonteCarlo, phi_correlated, se_map_correlated
from .isotropic import (dphi_asymptotic, dphi_isotropic, fixed_point_asymptotic, group_mse,
                        phi_asymptotic, phi_isotropic, prior_tau, se_map_asymptotic, se_map_isotropic)
from .stationary import (DecouplingReport, FreeEntropySpec, JointStateEvolution, PhaseDiagram,
                         StationaryPoint, StationaryPointReport, decoupling_check,
                         find_stationary_points, phase_diagram, se_fixed_point)

__all__ = [
    "CorrelatedModel", "MonteCarlo", "phi_correlated", "se_map_correlated", "dphi_asymptotic",
    "dphi_isotropic", "fixed_point_asymptotic", "group_mse", "phi_asymptotic", "phi_isotropic",
    "prior_tau", "se_map_asymptotic", "se_map_isotropic", "DecouplingReport", "FreeEntropySpec",
    "JointStateEvolution", "PhaseDiagram", "StationaryPoint", "StationaryPointReport",
    "decoupling_check", "find_stationary_points", "phase_diagram", "se_fixed_point",
]

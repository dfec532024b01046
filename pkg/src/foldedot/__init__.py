"""Folded optimal-transport distances between density matrices."""

__version__ = "0.1.0"

from .classical_ot import TransportPlan, kantorovich_lp, wasserstein_p  # noqa: E402
from .folded_core import (  # noqa: E402
    ChainWitness,
    Ensemble,
    RepresentingCoupling,
    SolveConfig,
    SolveReport,
    chain_relax,
    check_representing,
    ensemble_from_isometry,
    fixed_atoms_lp,
    folded_kantorovich_upper,
    monotonicity_check,
    spectral_ensemble,
    subadditivity_probe,
)
from .metrics import FROBENIUS, FUBINI_STUDY, get_metric  # noqa: E402

__all__ = [
    "ChainWitness", "Ensemble", "FROBENIUS", "FUBINI_STUDY", "RepresentingCoupling",
    "SolveConfig", "SolveReport", "TransportPlan", "chain_relax", "check_representing",
    "ensemble_from_isometry", "fixed_atoms_lp", "folded_kantorovich_upper", "get_metric",
    "kantorovich_lp", "monotonicity_check", "spectral_ensemble", "subadditivity_probe",
    "wasserstein_p",
]

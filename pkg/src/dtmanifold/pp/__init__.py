"""Init file for the pp module: problem definition and preparation."""

from ._cutoff import CutoffProfile, cutoff_apply, cutoff_profile
from ._gronwall import gronwall_bounds
from ._polynomial import MonomialTerm, PolyMap, poly_eval, terms_from_config
from ._problem import Problem, ValidationReport, eliminate_cross_term, validate_problem

__all__ = [
    "CutoffProfile",
    "MonomialTerm",
    "PolyMap",
    "Problem",
    "ValidationReport",
    "cutoff_apply",
    "cutoff_profile",
    "eliminate_cross_term",
    "gronwall_bounds",
    "poly_eval",
    "terms_from_config",
    "validate_problem",
]

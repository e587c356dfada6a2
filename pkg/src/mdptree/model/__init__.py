from .structure import ExplicitMdp, TransitionStructure, frac_str, valuation_name
from .quotient import (
    FamilyError,
    MarkovChain,
    QuotientMdp,
    Restriction,
    build_quotient,
    induced_mc,
    reachable_fragment,
    restrict,
)

__all__ = [
    "ExplicitMdp",
    "TransitionStructure",
    "frac_str",
    "valuation_name",
    "FamilyError",
    "MarkovChain",
    "QuotientMdp",
    "Restriction",
    "build_quotient",
    "induced_mc",
    "reachable_fragment",
    "restrict",
]

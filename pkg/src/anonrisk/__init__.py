"""Anonymized risk sharing on finite probability spaces.

Conditional mean risk sharing (CMRS), a catalog of alternative rules,
finite-battery checkers for the fairness axioms, and reward allocation for
mining pools, multi-coin mining and streaming revenue.
"""

from .axioms import AXIOMS, FOUR_AXIOMS, AxiomReport, Witness, run_checks
from .battery import Scenario, ScenarioSet, random_battery
from .errors import AnonRiskError, RuleError, SchemaError
from .prob_core import (
    FiniteSpace,
    Partition,
    RandVar,
    RiskVector,
    cond_expectation,
    convex_order_leq,
    is_comonotonic,
    make_space,
    partition_of,
    refine,
    uniform_space,
)
from .rules import RULE_NAMES, RuleSpec, apply, cmrs, generalized_cmrs

__all__ = [
    "AXIOMS", "FOUR_AXIOMS", "AxiomReport", "Witness", "run_checks",
    "Scenario", "ScenarioSet", "random_battery",
    "AnonRiskError", "RuleError", "SchemaError",
    "FiniteSpace", "Partition", "RandVar", "RiskVector", "cond_expectation",
    "convex_order_leq", "is_comonotonic", "make_space", "partition_of", "refine",
    "uniform_space",
    "RULE_NAMES", "RuleSpec", "apply", "cmrs", "generalized_cmrs",
]

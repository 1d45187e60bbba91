"""Adaptive pair-matching on hidden two-community stochastic block models."""

from .model import Budget, BoundCurve, CurveKind, ModelParams, kl_bernoulli, regret_lower_bound, scaling_param
from .oracle import HiddenGraph, QueryLedger, expected_random_regret, sample_csbm, verify_ledger

__version__ = "0.1.0"

__all__ = [
    "BoundCurve",
    "Budget",
    "CurveKind",
    "HiddenGraph",
    "ModelParams",
    "QueryLedger",
    "expected_random_regret",
    "kl_bernoulli",
    "regret_lower_bound",
    "sample_csbm",
    "scaling_param",
    "verify_ledger",
]

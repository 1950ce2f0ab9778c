"""
Reputation algebra

Score ledgers, weighted feedback accumulation, the global reputation
formula and the fairness threshold analysis. Pure functions over frozen
values; safe to share between threads.
"""

from reputation_core.ledger import (
    GlobalReputation,
    LocalScore,
    ScoreLedger,
    WeightMode,
    apply_feedback,
    as_reputation,
    format_decimal,
    global_reputation,
    new_ledger,
    record_transaction,
    reset_ledger,
    scorer_weight,
)
from reputation_core.fairness import (
    FairnessParams,
    analytic_threshold_root,
    closed_form_gr,
    discrete_gr,
    fairness_table,
    fairness_threshold,
    scan_threshold,
    simulate_unit_gr,
)

__version__ = "0.1.0"
__all__ = [
    "GlobalReputation",
    "LocalScore",
    "ScoreLedger",
    "WeightMode",
    "apply_feedback",
    "as_reputation",
    "format_decimal",
    "global_reputation",
    "new_ledger",
    "record_transaction",
    "reset_ledger",
    "scorer_weight",
    "FairnessParams",
    "analytic_threshold_root",
    "closed_form_gr",
    "discrete_gr",
    "fairness_table",
    "fairness_threshold",
    "scan_threshold",
    "simulate_unit_gr",
]

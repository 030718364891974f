"""Statistical relational learning toolkit.

Functional gradient boosting over first-order data (hard, cost-sensitive
soft-margin, and exponential-family variants), relational continuous-time
intensity models with forward sampling and CIM amalgamation, two-slice
dynamic network structure scoring, and imbalance-aware evaluation metrics.
"""

from . import boost, dbn, hybrid, logic, metrics, rctbn, regtree

__all__ = ["boost", "dbn", "hybrid", "logic", "metrics", "rctbn", "regtree"]
__version__ = "0.1.0"

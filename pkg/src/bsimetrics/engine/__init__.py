from .core import (
    Agg,
    BucketVector,
    Engine,
    OrphanPositionError,
    PredicateBindError,
    group_by_bucket,
    group_by_bucket_scan,
    rmse,
    rmse_squared,
)
from .preagg import PreAggTree, RangeError, TreeCache
from .predicate import (
    Clause,
    PredicateExpr,
    PredicateSyntaxError,
    UnknownOperatorError,
    parse_predicate,
)

__all__ = [
    "Agg",
    "BucketVector",
    "Clause",
    "Engine",
    "OrphanPositionError",
    "PreAggTree",
    "PredicateBindError",
    "PredicateExpr",
    "PredicateSyntaxError",
    "RangeError",
    "TreeCache",
    "UnknownOperatorError",
    "group_by_bucket",
    "group_by_bucket_scan",
    "parse_predicate",
    "rmse",
    "rmse_squared",
]

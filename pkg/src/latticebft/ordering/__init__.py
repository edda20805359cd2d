from .core import (
    INF,
    Criteria,
    DeliveryBatch,
    HeightEntry,
    Mode,
    NotCandidate,
    OrderingError,
    default_phi,
    max_faulty_chains,
    parse_batch_line,
)
from .incremental import OpCounters, OrderingState
from .naive import NaiveView, naive_order

__all__ = [
    "INF",
    "Criteria",
    "DeliveryBatch",
    "HeightEntry",
    "Mode",
    "NotCandidate",
    "OrderingError",
    "OpCounters",
    "OrderingState",
    "NaiveView",
    "naive_order",
    "default_phi",
    "max_faulty_chains",
    "parse_batch_line",
]

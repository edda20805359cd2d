"""Blocklattice consensus: agreement, total ordering, timestamps and a network simulator."""

from .agreement import BOTTOM, SKIP, ByzantineAgreement
from .lattice import Block, LatticeView, parse_fixture
from .ordering import OrderingState, naive_order
from .timestamp import consensus_timestamps

__version__ = "0.1.0"

__all__ = [
    "BOTTOM",
    "SKIP",
    "ByzantineAgreement",
    "Block",
    "LatticeView",
    "parse_fixture",
    "OrderingState",
    "naive_order",
    "consensus_timestamps",
]

"""Joint routing and speed optimization solved by branch-cut-and-price."""

from .model import (
    CostFunction,
    DomainError,
    Instance,
    InfeasibleInstance,
    ParseError,
    ValidationError,
    generate_instance,
    load_instance,
    parse_instance,
    tighten_time_windows,
)
from .sop import optimal_route_cost, pattern_cost

__all__ = [
    "CostFunction",
    "DomainError",
    "Instance",
    "InfeasibleInstance",
    "ParseError",
    "ValidationError",
    "generate_instance",
    "load_instance",
    "optimal_route_cost",
    "parse_instance",
    "pattern_cost",
    "tighten_time_windows",
]

__version__ = "0.1.0"

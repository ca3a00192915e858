"""Deadlock prediction from a single execution trace."""
from .analysis import AnalysisConfig, AnalysisReport, IllFormedTraceError, analyze
from .engine import ConcreteDependency, OrderMode, compute_lock_dependencies, dedupe
from .search import (DeadlockPattern, enumerate_cyclic_chains, filter_blocked,
                     find_concurrent_instance)
from .trace import (Event, Operation, Trace, critical_sections, last_write, normalize_requests,
                    parse_trace, read_trace, serialize_trace, validate)
from .vclock import VectorClock

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "AnalysisReport", "ConcreteDependency", "DeadlockPattern", "Event",
    "IllFormedTraceError", "OrderMode", "Operation", "Trace", "VectorClock", "analyze",
    "compute_lock_dependencies", "critical_sections", "dedupe", "enumerate_cyclic_chains",
    "filter_blocked", "find_concurrent_instance", "last_write", "normalize_requests",
    "parse_trace", "read_trace", "serialize_trace", "validate",
]

"""
Domain types, identifier interning and file codecs shared by every stage
"""
from .ids import Interner
from .model import (
    FailureImpactGraph,
    FailureWindow,
    IncidentEmbedding,
    IncidentRecord,
    KpiSeries,
    KpiStore,
)
from .topology import LAYERS, TopologyGraph, shortest_hop_distance

__all__ = [
    "Interner",
    "FailureImpactGraph",
    "FailureWindow",
    "IncidentEmbedding",
    "IncidentRecord",
    "KpiSeries",
    "KpiStore",
    "LAYERS",
    "TopologyGraph",
    "shortest_hop_distance",
]

"""
Immutable domain types: incidents, KPI series, failure windows, impact graphs, embeddings
"""
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import DataValidationError, UnknownIncidentTypeError


@dataclass(frozen=True, slots=True)
class IncidentRecord:
    """One incident rendered by a monitor: (minute, source node, incident type, severity)"""

    minute: int
    node: str
    itype: str
    severity: int = 0
    title: Optional[str] = None  # carried opaquely, never used for similarity

    def __post_init__(self):
        if self.minute < 0:
            raise DataValidationError(f"incident minute must be >= 0, got {self.minute}")
        if not self.node or not self.itype:
            raise DataValidationError("incident node and type must be non-empty")


@dataclass(frozen=True, slots=True)
class FailureWindow:
    """Inclusive minute range [start_minute, end_minute] of one detected failure"""

    start_minute: int
    end_minute: int

    def __post_init__(self):
        if self.start_minute > self.end_minute:
            raise DataValidationError(
                f"window start {self.start_minute} is after end {self.end_minute}"
            )

    def contains(self, minute: int) -> bool:
        return self.start_minute <= minute <= self.end_minute

    def overlaps(self, other: "FailureWindow") -> bool:
        return self.start_minute <= other.end_minute and other.start_minute <= self.end_minute

    @property
    def length(self) -> int:
        return self.end_minute - self.start_minute + 1


@dataclass(frozen=True)
class KpiSeries:
    """Minute-sampled values of one KPI on one node"""

    node: str
    kpi: str
    start_minute: int
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 1:
            raise DataValidationError(f"KPI {self.node}/{self.kpi} has no values")
        if not all(math.isfinite(v) for v in self.values):
            raise DataValidationError(f"KPI {self.node}/{self.kpi} contains NaN or infinite values")

    @property
    def end_minute(self) -> int:
        return self.start_minute + len(self.values) - 1

    def segment(self, start: int, end: int) -> np.ndarray:
        """Values for the inclusive minute range, clipped to the recorded span"""
        lo = max(start, self.start_minute) - self.start_minute
        hi = min(end, self.end_minute) - self.start_minute
        if hi < lo:
            return np.empty(0, dtype=float)
        return np.asarray(self.values[lo:hi + 1], dtype=float)


class KpiStore:
    """Read-only index of KPI series by (node, kpi name)"""

    def __init__(self, series: Iterable[KpiSeries] = ()):
        self._series: Dict[Tuple[str, str], KpiSeries] = {}
        self._by_node: Dict[str, List[str]] = {}
        for s in series:
            key = (s.node, s.kpi)
            if key in self._series:
                raise DataValidationError(f"duplicate KPI series {s.node}/{s.kpi}")
            self._series[key] = s
            self._by_node.setdefault(s.node, []).append(s.kpi)

    def get(self, node: str, kpi: str) -> Optional[KpiSeries]:
        return self._series.get((node, kpi))

    def kpis_for(self, node: str) -> List[str]:
        return list(self._by_node.get(node, ()))

    def __iter__(self) -> Iterator[KpiSeries]:
        return iter(self._series.values())

    def __len__(self) -> int:
        return len(self._series)

    def __eq__(self, other):
        if not isinstance(other, KpiStore):
            return NotImplemented
        return self._series == other._series


@dataclass(frozen=True)
class FailureImpactGraph:
    """Nodes and incidents recovered for one failure inside one detected window"""

    window: FailureWindow
    nodes: FrozenSet[str]
    incidents: Tuple[IncidentRecord, ...]
    incident_indices: Tuple[int, ...] = ()
    boundary_nodes: FrozenSet[str] = frozenset()

    def __post_init__(self):
        for inc in self.incidents:
            if not self.window.contains(inc.minute):
                raise DataValidationError(f"incident at minute {inc.minute} outside {self.window}")
            if inc.node not in self.nodes:
                raise DataValidationError(f"incident node {inc.node!r} is not a graph member")

    def incidents_by_node(self) -> Dict[str, List[str]]:
        """Per-node incident type lists, duplicates kept, in stream order"""
        by_node: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for inc in self.incidents:
            by_node[inc.node].append(inc.itype)
        return by_node

    def type_counts(self) -> Counter:
        return Counter(inc.itype for inc in self.incidents)


@dataclass(frozen=True)
class IncidentEmbedding:
    """Fixed-dimension vector per incident type; vectors are float32"""

    dim: int
    vectors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise DataValidationError(f"embedding dim must be positive, got {self.dim}")
        frozen = {}
        for itype, vec in self.vectors.items():
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise DataValidationError(f"vector for {itype!r} has shape {arr.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"vector for {itype!r} has non-finite entries")
            arr = arr.copy()
            arr.setflags(write=False)
            frozen[itype] = arr
        object.__setattr__(self, "vectors", frozen)

    @property
    def vocabulary(self) -> List[str]:
        return list(self.vectors)

    def __contains__(self, itype: object) -> bool:
        return itype in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def vector(self, itype: str) -> np.ndarray:
        try:
            return self.vectors[itype]
        except KeyError:
            raise UnknownIncidentTypeError(itype) from None

    def matrix(self, order: Optional[Sequence[str]] = None) -> np.ndarray:
        keys = list(order) if order is not None else self.vocabulary
        if not keys:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.vector(k) for k in keys])

    def __eq__(self, other):
        if not isinstance(other, IncidentEmbedding):
            return NotImplemented
        return (
            self.dim == other.dim
            and list(self.vectors) == list(other.vectors)
            and all(np.array_equal(self.vectors[k], other.vectors[k]) for k in self.vectors)
        )

"""
Online incident aggregation.

Incidents are buffered per minute; each closed minute feeds its count to the EVT
detector. While a failure window is active every incident of an anomalous minute joins
the open group it is most similar to (historical closeness of the incident types rescaled
by topological distance), or opens a new group below the aggregation threshold.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import AggregatorConfig
from ..core.codecs import check_token, read_lines, parse_int, write_lines
from ..core.model import IncidentEmbedding, IncidentRecord
from ..core.topology import TopologyGraph
from ..errors import DataValidationError, ParseError, UnsortedStreamError
from .failure_detector import EvtDetector, Verdict

logger = logging.getLogger(__name__)


def historical_closeness(emb: IncidentEmbedding, i: str, j: str) -> Optional[float]:
    """Cosine of the two type vectors; None when either type is out of vocabulary"""
    if i not in emb or j not in emb:
        return None
    a = emb.vector(i).astype(np.float64)
    b = emb.vector(j).astype(np.float64)
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(a @ b) / norm


def topological_rescaling(d: Optional[float], tau: int) -> float:
    """1 / max(1, d - tau); unreachable (None or inf) rescales to 0"""
    if d is None or math.isinf(d):
        return 0.0
    if d < 0:
        raise DataValidationError(f"hop distance must be >= 0, got {d}")
    return 1.0 / max(1.0, d - tau)


def similarity(emb: IncidentEmbedding, i: IncidentRecord, j: IncidentRecord,
               topo: TopologyGraph, cfg: AggregatorConfig) -> Optional[float]:
    """TR x HC; None when a type is out of vocabulary or the nodes are unreachable"""
    hc = historical_closeness(emb, i.itype, j.itype)
    if hc is None:
        return None
    d = topo.distance(topo.node_id(i.node), topo.node_id(j.node))
    if d is None or math.isinf(d):
        return None
    return topological_rescaling(d, cfg.tau) * hc


def decide_correlation(sim_value: Optional[float], cfg: AggregatorConfig) -> int:
    return int(sim_value is not None and sim_value >= cfg.lambda_)


@dataclass(frozen=True)
class GroupMember:
    index: int
    incident: IncidentRecord
    vector: Optional[np.ndarray]

    @property
    def node(self) -> str:
        return self.incident.node


@dataclass
class IncidentGroup:
    group_id: int
    window_start: int
    members: List[GroupMember] = field(default_factory=list)
    window_end: Optional[int] = None

    @property
    def closed(self) -> bool:
        return self.window_end is not None

    @property
    def indices(self) -> List[int]:
        return [m.index for m in self.members]

    def __len__(self) -> int:
        return len(self.members)


def incident_to_group_similarity(emb: IncidentEmbedding, i: IncidentRecord, g: IncidentGroup,
                                 topo: TopologyGraph, cfg: AggregatorConfig) -> Optional[float]:
    """Largest similarity between the incident and any member; None if no member is comparable"""
    if not g.members:
        raise DataValidationError(f"group {g.group_id} is empty")
    values = [similarity(emb, i, m.incident, topo, cfg) for m in g.members]
    defined = [v for v in values if v is not None]
    return max(defined) if defined else None


class OnlineAggregator:
    """Single-writer aggregator over one incident stream partition"""

    def __init__(
        self,
        emb: IncidentEmbedding,
        topo: TopologyGraph,
        detector: EvtDetector,
        cfg: Optional[AggregatorConfig] = None,
        index_offset: int = 0,
        start_minute: Optional[int] = None,
    ):
        self.emb = emb
        self.topo = topo
        self.detector = detector
        self.cfg = cfg or AggregatorConfig()
        self.groups: List[IncidentGroup] = []
        self.assignments: Dict[int, Optional[int]] = {}
        self._next_index = index_offset
        self._minute: Optional[int] = None if start_minute is None else start_minute
        self._buffer: List[Tuple[int, IncidentRecord]] = []
        self._calibration: List[int] = []
        self._open: List[IncidentGroup] = []
        self._window_start: Optional[int] = None

    @property
    def current_minute(self) -> Optional[int]:
        """Minute currently being buffered; earlier minutes are closed"""
        return self._minute

    @property
    def window_active(self) -> bool:
        return self._window_start is not None

    @property
    def open_groups(self) -> List[IncidentGroup]:
        return list(self._open)

    @property
    def finalized_groups(self) -> List[IncidentGroup]:
        return [g for g in self.groups if g.closed]

    def process(self, incident: IncidentRecord, index: Optional[int] = None) -> int:
        """Buffer one incident; returns its stream index"""
        if self._minute is not None and incident.minute < self._minute:
            raise UnsortedStreamError(
                f"incident at minute {incident.minute} arrived after minute {self._minute}"
            )
        if index is None:
            index = self._next_index
        self._next_index = index + 1
        if self._minute is None:
            self._minute = incident.minute
        while self._minute < incident.minute:
            self._close_minute()
        self._buffer.append((index, incident))
        return index

    def advance_to(self, minute: int) -> None:
        """Close every minute before ``minute`` (gap minutes count as zero incidents)"""
        if self._minute is None:
            self._minute = minute
        while self._minute < minute:
            self._close_minute()

    def flush(self) -> None:
        """Close the current minute and any active window"""
        if self._minute is not None:
            self._close_minute()
        self._close_window()

    def _close_minute(self) -> None:
        minute, buffered = self._minute, self._buffer
        self._buffer = []
        self._minute = minute + 1
        count = len(buffered)

        if not self.detector.calibrated:
            self._calibration.append(count)
            for idx, _ in buffered:
                self.assignments[idx] = None
            if len(self._calibration) >= self.detector.calib_n:
                self.detector.calibrate(self._calibration)
                logger.info("aggregator detector calibrated on %d minutes, z_q=%.4g",
                            len(self._calibration), self.detector.z_q)
                self._calibration = []
            return

        verdict = self.detector.observe(count)
        if verdict is Verdict.ANOMALOUS:
            if self._window_start is None:
                self._window_start = minute
                logger.info("failure window opened at minute %d (%d incidents)", minute, count)
            for idx, inc in buffered:
                self.assignments[idx] = self._assign(idx, inc).group_id
        else:
            if self._window_start is not None:
                self._close_window(end=minute - 1)
            for idx, _ in buffered:
                self.assignments[idx] = None

    def _close_window(self, end: Optional[int] = None) -> None:
        if self._window_start is None:
            return
        end = self._minute - 1 if end is None else end
        for g in self._open:
            g.window_end = end
        logger.info("failure window [%d,%d] closed with %d groups", self._window_start, end, len(self._open))
        self._open = []
        self._window_start = None

    def _assign(self, idx: int, inc: IncidentRecord) -> IncidentGroup:
        vector = self.emb.vectors.get(inc.itype)
        if vector is None:
            logger.warning("incident type %r is out of vocabulary; opening a singleton group", inc.itype)
            return self._new_group(idx, inc, None)

        best, best_sim = None, -math.inf
        for g in self._open:
            sim = incident_to_group_similarity(self.emb, inc, g, self.topo, self.cfg)
            if sim is not None and sim > best_sim:
                best, best_sim = g, sim
        if best is not None and decide_correlation(best_sim, self.cfg):
            best.members.append(GroupMember(idx, inc, vector))
            return best
        return self._new_group(idx, inc, vector)

    def _new_group(self, idx: int, inc: IncidentRecord, vector) -> IncidentGroup:
        group = IncidentGroup(group_id=len(self.groups), window_start=self._window_start)
        group.members.append(GroupMember(idx, inc, vector))
        self.groups.append(group)
        self._open.append(group)
        return group


def aggregate_stream(
    incidents: Iterable[IncidentRecord],
    emb: IncidentEmbedding,
    topo: TopologyGraph,
    detector: EvtDetector,
    cfg: Optional[AggregatorConfig] = None,
    index_offset: int = 0,
    indices: Optional[Sequence[int]] = None,
    start_minute: Optional[int] = None,
) -> List[IncidentGroup]:
    """Replay a sorted stream through a fresh aggregator and return every group"""
    agg = OnlineAggregator(emb, topo, detector, cfg, index_offset, start_minute)
    for k, inc in enumerate(incidents):
        agg.process(inc, None if indices is None else indices[k])
    agg.flush()
    logger.info("aggregated stream into %d groups", len(agg.groups))
    return agg.groups


# --- groups file ------------------------------------------------------------------

def save_groups(groups: Sequence[IncidentGroup], path: Union[str, Path]) -> Path:
    """`group_id,minute,node,incident_type,incident_index` per grouped incident"""
    lines = []
    for g in sorted(groups, key=lambda g: g.group_id):
        for m in g.members:
            check_token(m.incident.itype, "incident type")
            lines.append(f"{g.group_id},{m.incident.minute},{m.node},{m.incident.itype},{m.index}")
    return write_lines(path, lines)


def load_group_rows(path: Union[str, Path]) -> List[Tuple[int, IncidentRecord, Optional[int]]]:
    rows = []
    for line_no, line in read_lines(path):
        parts = line.split(",")
        if len(parts) not in (4, 5):
            raise ParseError(path, line_no, f"expected 4 or 5 fields, got {len(parts)}")
        gid = parse_int(path, line_no, parts[0], "group id")
        minute = parse_int(path, line_no, parts[1], "minute")
        index = parse_int(path, line_no, parts[4], "incident index") if len(parts) == 5 else None
        rows.append((gid, IncidentRecord(minute, parts[2], parts[3]), index))
    return rows

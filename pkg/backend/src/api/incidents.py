import logging
import threading
from typing import List, Literal, Optional, Set

from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel, Field
from sqlalchemy.orm import Session

from ..config import Settings
from ..core.codecs import load_embedding, load_topology
from ..core.model import IncidentRecord
from ..database import get_db, save_groups
from ..errors import UnknownNodeError, UnsortedStreamError
from ..services.failure_detector import EvtDetector
from ..services.online_aggregator import IncidentGroup, OnlineAggregator

logger = logging.getLogger(__name__)

router = APIRouter()

_aggregator: Optional[OnlineAggregator] = None
_persisted: Set[int] = set()
_lock = threading.Lock()


class IncidentIn(BaseModel):
    minute: int = Field(ge=0)
    node: str = Field(min_length=1)
    incident_type: str = Field(min_length=1)
    severity: int = Field(1, ge=0)
    title: Optional[str] = None


class IncidentBatch(BaseModel):
    incidents: List[IncidentIn]


class Assignment(BaseModel):
    index: int
    group_id: Optional[int]
    status: Literal["pending", "grouped", "ungrouped"]


class IncidentBatchResponse(BaseModel):
    assignments: List[Assignment]
    window_active: bool
    calibrated: bool


class GroupMemberOut(BaseModel):
    index: int
    minute: int
    node: str
    incident_type: str


class GroupOut(BaseModel):
    group_id: int
    window_start: int
    window_end: Optional[int]
    closed: bool
    members: List[GroupMemberOut]


class GroupsResponse(BaseModel):
    groups: List[GroupOut]
    window_active: bool


class FlushResponse(BaseModel):
    finalized: int
    persisted: int


def build_aggregator(settings: Settings) -> OnlineAggregator:
    """Aggregator over the configured topology and embedding; the detector self-calibrates"""
    if not settings.has_models:
        raise HTTPException(
            status_code=503,
            detail="Live aggregation is not configured: set TOPOLOGY_PATH and EMBEDDING_PATH",
        )
    topology = load_topology(settings.topology_path)
    embedding = load_embedding(settings.embedding_path)
    logger.info("Live aggregator ready: %d nodes, %d incident types", topology.n_nodes, len(embedding))
    return OnlineAggregator(embedding, topology, EvtDetector.from_config(settings.detector), settings.aggregator)


def get_aggregator() -> OnlineAggregator:
    """
    Dependency to get the process-wide aggregator
    """
    global _aggregator
    with _lock:
        if _aggregator is None:
            _aggregator = build_aggregator(Settings())
        return _aggregator


def reset_aggregator() -> None:
    global _aggregator
    with _lock:
        _aggregator = None
        _persisted.clear()


def _group_out(g: IncidentGroup) -> GroupOut:
    return GroupOut(
        group_id=g.group_id,
        window_start=g.window_start,
        window_end=g.window_end,
        closed=g.closed,
        members=[
            GroupMemberOut(index=m.index, minute=m.incident.minute, node=m.node, incident_type=m.incident.itype)
            for m in g.members
        ],
    )


def _assignment(agg: OnlineAggregator, index: int) -> Assignment:
    if index not in agg.assignments:
        return Assignment(index=index, group_id=None, status="pending")
    group_id = agg.assignments[index]
    return Assignment(index=index, group_id=group_id, status="ungrouped" if group_id is None else "grouped")


@router.post("/incidents", response_model=IncidentBatchResponse)
async def post_incidents(batch: IncidentBatch, agg: OnlineAggregator = Depends(get_aggregator)):
    """
    Feed a batch of incidents, sorted by minute, to the live aggregator
    """
    minutes = [inc.minute for inc in batch.incidents]
    if any(b < a for a, b in zip(minutes, minutes[1:])):
        raise UnsortedStreamError("incident batch is not sorted by minute")
    with _lock:
        if minutes and agg.current_minute is not None and minutes[0] < agg.current_minute:
            raise UnsortedStreamError(f"incident at minute {minutes[0]} arrived after minute {agg.current_minute}")
        for inc in batch.incidents:
            if inc.node not in agg.topo:
                raise UnknownNodeError(inc.node)
        indices = [
            agg.process(IncidentRecord(inc.minute, inc.node, inc.incident_type, inc.severity, inc.title))
            for inc in batch.incidents
        ]
        return IncidentBatchResponse(
            assignments=[_assignment(agg, idx) for idx in indices],
            window_active=agg.window_active,
            calibrated=agg.detector.calibrated,
        )


@router.get("/groups", response_model=GroupsResponse)
async def get_groups(agg: OnlineAggregator = Depends(get_aggregator)):
    """
    Finalized and open groups of the live stream
    """
    with _lock:
        return GroupsResponse(groups=[_group_out(g) for g in agg.groups], window_active=agg.window_active)


@router.post("/incidents/flush", response_model=FlushResponse)
async def flush_incidents(agg: OnlineAggregator = Depends(get_aggregator), db: Session = Depends(get_db)):
    """
    Close the current minute and any active failure window; newly finalized groups are persisted
    """
    with _lock:
        agg.flush()
        finalized = [g for g in agg.finalized_groups if g.group_id not in _persisted]
        _persisted.update(g.group_id for g in finalized)
    persisted = save_groups(db, finalized) if finalized else 0
    return FlushResponse(finalized=len(finalized), persisted=persisted)

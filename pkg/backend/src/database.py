"""
Database configuration and session management for the run registry
"""
import json
import logging
import os
from typing import Generator, List, Optional, Sequence

from dotenv import load_dotenv
from sqlalchemy import create_engine, select
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from .models.base import Base
from .models.group import IncidentGroupRecord
from .models.run import PipelineRun

logger = logging.getLogger(__name__)

load_dotenv()
# SQLite by default; any SQLAlchemy URL works
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./incident_aggregation.db")

engine = create_engine(
    DATABASE_URL,
    connect_args={"check_same_thread": False} if DATABASE_URL.startswith("sqlite") else {},
    poolclass=StaticPool if DATABASE_URL.startswith("sqlite") else None,
    echo=False
)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_database():
    """Create every registry table"""
    try:
        Base.metadata.create_all(bind=engine)
        logger.info("Registry tables ready at %s", DATABASE_URL)
    except Exception as e:
        logger.error("Error initializing database: %s", e)
        raise


def get_db() -> Generator[Session, None, None]:
    """
    Dependency to get database session
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


# Registry helpers
def save_run(db: Session, mode: str, out_dir: str, config_path: Optional[str] = None) -> PipelineRun:
    """Register a pipeline run in the running state"""
    run = PipelineRun(mode=mode, out_dir=str(out_dir), config_path=config_path, status="running")
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


def finish_run(
    db: Session, run: PipelineRun, report: Optional[dict] = None, error: Optional[str] = None
) -> PipelineRun:
    """Mark a run succeeded (with its report) or failed (with the error)"""
    if error is not None:
        run.status = "failed"
        run.error = error
    else:
        run.status = "succeeded"
        report = report or {}
        run.report_json = json.dumps(report, sort_keys=True)
        run.nmi = report.get("nmi")
        run.detection_f1 = (report.get("detection") or {}).get("evt", {}).get("f1")
    db.commit()
    db.refresh(run)
    return run


def get_run(db: Session, run_id: int) -> Optional[PipelineRun]:
    """Get run by ID"""
    return db.get(PipelineRun, run_id)


def save_groups(db: Session, groups: Sequence, run_id: Optional[int] = None) -> int:
    """Persist every member of the given incident groups; returns the row count"""
    rows = [
        IncidentGroupRecord(
            run_id=run_id,
            group_id=g.group_id,
            window_start=g.window_start,
            window_end=g.window_end,
            incident_index=m.index,
            minute=m.incident.minute,
            node=m.incident.node,
            incident_type=m.incident.itype,
        )
        for g in groups for m in g.members
    ]
    db.add_all(rows)
    db.commit()
    return len(rows)


def list_groups(db: Session, run_id: Optional[int] = None) -> List[IncidentGroupRecord]:
    """Grouped incidents of one run, or of the live stream when run_id is None"""
    query = select(IncidentGroupRecord).where(
        IncidentGroupRecord.run_id.is_(None) if run_id is None else IncidentGroupRecord.run_id == run_id
    ).order_by(IncidentGroupRecord.group_id, IncidentGroupRecord.incident_index)
    return list(db.scalars(query))

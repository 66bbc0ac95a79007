import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel
from sqlalchemy.orm import Session

from ..config import PipelineConfig, load_pipeline_config
from ..database import get_db, get_run
from ..models.run import PipelineRun
from ..services.pipeline import PipelineRunner, run_registered

router = APIRouter()


class RunCreate(BaseModel):
    config_path: Optional[str] = None
    mode: Literal["full", "no-completion"] = "full"
    out_dir: str = "out"


class RunResponse(BaseModel):
    id: int
    mode: str
    status: str
    config_path: Optional[str]
    out_dir: str
    nmi: Optional[float]
    detection_f1: Optional[float]
    error: Optional[str]
    report: Optional[Dict[str, Any]]
    created_at: datetime


def _run_response(run: PipelineRun) -> RunResponse:
    return RunResponse(
        id=run.id,
        mode=run.mode,
        status=run.status,
        config_path=run.config_path,
        out_dir=run.out_dir,
        nmi=run.nmi,
        detection_f1=run.detection_f1,
        error=run.error,
        report=json.loads(run.report_json) if run.report_json else None,
        created_at=run.created_at,
    )


@router.post("/runs", response_model=RunResponse, status_code=201)
def create_run(request: RunCreate, db: Session = Depends(get_db)):
    """
    Run the pipeline and register it; served from the worker thread pool
    """
    if request.config_path and not Path(request.config_path).is_file():
        raise HTTPException(status_code=404, detail=f"Config file not found: {request.config_path}")
    cfg = load_pipeline_config(request.config_path) if request.config_path else PipelineConfig()
    run, _ = run_registered(db, PipelineRunner(cfg, request.mode, request.out_dir), request.config_path)
    return _run_response(run)


@router.get("/runs/{run_id}", response_model=RunResponse)
async def read_run(run_id: int, db: Session = Depends(get_db)):
    """
    Get a registered pipeline run
    """
    run = get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return _run_response(run)

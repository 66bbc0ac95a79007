from typing import Optional

from sqlalchemy.orm import Mapped, mapped_column, relationship
from sqlalchemy import Float, String, Text
from .base import RegistryModel


class PipelineRun(RegistryModel):
    __tablename__ = "pipeline_runs"

    mode: Mapped[str] = mapped_column(String, nullable=False)
    config_path: Mapped[Optional[str]] = mapped_column(String, nullable=True)
    out_dir: Mapped[str] = mapped_column(String, nullable=False)
    status: Mapped[str] = mapped_column(String, nullable=False, default="running")
    nmi: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    detection_f1: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    error: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    report_json: Mapped[Optional[str]] = mapped_column(Text, nullable=True)

    # Relationships
    groups = relationship("IncidentGroupRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<PipelineRun(id={self.id}, mode='{self.mode}', status='{self.status}')>"

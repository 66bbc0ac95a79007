from typing import Optional

from sqlalchemy.orm import Mapped, mapped_column, relationship
from sqlalchemy import ForeignKey, Integer, String
from .base import RegistryModel


class IncidentGroupRecord(RegistryModel):
    """One grouped incident; run_id is null for groups of the live stream"""
    __tablename__ = "incident_groups"

    run_id: Mapped[Optional[int]] = mapped_column(ForeignKey("pipeline_runs.id"), nullable=True, index=True)
    group_id: Mapped[int] = mapped_column(Integer, nullable=False, index=True)
    window_start: Mapped[int] = mapped_column(Integer, nullable=False)
    window_end: Mapped[Optional[int]] = mapped_column(Integer, nullable=True)
    incident_index: Mapped[int] = mapped_column(Integer, nullable=False)
    minute: Mapped[int] = mapped_column(Integer, nullable=False)
    node: Mapped[str] = mapped_column(String, nullable=False)
    incident_type: Mapped[str] = mapped_column(String, nullable=False)

    # Relationship
    run = relationship("PipelineRun", back_populates="groups")

    def __repr__(self):
        return f"<IncidentGroupRecord(run_id={self.run_id}, group_id={self.group_id}, node='{self.node}')>"

"""
Unit tests for the run registry models and helpers
"""
import json

import pytest

from src.core.model import IncidentRecord
from src.database import finish_run, get_run, list_groups, save_groups, save_run
from src.models.group import IncidentGroupRecord
from src.models.run import PipelineRun
from src.services.online_aggregator import GroupMember, IncidentGroup

pytestmark = pytest.mark.unit


def closed_group(gid, members, start=5, end=7):
    return IncidentGroup(
        group_id=gid,
        window_start=start,
        window_end=end,
        members=[GroupMember(idx, inc, None) for idx, inc in members],
    )


class TestPipelineRunModel:
    """Test cases for PipelineRun"""

    def test_run_creation(self, test_db):
        """Test registering a run"""
        run = save_run(test_db, "full", "out/run-1", config_path="pipeline.txt")

        assert run.id is not None
        assert run.status == "running"
        assert run.created_at is not None
        assert run.updated_at is not None

    def test_run_str_representation(self, test_db):
        """Test string representation of a run"""
        run = save_run(test_db, "no-completion", "out")
        assert str(run) == f"<PipelineRun(id={run.id}, mode='no-completion', status='running')>"

    def test_finish_with_report(self, test_db):
        """Test that a finished run keeps its headline metrics and report"""
        run = save_run(test_db, "full", "out")
        report = {"nmi": 0.8, "detection": {"evt": {"f1": 0.9}}, "n_groups": 4}

        finish_run(test_db, run, report=report)

        assert run.status == "succeeded"
        assert run.nmi == 0.8
        assert run.detection_f1 == 0.9
        assert json.loads(run.report_json) == report
        assert run.error is None

    def test_finish_with_error(self, test_db):
        """Test that a failed run records the error"""
        run = save_run(test_db, "full", "out")

        finish_run(test_db, run, error="stage 'train' failed: empty corpus")

        assert run.status == "failed"
        assert "empty corpus" in run.error
        assert run.report_json is None

    def test_finish_without_truth(self, test_db):
        """Test a report without NMI or detection scores"""
        run = finish_run(test_db, save_run(test_db, "full", "out"), report={"nmi": None, "detection": {}})

        assert run.nmi is None
        assert run.detection_f1 is None

    def test_get_run(self, test_db):
        """Test lookup by id"""
        run = save_run(test_db, "full", "out")

        assert get_run(test_db, run.id).id == run.id
        assert get_run(test_db, run.id + 100) is None


class TestIncidentGroupRecord:
    """Test cases for persisted groups"""

    def test_save_groups_for_run(self, test_db):
        """Test one row per grouped incident, ordered by group and index"""
        run = save_run(test_db, "full", "out")
        groups = [
            closed_group(1, [(4, IncidentRecord(6, "b", "db-slow"))]),
            closed_group(0, [(3, IncidentRecord(5, "a", "db-down")), (2, IncidentRecord(5, "c", "db-down"))]),
        ]

        assert save_groups(test_db, groups, run.id) == 3

        rows = list_groups(test_db, run.id)
        assert [(r.group_id, r.incident_index) for r in rows] == [(0, 2), (0, 3), (1, 4)]
        assert rows[0].node == "c"
        assert rows[0].window_end == 7
        assert len(test_db.get(PipelineRun, run.id).groups) == 3

    def test_live_groups_have_no_run(self, test_db):
        """Test that live-stream groups are listed apart from run groups"""
        run = save_run(test_db, "full", "out")
        save_groups(test_db, [closed_group(0, [(0, IncidentRecord(1, "a", "db-down"))])], run.id)
        save_groups(test_db, [closed_group(0, [(9, IncidentRecord(2, "d", "net-loss"))])])

        live = list_groups(test_db)

        assert [r.incident_index for r in live] == [9]
        assert live[0].run_id is None

    def test_record_str_representation(self, test_db):
        """Test string representation of a group row"""
        record = IncidentGroupRecord(
            run_id=None, group_id=2, window_start=0, incident_index=0, minute=0, node="a", incident_type="t",
        )
        assert str(record) == "<IncidentGroupRecord(run_id=None, group_id=2, node='a')>"

"""
End-to-end pipeline runs on a small simulated scenario
"""
import json

import pytest
from sqlalchemy import select

from src.config import PipelineConfig
from src.core.codecs import load_embedding, load_impact_graphs, load_incidents
from src.database import list_groups
from src.errors import AggregationError, StageError
from src.models.run import PipelineRun
from src.services.cascade_simulator import generate_scenario, save_scenario
from src.services.online_aggregator import load_group_rows
from src.services.pipeline import PipelineRunner, run_pipeline, run_registered, sweep

pytestmark = pytest.mark.integration


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_full_run_writes_every_artifact(tmp_path, small_pipeline_config):
    """Test that each stage leaves its artifact behind"""
    report = run_pipeline(small_pipeline_config, "full", tmp_path)

    for name in ("topology.txt", "incidents.txt", "kpis.txt", "ground_truth.txt", "failures.txt"):
        assert (tmp_path / "data" / name).exists()
    for name in ("windows.txt", "windows_evt.txt", "windows_fixed.txt", "embedding.txt",
                 "groups.txt", "report.txt", "report.json"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "impact_graphs").is_dir()
    assert set(report.artifacts) >= {"windows", "impact_graphs", "embedding", "groups"}


def test_report_is_consistent(tmp_path, small_pipeline_config):
    """Test the timeline split and the counts in the report"""
    report = run_pipeline(small_pipeline_config, "full", tmp_path)
    t0, t1 = report.timeline_start, report.timeline_end

    assert report.split_minute == t0 + int(0.7 * (t1 - t0 + 1))
    assert report.n_train_incidents + report.n_eval_incidents == report.n_incidents
    assert report.n_impact_graphs > 0
    assert report.vocab_size >= 2
    assert set(report.detection) == {"evt", "fixed"}
    assert report.nmi is None or 0.0 <= report.nmi <= 1.0

    lines = (tmp_path / "report.txt").read_text().splitlines()
    assert lines == sorted(lines)
    assert "mode=full" in lines
    assert json.loads((tmp_path / "report.json").read_text())["n_groups"] == report.n_groups


def test_artifacts_reload(tmp_path, small_pipeline_config):
    """Test that every artifact reloads with the counts the report gives"""
    report = run_pipeline(small_pipeline_config, "full", tmp_path)
    incidents = load_incidents(tmp_path / "data" / "incidents.txt")

    graphs = load_impact_graphs(tmp_path / "impact_graphs", incidents)
    rows = load_group_rows(tmp_path / "groups.txt")

    assert len(load_embedding(tmp_path / "embedding.txt")) == report.vocab_size
    assert len(graphs) == report.n_impact_graphs
    assert all(g.incident_indices[-1] < report.n_train_incidents for g in graphs)
    assert len(rows) == report.n_grouped
    assert all(index >= report.n_train_incidents for _, _, index in rows)


def test_runs_are_byte_identical(tmp_path, small_pipeline_config):
    """Test that the same config reproduces every artifact byte for byte"""
    run_pipeline(small_pipeline_config, "full", tmp_path / "a")
    run_pipeline(small_pipeline_config, "full", tmp_path / "b")

    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_no_completion_keeps_reporting_nodes_only(tmp_path, small_pipeline_config):
    """Test that the ablation builds impact graphs from reporting nodes only"""
    runner = PipelineRunner(small_pipeline_config, "no-completion", tmp_path)
    report = runner.run()

    assert report.mode == "no-completion"
    for graph in runner.graphs:
        assert graph.nodes == frozenset(inc.node for inc in graph.incidents)


def test_unknown_mode(tmp_path, small_pipeline_config):
    """Test that the mode is validated"""
    with pytest.raises(AggregationError, match="unknown mode"):
        PipelineRunner(small_pipeline_config, "partial", tmp_path)


def test_external_data_matches_simulation(tmp_path, small_pipeline_config):
    """Test that loading the written scenario reproduces the simulated run"""
    simulated = run_pipeline(small_pipeline_config, "full", tmp_path / "sim")
    data = tmp_path / "sim" / "data"
    cfg = small_pipeline_config.model_copy(update={
        "simulate": False,
        "topology": str(data / "topology.txt"),
        "incidents": str(data / "incidents.txt"),
        "kpis": str(data / "kpis.txt"),
        "ground_truth": str(data / "ground_truth.txt"),
    })

    loaded = run_pipeline(cfg, "full", tmp_path / "ext")

    assert loaded.n_groups == simulated.n_groups
    assert loaded.nmi == simulated.nmi
    assert (tmp_path / "ext" / "groups.txt").read_bytes() == (tmp_path / "sim" / "groups.txt").read_bytes()


def test_label_count_mismatch(tmp_path, small_pipeline_config):
    """Test that a ground truth for another stream aborts the load stage"""
    scenario = generate_scenario(small_pipeline_config.scenario)
    paths = save_scenario(scenario, tmp_path / "data")
    paths["ground_truth"].write_text("0,NOISE\n")
    cfg = small_pipeline_config.model_copy(update={
        "simulate": False,
        "topology": str(paths["topology"]),
        "incidents": str(paths["incidents"]),
        "kpis": str(paths["kpis"]),
        "ground_truth": str(paths["ground_truth"]),
    })

    with pytest.raises(StageError, match="load"):
        run_pipeline(cfg, "full", tmp_path / "out")


def test_partitioned_run_renumbers_groups(tmp_path, small_pipeline_config):
    """Test per-layer detection and aggregation with contiguous group ids"""
    cfg = small_pipeline_config.model_copy(update={
        "detector": small_pipeline_config.detector.model_copy(update={"partition_key": "layer"}),
    })
    runner = PipelineRunner(cfg, "full", tmp_path)
    runner.run()

    assert [g.group_id for g in runner.groups] == list(range(len(runner.groups)))
    firsts = [g.members[0].index for g in runner.groups]
    assert firsts == sorted(firsts)


def test_registered_run(tmp_path, test_db, small_pipeline_config):
    """Test that a registered run stores its status, metrics and groups"""
    run, report = run_registered(test_db, PipelineRunner(small_pipeline_config, "full", tmp_path))

    assert run.status == "succeeded"
    assert run.nmi == report.nmi
    assert run.detection_f1 == report.detection["evt"]["f1"]
    assert len(list_groups(test_db, run.id)) == report.n_grouped


def test_failed_run_is_registered(tmp_path, test_db):
    """Test that a stage failure marks the run failed and re-raises"""
    cfg = PipelineConfig(scenario={"n_nodes": 6, "n_failures": 0, "noise_rate": 0.0})

    with pytest.raises(StageError, match="train"):
        run_registered(test_db, PipelineRunner(cfg, "full", tmp_path))

    run = test_db.scalars(select(PipelineRun)).one()
    assert run.status == "failed"
    assert "train" in run.error


def test_sweep(tmp_path, small_pipeline_config):
    """Test one row per split and tau, written to the sweep file"""
    cfg = small_pipeline_config.model_copy(update={"splits": [0.6, 0.7]})

    rows = sweep(cfg, "full", tmp_path)

    assert [(r.split, r.tau) for r in rows] == [(0.6, 3), (0.6, 4), (0.7, 3), (0.7, 4)]
    lines = (tmp_path / "sweep.txt").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("split=0.600,tau=3,nmi=")
    assert (tmp_path / "split-0.700" / "groups_tau4.txt").exists()

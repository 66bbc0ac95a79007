"""
End-to-end orchestration: simulate or load, split, detect, impact, train, aggregate, eval.

Every stage writes its artifacts under the output directory in the formats of
``core.codecs`` so each one can be reloaded by its owning module. A failing stage aborts
the run with a StageError naming the stage.
"""
import bisect
import copy
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, TypeVar, Union

from pydantic import BaseModel, Field
from sqlalchemy.orm import Session

from ..config import PipelineConfig, load_pipeline_config
from ..core.codecs import (
    load_incidents,
    load_kpis,
    load_topology,
    save_embedding,
    save_impact_graphs,
    save_windows,
    write_lines,
)
from ..core.model import FailureImpactGraph, FailureWindow, IncidentEmbedding, IncidentRecord, KpiStore
from ..core.topology import TopologyGraph
from ..database import SessionLocal, finish_run, init_database, save_run
from ..database import save_groups as save_group_records
from ..errors import AggregationError, StageError
from ..models.run import PipelineRun
from .cascade_simulator import GroundTruth, generate_scenario, label_clustering, load_ground_truth, save_scenario
from .embedding import generate_walks, train
from .failure_detector import (
    EvtDetector,
    count_per_minute,
    detect_failures,
    detect_partitioned,
    fixed_threshold_detect,
    partition_incidents,
    union_windows,
)
from .impact_graph import ImpactGraphBuilder
from .metrics import format_report, nmi, score_detection
from .online_aggregator import IncidentGroup, aggregate_stream, save_groups

logger = logging.getLogger(__name__)

Mode = Literal["full", "no-completion"]
MODES = ("full", "no-completion")
T = TypeVar("T")


class PipelineReport(BaseModel):
    mode: str
    seed: int
    timeline_start: int
    timeline_end: int
    split_minute: int
    n_incidents: int
    n_train_incidents: int
    n_eval_incidents: int
    n_windows: int
    n_impact_graphs: int
    n_walks: int
    vocab_size: int
    n_groups: int
    n_grouped: int
    nmi: Optional[float] = None
    detection: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)

    def metrics(self) -> Dict[str, object]:
        """Flat metric map for the `metric=value` report"""
        flat = self.model_dump(exclude={"detection", "artifacts"})
        if flat["nmi"] is None:
            flat["nmi"] = "n/a"
        for detector, scores in self.detection.items():
            for key, value in scores.items():
                flat[f"{detector}_{key}"] = value
        return flat


class SweepRow(BaseModel):
    split: float
    tau: int
    nmi: Optional[float]
    n_groups: int


class PipelineRunner:
    """Runs the stages of one pipeline configuration into one output directory"""

    def __init__(self, cfg: PipelineConfig, mode: Mode = "full", out_dir: Union[str, Path] = "out"):
        if mode not in MODES:
            raise AggregationError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        self.cfg = cfg
        self.mode = mode
        self.out_dir = Path(out_dir)
        self.artifacts: Dict[str, str] = {}

        self.topology: Optional[TopologyGraph] = None
        self.incidents: List[IncidentRecord] = []
        self.kpis: Optional[KpiStore] = None
        self.truth: Optional[GroundTruth] = None
        self.timeline: Tuple[int, int] = (0, 0)
        self.split_minute = 0
        self.n_train = 0
        self.windows: List[FailureWindow] = []
        self.detectors: Dict[str, EvtDetector] = {}
        self.detection: Dict[str, Dict[str, float]] = {}
        self.graphs: List[FailureImpactGraph] = []
        self.n_walks = 0
        self.embedding: Optional[IncidentEmbedding] = None
        self.groups: List[IncidentGroup] = []

    # --- helpers -------------------------------------------------------------

    def _stage(self, name: str, fn: Callable[[], T]) -> T:
        logger.info("stage %s: start", name)
        try:
            result = fn()
        except StageError:
            raise
        except Exception as e:
            logger.error("stage %s failed: %s", name, e, exc_info=True)
            raise StageError(name, e) from e
        logger.info("stage %s: done", name)
        return result

    def _artifact(self, key: str, path: Path) -> None:
        self.artifacts[key] = str(path)
        logger.info("wrote %s: %s", key, path)

    @property
    def train_incidents(self) -> List[IncidentRecord]:
        return self.incidents[:self.n_train]

    @property
    def eval_incidents(self) -> List[IncidentRecord]:
        return self.incidents[self.n_train:]

    # --- stages --------------------------------------------------------------

    def load(self) -> None:
        if self.cfg.simulate:
            scenario_cfg = self.cfg.scenario
            scenario = generate_scenario(scenario_cfg)
            self.topology, self.incidents, self.kpis, self.truth = scenario
            for key, path in save_scenario(scenario, self.out_dir / "data").items():
                self._artifact(key, path)
        else:
            self.topology = load_topology(self.cfg.topology)
            self.incidents = load_incidents(self.cfg.incidents, self.topology)
            self.kpis = load_kpis(self.cfg.kpis)
            if self.cfg.ground_truth:
                failures = Path(self.cfg.ground_truth).with_name("failures.txt")
                self.truth = load_ground_truth(self.cfg.ground_truth, failures)
                if len(self.truth.labels) != len(self.incidents):
                    raise AggregationError(
                        f"ground truth has {len(self.truth.labels)} labels for {len(self.incidents)} incidents"
                    )

    def split(self, fraction: Optional[float] = None) -> None:
        fraction = self.cfg.split if fraction is None else fraction
        starts = [s.start_minute for s in self.kpis] + [inc.minute for inc in self.incidents[:1]]
        ends = [s.end_minute for s in self.kpis] + [inc.minute for inc in self.incidents[-1:]]
        if not starts:
            raise AggregationError("no incidents and no KPIs: empty timeline")
        t0, t1 = min(starts), max(ends)
        self.timeline = (t0, t1)
        self.split_minute = t0 + int(fraction * (t1 - t0 + 1))
        self.n_train = bisect.bisect_left([inc.minute for inc in self.incidents], self.split_minute)
        logger.info("timeline [%d,%d] split at minute %d: %d train / %d eval incidents",
                    t0, t1, self.split_minute, self.n_train, len(self.incidents) - self.n_train)

    def detect(self) -> None:
        t0, t1 = self.timeline
        train_end = self.split_minute - 1
        det_cfg = self.cfg.detector
        span = max(1, train_end - t0 + 1)
        if det_cfg.partition_key == "none":
            counts = count_per_minute(self.train_incidents, t0, train_end)
            detector = EvtDetector.from_config(det_cfg, calib_n=min(det_cfg.calib_minutes, span))
            self.windows = detect_failures(counts, detector, t0)
            self.detectors = {"all": detector}
        else:
            per_part, self.detectors = detect_partitioned(self.train_incidents, self.topology, det_cfg, t0, train_end)
            self.windows = union_windows(per_part.values())
        self._artifact("windows", save_windows(self.windows, self.out_dir / "windows.txt"))

        # whole-timeline detection, EVT next to the fixed-threshold baseline
        counts_all = count_per_minute(self.incidents, t0, t1)
        evt = detect_failures(
            counts_all, EvtDetector.from_config(det_cfg, calib_n=min(det_cfg.calib_minutes, counts_all.size)), t0
        )
        fixed = fixed_threshold_detect(counts_all, det_cfg.fixed_threshold, t0)
        self._artifact("windows_evt", save_windows(evt, self.out_dir / "windows_evt.txt"))
        self._artifact("windows_fixed", save_windows(fixed, self.out_dir / "windows_fixed.txt"))
        if self.truth is not None and self.truth.failures:
            truth_windows = self.truth.windows()
            self.detection = {
                "evt": score_detection(evt, truth_windows).as_dict(),
                "fixed": score_detection(fixed, truth_windows).as_dict(),
            }

    def impact(self) -> None:
        impact_cfg = self.cfg.impact.model_copy(update={"complete": self.mode == "full"})
        builder = ImpactGraphBuilder(self.topology, self.train_incidents, self.kpis, impact_cfg, self.cfg.detector)
        self.graphs = builder.build_all(self.windows)
        save_impact_graphs(self.graphs, self.out_dir / "impact_graphs")
        self._artifact("impact_graphs", self.out_dir / "impact_graphs")

    def train(self) -> None:
        corpus = generate_walks(self.graphs, self.topology, self.cfg.walk)
        if len(corpus) == 0:
            raise AggregationError("no impact graph carries incidents; nothing to learn from")
        self.n_walks = len(corpus)
        self.embedding = train(corpus, self.cfg.walk)
        self._artifact("embedding", save_embedding(self.embedding, self.out_dir / "embedding.txt"))

    def aggregate(self, tau: Optional[int] = None, path: Optional[Path] = None) -> List[IncidentGroup]:
        agg_cfg = self.cfg.aggregator if tau is None else self.cfg.aggregator.model_copy(update={"tau": tau})
        if self.cfg.detector.partition_key == "none":
            groups = aggregate_stream(
                self.eval_incidents, self.embedding, self.topology, copy.deepcopy(self.detectors["all"]),
                agg_cfg, index_offset=self.n_train, start_minute=self.split_minute,
            )
        else:
            groups = []
            parts = partition_incidents(self.incidents, self.topology, self.cfg.detector.partition_key)
            for name, members in parts.items():
                stream = [(idx, inc) for idx, inc in members if idx >= self.n_train]
                detector = copy.deepcopy(self.detectors[name])
                groups.extend(aggregate_stream(
                    [inc for _, inc in stream], self.embedding, self.topology, detector, agg_cfg,
                    indices=[idx for idx, _ in stream], start_minute=self.split_minute,
                ))
            groups.sort(key=lambda g: g.members[0].index)
            for gid, g in enumerate(groups):
                g.group_id = gid
        path = path or self.out_dir / "groups.txt"
        self._artifact("groups" if tau is None else f"groups_tau{tau}", save_groups(groups, path))
        return groups

    def evaluate(self, groups: List[IncidentGroup]) -> Optional[float]:
        if self.truth is None:
            return None
        omega, classes = label_clustering(groups, self.truth)
        if not omega:
            logger.warning("no failure incident was grouped; NMI undefined")
            return None
        return nmi(omega, classes)

    def run_through_training(self) -> None:
        self._stage("simulate" if self.cfg.simulate else "load", self.load)
        self._stage("split", self.split)
        self._stage("detect", self.detect)
        self._stage("impact", self.impact)
        self._stage("train", self.train)

    def run(self) -> PipelineReport:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.run_through_training()
        groups = self.groups = self._stage("aggregate", self.aggregate)
        score = self._stage("eval", lambda: self.evaluate(groups))
        report = PipelineReport(
            mode=self.mode,
            seed=self.cfg.seed,
            timeline_start=self.timeline[0],
            timeline_end=self.timeline[1],
            split_minute=self.split_minute,
            n_incidents=len(self.incidents),
            n_train_incidents=self.n_train,
            n_eval_incidents=len(self.incidents) - self.n_train,
            n_windows=len(self.windows),
            n_impact_graphs=len(self.graphs),
            n_walks=self.n_walks,
            vocab_size=len(self.embedding),
            n_groups=len(groups),
            n_grouped=sum(len(g) for g in groups),
            nmi=score,
            detection=self.detection,
            artifacts=dict(self.artifacts),
        )
        self._stage("report", lambda: self.write_report(report))
        return report

    def write_report(self, report: PipelineReport) -> None:
        write_lines(self.out_dir / "report.txt", format_report(report.metrics()))
        (self.out_dir / "report.json").write_text(
            json.dumps(report.model_dump(exclude={"artifacts"}), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        logger.info("report written to %s", self.out_dir / "report.txt")


def run_registered(
    db: Session, runner: PipelineRunner, config_path: Optional[str] = None
) -> Tuple[PipelineRun, PipelineReport]:
    """Run the pipeline and record it (status, report, groups) in the run registry"""
    run = save_run(db, runner.mode, str(runner.out_dir), config_path)
    try:
        report = runner.run()
    except AggregationError as e:
        finish_run(db, run, error=str(e))
        raise
    finish_run(db, run, report.model_dump(exclude={"artifacts"}))
    save_group_records(db, runner.groups, run.id)
    logger.info("registered run %d", run.id)
    return run, report


def run_pipeline(
    config: Union[str, Path, PipelineConfig, None] = None,
    mode: Mode = "full",
    out_dir: Union[str, Path] = "out",
) -> PipelineReport:
    """Run every stage for a config file (or config object) and return the report"""
    config_path = None
    if config is None:
        cfg = PipelineConfig()
    elif isinstance(config, PipelineConfig):
        cfg = config
    else:
        config_path = str(config)
        cfg = load_pipeline_config(config)
    runner = PipelineRunner(cfg, mode, out_dir)
    if cfg.registry:
        init_database()
        db = SessionLocal()
        try:
            return run_registered(db, runner, config_path)[1]
        finally:
            db.close()
    return runner.run()


def sweep(cfg: PipelineConfig, mode: Mode = "full", out_dir: Union[str, Path] = "out") -> List[SweepRow]:
    """NMI per training split and per tau, reusing one trained embedding per split"""
    out_dir = Path(out_dir)
    rows: List[SweepRow] = []
    for fraction in cfg.splits or [cfg.split]:
        run_cfg = cfg.model_copy(update={"split": fraction})
        split_dir = out_dir / f"split-{fraction:.3f}"
        runner = PipelineRunner(run_cfg, mode, split_dir)
        split_dir.mkdir(parents=True, exist_ok=True)
        runner.run_through_training()
        for tau in cfg.taus:
            groups = runner._stage(
                "aggregate", lambda: runner.aggregate(tau, split_dir / f"groups_tau{tau}.txt")
            )
            rows.append(SweepRow(split=fraction, tau=tau, nmi=runner.evaluate(groups), n_groups=len(groups)))
            logger.info("sweep split=%.3f tau=%d nmi=%s", fraction, tau, rows[-1].nmi)
    lines = [
        f"split={r.split:.3f},tau={r.tau},nmi={'n/a' if r.nmi is None else f'{r.nmi:.6f}'},n_groups={r.n_groups}"
        for r in rows
    ]
    write_lines(out_dir / "sweep.txt", lines)
    return rows

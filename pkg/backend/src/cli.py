"""
Command-line entry point: one sub-command per stage plus the end-to-end pipeline.

Exit codes: 0 on success, 1 on AggregationError or an unreadable file, 2 on usage errors (argparse).
"""
import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import (
    AggregatorConfig,
    DetectorConfig,
    ImpactConfig,
    PipelineConfig,
    load_pipeline_config,
    load_walk_config,
)
from .core.codecs import (
    load_embedding,
    load_impact_graphs,
    load_incidents,
    load_kpis,
    load_labels,
    load_topology,
    load_windows,
    save_embedding,
    save_impact_graphs,
    save_windows,
)
from .core.model import IncidentRecord
from .errors import AggregationError, DataValidationError
from .log import configure_logging
from .services.cascade_simulator import generate_scenario, save_scenario
from .services.embedding import generate_walks, train
from .services.failure_detector import (
    EvtDetector,
    count_per_minute,
    detect_failures,
    detect_partitioned,
    fixed_threshold_detect,
    union_windows,
)
from .services.impact_graph import ImpactGraphBuilder
from .services.metrics import format_report, nmi, score_detection
from .services.online_aggregator import aggregate_stream, load_group_rows, save_groups
from .services.pipeline import run_pipeline, sweep

logger = logging.getLogger(__name__)


def _print_report(metrics: Dict[str, object]) -> None:
    print(",".join(format_report(metrics)))


def _timeline(incidents: Sequence[IncidentRecord]) -> Tuple[int, int]:
    if not incidents:
        raise DataValidationError("incident stream is empty")
    return incidents[0].minute, incidents[-1].minute


# --- stage commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _pipeline_config(args) or PipelineConfig()
    scenario_cfg = cfg.scenario if args.seed is None else cfg.scenario.model_copy(update={"seed": args.seed})
    paths = save_scenario(generate_scenario(scenario_cfg), args.out)
    for key in sorted(paths):
        print(f"{key}={paths[key]}")
    return 0


def cmd_detect(args) -> int:
    incidents = load_incidents(args.incidents)
    start, end = _timeline(incidents)
    if args.mode == "fixed":
        windows = fixed_threshold_detect(count_per_minute(incidents, start, end), args.threshold, start)
    else:
        det_cfg = DetectorConfig(
            risk_q=args.risk_q, calib_minutes=args.calib_minutes,
            fixed_threshold=args.threshold, partition_key=args.partition_key,
        )
        if det_cfg.partition_key == "none":
            detector = EvtDetector.from_config(det_cfg, calib_n=min(det_cfg.calib_minutes, end - start + 1))
            windows = detect_failures(count_per_minute(incidents, start, end), detector, start)
        else:
            if not args.topology:
                raise DataValidationError("--partition-key requires --topology")
            per_part, _ = detect_partitioned(incidents, load_topology(args.topology), det_cfg, start, end)
            windows = union_windows(per_part.values())
    print(f"windows={save_windows(windows, args.out)}")
    _print_report({"n_windows": len(windows)})
    return 0


def cmd_impact(args) -> int:
    topology = load_topology(args.topology)
    incidents = load_incidents(args.incidents, topology)
    cfg = ImpactConfig(alpha=args.alpha, complete=not args.no_completion, seed=args.seed)
    builder = ImpactGraphBuilder(topology, incidents, load_kpis(args.kpis), cfg)
    graphs = builder.build_all(load_windows(args.windows), workers=args.workers)
    save_impact_graphs(graphs, args.out)
    print(f"impact_graphs={args.out}")
    _print_report({"n_impact_graphs": len(graphs)})
    return 0


def cmd_train(args) -> int:
    topology = load_topology(args.topology)
    incidents = load_incidents(args.incidents, topology)
    cfg = load_walk_config(args.config)
    graphs = load_impact_graphs(args.impact_graphs, incidents)
    corpus = generate_walks(graphs, topology, cfg, workers=cfg.workers)
    if len(corpus) == 0:
        raise DataValidationError(f"no impact graph in {args.impact_graphs} carries incidents")
    emb = train(corpus, cfg)
    print(f"embedding={save_embedding(emb, args.out)}")
    _print_report({"n_walks": len(corpus), "vocab_size": len(emb)})
    return 0


def cmd_aggregate(args) -> int:
    topology = load_topology(args.topology)
    incidents = load_incidents(args.incidents, topology)
    emb = load_embedding(args.embedding)
    det_cfg = DetectorConfig(risk_q=args.risk_q, calib_minutes=args.calib_minutes)
    if args.history:
        history = load_incidents(args.history, topology)
        lo, hi = _timeline(history)
        counts = count_per_minute(history, lo, hi)[-det_cfg.calib_minutes:]
        detector = EvtDetector.from_config(det_cfg, calib_n=counts.size).calibrate(counts)
        logger.info("detector calibrated on the last %d minutes of %s", counts.size, args.history)
    else:
        start, end = _timeline(incidents)
        detector = EvtDetector.from_config(det_cfg, calib_n=min(det_cfg.calib_minutes, end - start + 1))
    cfg = AggregatorConfig(lambda_=args.lambda_, tau=args.tau)
    groups = aggregate_stream(incidents, emb, topology, detector, cfg)
    print(f"groups={save_groups(groups, args.out)}")
    _print_report({"n_groups": len(groups), "n_grouped": sum(len(g) for g in groups)})
    return 0


def _group_indices(rows, incidents: Optional[List[IncidentRecord]]) -> List[Tuple[int, int]]:
    """(incident index, group id) per row; 4-field rows are resolved against the incident file"""
    pending: Dict[Tuple[int, str, str], List[int]] = defaultdict(list)
    if incidents is not None:
        for idx, inc in enumerate(incidents):
            pending[(inc.minute, inc.node, inc.itype)].append(idx)
    pairs = []
    for gid, record, index in rows:
        if index is None:
            candidates = pending.get((record.minute, record.node, record.itype))
            if not candidates:
                raise DataValidationError(
                    f"cannot resolve grouped incident {record.minute},{record.node},{record.itype}; pass --incidents"
                )
            index = candidates.pop(0)
        pairs.append((index, gid))
    return sorted(pairs)


def cmd_eval(args) -> int:
    if args.mode == "detect":
        score = score_detection(load_windows(args.predicted), load_windows(args.truth))
        _print_report(score.as_dict())
        return 0
    labels = load_labels(args.truth)
    incidents = load_incidents(args.incidents) if args.incidents else None
    omega, classes = [], []
    for index, gid in _group_indices(load_group_rows(args.predicted), incidents):
        if not 0 <= index < len(labels):
            raise DataValidationError(f"grouped incident {index} is not in the ground truth")
        if labels[index] is not None:
            omega.append(gid)
            classes.append(labels[index])
    if not omega:
        raise DataValidationError("no failure incident was grouped")
    _print_report({"nmi": nmi(omega, classes), "n_labeled": len(omega)})
    return 0


# --- pipeline commands ---------------------------------------------------------------

def _pipeline_config(args) -> Optional[PipelineConfig]:
    return load_pipeline_config(args.config) if args.config else None


def cmd_pipeline(args) -> int:
    report = run_pipeline(args.config, args.mode, args.out)
    _print_report(report.metrics())
    return 0


def cmd_sweep(args) -> int:
    cfg = _pipeline_config(args) or PipelineConfig()
    for row in sweep(cfg, args.mode, args.out):
        _print_report(row.model_dump())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("src.main:app", host=args.host, port=args.port, reload=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incident-aggregation",
        description="Unsupervised incident aggregation over a service topology",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic failure-cascade scenario")
    p.add_argument("--config", help="key=value scenario config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="detect failure windows in an incident stream")
    p.add_argument("--incidents", required=True)
    p.add_argument("--mode", choices=("evt", "fixed"), default="evt")
    p.add_argument("--threshold", type=int, default=50)
    p.add_argument("--risk-q", type=float, default=1e-3)
    p.add_argument("--calib-minutes", type=int, default=288)
    p.add_argument("--partition-key", choices=("none", "component", "layer"), default="none")
    p.add_argument("--topology", help="required with --partition-key")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("impact", help="build failure-impact graphs for detected windows")
    p.add_argument("--topology", required=True)
    p.add_argument("--incidents", required=True)
    p.add_argument("--kpis", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--no-completion", action="store_true", help="reporting nodes only")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("train", help="learn incident-type embeddings from impact graphs")
    p.add_argument("--impact-graphs", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--incidents", required=True)
    p.add_argument("--config", required=True, help="key=value walk config")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("aggregate", help="aggregate an incident stream online")
    p.add_argument("--incidents", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.7)
    p.add_argument("--tau", type=int, default=4)
    p.add_argument("--risk-q", type=float, default=1e-3)
    p.add_argument("--calib-minutes", type=int, default=288,
                   help="calibration length; without --history the first minutes of the stream "
                        "only calibrate and stay ungrouped")
    p.add_argument("--history", help="incident file whose last --calib-minutes minutes calibrate the detector")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("eval", help="score detected windows or incident groups")
    p.add_argument("--mode", choices=("detect", "aggregate"), required=True)
    p.add_argument("--predicted", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--incidents", help="resolves groups files without an incident index column")
    p.set_defaults(func=cmd_eval)

    for name, func, text in (
        ("pipeline", cmd_pipeline, "run every stage end to end"),
        ("sweep", cmd_sweep, "NMI per training split and per tau"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value pipeline config (defaults: simulated scenario)")
        p.add_argument("--mode", choices=("full", "no-completion"), default="full")
        p.add_argument("--out", type=Path, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (AggregationError, OSError) as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""
Labeled synthetic failure cascades.

A layered topology (application, platform, infrastructure) carries Poisson background
noise plus injected failures. Each failure starts at a root node and spreads breadth-first
with per-hop attenuation; affected nodes either report incidents from their failure class
vocabulary or stay silent, and every affected node shows a lagged KPI pulse.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import ScenarioConfig
from ..core.codecs import (
    load_labels,
    read_lines,
    parse_int,
    save_incidents,
    save_kpis,
    save_labels,
    save_topology,
    write_lines,
)
from ..core.model import FailureWindow, IncidentRecord, KpiSeries, KpiStore
from ..core.topology import LAYERS, TopologyGraph
from ..errors import DataValidationError, ParseError
from .failure_detector import union_windows
from .online_aggregator import IncidentGroup

logger = logging.getLogger(__name__)

LAYER_PREFIXES = ("app", "plat", "infra")
SECONDARY_KPI_PROB = 0.5
KPI_NOISE_FRACTION = 0.05

__all__ = [
    "GroundTruth",
    "InjectedFailure",
    "Scenario",
    "ScenarioConfig",
    "class_vocabulary",
    "generate_scenario",
    "label_clustering",
    "load_ground_truth",
    "save_ground_truth",
    "save_scenario",
]


@dataclass(frozen=True)
class InjectedFailure:
    failure_id: int
    failure_class: int
    window: FailureWindow
    root: str
    affected: Tuple[str, ...]
    silent: Tuple[str, ...]
    vocabulary: Tuple[str, ...]
    ramp: bool = False

    @property
    def reporting(self) -> Tuple[str, ...]:
        silent = set(self.silent)
        return tuple(n for n in self.affected if n not in silent)


@dataclass
class GroundTruth:
    labels: List[Optional[int]]
    failures: List[InjectedFailure]

    def windows(self) -> List[FailureWindow]:
        """Injected intervals as a disjoint, sorted window list"""
        return union_windows([[f.window] for f in self.failures])

    def failure_indices(self, failure_id: int) -> List[int]:
        return [i for i, lab in enumerate(self.labels) if lab == failure_id]


class Scenario(NamedTuple):
    topology: TopologyGraph
    incidents: List[IncidentRecord]
    kpis: KpiStore
    truth: GroundTruth


def class_vocabulary(failure_class: int, types_per_class: int) -> List[str]:
    return [f"f{failure_class:02d}-t{t:02d}" for t in range(types_per_class)]


def _layer_types(vocab: List[str], layer: Optional[str]) -> List[str]:
    """Types a node of the given layer renders; type t belongs to layer t mod 3"""
    if layer not in LAYERS:
        return vocab
    subset = vocab[LAYERS.index(layer)::len(LAYERS)]
    return subset or vocab


def build_topology(cfg: ScenarioConfig, rng: np.random.Generator) -> TopologyGraph:
    layer_nodes = [
        [f"{prefix}-{k:03d}" for k in range(size)]
        for prefix, size in zip(LAYER_PREFIXES, cfg.layer_sizes())
    ]
    edges = set()
    for members in layer_nodes:
        for k in range(1, len(members)):
            for _ in range(cfg.intra_links):
                if rng.random() < cfg.intra_edge_prob:
                    edges.add((members[k], members[int(rng.integers(k))]))
    populated = [members for members in layer_nodes if members]
    for upper, lower in zip(populated, populated[1:]):
        for node in upper:
            for pick in rng.choice(len(lower), size=min(cfg.placement_links, len(lower)), replace=False):
                edges.add((node, lower[int(pick)]))
    edges = sorted(edges)
    layers = {n: LAYERS[i] for i, members in enumerate(layer_nodes) for n in members}
    return TopologyGraph([n for members in layer_nodes for n in members], edges, layers)


def _spread(topo: TopologyGraph, root: str, cfg: ScenarioConfig, rng: np.random.Generator) -> List[str]:
    """Breadth-first cascade: a node h hops out is hit with probability attenuation**h"""
    affected = [root]
    visited = {root}
    frontier = [root]
    for hop in range(1, cfg.max_hops + 1):
        nxt = []
        for node in frontier:
            for nbr in topo.neighbor_names(node):
                if nbr in visited:
                    continue
                visited.add(nbr)
                if rng.random() < cfg.attenuation ** hop:
                    affected.append(nbr)
                    nxt.append(nbr)
        frontier = nxt
    return sorted(affected)


def _pick_root(topo: TopologyGraph, rng: np.random.Generator, avoid: Optional[str], cfg: ScenarioConfig) -> str:
    names = topo.node_names
    if avoid is None:
        return names[int(rng.integers(len(names)))]
    dist = topo.hop_distances(topo.node_id(avoid))
    far = [n for n in names if dist.get(topo.node_id(n), np.inf) > 2 * cfg.max_hops]
    if far:
        return far[int(rng.integers(len(far)))]
    return max(names, key=lambda n: (dist.get(topo.node_id(n), np.inf), n))


def _schedule(cfg: ScenarioConfig) -> Tuple[List[int], int]:
    """Start minute of every failure and the total stream length"""
    lengths = [cfg.ramp_minutes if i < cfg.ramp_failures else cfg.failure_minutes for i in range(cfg.n_failures)]
    slot = 2 if cfg.failure_overlap else 1
    starts: List[int] = []
    cursor = cfg.warmup_minutes
    for first in range(0, cfg.n_failures, slot):
        members = range(first, min(first + slot, cfg.n_failures))
        starts.extend(cursor for _ in members)
        cursor += max(lengths[i] for i in members) + cfg.kpi_lag_max + cfg.quiet_gap
    needed = max(1, cursor if cfg.n_failures else cfg.warmup_minutes + cfg.quiet_gap)
    if cfg.duration_minutes is not None:
        if cfg.duration_minutes < needed:
            raise DataValidationError(
                f"duration_minutes={cfg.duration_minutes} is shorter than the {needed} minutes the failures need"
            )
        needed = cfg.duration_minutes
    return starts, needed


def _failure_incidents(
    failure: InjectedFailure,
    topo: TopologyGraph,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> List[IncidentRecord]:
    vocab = list(failure.vocabulary)
    reporting = list(failure.reporting)
    start = failure.window.start_minute
    node_minutes: List[Tuple[str, int]] = []
    if failure.ramp:
        minutes = []
        for m in range(cfg.ramp_minutes):
            rate = cfg.ramp_floor + (cfg.ramp_peak - cfg.ramp_floor) * m / (cfg.ramp_minutes - 1)
            minutes.extend([start + m] * int(rng.poisson(rate)))
        while len(minutes) < len(reporting):
            minutes.append(start + int(rng.integers(cfg.ramp_minutes)))
        order = rng.permutation(len(minutes))
        for k, pos in enumerate(order):
            node = reporting[k] if k < len(reporting) else reporting[int(rng.integers(len(reporting)))]
            node_minutes.append((node, minutes[pos]))
    else:
        for node in reporting:
            count = max(1, int(rng.poisson(cfg.incidents_per_failure_node)))
            for m in rng.integers(cfg.failure_minutes, size=count):
                node_minutes.append((node, start + int(m)))

    records = []
    for node, minute in node_minutes:
        types = _layer_types(vocab, topo.layer(node))
        records.append(IncidentRecord(
            minute=minute,
            node=node,
            itype=types[int(rng.integers(len(types)))],
            severity=3 if node == failure.root else int(rng.integers(1, 3)),
        ))
    return records


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Topology, incident stream, KPIs and ground truth, fully determined by ``cfg.seed``"""
    topo_ss, noise_ss, kpi_ss, failure_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    topo = build_topology(cfg, np.random.default_rng(topo_ss))
    starts, duration = _schedule(cfg)
    names = topo.node_names

    failures: List[InjectedFailure] = []
    failure_rngs = [np.random.default_rng(s) for s in failure_ss.spawn(cfg.n_failures)]
    for fid, (start, rng) in enumerate(zip(starts, failure_rngs)):
        partner = failures[fid - 1].root if cfg.failure_overlap and fid % 2 == 1 else None
        root = _pick_root(topo, rng, partner, cfg)
        affected = _spread(topo, root, cfg, rng)
        silent = tuple(n for n in affected if n != root and rng.random() < cfg.silent_prob)
        ramp = fid < cfg.ramp_failures
        length = cfg.ramp_minutes if ramp else cfg.failure_minutes
        failure_class = fid % cfg.n_classes
        failures.append(InjectedFailure(
            failure_id=fid,
            failure_class=failure_class,
            window=FailureWindow(start, start + length - 1),
            root=root,
            affected=tuple(affected),
            silent=silent,
            vocabulary=tuple(class_vocabulary(failure_class, cfg.types_per_class)),
            ramp=ramp,
        ))

    # background noise
    noise_rng = np.random.default_rng(noise_ss)
    if cfg.shared_noise:
        noise_vocab = sorted({t for c in range(cfg.n_classes) for t in class_vocabulary(c, cfg.types_per_class)})
    else:
        noise_vocab = [f"noise-{t:02d}" for t in range(cfg.n_noise_types)]
    tagged: List[Tuple[IncidentRecord, Optional[int]]] = []
    if cfg.noise_rate > 0 and names:
        counts = noise_rng.poisson(cfg.noise_rate, size=(duration, len(names)))
        for minute, node_idx in np.argwhere(counts > 0):
            for _ in range(int(counts[minute, node_idx])):
                tagged.append((IncidentRecord(
                    minute=int(minute),
                    node=names[node_idx],
                    itype=noise_vocab[int(noise_rng.integers(len(noise_vocab)))],
                    severity=1,
                ), None))

    for failure, rng in zip(failures, failure_rngs):
        tagged.extend((inc, failure.failure_id) for inc in _failure_incidents(failure, topo, cfg, rng))
    tagged.sort(key=lambda pair: pair[0].minute)

    # KPIs: flat noisy baseline plus a lagged pulse on every affected node
    kpi_rng = np.random.default_rng(kpi_ss)
    sigma = KPI_NOISE_FRACTION * cfg.pulse_height
    values = {
        (n, k): cfg.kpi_base + kpi_rng.normal(0.0, sigma, duration)
        for n in names for k in cfg.kpi_names
    }
    for failure, rng in zip(failures, failure_rngs):
        length = failure.window.length
        for node in failure.affected:
            lag = int(rng.integers(cfg.kpi_lag_max + 1))
            lo = failure.window.start_minute + lag
            hi = min(duration, lo + length)
            for k, name in enumerate(cfg.kpi_names):
                if k == 0 or rng.random() < SECONDARY_KPI_PROB:
                    values[(node, name)][lo:hi] += cfg.pulse_height
    kpis = KpiStore(KpiSeries(n, k, 0, tuple(float(v) for v in values[(n, k)])) for n, k in values)

    incidents = [inc for inc, _ in tagged]
    truth = GroundTruth([lab for _, lab in tagged], failures)
    logger.info("scenario seed=%d: %d nodes, %d incidents (%d failure), %d failures over %d minutes",
                cfg.seed, topo.n_nodes, len(incidents), sum(lab is not None for lab in truth.labels),
                len(failures), duration)
    return Scenario(topo, incidents, kpis, truth)


def label_clustering(groups: Sequence[IncidentGroup], gt: GroundTruth) -> Tuple[List[int], List[int]]:
    """Cluster and class label vectors over grouped failure incidents, in stream order"""
    pairs = sorted((m.index, g.group_id) for g in groups for m in g.members)
    omega, classes = [], []
    for index, gid in pairs:
        if not 0 <= index < len(gt.labels):
            raise DataValidationError(f"grouped incident {index} is not in the ground truth")
        label = gt.labels[index]
        if label is None:
            continue
        omega.append(gid)
        classes.append(label)
    return omega, classes


# --- persistence --------------------------------------------------------------------

def save_ground_truth(truth: GroundTruth, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    lines = []
    for f in truth.failures:
        lines.append(",".join([
            str(f.failure_id), str(f.failure_class), str(f.window.start_minute), str(f.window.end_minute),
            f.root, str(int(f.ramp)), ";".join(f.affected), ";".join(f.silent), ";".join(f.vocabulary),
        ]))
    return {
        "ground_truth": save_labels(truth.labels, out_dir / "ground_truth.txt"),
        "failures": write_lines(out_dir / "failures.txt", lines),
    }


def _split(field_text: str) -> Tuple[str, ...]:
    return tuple(x for x in field_text.split(";") if x)


def load_ground_truth(labels_path: Union[str, Path], failures_path: Optional[Union[str, Path]] = None) -> GroundTruth:
    labels = load_labels(labels_path)
    failures = []
    if failures_path is not None and Path(failures_path).exists():
        for line_no, line in read_lines(failures_path):
            parts = line.split(",")
            if len(parts) != 9:
                raise ParseError(failures_path, line_no, f"expected 9 fields, got {len(parts)}")
            failures.append(InjectedFailure(
                failure_id=parse_int(failures_path, line_no, parts[0], "failure id"),
                failure_class=parse_int(failures_path, line_no, parts[1], "failure class"),
                window=FailureWindow(parse_int(failures_path, line_no, parts[2], "start"),
                                     parse_int(failures_path, line_no, parts[3], "end")),
                root=parts[4],
                ramp=parts[5] == "1",
                affected=_split(parts[6]),
                silent=_split(parts[7]),
                vocabulary=_split(parts[8]),
            ))
    return GroundTruth(labels, failures)


def save_scenario(scenario: Scenario, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "topology": save_topology(scenario.topology, out_dir / "topology.txt"),
        "incidents": save_incidents(scenario.incidents, out_dir / "incidents.txt"),
        "kpis": save_kpis(scenario.kpis, out_dir / "kpis.txt"),
    }
    paths.update(save_ground_truth(scenario.truth, out_dir))
    return paths

"""
Failure-impact graph recovery.

For each failure window the candidate nodes (incident-reporting nodes plus silent but
KPI-abnormal neighbours) are linked along topology edges with a weight fusing incident
overlap and KPI trend similarity. Louvain community detection splits the weighted graph
and every community that carries incidents becomes one FailureImpactGraph.
"""
import bisect
import logging
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from ..config import DetectorConfig, ImpactConfig
from ..core.model import FailureImpactGraph, FailureWindow, IncidentRecord, KpiSeries, KpiStore
from ..core.topology import TopologyGraph
from ..errors import DataValidationError
from .failure_detector import EvtDetector, Verdict

logger = logging.getLogger(__name__)

KPI_LOOKBACK = 120
REPORTING_ALPHA = 0.5
_GAIN_TOL = 1e-12


# --- similarity measures -------------------------------------------------------

def incident_similarity(inc_i: Iterable[str], inc_j: Iterable[str]) -> float:
    """Multiset Jaccard over incident types; 0 when both are empty"""
    a = inc_i if isinstance(inc_i, Counter) else Counter(inc_i)
    b = inc_j if isinstance(inc_j, Counter) else Counter(inc_j)
    union = sum((a | b).values())
    if union == 0:
        return 0.0
    return sum((a & b).values()) / union


def dtw_distance(u: Sequence[float], v: Sequence[float]) -> float:
    """Path-length normalized DTW with absolute-difference cost and no window constraint.

    Among minimum-cost warping paths the shortest one is used for normalization. The
    dynamic program is swept one anti-diagonal at a time.
    """
    x = np.asarray(u, dtype=float)
    y = np.asarray(v, dtype=float)
    if x.size == 0 or y.size == 0:
        raise DataValidationError("DTW needs two non-empty sequences")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataValidationError("DTW inputs must be finite")

    n, m = x.size, y.size
    local = np.abs(x[:, None] - y[None, :])
    cost = np.full((n + 1, m + 1), np.inf)
    steps = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for s in range(2, n + m + 1):
        i = np.arange(max(1, s - m), min(n, s - 1) + 1)
        j = s - i
        best_c = cost[i - 1, j - 1]
        best_l = steps[i - 1, j - 1]
        for pi, pj in ((i - 1, j), (i, j - 1)):
            c, ln = cost[pi, pj], steps[pi, pj]
            better = (c < best_c) | ((c == best_c) & (ln < best_l))
            best_c = np.where(better, c, best_c)
            best_l = np.where(better, ln, best_l)
        cost[i, j] = best_c + local[i - 1, j - 1]
        steps[i, j] = best_l + 1
    return float(cost[n, m] / steps[n, m])


def _znorm(values: np.ndarray) -> np.ndarray:
    std = values.std()
    if std == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def kpi_anomaly_flags(series: KpiSeries, calib_n: int, detector_cfg: Optional[DetectorConfig] = None) -> np.ndarray:
    """Per-minute verdicts of one EVT detector streamed over the whole series.

    The first ``calib_n`` minutes calibrate the detector and are never flagged; anomalous
    minutes after them do not update the tail, so earlier pulses cannot raise the threshold.
    """
    values = np.asarray(series.values, dtype=float)
    flags = np.zeros(values.size, dtype=bool)
    if calib_n < 2 or calib_n >= values.size:
        return flags
    detector = EvtDetector.from_config(detector_cfg or DetectorConfig(), calib_n=calib_n)
    detector.calibrate(values[:calib_n])
    for k in range(calib_n, values.size):
        flags[k] = detector.observe(values[k]) is Verdict.ANOMALOUS
    return flags


def calibration_span(series: KpiSeries, window: FailureWindow, detector_cfg: Optional[DetectorConfig] = None) -> int:
    """Minutes of history before the window used for calibration, at most ``calib_minutes``"""
    cfg = detector_cfg or DetectorConfig()
    return max(0, min(cfg.calib_minutes, window.start_minute - series.start_minute))


class KpiAnomalyIndex:
    """Lazily streamed anomaly flags for every KPI series of a store"""

    def __init__(self, kpis: KpiStore, detector_cfg: Optional[DetectorConfig] = None):
        self.kpis = kpis
        self.detector_cfg = detector_cfg or DetectorConfig()
        self._flags: Dict[Tuple[str, str, int], np.ndarray] = {}

    def flags(self, series: KpiSeries, calib_n: int) -> np.ndarray:
        key = (series.node, series.kpi, calib_n)
        if key not in self._flags:
            self._flags[key] = kpi_anomaly_flags(series, calib_n, self.detector_cfg)
        return self._flags[key]

    def series_abnormal(self, series: KpiSeries, window: FailureWindow) -> bool:
        calib_n = calibration_span(series, window, self.detector_cfg)
        if calib_n < 2:
            return False
        flags = self.flags(series, calib_n)
        lo = max(window.start_minute, series.start_minute) - series.start_minute
        hi = min(window.end_minute, series.end_minute) - series.start_minute
        return hi >= lo and bool(flags[lo:hi + 1].any())

    def abnormal(self, node: str, window: FailureWindow) -> FrozenSet[str]:
        return frozenset(
            name for name in self.kpis.kpis_for(node)
            if self.series_abnormal(self.kpis.get(node, name), window)
        )


def kpi_abnormal(series: KpiSeries, window: FailureWindow, detector_cfg: Optional[DetectorConfig] = None) -> bool:
    """True when the detector streamed over the pre-window history flags a minute of the window"""
    return KpiAnomalyIndex(KpiStore([series]), detector_cfg).series_abnormal(series, window)


def abnormal_kpis(node: str, window: FailureWindow, kpis: KpiStore,
                  detector_cfg: Optional[DetectorConfig] = None) -> FrozenSet[str]:
    return KpiAnomalyIndex(kpis, detector_cfg).abnormal(node, window)


def kpi_trend_similarity(
    i: str,
    j: str,
    window: FailureWindow,
    kpis: KpiStore,
    lookback: int = KPI_LOOKBACK,
    abnormal: Optional[Mapping[str, FrozenSet[str]]] = None,
) -> float:
    """Mean 1/(1+DTW) over the KPIs abnormal at both nodes; 0 when none is shared"""
    ab_i = abnormal[i] if abnormal is not None else abnormal_kpis(i, window, kpis)
    ab_j = abnormal[j] if abnormal is not None else abnormal_kpis(j, window, kpis)
    shared = sorted(ab_i & ab_j)
    if not shared:
        return 0.0
    lo, hi = window.start_minute - lookback, window.end_minute
    total = 0.0
    for name in shared:
        a = _znorm(kpis.get(i, name).segment(lo, hi))
        b = _znorm(kpis.get(j, name).segment(lo, hi))
        total += 1.0 / (1.0 + dtw_distance(a, b))
    return total / len(shared)


def fuse_weight(jaccard: float, kpi_sim: float, alpha: float) -> float:
    return alpha * jaccard + (1.0 - alpha) * kpi_sim


def _window_types(incidents: Iterable[IncidentRecord], window: FailureWindow) -> Dict[str, Counter]:
    by_node: Dict[str, Counter] = {}
    for inc in incidents:
        if window.contains(inc.minute):
            by_node.setdefault(inc.node, Counter())[inc.itype] += 1
    return by_node


def edge_weight(
    i: str,
    j: str,
    window: FailureWindow,
    incidents: Iterable[IncidentRecord],
    kpis: KpiStore,
    alpha: float = REPORTING_ALPHA,
    lookback: int = KPI_LOOKBACK,
) -> float:
    """Fused weight of one topology edge: alpha applies only when both ends reported"""
    types = _window_types(incidents, window)
    inc_i, inc_j = types.get(i, Counter()), types.get(j, Counter())
    a = alpha if inc_i and inc_j else 0.0
    return fuse_weight(incident_similarity(inc_i, inc_j), kpi_trend_similarity(i, j, window, kpis, lookback), a)


# --- candidate nodes ------------------------------------------------------------

def candidate_nodes(
    g: TopologyGraph,
    window: FailureWindow,
    incidents: Iterable[IncidentRecord],
    kpis: KpiStore,
    complete: bool = True,
    detector_cfg: Optional[DetectorConfig] = None,
    abnormal_cache: Optional[Dict[str, FrozenSet[str]]] = None,
    anomalies: Optional[KpiAnomalyIndex] = None,
) -> Set[str]:
    """Reporting nodes plus, when ``complete``, the silent KPI-abnormal nodes reachable through them"""
    reporting = {inc.node for inc in incidents if window.contains(inc.minute)}
    if not complete:
        return reporting
    cache = abnormal_cache if abnormal_cache is not None else {}
    index = anomalies or KpiAnomalyIndex(kpis, detector_cfg)

    def abnormal(node: str) -> FrozenSet[str]:
        if node not in cache:
            cache[node] = index.abnormal(node, window)
        return cache[node]

    admitted = set(reporting)
    queue = deque(sorted(reporting))
    while queue:
        node = queue.popleft()
        for nbr in g.neighbor_names(node):
            if nbr not in admitted and abnormal(nbr):
                admitted.add(nbr)
                queue.append(nbr)
    return admitted


# --- similarity graph and communities -------------------------------------------

@dataclass
class SimilarityGraph:
    """Weighted graph over candidate nodes; edges keyed by sorted node pair"""

    nodes: List[str]
    weights: Dict[Tuple[str, str], float] = field(default_factory=dict)
    incidents: Dict[str, Counter] = field(default_factory=dict)
    abnormal: Dict[str, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = sorted(set(self.nodes))
        members = set(self.nodes)
        clean: Dict[Tuple[str, str], float] = {}
        for (a, b), w in self.weights.items():
            if a == b or a not in members or b not in members:
                raise DataValidationError(f"edge {a!r}-{b!r} is not between distinct member nodes")
            if not 0.0 <= w <= 1.0:
                raise DataValidationError(f"edge weight {w} outside [0, 1]")
            clean[(min(a, b), max(a, b))] = float(w)
        self.weights = clean

    def weight(self, a: str, b: str) -> float:
        return self.weights.get((min(a, b), max(a, b)), 0.0)

    @property
    def total_weight(self) -> float:
        return sum(self.weights.values())

    def degree(self, node: str) -> float:
        return sum(w for (a, b), w in self.weights.items() if node in (a, b))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.nodes)
        graph.add_weighted_edges_from((a, b, w) for (a, b), w in self.weights.items())
        return graph


@dataclass
class Partition:
    """Hard community assignment node -> community id"""

    assignment: Dict[str, int]

    def communities(self) -> List[List[str]]:
        groups: Dict[int, List[str]] = {}
        for node in sorted(self.assignment):
            groups.setdefault(self.assignment[node], []).append(node)
        return sorted(groups.values(), key=lambda c: c[0])

    def __len__(self) -> int:
        return len(set(self.assignment.values()))


def modularity(g: SimilarityGraph, p: Partition) -> float:
    missing = set(g.nodes) - set(p.assignment)
    if missing:
        raise DataValidationError(f"partition does not assign {sorted(missing)}")
    two_m = 2.0 * g.total_weight
    if two_m == 0.0:
        return 0.0
    internal: Dict[int, float] = {}
    total: Dict[int, float] = {}
    for (a, b), w in g.weights.items():
        ca, cb = p.assignment[a], p.assignment[b]
        if ca == cb:
            internal[ca] = internal.get(ca, 0.0) + 2.0 * w
        total[ca] = total.get(ca, 0.0) + w
        total[cb] = total.get(cb, 0.0) + w
    return sum(internal.values()) / two_m - sum((t / two_m) ** 2 for t in total.values())


def _local_moving(adj, self_w, two_m, rng) -> Tuple[List[int], bool]:
    n = len(adj)
    k = [sum(adj[i].values()) + self_w[i] for i in range(n)]
    comm = list(range(n))
    tot = list(k)
    improved = False
    order = list(range(n))
    rng.shuffle(order)
    moved = True
    while moved:
        moved = False
        for i in order:
            old = comm[i]
            links: Dict[int, float] = {}
            for j, w in adj[i].items():
                links[comm[j]] = links.get(comm[j], 0.0) + w
            tot[old] -= k[i]

            def gain(c):
                return 2.0 * (links.get(c, 0.0) - tot[c] * k[i] / two_m) / two_m

            best, best_gain = old, gain(old)
            for c in sorted(links):
                g = gain(c)
                if g > best_gain + _GAIN_TOL:
                    best, best_gain = c, g
            tot[best] += k[i]
            if best != old:
                comm[i] = best
                moved = improved = True
    return comm, improved


def _contract(adj, self_w, comm) -> Tuple[List[int], List[Dict[int, float]], List[float]]:
    relabel: Dict[int, int] = {}
    for c in comm:
        relabel.setdefault(c, len(relabel))
    dense = [relabel[c] for c in comm]
    size = len(relabel)
    new_adj: List[Dict[int, float]] = [dict() for _ in range(size)]
    new_self = [0.0] * size
    for i, nbrs in enumerate(adj):
        ci = dense[i]
        new_self[ci] += self_w[i]
        for j, w in nbrs.items():
            cj = dense[j]
            if ci == cj:
                new_self[ci] += w
            else:
                new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
    return dense, new_adj, new_self


def louvain(g: SimilarityGraph, seed: int = 0) -> Partition:
    """Two-phase Louvain: local moving then community contraction until no move helps"""
    if not g.nodes:
        raise DataValidationError("Louvain needs a non-empty graph")
    index = {name: i for i, name in enumerate(g.nodes)}
    adj: List[Dict[int, float]] = [dict() for _ in g.nodes]
    for (a, b), w in g.weights.items():
        if w > 0.0:
            adj[index[a]][index[b]] = w
            adj[index[b]][index[a]] = w
    self_w = [0.0] * len(g.nodes)
    membership = list(range(len(g.nodes)))
    two_m = 2.0 * g.total_weight
    rng = np.random.default_rng(seed)
    while two_m > 0.0:
        comm, improved = _local_moving(adj, self_w, two_m, rng)
        if not improved:
            break
        dense, adj, self_w = _contract(adj, self_w, comm)
        membership = [dense[c] for c in membership]

    labels: Dict[int, int] = {}
    assignment = {}
    for name, c in zip(g.nodes, membership):
        assignment[name] = labels.setdefault(c, len(labels))
    return Partition(assignment)


# --- impact graphs ----------------------------------------------------------------

class ImpactGraphBuilder:
    """Builds failure-impact graphs for windows over one incident stream"""

    def __init__(
        self,
        topology: TopologyGraph,
        incidents: Sequence[IncidentRecord],
        kpis: KpiStore,
        cfg: Optional[ImpactConfig] = None,
        detector_cfg: Optional[DetectorConfig] = None,
    ):
        self.topology = topology
        self.incidents = list(incidents)
        self.kpis = kpis
        self.cfg = cfg or ImpactConfig()
        self.detector_cfg = detector_cfg or DetectorConfig()
        self.anomalies = KpiAnomalyIndex(kpis, self.detector_cfg)
        self._minutes = [inc.minute for inc in self.incidents]
        if any(b < a for a, b in zip(self._minutes, self._minutes[1:])):
            raise DataValidationError("incident stream must be sorted by minute")

    def window_indices(self, window: FailureWindow) -> range:
        lo = bisect.bisect_left(self._minutes, window.start_minute)
        hi = bisect.bisect_right(self._minutes, window.end_minute)
        return range(lo, hi)

    def similarity_graph(self, window: FailureWindow) -> SimilarityGraph:
        indices = self.window_indices(window)
        window_incidents = [self.incidents[k] for k in indices]
        cache: Dict[str, FrozenSet[str]] = {}
        nodes = candidate_nodes(
            self.topology, window, window_incidents, self.kpis,
            complete=self.cfg.complete, abnormal_cache=cache, anomalies=self.anomalies,
        )
        types = _window_types(window_incidents, window)
        abnormal = {}
        for node in nodes:
            if node not in cache:
                cache[node] = self.anomalies.abnormal(node, window)
            abnormal[node] = cache[node]

        weights: Dict[Tuple[str, str], float] = {}
        for a in sorted(nodes):
            for b in self.topology.neighbor_names(a):
                if b <= a or b not in nodes:
                    continue
                inc_a, inc_b = types.get(a, Counter()), types.get(b, Counter())
                alpha = self.cfg.alpha if (inc_a and inc_b) or not self.cfg.complete else 0.0
                w = fuse_weight(
                    incident_similarity(inc_a, inc_b),
                    kpi_trend_similarity(a, b, window, self.kpis, self.cfg.kpi_lookback, abnormal),
                    alpha,
                )
                if w > 0.0:
                    weights[(a, b)] = min(1.0, w)
        return SimilarityGraph(sorted(nodes), weights, types, abnormal)

    def _window_seed(self, window: FailureWindow) -> int:
        ss = np.random.SeedSequence([self.cfg.seed, window.start_minute, window.end_minute])
        return int(ss.generate_state(1)[0])

    def build(self, window: FailureWindow) -> List[FailureImpactGraph]:
        sim = self.similarity_graph(window)
        if not sim.nodes:
            return []
        partition = louvain(sim, self._window_seed(window))

        # communities split into topology-connected pieces
        pieces: List[List[str]] = []
        for members in partition.communities():
            sub = self.topology.graph.subgraph(self.topology.node_id(n) for n in members)
            for comp in nx.connected_components(sub):
                pieces.append(sorted(self.topology.node_name(i) for i in comp))
        piece_of = {n: k for k, piece in enumerate(pieces) for n in piece}

        touched: Dict[str, Set[int]] = {n: set() for n in sim.nodes}
        for (a, b) in sim.weights:
            touched[a].add(piece_of[b])
            touched[b].add(piece_of[a])
        boundary = {n for n, cs in touched.items() if len(cs) >= 2}

        indices = self.window_indices(window)
        graphs = []
        for piece in pieces:
            members = set(piece)
            idx = tuple(k for k in indices if self.incidents[k].node in members)
            if not idx:
                continue
            graphs.append(FailureImpactGraph(
                window=window,
                nodes=frozenset(members),
                incidents=tuple(self.incidents[k] for k in idx),
                incident_indices=idx,
                boundary_nodes=frozenset(boundary & members),
            ))
        graphs.sort(key=lambda ig: ig.incident_indices[0])
        logger.debug("window [%d,%d]: %d candidates, %d communities, %d impact graphs",
                     window.start_minute, window.end_minute, len(sim.nodes), len(partition), len(graphs))
        return graphs

    def build_all(self, windows: Sequence[FailureWindow], workers: int = 1) -> List[FailureImpactGraph]:
        """Impact graphs for every window, in window order; windows run on a thread pool"""
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_window = list(pool.map(self.build, windows))
        else:
            per_window = [self.build(w) for w in windows]
        graphs = [ig for batch in per_window for ig in batch]
        logger.info("built %d impact graphs from %d windows (completion=%s)",
                    len(graphs), len(windows), self.cfg.complete)
        return graphs


def build_impact_graphs(
    g: TopologyGraph,
    window: FailureWindow,
    incidents: Sequence[IncidentRecord],
    kpis: KpiStore,
    seed: int = 0,
    complete: bool = True,
    alpha: float = REPORTING_ALPHA,
    lookback: int = KPI_LOOKBACK,
) -> List[FailureImpactGraph]:
    cfg = ImpactConfig(alpha=alpha, kpi_lookback=lookback, complete=complete, seed=seed)
    return ImpactGraphBuilder(g, incidents, kpis, cfg).build(window)

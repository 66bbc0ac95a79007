"""
Text codecs for every artifact the pipeline reads or writes.

All files are UTF-8 with LF line endings. Floats are written with ``repr`` (shortest
round-trip form) except embeddings, which use 9 significant digits; embedding vectors
are float32 so that form round-trips exactly.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DataValidationError, ParseError
from .model import FailureImpactGraph, FailureWindow, IncidentEmbedding, IncidentRecord, KpiSeries, KpiStore
from .topology import TopologyGraph

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
NOISE_LABEL = "NOISE"


def read_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    """Yield (line_no, stripped line) for non-blank lines"""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield line_no, line


def write_lines(path: PathLike, lines: Iterable[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")
    return path


def parse_int(path, line_no, text, what) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line_no, f"{what} is not an integer: {text!r}") from None


def check_token(value: str, what: str) -> None:
    if not value or any(c in value for c in ",;\n\r") or value != value.strip():
        raise DataValidationError(f"{what} {value!r} cannot be written to a comma-separated file")


# --- topology --------------------------------------------------------------

def load_topology(path: PathLike) -> TopologyGraph:
    """Parse `N,<node_id>,<layer>` and `E,<src>,<dst>` lines into a TopologyGraph"""
    nodes: List[str] = []
    layers: Dict[str, Optional[str]] = {}
    edges: List[Tuple[str, str]] = []
    seen_edges = set()
    for line_no, line in read_lines(path):
        parts = line.split(",")
        kind = parts[0]
        if kind == "N" and len(parts) in (2, 3):
            node = parts[1]
            if not node:
                raise ParseError(path, line_no, "empty node id")
            layer = parts[2] if len(parts) == 3 and parts[2] else None
            if node in layers:
                if layers[node] != layer:
                    raise ParseError(path, line_no, f"conflicting layer for node {node!r}")
                continue
            nodes.append(node)
            layers[node] = layer
        elif kind == "E" and len(parts) == 3:
            a, b = parts[1], parts[2]
            if not a or not b:
                raise ParseError(path, line_no, "empty edge endpoint")
            key = frozenset((a, b))
            if key in seen_edges:
                continue
            seen_edges.add(key)
            edges.append((a, b))
        else:
            raise ParseError(path, line_no, f"malformed topology record: {line!r}")
    return TopologyGraph(nodes, edges, layers)


def save_topology(g: TopologyGraph, path: PathLike) -> Path:
    lines = []
    for name in g.node_names:
        check_token(name, "node id")
        lines.append(f"N,{name},{g.layer(name) or ''}")
    for a, b in g.edge_names():
        lines.append(f"E,{a},{b}")
    return write_lines(path, lines)


# --- incidents -------------------------------------------------------------

def load_incidents(path: PathLike, topology: Optional[TopologyGraph] = None) -> List[IncidentRecord]:
    """Parse `<minute>,<node>,<incident_type>,<severity>[,<title>]`, sorted by minute"""
    records: List[IncidentRecord] = []
    last_minute = -1
    for line_no, line in read_lines(path):
        parts = line.split(",", 4)
        if len(parts) < 4:
            raise ParseError(path, line_no, f"expected at least 4 fields, got {len(parts)}")
        minute = parse_int(path, line_no, parts[0], "minute")
        severity = parse_int(path, line_no, parts[3], "severity")
        title = parts[4] if len(parts) == 5 else None
        try:
            record = IncidentRecord(minute, parts[1], parts[2], severity, title)
        except DataValidationError as e:
            raise ParseError(path, line_no, str(e)) from None
        if minute < last_minute:
            raise ParseError(path, line_no, f"stream not sorted: minute {minute} after {last_minute}")
        if topology is not None and record.node not in topology:
            raise DataValidationError(f"{path}:{line_no}: incident node {record.node!r} not in topology")
        last_minute = minute
        records.append(record)
    return records


def save_incidents(incidents: Sequence[IncidentRecord], path: PathLike) -> Path:
    def fmt(inc: IncidentRecord) -> str:
        check_token(inc.node, "node id")
        check_token(inc.itype, "incident type")
        base = f"{inc.minute},{inc.node},{inc.itype},{inc.severity}"
        return base if inc.title is None else f"{base},{inc.title}"
    return write_lines(path, (fmt(i) for i in incidents))


# --- KPIs ------------------------------------------------------------------

def load_kpis(path: PathLike) -> KpiStore:
    """Parse `<node>,<kpi_name>,<start_minute>,<v0>;<v1>;...`"""
    series = []
    for line_no, line in read_lines(path):
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(path, line_no, f"expected 4 fields, got {len(parts)}")
        start = parse_int(path, line_no, parts[2], "start minute")
        try:
            values = tuple(float(v) for v in parts[3].split(";"))
        except ValueError:
            raise ParseError(path, line_no, "KPI value is not a number") from None
        try:
            series.append(KpiSeries(parts[0], parts[1], start, values))
        except DataValidationError as e:
            raise ParseError(path, line_no, str(e)) from None
    return KpiStore(series)


def save_kpis(kpis: KpiStore, path: PathLike) -> Path:
    def fmt(s: KpiSeries) -> str:
        check_token(s.node, "node id")
        check_token(s.kpi, "KPI name")
        return f"{s.node},{s.kpi},{s.start_minute}," + ";".join(repr(float(v)) for v in s.values)
    return write_lines(path, (fmt(s) for s in kpis))


# --- embeddings ------------------------------------------------------------

def load_embedding(path: PathLike) -> IncidentEmbedding:
    """Parse the `<vocab_size> <dim>` header followed by one `<type> <f_1> ... <f_dim>` line per type"""
    it = read_lines(path)
    try:
        line_no, header = next(it)
    except StopIteration:
        raise ParseError(path, 1, "empty embedding file") from None
    head = header.split()
    if len(head) != 2:
        raise ParseError(path, line_no, "header must be '<vocab_size> <dim>'")
    size = parse_int(path, line_no, head[0], "vocab size")
    dim = parse_int(path, line_no, head[1], "dim")
    vectors: Dict[str, np.ndarray] = {}
    for line_no, line in it:
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise ParseError(path, line_no, f"expected {dim} components, got {len(parts) - 1}")
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
        except ValueError:
            raise ParseError(path, line_no, "embedding component is not a number") from None
        if parts[0] in vectors:
            raise ParseError(path, line_no, f"duplicate incident type {parts[0]!r}")
        vectors[parts[0]] = vec
    if len(vectors) != size:
        raise ParseError(path, line_no, f"header announces {size} types, found {len(vectors)}")
    return IncidentEmbedding(dim, vectors)


def save_embedding(emb: IncidentEmbedding, path: PathLike) -> Path:
    lines = [f"{len(emb)} {emb.dim}"]
    for itype in emb.vocabulary:
        if not itype or any(c.isspace() for c in itype):
            raise DataValidationError(f"incident type {itype!r} cannot contain whitespace")
        lines.append(itype + " " + " ".join(f"{float(x):.9g}" for x in emb.vector(itype)))
    return write_lines(path, lines)


# --- failure windows -------------------------------------------------------

def load_windows(path: PathLike) -> List[FailureWindow]:
    windows = []
    for line_no, line in read_lines(path):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(path, line_no, "expected 'start,end'")
        start = parse_int(path, line_no, parts[0], "start")
        end = parse_int(path, line_no, parts[1], "end")
        try:
            windows.append(FailureWindow(start, end))
        except DataValidationError as e:
            raise ParseError(path, line_no, str(e)) from None
    return windows


def save_windows(windows: Iterable[FailureWindow], path: PathLike) -> Path:
    return write_lines(path, (f"{w.start_minute},{w.end_minute}" for w in windows))


# --- impact graphs ---------------------------------------------------------

def save_impact_graph(graph: FailureImpactGraph, path: PathLike) -> Path:
    """`W,<start>,<end>` then `N,<node>` / `B,<node>` (boundary) / `I,<incident index>` lines"""
    lines = [f"W,{graph.window.start_minute},{graph.window.end_minute}"]
    lines += [f"N,{n}" for n in sorted(graph.nodes)]
    lines += [f"B,{n}" for n in sorted(graph.boundary_nodes)]
    lines += [f"I,{i}" for i in graph.incident_indices]
    return write_lines(path, lines)


def load_impact_graph(path: PathLike, incidents: Sequence[IncidentRecord]) -> FailureImpactGraph:
    window = None
    nodes, boundary, indices = [], [], []
    for line_no, line in read_lines(path):
        parts = line.split(",")
        kind = parts[0]
        if kind == "W" and len(parts) == 3:
            window = FailureWindow(parse_int(path, line_no, parts[1], "start"),
                                   parse_int(path, line_no, parts[2], "end"))
        elif kind == "N" and len(parts) == 2:
            nodes.append(parts[1])
        elif kind == "B" and len(parts) == 2:
            boundary.append(parts[1])
        elif kind == "I" and len(parts) == 2:
            idx = parse_int(path, line_no, parts[1], "incident index")
            if not 0 <= idx < len(incidents):
                raise ParseError(path, line_no, f"incident index {idx} out of range")
            indices.append(idx)
        else:
            raise ParseError(path, line_no, f"malformed impact graph record: {line!r}")
    if window is None:
        raise ParseError(path, 1, "missing window record")
    return FailureImpactGraph(
        window=window,
        nodes=frozenset(nodes),
        incidents=tuple(incidents[i] for i in indices),
        incident_indices=tuple(indices),
        boundary_nodes=frozenset(boundary),
    )


def save_impact_graphs(graphs: Sequence[FailureImpactGraph], out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stale in out_dir.glob("impact_*.txt"):
        stale.unlink()
    return [save_impact_graph(g, out_dir / f"impact_{k:05d}.txt") for k, g in enumerate(graphs)]


def load_impact_graphs(in_dir: PathLike, incidents: Sequence[IncidentRecord]) -> List[FailureImpactGraph]:
    return [load_impact_graph(p, incidents) for p in sorted(Path(in_dir).glob("impact_*.txt"))]


# --- ground truth labels ---------------------------------------------------

def save_labels(labels: Sequence[Optional[int]], path: PathLike) -> Path:
    """`<incident_index>,<failure_id|NOISE>`"""
    return write_lines(
        path, (f"{i},{NOISE_LABEL if lab is None else lab}" for i, lab in enumerate(labels))
    )


def load_labels(path: PathLike) -> List[Optional[int]]:
    labels: List[Optional[int]] = []
    for line_no, line in read_lines(path):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(path, line_no, "expected '<incident_index>,<failure_id|NOISE>'")
        idx = parse_int(path, line_no, parts[0], "incident index")
        if idx != len(labels):
            raise ParseError(path, line_no, f"expected incident index {len(labels)}, got {idx}")
        labels.append(None if parts[1] == NOISE_LABEL else parse_int(path, line_no, parts[1], "failure id"))
    return labels

"""
Unit tests for the domain model, the topology and the artifact codecs
"""
import numpy as np
import pytest

from src.config import ScenarioConfig
from src.core.codecs import (
    load_embedding,
    load_impact_graph,
    load_incidents,
    load_kpis,
    load_labels,
    load_topology,
    load_windows,
    save_embedding,
    save_impact_graph,
    save_incidents,
    save_kpis,
    save_labels,
    save_topology,
    save_windows,
)
from src.core.ids import Interner
from src.core.model import FailureImpactGraph, FailureWindow, IncidentEmbedding, IncidentRecord, KpiSeries, KpiStore
from src.core.topology import TopologyGraph, shortest_hop_distance
from src.errors import DataValidationError, ParseError, UnknownIncidentTypeError, UnknownNodeError
from src.services.cascade_simulator import generate_scenario, load_ground_truth, save_scenario

pytestmark = pytest.mark.unit


class TestModel:
    """Test cases for the immutable domain types"""

    def test_negative_minute(self):
        """Test that incidents cannot predate minute 0"""
        with pytest.raises(DataValidationError):
            IncidentRecord(-1, "a", "db-down")

    def test_window_bounds(self):
        """Test window containment, overlap and ordering"""
        w = FailureWindow(10, 12)
        assert w.contains(10) and w.contains(12) and not w.contains(13)
        assert w.overlaps(FailureWindow(12, 20))
        assert not w.overlaps(FailureWindow(13, 20))
        assert w.length == 3
        with pytest.raises(DataValidationError):
            FailureWindow(5, 4)

    def test_kpi_rejects_nan(self):
        """Test that KPI values must be finite"""
        with pytest.raises(DataValidationError):
            KpiSeries("a", "cpu_util", 0, (1.0, float("nan")))

    def test_kpi_segment_is_clipped(self):
        """Test that segments are clipped to the recorded span"""
        s = KpiSeries("a", "cpu_util", 10, (1.0, 2.0, 3.0))
        assert s.segment(0, 10).tolist() == [1.0]
        assert s.segment(11, 50).tolist() == [2.0, 3.0]
        assert s.segment(20, 30).size == 0

    def test_duplicate_kpi_series(self):
        """Test that a (node, kpi) pair appears once"""
        s = KpiSeries("a", "cpu_util", 0, (1.0,))
        with pytest.raises(DataValidationError):
            KpiStore([s, s])

    def test_embedding_dimension_check(self):
        """Test that every vector has the declared dimension"""
        with pytest.raises(DataValidationError):
            IncidentEmbedding(3, {"x": np.zeros(2)})

    def test_embedding_unknown_type(self, toy_embedding):
        """Test that lookups of unknown types raise"""
        with pytest.raises(UnknownIncidentTypeError):
            toy_embedding.vector("disk-full")

    def test_impact_graph_membership(self):
        """Test that incidents must come from member nodes inside the window"""
        w = FailureWindow(0, 5)
        with pytest.raises(DataValidationError):
            FailureImpactGraph(w, frozenset({"a"}), (IncidentRecord(1, "b", "t"),))
        with pytest.raises(DataValidationError):
            FailureImpactGraph(w, frozenset({"a"}), (IncidentRecord(6, "a", "t"),))


class TestTopology:
    """Test cases for TopologyGraph"""

    def test_interner_is_dense_and_ordered(self):
        """Test first-seen dense ids"""
        ids = Interner(["b", "a", "b"])
        assert len(ids) == 2
        assert ids.id_of("b") == 0 and ids.extern(1) == "a"

    def test_hop_distances(self, path_topology):
        """Test BFS distances on a path"""
        assert shortest_hop_distance(path_topology, "a", "d") == 3
        assert shortest_hop_distance(path_topology, "b", "b") == 0

    def test_unreachable(self, two_zone_topology):
        """Test that nodes in different components have no distance"""
        assert shortest_hop_distance(two_zone_topology, "x1", "y1") is None
        assert two_zone_topology.components() == [["x1", "x2", "x3"], ["y1", "y2"]]

    def test_distances_match_floyd_warshall(self):
        """Test BFS hop counts against all-pairs Floyd-Warshall on a random 50-node graph"""
        rng = np.random.default_rng(31)
        names = [f"n{k:02d}" for k in range(50)]
        edges = [(names[a], names[b]) for a in range(50) for b in range(a + 1, 50) if rng.random() < 0.06]
        topo = TopologyGraph(names, edges)

        expected = np.full((50, 50), np.inf)
        np.fill_diagonal(expected, 0.0)
        for a, b in edges:
            expected[names.index(a), names.index(b)] = expected[names.index(b), names.index(a)] = 1.0
        for k in range(50):
            expected = np.minimum(expected, expected[:, k, None] + expected[None, k, :])

        found = np.full((50, 50), np.inf)
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                d = shortest_hop_distance(topo, a, b)
                if d is not None:
                    found[i, j] = d

        assert np.array_equal(found, expected)
        assert np.all(found[:, :, None] <= found[:, None, :] + found.T[None, :, :])

    def test_invalid_graphs(self):
        """Test self-loops, dangling edges and duplicate nodes"""
        with pytest.raises(DataValidationError):
            TopologyGraph(["a"], [("a", "a")])
        with pytest.raises(DataValidationError):
            TopologyGraph(["a"], [("a", "b")])
        with pytest.raises(DataValidationError):
            TopologyGraph(["a", "a"], [])

    def test_unknown_node(self, path_topology):
        """Test that looking up an unknown node raises UnknownNodeError"""
        with pytest.raises(UnknownNodeError):
            path_topology.node_id("z")

    def test_neighbors_are_sorted(self, path_topology):
        """Test neighbor lists"""
        assert path_topology.neighbor_names("b") == ["a", "c"]
        assert path_topology.layer("a") == "application"


class TestCodecs:
    """Test cases for artifact files"""

    def test_topology_file(self, tmp_path, path_topology):
        """Test saving and reloading a topology, including duplicate edges in the file"""
        path = save_topology(path_topology, tmp_path / "topology.txt")
        with open(path, "a") as f:
            f.write("E,b,a\n")

        assert load_topology(path) == path_topology

    def test_topology_malformed_line(self, tmp_path):
        """Test that a bad record names its line"""
        path = tmp_path / "topology.txt"
        path.write_text("N,a,\nX,a,b\n")

        with pytest.raises(ParseError) as exc:
            load_topology(path)
        assert exc.value.line_no == 2

    def test_incidents_keep_titles(self, tmp_path):
        """Test that the optional title survives, commas included"""
        incidents = [IncidentRecord(0, "a", "db-down", 2, "primary down, failing over"),
                     IncidentRecord(3, "b", "db-slow", 1)]
        path = save_incidents(incidents, tmp_path / "incidents.txt")

        assert load_incidents(path) == incidents

    def test_unsorted_incidents(self, tmp_path):
        """Test that an unsorted incident file is rejected"""
        path = tmp_path / "incidents.txt"
        path.write_text("5,a,t,1\n4,a,t,1\n")

        with pytest.raises(ParseError, match="not sorted"):
            load_incidents(path)

    def test_incident_node_checked_against_topology(self, tmp_path, path_topology):
        """Test that incidents must reference topology nodes"""
        path = tmp_path / "incidents.txt"
        path.write_text("0,z,t,1\n")

        with pytest.raises(DataValidationError):
            load_incidents(path, path_topology)

    def test_kpi_file(self, tmp_path, make_pulse):
        """Test that KPI values round-trip exactly"""
        kpis = KpiStore([make_pulse("a"), KpiSeries("b", "round_trip_delay", 5, (0.1, 0.2))])
        path = save_kpis(kpis, tmp_path / "kpis.txt")

        assert load_kpis(path) == kpis

    def test_kpi_bad_value(self, tmp_path):
        """Test that a non-numeric KPI value is a parse error"""
        path = tmp_path / "kpis.txt"
        path.write_text("a,cpu_util,0,1.0;x\n")

        with pytest.raises(ParseError):
            load_kpis(path)

    def test_embedding_file(self, tmp_path):
        """Test that float32 vectors survive the text form bit for bit"""
        rng = np.random.default_rng(0)
        emb = IncidentEmbedding(8, {f"t{k}": rng.normal(size=8) for k in range(5)})
        path = save_embedding(emb, tmp_path / "embedding.txt")

        assert load_embedding(path) == emb

    def test_embedding_header_mismatch(self, tmp_path):
        """Test that the announced vocabulary size is checked"""
        path = tmp_path / "embedding.txt"
        path.write_text("2 2\nA 0.1 0.2\n")

        with pytest.raises(ParseError, match="announces"):
            load_embedding(path)

    def test_windows_and_labels(self, tmp_path):
        """Test the windows and ground-truth label files"""
        windows = [FailureWindow(1, 3), FailureWindow(7, 7)]
        labels = [None, 0, 0, None, 1]

        assert load_windows(save_windows(windows, tmp_path / "w.txt")) == windows
        assert load_labels(save_labels(labels, tmp_path / "gt.txt")) == labels
        assert (tmp_path / "gt.txt").read_text().splitlines()[0] == "0,NOISE"

    def test_simulated_scenarios_round_trip(self, tmp_path):
        """Test that every scenario artifact reloads unchanged over 100 seeds"""
        for seed in range(100):
            scenario = generate_scenario(ScenarioConfig(
                seed=seed, n_nodes=12, n_failures=2, n_classes=2, types_per_class=4,
                warmup_minutes=40, quiet_gap=5, noise_rate=0.01, n_noise_types=3,
            ))
            paths = save_scenario(scenario, tmp_path / f"seed-{seed}")

            topology = load_topology(paths["topology"])
            assert topology == scenario.topology
            assert load_incidents(paths["incidents"], topology) == scenario.incidents
            assert load_kpis(paths["kpis"]) == scenario.kpis
            truth = load_ground_truth(paths["ground_truth"], paths["failures"])
            assert truth.labels == scenario.truth.labels
            assert truth.failures == scenario.truth.failures

    def test_impact_graph_file(self, tmp_path):
        """Test that an impact graph reloads against its incident stream"""
        incidents = [IncidentRecord(0, "a", "t0"), IncidentRecord(1, "b", "t1"), IncidentRecord(2, "c", "t2")]
        graph = FailureImpactGraph(
            window=FailureWindow(0, 2),
            nodes=frozenset({"a", "b"}),
            incidents=(incidents[0], incidents[1]),
            incident_indices=(0, 1),
            boundary_nodes=frozenset({"b"}),
        )
        path = save_impact_graph(graph, tmp_path / "impact_00000.txt")

        assert load_impact_graph(path, incidents) == graph

    def test_impact_graph_index_out_of_range(self, tmp_path):
        """Test that incident indices are validated"""
        path = tmp_path / "impact_00000.txt"
        path.write_text("W,0,2\nN,a\nI,5\n")

        with pytest.raises(ParseError, match="out of range"):
            load_impact_graph(path, [IncidentRecord(0, "a", "t")])

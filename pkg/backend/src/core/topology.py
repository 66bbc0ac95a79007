"""
Undirected component topology with interned node ids and cached BFS hop distances
"""
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import networkx as nx

from ..errors import DataValidationError, UnknownNodeError
from .ids import Interner

LAYERS = ("application", "platform", "infrastructure")


class TopologyGraph:
    """Static component graph; nodes are interned to dense integers at construction"""

    def __init__(
        self,
        nodes: Iterable[str],
        edges: Iterable[Tuple[str, str]],
        layers: Optional[Mapping[str, Optional[str]]] = None,
    ):
        self._ids = Interner()
        for name in nodes:
            if name in self._ids:
                raise DataValidationError(f"duplicate node {name!r}")
            self._ids.intern(name)

        layers = dict(layers or {})
        for name, layer in layers.items():
            if name not in self._ids:
                raise DataValidationError(f"layer given for unknown node {name!r}")
            if layer is not None and layer not in LAYERS:
                raise DataValidationError(f"node {name!r} has unknown layer {layer!r}")
        self._layers: Tuple[Optional[str], ...] = tuple(layers.get(n) for n in self._ids)

        graph = nx.Graph()
        graph.add_nodes_from(range(len(self._ids)))
        for a, b in edges:
            if a == b:
                raise DataValidationError(f"self-loop on node {a!r}")
            for end in (a, b):
                if end not in self._ids:
                    raise DataValidationError(f"edge {a!r}-{b!r} references unknown node {end!r}")
            graph.add_edge(self._ids.id_of(a), self._ids.id_of(b))
        self._graph = nx.freeze(graph)
        self._neighbors: Tuple[Tuple[int, ...], ...] = tuple(
            tuple(sorted(self._graph.adj[i])) for i in range(len(self._ids))
        )

    # --- identifiers -----------------------------------------------------

    def node_id(self, name: str) -> int:
        try:
            return self._ids.id_of(name)
        except KeyError:
            raise UnknownNodeError(name) from None

    def node_name(self, idx: int) -> str:
        return self._ids.extern(idx)

    @property
    def node_names(self) -> List[str]:
        return self._ids.names

    def __contains__(self, name: object) -> bool:
        return name in self._ids

    def layer(self, name: str) -> Optional[str]:
        return self._layers[self.node_id(name)]

    # --- structure -------------------------------------------------------

    @property
    def graph(self) -> nx.Graph:
        """Frozen networkx graph over integer node ids"""
        return self._graph

    @property
    def n_nodes(self) -> int:
        return len(self._ids)

    @property
    def n_edges(self) -> int:
        return self._graph.number_of_edges()

    def edges(self) -> List[Tuple[int, int]]:
        return sorted((min(a, b), max(a, b)) for a, b in self._graph.edges())

    def edge_names(self) -> List[Tuple[str, str]]:
        return [(self.node_name(a), self.node_name(b)) for a, b in self.edges()]

    def neighbors(self, idx: int) -> Tuple[int, ...]:
        return self._neighbors[idx]

    def neighbor_names(self, name: str) -> List[str]:
        return [self.node_name(j) for j in self._neighbors[self.node_id(name)]]

    def has_edge(self, a: str, b: str) -> bool:
        return self._graph.has_edge(self.node_id(a), self.node_id(b))

    def components(self) -> List[List[str]]:
        """Connected components (availability zones), each sorted, ordered by first member"""
        comps = [sorted(c) for c in nx.connected_components(self._graph)]
        comps.sort(key=lambda c: c[0])
        return [[self.node_name(i) for i in comp] for comp in comps]

    # --- distances -------------------------------------------------------

    @lru_cache(maxsize=4096)
    def hop_distances(self, source: int) -> Dict[int, int]:
        """BFS hop counts from one node to every reachable node"""
        return nx.single_source_shortest_path_length(self._graph, source)

    def distance(self, a: int, b: int) -> Optional[int]:
        """Hop distance between interned ids; None when unreachable"""
        return self.hop_distances(a).get(b)

    # --- comparison ------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, TopologyGraph):
            return NotImplemented
        return (
            set(self.node_names) == set(other.node_names)
            and {frozenset(e) for e in self.edge_names()} == {frozenset(e) for e in other.edge_names()}
            and all(self.layer(n) == other.layer(n) for n in self.node_names)
        )

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"<TopologyGraph(nodes={self.n_nodes}, edges={self.n_edges})>"


def shortest_hop_distance(g: TopologyGraph, a: str, b: str) -> Optional[int]:
    """Breadth-first hop count between two named nodes, None when unreachable"""
    return g.distance(g.node_id(a), g.node_id(b))

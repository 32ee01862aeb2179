"""Ground-truth topology generators. All return ``networkx.Graph`` objects
with integer node ids 0..n-1."""

from __future__ import annotations

import math
import random
from typing import Iterable, Optional

import networkx as nx


def from_edges(edges: Iterable[tuple[int, int]], nodes: Optional[int] = None) -> nx.Graph:
    g = nx.Graph()
    if nodes is not None:
        g.add_nodes_from(range(nodes))
    for a, b in edges:
        if a == b:
            raise ValueError(f"self-loop on node {a}")
        g.add_edge(int(a), int(b))
    return g


def line(n: int) -> nx.Graph:
    return nx.path_graph(n)


def ring(n: int) -> nx.Graph:
    return nx.cycle_graph(n)


def grid(rows: int, cols: int) -> nx.Graph:
    g = nx.grid_2d_graph(rows, cols)
    return nx.convert_node_labels_to_integers(g, ordering="sorted")


def random_connected(n: int, seed: int, avg_degree: float = 5.0, max_tries: int = 1000) -> nx.Graph:
    """Random geometric graph in the unit square, resampled until connected.

    The connection radius is chosen so the expected degree (ignoring border
    effects) is ``avg_degree``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        g = nx.Graph()
        g.add_node(0)
        return g
    radius = math.sqrt(avg_degree / (math.pi * (n - 1)))
    rng = random.Random(f"topology:{seed}")
    for _ in range(max_tries):
        g = nx.random_geometric_graph(n, radius, seed=rng.randrange(2**32))
        if nx.is_connected(g):
            plain = nx.Graph()
            plain.add_nodes_from(range(n))
            plain.add_edges_from(g.edges())
            return plain
    raise RuntimeError(f"no connected graph after {max_tries} tries; raise avg_degree")


def ball(graph: nx.Graph, source: int, radius: int) -> set[int]:
    return set(nx.single_source_shortest_path_length(graph, source, cutoff=radius))


def ball_edges(graph: nx.Graph, source: int, radius: int) -> set[tuple[int, int]]:
    """Edges with both endpoints within ``radius`` hops of ``source``."""
    inside = ball(graph, source, radius)
    return {(min(a, b), max(a, b)) for a, b in graph.subgraph(inside).edges()}

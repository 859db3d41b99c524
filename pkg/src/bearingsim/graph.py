"""Directed acyclic leader-follower sensing graphs.

Vertices are numbered 1..n everywhere a user can see them (config files,
reports, CSV). The ``tails``/``heads`` index arrays are 0-based and exist
for the numerical code.
"""
from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CycleFound, DuplicateEdge, ForwardReference, TooFewLeaders, TooFewNeighbors

MIN_LEADERS = 3
MIN_NEIGHBORS = 3


@dataclass(frozen=True)
class FormationGraph:
    """Sensing graph: an edge (i, j) means agent i measures the bearing to agent j.

    Agents 1..l are leaders. Construct through :func:`build_acyclic_lf_graph`
    unless you deliberately want an unvalidated graph (e.g. to test the
    cycle check).
    """

    n: int
    l: int
    edges: tuple[tuple[int, int], ...]
    neighbor_sets: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i - 1].append(j)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(self, "neighbor_sets", tuple(tuple(v) for v in nbrs))

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def leaders(self) -> list[int]:
        return list(range(1, self.l + 1))

    @property
    def followers(self) -> list[int]:
        return list(range(self.l + 1, self.n + 1))

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_sets[i - 1]

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([i - 1 for i, _ in self.edges], dtype=int)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([j - 1 for _, j in self.edges], dtype=int)

    @cached_property
    def follower_edge_matrix(self) -> np.ndarray:
        """0/1 matrix S with S[k, e] = 1 when edge e starts at follower k (0-based follower index)."""
        S = np.zeros((self.n - self.l, self.m))
        for e, (i, _) in enumerate(self.edges):
            if i > self.l:
                S[i - self.l - 1, e] = 1.0
        return S

    def edge_ids(self, i: int) -> list[int]:
        """Positions in ``edges`` of the edges leaving vertex i."""
        return [e for e, (a, _) in enumerate(self.edges) if a == i]


def build_acyclic_lf_graph(l: int, follower_neighbor_lists) -> FormationGraph:
    """Insert followers l+1, l+2, ... one at a time, each sensing >= 3 earlier vertices."""
    if l < MIN_LEADERS:
        raise TooFewLeaders(f"Assumption 2 requires l >= {MIN_LEADERS}, got l = {l}")
    edges: list[tuple[int, int]] = []
    for offset, nbrs in enumerate(follower_neighbor_lists):
        i = l + 1 + offset
        nbrs = [int(j) for j in nbrs]
        if len(nbrs) < MIN_NEIGHBORS:
            raise TooFewNeighbors(f"follower {i} has {len(nbrs)} neighbors, needs >= {MIN_NEIGHBORS}")
        if len(set(nbrs)) != len(nbrs):
            raise DuplicateEdge(f"follower {i} lists a neighbor twice: {nbrs}")
        for j in nbrs:
            if j == i:
                raise ForwardReference(f"follower {i} references itself")
            if not 1 <= j <= i - 1:
                raise ForwardReference(f"follower {i} references vertex {j}; neighbors must lie in 1..{i - 1}")
            edges.append((i, j))
    n = l + len(follower_neighbor_lists)
    return FormationGraph(n=n, l=l, edges=tuple(edges))


def validate_acyclic(g: FormationGraph) -> list[int]:
    """Topological order (leaders first) in which every edge points to an earlier vertex.

    Raises CycleFound carrying a witness cycle, rotated to start at its smallest vertex.
    """
    seen: set[tuple[int, int]] = set()
    for e in g.edges:
        if e in seen:
            raise DuplicateEdge(f"edge {e} repeated")
        if e[0] == e[1]:
            raise CycleFound([e[0], e[0]])
        seen.add(e)
    ts = graphlib.TopologicalSorter({v: g.neighbors(v) for v in range(1, g.n + 1)})
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        # graphlib lists dependencies before dependents; reverse to follow edge direction
        cycle = list(reversed(exc.args[1]))[:-1]
        k = cycle.index(min(cycle))
        cycle = cycle[k:] + cycle[:k]
        raise CycleFound(cycle + [cycle[0]]) from None
    order: list[int] = []
    while ts.is_active():
        ready = sorted(ts.get_ready())
        order.extend(ready)
        ts.done(*ready)
    return order


def incidence_matrix(g: FormationGraph) -> np.ndarray:
    """m x n matrix: -1 at the edge's start vertex, +1 at its end vertex."""
    H = np.zeros((g.m, g.n))
    rows = np.arange(g.m)
    H[rows, g.tails] = -1.0
    H[rows, g.heads] = 1.0
    return H

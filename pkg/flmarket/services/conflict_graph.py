"""
Spectrum conflict graph: one node per data owner, an edge wherever two owners request
a common channel. Feasible worker sets are exactly the independent sets.
"""
from typing import FrozenSet, Iterable, List, Sequence, Set

import networkx as nx
import numpy as np

from flmarket.core.exceptions import InvalidInputError


class ConflictGraph:
    """Immutable conflict structure over owner ids 0..n-1."""

    def __init__(self, graph: nx.Graph):
        self._graph = nx.freeze(graph)
        self._n = graph.number_of_nodes()
        self._neighbors: List[FrozenSet[int]] = [frozenset(graph.neighbors(i)) for i in range(self._n)]

    @classmethod
    def build(cls, channel_requests: Sequence[Iterable[int]]) -> "ConflictGraph":
        graph = nx.Graph()
        graph.add_nodes_from(range(len(channel_requests)))
        requests = [frozenset(c) for c in channel_requests]
        # channel -> owners requesting it; owners sharing a channel are pairwise in conflict
        holders = {}
        for owner_id, channels in enumerate(requests):
            for channel in channels:
                holders.setdefault(channel, []).append(owner_id)
        for owners in holders.values():
            for a_pos, a in enumerate(owners):
                for b in owners[a_pos + 1:]:
                    graph.add_edge(a, b)
        return cls(graph)

    @classmethod
    def from_owners(cls, owners) -> "ConflictGraph":
        return cls.build([owner.channels for owner in owners])

    @classmethod
    def from_adjacency(cls, matrix) -> "ConflictGraph":
        adjacency = np.asarray(matrix, dtype=bool)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise InvalidInputError(f"adjacency must be square, got shape {adjacency.shape}")
        if not np.array_equal(adjacency, adjacency.T):
            raise InvalidInputError("adjacency must be symmetric")
        graph = nx.Graph()
        graph.add_nodes_from(range(adjacency.shape[0]))
        rows, cols = np.nonzero(np.triu(adjacency, k=1))
        graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
        return cls(graph)

    @property
    def n(self) -> int:
        return self._n

    def adjacent(self, i: int, j: int) -> bool:
        return i != j and j in self._neighbors[i]

    def neighbors(self, i: int) -> FrozenSet[int]:
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def ell(self, i: int) -> int:
        """Density denominator: conflict degree plus the owner itself."""
        return len(self._neighbors[i]) + 1

    def degrees(self) -> List[int]:
        return [len(nb) for nb in self._neighbors]

    def conflict_set(self, members: Iterable[int]) -> Set[int]:
        members = set(members)
        conflicted: Set[int] = set()
        for i in members:
            conflicted |= self._neighbors[i]
        return conflicted - members

    def is_feasible(self, members: Iterable[int]) -> bool:
        members = list(members)
        chosen = set(members)
        return all(not (self._neighbors[i] & chosen) for i in members)

    def adjacency_matrix(self) -> np.ndarray:
        adjacency = np.zeros((self._n, self._n))
        for i, nb in enumerate(self._neighbors):
            for j in nb:
                adjacency[i, j] = 1.0
        return adjacency

    def normalized_adjacency(self) -> np.ndarray:
        """B^{-1/2} (A + I) B^{-1/2} with B the row sums of A + I."""
        a_hat = self.adjacency_matrix() + np.eye(self._n)
        inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
        return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]

    def edge_count(self) -> int:
        return self._graph.number_of_edges()

    def to_networkx(self) -> nx.Graph:
        return self._graph

    def __repr__(self) -> str:
        return f"ConflictGraph(n={self._n}, edges={self.edge_count()})"

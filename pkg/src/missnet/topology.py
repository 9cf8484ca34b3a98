"""Agent graphs and left-stochastic combination matrices."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# Edge list of the seven-agent network used in all built-in scenarios (1-based).
PAPER7_EDGES = (
    (1, 2), (1, 3), (1, 5), (1, 7),
    (2, 3), (2, 4), (2, 5), (2, 7),
    (3, 4), (3, 6), (3, 7),
    (4, 5), (4, 6),
    (5, 6), (5, 7),
)


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected graph over ``n_agents`` nodes (0-based edges)."""

    n_agents: int
    edges: frozenset

    @classmethod
    def from_edges(cls, n_agents, edges, one_based=False):
        shift = 1 if one_based else 0
        norm = set()
        for a, b in edges:
            a, b = int(a) - shift, int(b) - shift
            if not (0 <= a < n_agents and 0 <= b < n_agents):
                raise TopologyError(f"edge ({a + shift}, {b + shift}) out of range")
            if a != b:
                norm.add((min(a, b), max(a, b)))
        return cls(int(n_agents), frozenset(norm))

    @classmethod
    def paper7(cls):
        return cls.from_edges(7, PAPER7_EDGES, one_based=True)

    @classmethod
    def isolated(cls, n_agents):
        return cls(int(n_agents), frozenset())

    def adjacency(self) -> np.ndarray:
        """Boolean adjacency with self loops."""
        adj = np.eye(self.n_agents, dtype=bool)
        for a, b in self.edges:
            adj[a, b] = adj[b, a] = True
        return adj

    def neighborhood(self, k):
        return set(np.flatnonzero(self.adjacency()[:, k]).tolist())

    def is_connected(self) -> bool:
        adj = self.adjacency()
        seen = {0}
        queue = deque([0])
        while queue:
            k = queue.popleft()
            for nb in np.flatnonzero(adj[k]):
                if nb not in seen:
                    seen.add(int(nb))
                    queue.append(int(nb))
        return len(seen) == self.n_agents


def uniform_combination(t: Topology, require_connected=True) -> np.ndarray:
    """Averaging rule ``a[l, k] = 1/|N_k|`` for ``l`` in ``N_k``.

    Columns index the receiving agent, so every column sums to one.
    """
    if require_connected and not t.is_connected():
        raise TopologyError(
            f"topology with {t.n_agents} agents and {len(t.edges)} edges is not connected")
    adj = t.adjacency().astype(float)
    return adj / adj.sum(axis=0, keepdims=True)


def validate_combination(a, t: Topology, tol=1e-12):
    """Check a combination matrix against ``t``.

    Returns ``(ok, violations)`` where each violation is a
    ``(kind, detail)`` tuple with kind in {"shape", "negative",
    "stochasticity", "support"}.
    """
    a = np.asarray(a, dtype=float)
    n = t.n_agents
    if a.shape != (n, n):
        return False, [("shape", f"expected {(n, n)}, got {a.shape}")]
    violations = []
    for l, k in zip(*np.nonzero(a < 0)):
        violations.append(("negative", f"a[{l},{k}] = {a[l, k]:g}"))
    sums = a.sum(axis=0)
    for k in np.flatnonzero(np.abs(sums - 1.0) > tol):
        violations.append(("stochasticity", f"column {k} sums to {sums[k]:.12g}"))
    off = (a != 0) & ~t.adjacency()
    for l, k in zip(*np.nonzero(off)):
        violations.append(("support", f"a[{l},{k}] nonzero but {l} not a neighbour of {k}"))
    return not violations, violations

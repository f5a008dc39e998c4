"""Private/public node visibility across hosts and input masking."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, Subgraph


@dataclass(frozen=True, eq=False)
class HostView:
    """Nodes visible to one host, as a boolean mask over all node ids."""

    host_id: int
    visible: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.visible)

    def __contains__(self, node: int) -> bool:
        return bool(self.visible[node])


@dataclass(frozen=True, eq=False)
class FederationPlan:
    n_hosts: int
    pi_private: float
    views: tuple[HostView, ...]
    seed: int | None = None

    @property
    def kappa(self) -> float:
        """Fraction of nodes each host cannot see: (N-1)/N * pi."""
        return (self.n_hosts - 1) / self.n_hosts * self.pi_private

    @property
    def visibility(self) -> np.ndarray:
        """(n_hosts, num_nodes) boolean matrix."""
        return np.stack([v.visible for v in self.views])

    @property
    def private(self) -> np.ndarray:
        return self.visibility.sum(axis=0) == 1 if self.n_hosts > 1 else np.zeros(
            self.views[0].visible.size, dtype=bool
        )


def assign_visibility(
    g: Graph | int,
    n_hosts: int,
    pi_private: float,
    seed: int,
    exact_split: bool = False,
) -> FederationPlan:
    """Mark ``round(pi * num_nodes)`` nodes private and hand each to one host.

    Private owners are drawn i.i.d. uniformly; ``exact_split`` deals them out
    round-robin over a random permutation instead, so host loads differ by at
    most one. Every other node is public.
    """
    if n_hosts < 1:
        raise ValueError("n_hosts must be >= 1")
    if not 0.0 <= pi_private <= 1.0:
        raise ValueError("pi_private must lie in [0, 1]")
    num_nodes = g if isinstance(g, int) else g.num_nodes
    rng = np.random.default_rng(seed)
    n_private = int(round(pi_private * num_nodes))
    private = rng.choice(num_nodes, size=n_private, replace=False)
    if exact_split:
        owners = np.arange(n_private) % n_hosts
        rng.shuffle(owners)
    else:
        owners = rng.integers(0, n_hosts, size=n_private)
    vis = np.ones((n_hosts, num_nodes), dtype=bool)
    vis[:, private] = False
    vis[owners, private] = True
    return FederationPlan(
        n_hosts=n_hosts,
        pi_private=float(pi_private),
        views=tuple(HostView(h, vis[h].copy()) for h in range(n_hosts)),
        seed=seed,
    )


def plan_from_matrix(visibility: np.ndarray, pi_private: float | None = None) -> FederationPlan:
    vis = np.asarray(visibility, dtype=bool)
    if not vis.any(axis=0).all():
        raise ValueError("every node must be visible to at least one host")
    n_hosts = vis.shape[0]
    if pi_private is None:
        pi_private = float((vis.sum(axis=0) == 1).mean()) if n_hosts > 1 else 0.0
    return FederationPlan(n_hosts, pi_private, tuple(HostView(h, vis[h].copy()) for h in range(n_hosts)))


def load_visibility(path: str | Path, num_nodes: int, n_hosts: int) -> FederationPlan:
    """Read visibility.csv: line i lists the host ids that can see node i."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != num_nodes:
        raise ValueError(f"visibility.csv has {len(lines)} lines, expected {num_nodes}")
    vis = np.zeros((n_hosts, num_nodes), dtype=bool)
    for node, line in enumerate(lines):
        for tok in line.split(","):
            h = int(tok)
            if not 0 <= h < n_hosts:
                raise ValueError(f"visibility.csv line {node + 1}: host {h} out of range")
            vis[h, node] = True
    return plan_from_matrix(vis)


def mask_inputs(
    sg: Subgraph, view: HostView, features: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gather subgraph rows and zero those of nodes the host cannot see.

    Returns (features, labels, visible_mask) in local subgraph order.
    """
    visible = view.visible[sg.nodes]
    x = np.where(visible[:, None], features[sg.nodes], 0.0)
    y = np.where(visible[:, None], labels[sg.nodes], 0.0)
    return x, y, visible

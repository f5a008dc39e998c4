"""Per-iteration training subgraph sampling (node, edge, random walk, multi-dim random walk)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph

KINDS = ("node", "edge", "rw", "mrw")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "rw"
    node_budget: int = 100
    edge_budget: int = 100
    roots: int = 50
    depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {KINDS}")
        if min(self.node_budget, self.edge_budget, self.roots) < 1:
            raise ValueError("sampler budgets must be >= 1")
        if self.depth < 1:
            raise ValueError("walk depth must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def host_rngs(seed: int, n_hosts: int) -> list[np.random.Generator]:
    """Independent per-host streams, identical whatever the execution mode."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_hosts)]


class SubgraphSampler:
    """Samples node lists from the subgraph induced by the training nodes.

    Returned ids are global, sorted and unique. Walks never leave the
    training nodes, so val/test nodes cannot enter a training subgraph.
    """

    def __init__(self, g: Graph, train_nodes: np.ndarray, cfg: SamplerConfig):
        train_nodes = np.unique(np.asarray(train_nodes, dtype=np.int64))
        if train_nodes.size == 0:
            raise ValueError("no training nodes to sample from")
        self.cfg = cfg
        self.train_nodes = train_nodes
        self.adj: sp.csr_matrix = g.adj[train_nodes][:, train_nodes].tocsr()
        self.adj.sort_indices()
        self.deg = np.diff(self.adj.indptr)
        self._node_p = None
        self._edges = None
        self._edge_p = None

    # the squared column norm of A + I is deg + 1 for a binary adjacency
    def _node_probs(self) -> np.ndarray:
        if self._node_p is None:
            w = (self.deg + 1).astype(np.float64)
            self._node_p = w / w.sum()
        return self._node_p

    def _edge_probs(self) -> tuple[np.ndarray, np.ndarray]:
        if self._edges is None:
            coo = sp.triu(self.adj, k=1).tocoo()
            self._edges = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
            w = 1.0 / self.deg[coo.row] + 1.0 / self.deg[coo.col]
            self._edge_p = w / w.sum() if w.size else w
        return self._edges, self._edge_p

    def _neighbors(self, u: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[u] : self.adj.indptr[u + 1]]

    def sample_local(self, rng: np.random.Generator) -> np.ndarray:
        """Sorted unique local indices into ``train_nodes``."""
        cfg = self.cfg
        n = self.train_nodes.size
        if cfg.kind == "node":
            picked = rng.choice(n, size=cfg.node_budget, replace=True, p=self._node_probs())
        elif cfg.kind == "edge":
            edges, p = self._edge_probs()
            if edges.shape[0] == 0:
                raise ValueError("edge sampler needs at least one training edge")
            idx = rng.choice(edges.shape[0], size=cfg.edge_budget, replace=True, p=p)
            picked = edges[idx].ravel()
        elif cfg.kind == "rw":
            picked = self._random_walks(rng)
        else:
            picked = self._multidim_walk(rng)
        return np.unique(picked)

    def _random_walks(self, rng: np.random.Generator) -> np.ndarray:
        visited = []
        for root in rng.integers(0, self.train_nodes.size, size=self.cfg.roots):
            u = int(root)
            visited.append(u)
            for _ in range(self.cfg.depth):
                nbrs = self._neighbors(u)
                if nbrs.size == 0:
                    break
                u = int(nbrs[rng.integers(nbrs.size)])
                visited.append(u)
        return np.array(visited, dtype=np.int64)

    def _multidim_walk(self, rng: np.random.Generator) -> np.ndarray:
        # frontier of node_budget nodes; each step moves one degree-weighted
        # frontier member to a random neighbour and records it
        n = self.train_nodes.size
        size = min(self.cfg.node_budget, n)
        frontier = rng.choice(n, size=size, replace=False)
        visited = list(frontier)
        for _ in range(self.cfg.node_budget):
            w = self.deg[frontier].astype(np.float64)
            total = w.sum()
            if total == 0:
                break
            slot = rng.choice(size, p=w / total)
            nbrs = self._neighbors(int(frontier[slot]))
            v = int(nbrs[rng.integers(nbrs.size)])
            frontier[slot] = v
            visited.append(v)
        return np.array(visited, dtype=np.int64)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.train_nodes[self.sample_local(rng)]


def sample(
    g: Graph, train_nodes: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator
) -> np.ndarray:
    """One-shot convenience wrapper around :class:`SubgraphSampler`."""
    return SubgraphSampler(g, train_nodes, cfg).sample(rng)
